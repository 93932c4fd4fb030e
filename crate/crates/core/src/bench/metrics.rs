//! Metrics table and CSV emission.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "scenario,seed,condition,metric,value,units";

/// Significant digits of every emitted value.
pub const SIG_DIGITS: i32 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scenario: String,
    pub seed: u64,
    pub condition: String,
    pub metric: String,
    pub value: f64,
    pub units: String,
}

impl MetricsRow {
    pub fn new(scenario: &str, seed: u64, condition: &str, metric: &str, value: f64, units: &str) -> Self {
        Self {
            scenario: scenario.into(),
            seed,
            condition: condition.into(),
            metric: metric.into(),
            value,
            units: units.into(),
        }
    }

    fn key(&self) -> (&str, u64, &str, &str) {
        (&self.scenario, self.seed, &self.condition, &self.metric)
    }
}

/// Collects rows for one seed of one scenario.
#[derive(Debug, Clone)]
pub struct MetricSink {
    scenario: String,
    seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl MetricSink {
    pub fn new(scenario: &str, seed: u64) -> Self {
        Self {
            scenario: scenario.into(),
            seed,
            rows: vec![],
        }
    }

    pub fn push(&mut self, condition: &str, metric: &str, value: f64, units: &str) {
        self.rows
            .push(MetricsRow::new(&self.scenario, self.seed, condition, metric, value, units));
    }
}

/// Decimal with [`SIG_DIGITS`] significant digits, trailing zeros removed.
/// Very large or small magnitudes use exponent notation.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-5..SIG_DIGITS).contains(&exp) {
        let decimals = (SIG_DIGITS - 1 - exp).max(0) as usize;
        trim(format!("{v:.decimals$}"))
    } else {
        let s = format!("{:.*e}", (SIG_DIGITS - 1) as usize, v);
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        format!("{}e{e}", trim(mantissa.to_string()))
    }
}

fn check_field(field: &str, what: &str) -> Result<()> {
    if field.contains([',', '\n', '\r', '"']) {
        return Err(Error::InvalidArgument(format!("{what} `{field}` contains a CSV delimiter")));
    }
    Ok(())
}

/// Sorted CSV text; errors on a duplicate key or a non-finite value.
pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut seen = BTreeSet::new();
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in sorted {
        if !seen.insert(r.key()) {
            return Err(Error::DuplicateMetric(format!(
                "{}/{}/{}/{}",
                r.scenario, r.seed, r.condition, r.metric
            )));
        }
        for (f, what) in [(&r.scenario, "scenario"), (&r.condition, "condition"), (&r.metric, "metric"), (&r.units, "units")] {
            check_field(f, what)?;
        }
        if !r.value.is_finite() {
            return Err(Error::NonFinite(format!("metric {}/{}", r.condition, r.metric)));
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scenario,
            r.seed,
            r.condition,
            r.metric,
            format_value(r.value),
            r.units
        );
    }
    Ok(out)
}

pub fn emit_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = metrics_csv(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
