//! Text container of named numeric arrays.
//!
//! Layout, one array after another:
//!
//! ```text
//! <name> <kind> <rows> <cols>
//! <row 0 values, space separated>
//! ...
//! digest sha256:<hex digest of every byte above this line>
//! ```
//!
//! Values are written with the shortest decimal representation that parses
//! back to the same bits, so save/load is bit exact.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

const DIGEST_PREFIX: &str = "digest sha256:";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<T> {
    pub name: String,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> NamedArray<T> {
    pub fn matrix(name: impl Into<String>, kind: impl Into<String>, m: &Matrix<T>) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            rows: m.rows(),
            cols: m.cols(),
            values: m.as_slice().to_vec(),
        }
    }

    /// A vector stored as a single row.
    pub fn vector(name: impl Into<String>, kind: impl Into<String>, v: &[T]) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            rows: 1,
            cols: v.len(),
            values: v.to_vec(),
        }
    }

    pub fn scalar(name: impl Into<String>, kind: impl Into<String>, v: T) -> Self {
        Self::vector(name, kind, &[v])
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.rows, self.cols, self.values.clone())
            .expect("array shape checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint<T> {
    pub arrays: Vec<NamedArray<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new() -> Self {
        Self { arrays: Vec::new() }
    }

    pub fn push(&mut self, array: NamedArray<T>) {
        self.arrays.push(array);
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray<T>> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedArray<T>> {
        self.get(name).ok_or_else(|| Error::MalformedCheckpoint {
            line: 0,
            reason: format!("missing array `{name}`"),
        })
    }

    /// Body text (everything the digest line covers).
    fn body(&self) -> Result<String> {
        let mut out = String::new();
        for a in &self.arrays {
            for token in [&a.name, &a.kind] {
                if token.is_empty() || token.chars().any(char::is_whitespace) {
                    return Err(Error::InvalidArgument(format!(
                        "checkpoint token `{token}` must be non-empty without whitespace"
                    )));
                }
            }
            if a.values.len() != a.rows * a.cols {
                return Err(Error::dim(
                    format!("checkpoint array {}", a.name),
                    a.rows * a.cols,
                    a.values.len(),
                ));
            }
            if let Some(i) = a.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{}[{i}]", a.name)));
            }
            out.push_str(&format!("{} {} {} {}\n", a.name, a.kind, a.rows, a.cols));
            if a.cols > 0 {
                for row in a.values.chunks(a.cols) {
                    let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    out.push_str(&line.join(" "));
                    out.push('\n');
                }
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut body = self.body()?;
        let digest = sha256_hex(body.as_bytes());
        body.push_str(DIGEST_PREFIX);
        body.push_str(&digest);
        body.push('\n');
        Ok(body)
    }

    /// Digest of the serialised content; equal content gives equal digests.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.body()?.as_bytes()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let digest_at = text
            .rfind(DIGEST_PREFIX)
            .filter(|&i| i == 0 || text.as_bytes()[i - 1] == b'\n')
            .ok_or_else(|| Error::MalformedCheckpoint {
                line: text.lines().count(),
                reason: "missing digest line".into(),
            })?;
        let (body, tail) = text.split_at(digest_at);
        let stored = tail[DIGEST_PREFIX.len()..].trim_end_matches('\n');
        let computed = sha256_hex(body.as_bytes());
        if stored != computed {
            return Err(Error::DigestMismatch {
                stored: stored.to_string(),
                computed,
            });
        }

        let mut ck = Self::new();
        let mut lines = body.lines().enumerate().peekable();
        while let Some((ln, header)) = lines.next() {
            let bad = |reason: String| Error::MalformedCheckpoint {
                line: ln + 1,
                reason,
            };
            let parts: Vec<&str> = header.split(' ').collect();
            if parts.len() != 4 {
                return Err(bad(format!("expected `name kind rows cols`, got `{header}`")));
            }
            let rows: usize = parts[2]
                .parse()
                .map_err(|_| bad(format!("bad row count `{}`", parts[2])))?;
            let cols: usize = parts[3]
                .parse()
                .map_err(|_| bad(format!("bad column count `{}`", parts[3])))?;
            let mut values = Vec::with_capacity(rows * cols);
            if cols > 0 {
                for _ in 0..rows {
                    let (vl, line) = lines
                        .next()
                        .ok_or_else(|| bad(format!("array `{}` truncated", parts[0])))?;
                    let before = values.len();
                    for tok in line.split(' ') {
                        let v: T = tok.parse().map_err(|_| Error::MalformedCheckpoint {
                            line: vl + 1,
                            reason: format!("bad value `{tok}`"),
                        })?;
                        values.push(v);
                    }
                    if values.len() - before != cols {
                        return Err(Error::MalformedCheckpoint {
                            line: vl + 1,
                            reason: format!("expected {cols} values"),
                        });
                    }
                }
            }
            ck.push(NamedArray {
                name: parts[0].to_string(),
                kind: parts[1].to_string(),
                rows,
                cols,
                values,
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
