//! Text formats: weight snapshots and metric tables.
//!
//! A snapshot is a CSV-like file:
//!
//! ```text
//! n1,n2,d,step_k,t
//! 3,2,2,17,0.017
//! w1
//! <n1 rows of d values>
//! w2
//! <n1 rows of n2 values>
//! w3
//! <one row of n2 values>
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a snapshot back
//! reproduces the weights bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::net::Weights;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub weights: Weights,
    pub step_k: u64,
    pub t: f64,
}

fn join(values: impl Iterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v:?}").unwrap();
    }
    s
}

impl Snapshot {
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let mut out = String::from("n1,n2,d,step_k,t\n");
        writeln!(out, "{},{},{},{},{:?}", w.n1(), w.n2(), w.dim(), self.step_k, self.t).unwrap();
        out.push_str("w1\n");
        for r in w.w1.rows() {
            out.push_str(&join(r.iter().copied()));
            out.push('\n');
        }
        out.push_str("w2\n");
        for r in w.w2.rows() {
            out.push_str(&join(r.iter().copied()));
            out.push('\n');
        }
        out.push_str("w3\n");
        out.push_str(&join(w.w3.iter().copied()));
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("unexpected end of snapshot, expected {what}"),
            })
        };
        let (ln, header) = next("header")?;
        if header != "n1,n2,d,step_k,t" {
            return Err(Error::Parse {
                line: ln,
                msg: format!("bad snapshot header `{header}`"),
            });
        }
        let (ln, dims) = next("dimensions")?;
        let f: Vec<&str> = dims.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse {
                line: ln,
                msg: "expected n1,n2,d,step_k,t".into(),
            });
        }
        let int = |s: &str| {
            s.trim().parse::<u64>().map_err(|e| Error::Parse {
                line: ln,
                msg: format!("`{s}`: {e}"),
            })
        };
        let (n1, n2, d, step_k) = (int(f[0])? as usize, int(f[1])? as usize, int(f[2])? as usize, int(f[3])?);
        let t: f64 = f[4].trim().parse().map_err(|e| Error::Parse {
            line: ln,
            msg: format!("`{}`: {e}", f[4]),
        })?;

        let mut matrix = |tag: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            let (ln, l) = next(tag)?;
            if l != tag {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("expected section `{tag}`, got `{l}`"),
                });
            }
            let mut v = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, l) = next(tag)?;
                let row = l
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse {
                        line: ln,
                        msg: e.to_string(),
                    })?;
                if row.len() != cols {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!("{tag} row has {} values, expected {cols}", row.len()),
                    });
                }
                v.extend(row);
            }
            Ok(v)
        };
        let w1 = matrix("w1", n1, d)?;
        let w2 = matrix("w2", n1, n2)?;
        let w3 = matrix("w3", 1, n2)?;
        let shape = |e: ndarray::ShapeError| Error::Structural(e.to_string());
        let weights = Weights::new(
            Array2::from_shape_vec((n1, d), w1).map_err(shape)?,
            Array2::from_shape_vec((n1, n2), w2).map_err(shape)?,
            Array1::from(w3),
        )?;
        Ok(Self { weights, step_k, t })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// A CSV table preceded by `# key=value` metadata lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| format!("{v:e}")).collect());
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}").unwrap();
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the output of [`MetricTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut t = Self::default();
        for (i, line) in text.lines().enumerate() {
            if let Some(m) = line.strip_prefix("# ") {
                let (k, v) = m.split_once('=').ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: format!("metadata line without `=`: {line}"),
                })?;
                t.meta.push((k.to_string(), v.to_string()));
            } else if t.columns.is_empty() {
                t.columns = line.split(',').map(str::to_string).collect();
            } else if !line.is_empty() {
                t.rows.push(line.split(',').map(str::to_string).collect());
            }
        }
        Ok(t)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}
