//! Unit records, the fused experimental + observational dataset, column
//! blocks, CSV ingestion and the estimate report shared by every method.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// Randomized experiment.
    E,
    /// Observational sample with endogenous treatment.
    O,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::E => "E",
            Group::O => "O",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitRecord<T> {
    pub y: T,
    pub x: T,
    pub z: T,
    pub g: Group,
}

/// Column-oriented `(Y, X, Z)` for a single group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Block<T> {
    pub y: Vec<T>,
    pub x: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Scalar> Block<T> {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            y: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
        }
    }

    pub fn from_columns(y: Vec<T>, x: Vec<T>, z: Vec<T>) -> Self {
        assert!(y.len() == x.len() && x.len() == z.len(), "column lengths differ");
        Self { y, x, z }
    }

    pub fn push(&mut self, y: T, x: T, z: T) {
        self.y.push(y);
        self.x.push(x);
        self.z.push(z);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Copy of the block with row `i` removed.
    pub fn without(&self, i: usize) -> Self {
        let drop = |v: &Vec<T>| {
            let mut out = Vec::with_capacity(v.len().saturating_sub(1));
            out.extend_from_slice(&v[..i]);
            out.extend_from_slice(&v[i + 1..]);
            out
        };
        Self {
            y: drop(&self.y),
            x: drop(&self.x),
            z: drop(&self.z),
        }
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::with_capacity(idx.len());
        for &i in idx {
            out.push(self.y[i], self.x[i], self.z[i]);
        }
        out
    }

    pub fn cross_products(&self) -> CrossProducts<T> {
        CrossProducts::from_block(self)
    }
}

/// Sample means and centered second moments (sums, not averages).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossProducts<T> {
    pub n: usize,
    pub mean_y: T,
    pub mean_x: T,
    pub mean_z: T,
    pub sxx: T,
    pub sxz: T,
    pub szz: T,
    pub sxy: T,
    pub szy: T,
    pub syy: T,
}

impl<T: Scalar> CrossProducts<T> {
    pub fn from_block(b: &Block<T>) -> Self {
        let n = b.len();
        let zero = T::zero();
        if n == 0 {
            return Self {
                n,
                mean_y: zero,
                mean_x: zero,
                mean_z: zero,
                sxx: zero,
                sxz: zero,
                szz: zero,
                sxy: zero,
                szy: zero,
                syy: zero,
            };
        }
        let nf = T::from_count(n);
        let mean = |v: &[T]| v.iter().copied().sum::<T>() / nf;
        let (my, mx, mz) = (mean(&b.y), mean(&b.x), mean(&b.z));
        let mut s = [zero; 6];
        for i in 0..n {
            let (y, x, z) = (b.y[i] - my, b.x[i] - mx, b.z[i] - mz);
            s[0] = s[0] + x * x;
            s[1] = s[1] + x * z;
            s[2] = s[2] + z * z;
            s[3] = s[3] + x * y;
            s[4] = s[4] + z * y;
            s[5] = s[5] + y * y;
        }
        Self {
            n,
            mean_y: my,
            mean_x: mx,
            mean_z: mz,
            sxx: s[0],
            sxz: s[1],
            szz: s[2],
            sxy: s[3],
            szy: s[4],
            syy: s[5],
        }
    }
}

/// Experimental and observational units in one ordered collection.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedDataset<T> {
    records: Vec<UnitRecord<T>>,
    n_e: usize,
    n_o: usize,
}

impl<T: Scalar> FusedDataset<T> {
    /// Rejects non-finite values; empty groups are allowed here (estimators
    /// that need both groups check for themselves).
    pub fn new(records: Vec<UnitRecord<T>>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            for (name, v) in [("y", r.y), ("x", r.x), ("z", r.z)] {
                if !v.is_finite() {
                    return Err(FusionError::NonNumericCell {
                        row: i + 1,
                        col: name.to_string(),
                    });
                }
            }
        }
        let n_e = records.iter().filter(|r| r.g == Group::E).count();
        let n_o = records.len() - n_e;
        Ok(Self { records, n_e, n_o })
    }

    /// Experimental rows first, then observational rows.
    pub fn from_blocks(exp: &Block<T>, obs: &Block<T>) -> Result<Self> {
        let mut records = Vec::with_capacity(exp.len() + obs.len());
        for (b, g) in [(exp, Group::E), (obs, Group::O)] {
            for i in 0..b.len() {
                records.push(UnitRecord {
                    y: b.y[i],
                    x: b.x[i],
                    z: b.z[i],
                    g,
                });
            }
        }
        Self::new(records)
    }

    pub fn records(&self) -> &[UnitRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    pub fn n_o(&self) -> usize {
        self.n_o
    }

    /// `n_O / (n_E + n_O)`; zero for an empty dataset.
    pub fn pi_o(&self) -> T {
        if self.records.is_empty() {
            return T::zero();
        }
        T::from_count(self.n_o) / T::from_count(self.records.len())
    }

    pub fn pi_e(&self) -> T {
        T::one() - self.pi_o()
    }

    pub fn block(&self, g: Group) -> Block<T> {
        let n = match g {
            Group::E => self.n_e,
            Group::O => self.n_o,
        };
        let mut b = Block::with_capacity(n);
        for r in self.records.iter().filter(|r| r.g == g) {
            b.push(r.y, r.x, r.z);
        }
        b
    }
}

/// Partition into the experimental and observational blocks, preserving the
/// relative order of rows within each group.
pub fn split<T: Scalar>(ds: &FusedDataset<T>) -> (Block<T>, Block<T>) {
    let mut exp = Block::with_capacity(ds.n_e());
    let mut obs = Block::with_capacity(ds.n_o());
    for r in ds.records() {
        match r.g {
            Group::E => exp.push(r.y, r.x, r.z),
            Group::O => obs.push(r.y, r.x, r.z),
        }
    }
    (exp, obs)
}

const HEADER: [&str; 4] = ["y", "x", "z", "g"];

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<FusedDataset<T>> {
    let f = std::fs::File::open(path.as_ref())
        .map_err(|e| FusionError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(f)
}

/// Parse the `y,x,z,g` schema. Lines starting with `#` are skipped. Row
/// numbers in errors count data rows from 1.
pub fn read_csv<T: Scalar, R: Read>(reader: R) -> Result<FusedDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| FusionError::Io(e.to_string()))?
        .clone();
    if headers.len() != HEADER.len() || headers.iter().zip(HEADER).any(|(a, b)| a != b) {
        return Err(FusionError::MissingColumn(
            headers.iter().collect::<Vec<_>>().join(","),
        ));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| FusionError::Io(format!("row {row_no}: {e}")))?;
        let num = |col: usize| -> Result<T> {
            row.get(col)
                .and_then(|s| s.parse::<T>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| FusionError::NonNumericCell {
                    row: row_no,
                    col: HEADER[col].to_string(),
                })
        };
        let (y, x, z) = (num(0)?, num(1)?, num(2)?);
        let g = match row.get(3) {
            Some("E") => Group::E,
            Some("O") => Group::O,
            _ => return Err(FusionError::UnknownGroupTag(row_no)),
        };
        records.push(UnitRecord { y, x, z, g });
    }
    let ds = FusedDataset::new(records)?;
    if ds.n_e() == 0 {
        return Err(FusionError::EmptyGroup(Group::E));
    }
    if ds.n_o() == 0 {
        return Err(FusionError::EmptyGroup(Group::O));
    }
    Ok(ds)
}

/// Writes the `y,x,z,g` schema with shortest round-trip float formatting.
pub fn write_csv<T: Scalar, W: Write>(ds: &FusedDataset<T>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "y,x,z,g")?;
    for r in ds.records() {
        writeln!(w, "{},{},{},{}", r.y, r.x, r.z, r.g)?;
    }
    w.flush()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    ExperimentOnly,
    #[serde(rename = "ObsOLS")]
    ObsOls,
    #[serde(rename = "ObsIV")]
    ObsIv,
    BiasCorrectedObs,
    Weighted,
    Regularized,
    #[serde(rename = "CombinedGMM")]
    CombinedGmm,
    ProbitExperimentOnly,
    ProbitCombined,
}

/// Point estimate, variance and the knobs/intermediates that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: serde::de::DeserializeOwned"))]
pub struct EstimateReport<T> {
    pub method: Method,
    pub beta1_hat: T,
    pub b2_hat: Option<T>,
    pub var_beta1: T,
    pub hyperparameters: BTreeMap<String, T>,
    pub diagnostics: BTreeMap<String, T>,
}

impl<T: Scalar> EstimateReport<T> {
    pub fn new(method: Method, beta1_hat: T, b2_hat: Option<T>, var_beta1: T) -> Self {
        Self {
            method,
            beta1_hat,
            b2_hat,
            var_beta1: var_beta1.max(T::zero()),
            hyperparameters: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_hyper(mut self, name: &str, v: T) -> Self {
        self.hyperparameters.insert(name.to_string(), v);
        self
    }

    pub fn with_diag(mut self, name: &str, v: T) -> Self {
        self.diagnostics.insert(name.to_string(), v);
        self
    }
}
