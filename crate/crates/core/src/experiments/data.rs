//! Tabular ingestion, group splits and the ground-truth logistic fit.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Cells treated as missing.
const MISSING: [&str; 4] = ["", "?", "NA", "NaN"];

pub const FIT_EPOCHS: usize = 500;
pub const FIT_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpOp {
    Le,
    Lt,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn holds(self, x: f64, t: f64) -> bool {
        match self {
            CmpOp::Le => x <= t,
            CmpOp::Lt => x < t,
            CmpOp::Ge => x >= t,
            CmpOp::Gt => x > t,
        }
    }
}

impl std::str::FromStr for CmpOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "le" | "<=" => Ok(CmpOp::Le),
            "lt" | "<" => Ok(CmpOp::Lt),
            "ge" | ">=" => Ok(CmpOp::Ge),
            "gt" | ">" => Ok(CmpOp::Gt),
            other => Err(Error::Input(format!("unknown comparison '{other}'"))),
        }
    }
}

/// How one raw CSV column becomes a number.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Encoding {
    /// (x − shift) / scale.
    Numeric {
        #[serde(default)]
        shift: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// 1 when `x op value`, else 0.
    Threshold { op: CmpOp, value: f64 },
    /// Categorical codes; unknown categories are errors.
    Codes { codes: BTreeMap<String, f64> },
}

fn one() -> f64 {
    1.0
}

impl Default for Encoding {
    fn default() -> Self {
        Encoding::Numeric { shift: 0.0, scale: 1.0 }
    }
}

impl Encoding {
    fn encode(&self, raw: &str) -> std::result::Result<f64, String> {
        let num = || {
            raw.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("'{raw}' is not a finite number"))
        };
        match self {
            Encoding::Numeric { shift, scale } => Ok((num()? - shift) / scale),
            Encoding::Threshold { op, value } => Ok(if op.holds(num()?, *value) { 1.0 } else { 0.0 }),
            Encoding::Codes { codes } => codes.get(raw).copied().ok_or_else(|| format!("unknown category '{raw}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(default)]
    pub encoding: Encoding,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schema {
    /// Model coordinates, in order.
    pub features: Vec<ColumnSpec>,
    pub label: Option<ColumnSpec>,
    /// Encoded but not part of the feature vector (e.g. split keys).
    pub extra: Vec<ColumnSpec>,
}

impl Schema {
    pub fn numeric(features: &[&str], label: Option<&str>) -> Self {
        let col = |n: &str| ColumnSpec {
            name: n.to_string(),
            encoding: Encoding::default(),
        };
        Schema {
            features: features.iter().map(|n| col(n)).collect(),
            label: label.map(col),
            extra: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    /// Feature column names; the matrix has one column per name.
    pub columns: Vec<String>,
    pub features: DMatrix<f64>,
    pub labels: Option<DVector<f64>>,
    /// Encoded extra columns by name.
    pub extra: BTreeMap<String, DVector<f64>>,
}

impl TabularDataset {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Encoded values of any feature, label or extra column.
    pub fn column(&self, name: &str) -> Option<DVector<f64>> {
        if let Some(i) = self.columns.iter().position(|c| c == name) {
            return Some(self.features.column(i).into_owned());
        }
        self.extra.get(name).cloned()
    }
}

pub fn ingest_dataset(path: &Path, schema: &Schema) -> Result<TabularDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, schema: &Schema) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingest(format!("cannot read header: {e}")))?
        .clone();
    let locate = |c: &ColumnSpec| {
        headers
            .iter()
            .position(|h| h == c.name)
            .ok_or_else(|| Error::Ingest(format!("column '{}' not found in header", c.name)))
    };
    let feat_idx = schema.features.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let label_idx = schema.label.as_ref().map(locate).transpose()?;
    let extra_idx = schema.extra.iter().map(locate).collect::<Result<Vec<_>>>()?;

    let d = schema.features.len();
    let mut feats: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut extra: Vec<Vec<f64>> = vec![Vec::new(); schema.extra.len()];
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Ingest(format!("row {row}: {e}")))?;
        let cell = |i: usize, c: &ColumnSpec| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            if MISSING.contains(&raw) {
                return Err(Error::Ingest(format!("row {row}, column '{}': missing value", c.name)));
            }
            c.encoding
                .encode(raw)
                .map_err(|m| Error::Ingest(format!("row {row}, column '{}': {m}", c.name)))
        };
        for (c, &i) in schema.features.iter().zip(&feat_idx) {
            feats.push(cell(i, c)?);
        }
        if let (Some(c), Some(i)) = (&schema.label, label_idx) {
            labels.push(cell(i, c)?);
        }
        for (k, (c, &i)) in schema.extra.iter().zip(&extra_idx).enumerate() {
            extra[k].push(cell(i, c)?);
        }
    }
    let n = feats.len().checked_div(d).unwrap_or(0);
    Ok(TabularDataset {
        columns: schema.features.iter().map(|c| c.name.clone()).collect(),
        features: DMatrix::from_row_slice(n, d, &feats),
        labels: schema.label.as_ref().map(|_| DVector::from_vec(labels)),
        extra: schema
            .extra
            .iter()
            .zip(extra)
            .map(|(c, v)| (c.name.clone(), DVector::from_vec(v)))
            .collect(),
    })
}

/// Membership test on one encoded column.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitTest {
    Cmp(CmpOp, f64),
    In(Vec<f64>),
}

impl SplitTest {
    pub fn holds(&self, x: f64) -> bool {
        match self {
            SplitTest::Cmp(op, t) => op.holds(x, *t),
            SplitTest::In(set) => set.contains(&x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRule {
    pub column: String,
    /// Rows passing the test form group 1.
    pub test: SplitTest,
}

/// Feature rows of (group 1, group 2).
pub fn split_groups(ds: &TabularDataset, rule: &SplitRule) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let col = ds
        .column(&rule.column)
        .ok_or_else(|| Error::Split(format!("unknown split column '{}'", rule.column)))?;
    let (g1, g2): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| rule.test.holds(col[i]));
    let take = |idx: &[usize], which: usize| -> Result<DMatrix<f64>> {
        if idx.is_empty() {
            return Err(Error::Split(format!("group {which} of split on '{}' is empty", rule.column)));
        }
        Ok(ds.features.select_rows(idx.iter()))
    };
    Ok((take(&g1, 1)?, take(&g2, 2)?))
}

/// Logistic regression (with intercept) by full-batch gradient descent, then
/// the coefficient vector radially projected into the unit ball.
pub fn fit_ground_truth(features: &DMatrix<f64>, labels: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, d) = features.shape();
    if n != labels.len() {
        return Err(Error::Fit(format!("{n} rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Fit("no rows to fit".into()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Fit("labels must be 0 or 1".into()));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::Fit("all labels are identical".into()));
    }
    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let inv_n = 1.0 / n as f64;
    for _ in 0..FIT_EPOCHS {
        let z = features * &w;
        let resid = DVector::from_fn(n, |i, _| sigmoid(z[i] + b) - labels[i]);
        let gw = features.transpose() * &resid * inv_n;
        let gb = resid.sum() * inv_n;
        w -= gw * FIT_STEP;
        b -= gb * FIT_STEP;
    }
    let norm = w.norm();
    if norm > 1.0 {
        w /= norm;
    }
    Ok(w)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
