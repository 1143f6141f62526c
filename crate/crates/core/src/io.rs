//! CSV ingestion, sample covariance and log returns, and JSON run reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::component::SparseComponent;
use crate::error::{Result, SpcaError};
use crate::linalg::SymmetricMatrix;

/// Relative asymmetry tolerated in a covariance file before it is rejected.
pub const ASYMMETRY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    #[serde(alias = "cov")]
    Covariance,
    Data,
}

impl std::str::FromStr for InputKind {
    type Err = SpcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cov" | "covariance" => Ok(InputKind::Covariance),
            "data" => Ok(InputKind::Data),
            other => Err(SpcaError::InvalidConfig(format!("unknown input kind `{other}`"))),
        }
    }
}

/// Observations in rows, variables in columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    names: Option<Vec<String>>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, names: Option<Vec<String>>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(SpcaError::EmptyMatrix);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(SpcaError::NonFiniteInput);
        }
        if let Some(n) = &names {
            if n.len() != values.ncols() {
                return Err(SpcaError::DimensionMismatch {
                    expected: values.ncols(),
                    got: n.len(),
                });
            }
        }
        Ok(Self { values, names })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(SpcaError::RaggedRows {
                    row: r + 1,
                    expected: cols,
                    got: row.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]), None)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }
}

/// A parsed input file.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedMatrix {
    Covariance {
        sigma: SymmetricMatrix,
        names: Option<Vec<String>>,
    },
    Data(DataMatrix),
}

impl LoadedMatrix {
    pub fn names(&self) -> Option<&[String]> {
        match self {
            LoadedMatrix::Covariance { names, .. } => names.as_deref(),
            LoadedMatrix::Data(d) => d.names(),
        }
    }

    /// The covariance matrix, computing the sample covariance for data input.
    pub fn covariance(&self) -> Result<SymmetricMatrix> {
        match self {
            LoadedMatrix::Covariance { sigma, .. } => Ok(sigma.clone()),
            LoadedMatrix::Data(d) => sample_covariance(d),
        }
    }
}

struct Table {
    header: Option<Vec<String>>,
    rows: Vec<Vec<f64>>,
}

/// Parses comma-separated numbers. A first row containing any non-numeric
/// field is taken as a header of variable names. Locations are 1-based file
/// rows and columns.
fn parse_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SpcaError::ParseError {
            row: r + 1,
            col: 0,
            msg: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(SpcaError::RaggedRows {
                row: r + 1,
                expected,
                got: record.len(),
            });
        }
        let parsed: Vec<std::result::Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if r == 0 && parsed.iter().any(|p| p.is_err()) {
            header = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        let mut row = Vec::with_capacity(expected);
        for (c, (p, raw)) in parsed.into_iter().zip(record.iter()).enumerate() {
            match p {
                Ok(v) if v.is_finite() => row.push(v),
                Ok(_) => {
                    return Err(SpcaError::ParseError {
                        row: r + 1,
                        col: c + 1,
                        msg: format!("non-finite value `{raw}`"),
                    })
                }
                Err(e) => {
                    return Err(SpcaError::ParseError {
                        row: r + 1,
                        col: c + 1,
                        msg: format!("`{raw}`: {e}"),
                    })
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SpcaError::EmptyMatrix);
    }
    Ok(Table { header, rows })
}

pub fn parse_covariance(text: &str) -> Result<(SymmetricMatrix, Option<Vec<String>>)> {
    let table = parse_table(text)?;
    let n = table.rows.len();
    let cols = table.rows[0].len();
    if n != cols {
        return Err(SpcaError::NotSquare { rows: n, cols });
    }
    let m = DMatrix::from_fn(n, n, |i, j| table.rows[i][j]);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (m[(i, j)] - m[(j, i)]).abs();
            if diff > ASYMMETRY_TOL * scale {
                return Err(SpcaError::AsymmetricInput {
                    row: i + 1,
                    col: j + 1,
                    diff,
                });
            }
        }
    }
    Ok((SymmetricMatrix::new(m)?, table.header))
}

pub fn parse_data(text: &str) -> Result<DataMatrix> {
    let table = parse_table(text)?;
    let (m, n) = (table.rows.len(), table.rows[0].len());
    DataMatrix::new(DMatrix::from_fn(m, n, |i, j| table.rows[i][j]), table.header)
}

pub fn load_matrix(path: impl AsRef<Path>, kind: InputKind) -> Result<LoadedMatrix> {
    let text = fs::read_to_string(path)?;
    match kind {
        InputKind::Covariance => {
            let (sigma, names) = parse_covariance(&text)?;
            Ok(LoadedMatrix::Covariance { sigma, names })
        }
        InputKind::Data => parse_data(&text).map(LoadedMatrix::Data),
    }
}

/// Column-centered covariance normalized by `1/(m-1)`.
pub fn sample_covariance(data: &DataMatrix) -> Result<SymmetricMatrix> {
    let m = data.rows();
    if m < 2 {
        return Err(SpcaError::TooFewRows(m));
    }
    let mut centered = data.values.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    SymmetricMatrix::new(centered.tr_mul(&centered) / (m - 1) as f64)
}

/// `r[t][i] = ln(p[t+1][i] / p[t][i])`; names carry over.
pub fn log_returns(prices: &DataMatrix) -> Result<DataMatrix> {
    let m = prices.rows();
    if m < 2 {
        return Err(SpcaError::TooFewRows(m));
    }
    if let Some(((row, col), &value)) = prices
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| ((k % m, k / m), v))
        .find(|(_, v)| **v <= 0.0)
    {
        return Err(SpcaError::NonPositivePrice {
            row: row + 1,
            col: col + 1,
            value,
        });
    }
    let p = &prices.values;
    let r = DMatrix::from_fn(m - 1, p.ncols(), |t, i| (p[(t + 1, i)] / p[(t, i)]).ln());
    DataMatrix::new(r, prices.names.clone())
}

/// One component as reported: 1-based support plus optional variable names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub support: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_names: Option<Vec<String>>,
    pub loadings: Vec<f64>,
    pub variance: f64,
    pub penalized_objective: Option<f64>,
}

impl ComponentReport {
    pub fn from_component(c: &SparseComponent, names: Option<&[String]>) -> Self {
        Self {
            support: c.support.one_based(),
            support_names: names.map(|n| c.support.indices().iter().map(|&i| n[i].clone()).collect()),
            loadings: c.loadings.clone(),
            variance: c.variance,
            penalized_objective: c.penalized_objective,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub params: RunParams,
    pub seed: Option<u64>,
    pub components: Vec<ComponentReport>,
    pub bounds: BoundsReport,
    pub timing_ms: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| SpcaError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_parsing() {
        let (s, names) = parse_covariance("2,1\n1,2").unwrap();
        assert_eq!(s, SymmetricMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap());
        assert!(names.is_none());
        assert!(matches!(
            parse_covariance("2,1\n0.9,2"),
            Err(SpcaError::AsymmetricInput { row: 1, col: 2, .. })
        ));
        let (s, _) = parse_covariance("2,1\n1.0000000001,2").unwrap();
        assert_eq!(s.get(0, 1), s.get(1, 0));
        assert!(matches!(parse_covariance("1,2,3\n4,5,6"), Err(SpcaError::NotSquare { .. })));
    }

    #[test]
    fn data_with_header() {
        let d = parse_data("a,b\n1,2\n3,4\n").unwrap();
        assert_eq!((d.rows(), d.cols()), (2, 2));
        assert_eq!(d.names().unwrap(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.values()[(1, 0)], 3.0);
    }

    #[test]
    fn parse_errors_carry_location() {
        assert!(matches!(
            parse_data("1,2\n3,x\n"),
            Err(SpcaError::ParseError { row: 2, col: 2, .. })
        ));
        assert!(matches!(
            parse_data("1,2\n3\n"),
            Err(SpcaError::RaggedRows { row: 2, expected: 2, got: 1 })
        ));
        assert!(matches!(parse_data("1,NaN"), Err(SpcaError::ParseError { row: 1, col: 2, .. })));
        assert!(matches!(parse_data("a,b\n"), Err(SpcaError::EmptyMatrix)));
    }

    #[test]
    fn sample_covariance_examples() {
        let d = DataMatrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(sample_covariance(&d).unwrap(), SymmetricMatrix::from_diagonal(&[2.0, 0.0]));
        let d = DataMatrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![4.0, 5.0]]).unwrap();
        let s = sample_covariance(&d).unwrap();
        assert_eq!(s.get(1, 1), 0.0);
        assert_eq!(s.get(0, 1), 0.0);
        let one = DataMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(sample_covariance(&one), Err(SpcaError::TooFewRows(1))));
    }

    #[test]
    fn log_return_examples() {
        let p = DataMatrix::from_rows(&[vec![1.0], vec![std::f64::consts::E]]).unwrap();
        let r = log_returns(&p).unwrap();
        assert_eq!(r.rows(), 1);
        assert!((r.values()[(0, 0)] - 1.0).abs() < 1e-15);
        let geo: Vec<Vec<f64>> = (0..10).map(|t| vec![100.0 * 1.01f64.powi(t), 7.0]).collect();
        let r = log_returns(&DataMatrix::from_rows(&geo).unwrap()).unwrap();
        for t in 0..9 {
            assert!((r.values()[(t, 0)] - 1.01f64.ln()).abs() < 1e-14);
            assert_eq!(r.values()[(t, 1)], 0.0);
        }
        let bad = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            log_returns(&bad),
            Err(SpcaError::NonPositivePrice { row: 2, col: 2, .. })
        ));
    }

    #[test]
    fn report_json_roundtrip() {
        let report = RunReport {
            method: "greedy".into(),
            params: RunParams {
                k: Some(2),
                ..Default::default()
            },
            seed: Some(7),
            components: vec![ComponentReport {
                support: vec![1, 2],
                support_names: Some(vec!["a".into(), "b".into()]),
                loadings: vec![0.1 + 0.2, -1.0 / 3.0, 0.0],
                variance: 3.0,
                penalized_objective: None,
            }],
            bounds: BoundsReport {
                upper: Some(3.5),
                ..Default::default()
            },
            timing_ms: 1.25,
        };
        let json = report.to_json().unwrap();
        let back = RunReport::from_json(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
