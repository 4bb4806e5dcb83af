//! Observation containers and CSV ingestion.
//!
//! The unit of analysis is a pooled sample over two populations: a source
//! randomized trial (selection indicator s = 1) contributing covariates,
//! randomized treatment and outcome, and a target sample (s = 0) contributing
//! covariates and, optionally, control-arm outcomes. Treatment in the trial
//! is assigned with a known probability `pi`.
//!
//! [`StudyData`] is immutable after construction and validated on every
//! construction path, so downstream estimators can assume:
//!
//! * every source row carries a binary treatment and a finite outcome,
//! * target rows carry either no treatment/outcome or a control-arm pair
//!   (a = 0 with finite outcome), never treatment,
//! * both populations and both source arms are non-empty,
//! * all covariates are finite.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Default trial assignment probability when none is supplied.
pub const DEFAULT_PI: f64 = 0.5;

/// A single observation, used for construction and row-level iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Population indicator: true = source trial, false = target.
    pub source: bool,
    /// Covariate vector, length p.
    pub x: Vec<f64>,
    /// Treatment arm; always present on source rows.
    pub a: Option<bool>,
    /// Outcome; present exactly where `a` is.
    pub y: Option<f64>,
}

/// Pooled two-population sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyData {
    s: Vec<bool>,
    x: DMatrix<f64>,
    a: Vec<Option<bool>>,
    y: Vec<Option<f64>>,
    pi: f64,
}

impl StudyData {
    /// Build and validate a dataset from parallel columns.
    ///
    /// `x` is N x p row-major: `x[i]` is observation i's covariate vector.
    pub fn new(
        s: Vec<bool>,
        x: Vec<Vec<f64>>,
        a: Vec<Option<bool>>,
        y: Vec<Option<f64>>,
        pi: f64,
    ) -> Result<Self> {
        let n_rows = s.len();
        if x.len() != n_rows || a.len() != n_rows || y.len() != n_rows {
            return Err(Error::Validation(format!(
                "column lengths disagree: s={}, x={}, a={}, y={}",
                s.len(),
                x.len(),
                a.len(),
                y.len()
            )));
        }
        if n_rows == 0 {
            return Err(Error::Validation("empty dataset".into()));
        }
        let p = x[0].len();
        for (i, xi) in x.iter().enumerate() {
            if xi.len() != p {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("covariate vector has {} entries, expected {p}", xi.len()),
                });
            }
        }
        let x = DMatrix::from_fn(n_rows, p, |i, j| x[i][j]);
        let data = StudyData { s, x, a, y, pi };
        data.validate()?;
        Ok(data)
    }

    /// Build from an iterator of rows; all rows must share the covariate
    /// dimension.
    pub fn from_rows<I: IntoIterator<Item = Row>>(rows: I, pi: f64) -> Result<Self> {
        let mut s = Vec::new();
        let mut x = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        for row in rows {
            s.push(row.source);
            x.push(row.x);
            a.push(row.a);
            y.push(row.y);
        }
        StudyData::new(s, x, a, y, pi)
    }

    fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::Validation(format!(
                "assignment probability pi must lie in (0, 1), got {}",
                self.pi
            )));
        }
        if self.x.ncols() == 0 {
            return Err(Error::Validation("no covariate columns".into()));
        }
        let mut n = 0usize;
        let mut arm = [0usize; 2];
        for i in 0..self.len() {
            let row = i + 1;
            for j in 0..self.x.ncols() {
                if !self.x[(i, j)].is_finite() {
                    return Err(Error::Parse {
                        row,
                        message: format!("covariate {} is not finite", j + 1),
                    });
                }
            }
            match (self.s[i], self.a[i], self.y[i]) {
                (true, Some(a), Some(y)) => {
                    if !y.is_finite() {
                        return Err(Error::Parse {
                            row,
                            message: "source outcome is not finite".into(),
                        });
                    }
                    n += 1;
                    arm[a as usize] += 1;
                }
                (true, _, _) => {
                    return Err(Error::Parse {
                        row,
                        message: "source rows must carry treatment and outcome".into(),
                    });
                }
                (false, None, None) => {}
                (false, Some(true), _) => {
                    return Err(Error::Parse {
                        row,
                        message: "target rows never carry treatment".into(),
                    });
                }
                (false, Some(false), Some(y)) => {
                    if !y.is_finite() {
                        return Err(Error::Parse {
                            row,
                            message: "target control outcome is not finite".into(),
                        });
                    }
                }
                (false, _, _) => {
                    return Err(Error::Parse {
                        row,
                        message: "target rows carry either nothing or a control-arm outcome pair"
                            .into(),
                    });
                }
            }
        }
        if n == 0 {
            return Err(Error::Validation(
                "no source (s=1) rows; need data from both populations".into(),
            ));
        }
        if n == self.len() {
            return Err(Error::Validation(
                "no target (s=0) rows; need data from both populations".into(),
            ));
        }
        if arm[0] == 0 || arm[1] == 0 {
            return Err(Error::Validation(format!(
                "both source arms must be non-empty (control {}, treated {})",
                arm[0], arm[1]
            )));
        }
        Ok(())
    }

    /// Total observations N.
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        false // validation guarantees at least one row per population
    }

    /// Source sample size n.
    pub fn n_source(&self) -> usize {
        self.s.iter().filter(|&&s| s).count()
    }

    /// Target sample size m = N - n.
    pub fn n_target(&self) -> usize {
        self.len() - self.n_source()
    }

    /// Estimated selection probability alpha-hat = n / N.
    pub fn alpha_hat(&self) -> f64 {
        self.n_source() as f64 / self.len() as f64
    }

    /// Covariate dimension p.
    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Trial assignment probability.
    pub fn pi(&self) -> f64 {
        self.pi
    }

    /// Population indicator for row i (true = source).
    pub fn source(&self, i: usize) -> bool {
        self.s[i]
    }

    /// Treatment arm for row i.
    pub fn a(&self, i: usize) -> Option<bool> {
        self.a[i]
    }

    /// Outcome for row i.
    pub fn y(&self, i: usize) -> Option<f64> {
        self.y[i]
    }

    /// Covariate matrix, N x p.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Covariate vector of row i.
    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Whether any target row carries a control-arm outcome.
    pub fn has_target_outcomes(&self) -> bool {
        (0..self.len()).any(|i| !self.s[i] && self.y[i].is_some())
    }

    /// Number of target rows carrying a control-arm outcome.
    pub fn n_target_controls(&self) -> usize {
        (0..self.len())
            .filter(|&i| !self.s[i] && self.y[i].is_some())
            .count()
    }

    /// Iterate rows in order.
    pub fn rows(&self) -> impl Iterator<Item = Row> + '_ {
        (0..self.len()).map(move |i| Row {
            source: self.s[i],
            x: self.x_row(i),
            a: self.a[i],
            y: self.y[i],
        })
    }

    /// New dataset from the given row indices (repeats allowed, as in
    /// bootstrap resampling). Fails if the selection breaks an invariant,
    /// e.g. empties a population or a source arm.
    pub fn subset(&self, indices: &[usize]) -> Result<StudyData> {
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Validation(format!(
                    "subset index {i} out of bounds for {} rows",
                    self.len()
                )));
            }
        }
        let s: Vec<bool> = indices.iter().map(|&i| self.s[i]).collect();
        let a: Vec<Option<bool>> = indices.iter().map(|&i| self.a[i]).collect();
        let y: Vec<Option<f64>> = indices.iter().map(|&i| self.y[i]).collect();
        let p = self.x.ncols();
        let x = DMatrix::from_fn(indices.len(), p, |i, j| self.x[(indices[i], j)]);
        let data = StudyData {
            s,
            x,
            a,
            y,
            pi: self.pi,
        };
        data.validate()?;
        Ok(data)
    }
}

/// Per-covariate summary within one population.
#[derive(Debug, Clone, Serialize)]
pub struct CovariateSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Deterministic summary of a [`StudyData`].
#[derive(Debug, Clone, Serialize)]
pub struct DataProfile {
    pub n_total: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub alpha_hat: f64,
    pub pi: f64,
    /// Source arm sizes (control, treated).
    pub arm_control: usize,
    pub arm_treated: usize,
    pub n_target_controls: usize,
    pub covariates_source: CovariateSummary,
    pub covariates_target: CovariateSummary,
    /// Mean outcome in the source control / treated arms.
    pub outcome_mean_control: f64,
    pub outcome_mean_treated: f64,
    /// Mean outcome among target controls, when observed.
    pub outcome_mean_target_controls: Option<f64>,
}

/// Summarize a dataset: counts, design constants, per-population covariate
/// moments, and arm-wise outcome means.
pub fn profile(d: &StudyData) -> DataProfile {
    let p = d.n_covariates();
    let mut sums = [vec![0.0; p], vec![0.0; p]];
    let mut sqsums = [vec![0.0; p], vec![0.0; p]];
    let mut counts = [0usize; 2];
    let mut arm_n = [0usize; 2];
    let mut arm_sum = [0.0f64; 2];
    let mut tc_n = 0usize;
    let mut tc_sum = 0.0f64;
    for i in 0..d.len() {
        let pop = d.source(i) as usize;
        counts[pop] += 1;
        for j in 0..p {
            let v = d.x()[(i, j)];
            sums[pop][j] += v;
            sqsums[pop][j] += v * v;
        }
        match (d.source(i), d.a(i), d.y(i)) {
            (true, Some(a), Some(y)) => {
                arm_n[a as usize] += 1;
                arm_sum[a as usize] += y;
            }
            (false, Some(false), Some(y)) => {
                tc_n += 1;
                tc_sum += y;
            }
            _ => {}
        }
    }
    let summarize = |pop: usize| {
        let c = counts[pop] as f64;
        let mean: Vec<f64> = sums[pop].iter().map(|s| s / c).collect();
        let sd: Vec<f64> = sqsums[pop]
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / c - m * m).max(0.0).sqrt())
            .collect();
        CovariateSummary { mean, sd }
    };
    DataProfile {
        n_total: d.len(),
        n_source: d.n_source(),
        n_target: d.n_target(),
        alpha_hat: d.alpha_hat(),
        pi: d.pi(),
        arm_control: arm_n[0],
        arm_treated: arm_n[1],
        n_target_controls: tc_n,
        covariates_source: summarize(1),
        covariates_target: summarize(0),
        outcome_mean_control: arm_sum[0] / arm_n[0] as f64,
        outcome_mean_treated: arm_sum[1] / arm_n[1] as f64,
        outcome_mean_target_controls: (tc_n > 0).then(|| tc_sum / tc_n as f64),
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub col_s: String,
    pub col_a: String,
    pub col_y: String,
    pub cols_x: Vec<String>,
    /// Trial assignment probability to attach to the loaded data.
    pub pi: f64,
}

impl CsvSchema {
    pub fn new(
        col_s: impl Into<String>,
        col_a: impl Into<String>,
        col_y: impl Into<String>,
        cols_x: Vec<String>,
    ) -> Self {
        CsvSchema {
            col_s: col_s.into(),
            col_a: col_a.into(),
            col_y: col_y.into(),
            cols_x,
            pi: DEFAULT_PI,
        }
    }

    pub fn with_pi(mut self, pi: f64) -> Self {
        self.pi = pi;
        self
    }
}

/// Load a dataset from a headered CSV file.
///
/// S and A must be 0/1; A and Y cells may be empty on target rows (and only
/// there). Comma delimiter, '.' decimal separator, UTF-8.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<StudyData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("missing column `{name}` in {path:?}")))
    };
    if schema.cols_x.is_empty() {
        return Err(Error::Validation("schema names no covariate columns".into()));
    }
    let idx_s = find(&schema.col_s)?;
    let idx_a = find(&schema.col_a)?;
    let idx_y = find(&schema.col_y)?;
    let idx_x: Vec<usize> = schema
        .cols_x
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (rec_no, record) in reader.records().enumerate() {
        let row = rec_no + 1;
        let record = record?;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let source = parse_binary(cell(idx_s), row, &schema.col_s)? == 1;
        let a = match cell(idx_a) {
            "" => None,
            raw => Some(parse_binary(raw, row, &schema.col_a)? == 1),
        };
        let y = match cell(idx_y) {
            "" => None,
            raw => Some(parse_real(raw, row, &schema.col_y)?),
        };
        let x = idx_x
            .iter()
            .enumerate()
            .map(|(j, &idx)| parse_real(cell(idx), row, &schema.cols_x[j]))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Row { source, x, a, y });
    }
    StudyData::from_rows(rows, schema.pi)
}

/// Write a dataset back to CSV under the same schema. Numeric cells use the
/// shortest decimal form that parses back to the identical double, so a
/// write/load round trip is bit-exact.
pub fn write_csv(d: &StudyData, path: &Path, schema: &CsvSchema) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![
        schema.col_s.clone(),
        schema.col_a.clone(),
        schema.col_y.clone(),
    ];
    header.extend(schema.cols_x.iter().cloned());
    writer.write_record(&header)?;
    for row in d.rows() {
        let mut record = vec![
            if row.source { "1".to_string() } else { "0".to_string() },
            row.a.map(|a| if a { "1".into() } else { "0".into() }).unwrap_or_default(),
            row.y.map(|y| format!("{y}")).unwrap_or_default(),
        ];
        record.extend(row.x.iter().map(|v| format!("{v}")));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn parse_binary(raw: &str, row: usize, col: &str) -> Result<u8> {
    match raw {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::Parse {
            row,
            message: format!("column `{col}` must be 0 or 1, got `{raw}`"),
        }),
    }
}

fn parse_real(raw: &str, row: usize, col: &str) -> Result<f64> {
    if raw.is_empty() {
        return Err(Error::Parse {
            row,
            message: format!("column `{col}` is empty"),
        });
    }
    raw.parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("column `{col}` is not numeric: `{raw}`"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn toy() -> StudyData {
        // 4 source rows (2 per arm) and 2 target rows.
        StudyData::new(
            vec![true, true, true, true, false, false],
            vec![
                vec![0.1, 1.0],
                vec![-0.2, 2.0],
                vec![0.3, -1.0],
                vec![0.4, 0.5],
                vec![1.5, 0.0],
                vec![-1.5, 0.25],
            ],
            vec![
                Some(true),
                Some(false),
                Some(true),
                Some(false),
                None,
                None,
            ],
            vec![Some(1.0), Some(0.0), Some(1.0), Some(1.0), None, None],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn counts_and_constants() {
        let d = toy();
        assert_eq!(d.len(), 6);
        assert_eq!(d.n_source(), 4);
        assert_eq!(d.n_target(), 2);
        assert_eq!(d.n_covariates(), 2);
        assert!((d.alpha_hat() - 4.0 / 6.0).abs() < 1e-15);
        assert!(!d.has_target_outcomes());
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        // Target row with treatment.
        let err = StudyData::new(
            vec![true, true, false],
            vec![vec![0.0], vec![0.0], vec![0.0]],
            vec![Some(true), Some(false), Some(true)],
            vec![Some(1.0), Some(0.0), Some(1.0)],
            0.5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("never carry treatment"), "{err}");

        // All-source data.
        let err = StudyData::new(
            vec![true, true],
            vec![vec![0.0], vec![0.0]],
            vec![Some(true), Some(false)],
            vec![Some(1.0), Some(0.0)],
            0.5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("no target"), "{err}");

        // Empty treated arm.
        let err = StudyData::new(
            vec![true, true, false],
            vec![vec![0.0], vec![0.0], vec![0.0]],
            vec![Some(false), Some(false), None],
            vec![Some(1.0), Some(0.0), None],
            0.5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-empty"), "{err}");

        // NaN covariate names the row.
        let err = StudyData::new(
            vec![true, true, false],
            vec![vec![0.0], vec![f64::NAN], vec![0.0]],
            vec![Some(true), Some(false), None],
            vec![Some(1.0), Some(0.0), None],
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    }

    #[test]
    fn target_controls_are_accepted() {
        let d = StudyData::new(
            vec![true, true, false, false],
            vec![vec![0.0], vec![0.1], vec![0.2], vec![0.3]],
            vec![Some(true), Some(false), Some(false), None],
            vec![Some(1.0), Some(0.0), Some(0.5), None],
            0.5,
        )
        .unwrap();
        assert!(d.has_target_outcomes());
        assert_eq!(d.n_target_controls(), 1);
    }

    #[test]
    fn profile_reports_expected_summaries() {
        // n = 30 source, 70 target, constant covariate.
        let n_total = 100;
        let rows: Vec<Row> = (0..n_total)
            .map(|i| {
                let source = i < 30;
                Row {
                    source,
                    x: vec![1.0],
                    a: source.then(|| i % 2 == 0),
                    y: source.then(|| (i % 3) as f64),
                }
            })
            .collect();
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let p = profile(&d);
        assert_eq!(p.n_source, 30);
        assert!((p.alpha_hat - 0.3).abs() < 1e-15);
        assert_eq!(p.arm_control + p.arm_treated, 30);
        assert_eq!(p.covariates_source.sd[0], 0.0);
        assert_eq!(p.covariates_target.mean[0], 1.0);
        assert!(p.outcome_mean_target_controls.is_none());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let rows: Vec<Row> = (0..50)
            .map(|i| {
                let source = i % 3 != 0;
                let x = vec![
                    rng.gen::<f64>() * 1e3,
                    (rng.gen::<f64>() - 0.5) * 1e-7,
                    0.1 + 0.2, // classic non-representable sum
                ];
                Row {
                    source,
                    x,
                    a: source.then(|| rng.gen::<bool>()),
                    y: source.then(|| rng.gen::<f64>().mul_add(3.7, -1.3)),
                }
            })
            .collect();
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let schema = CsvSchema::new("s", "a", "y", vec!["x1".into(), "x2".into(), "x3".into()]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.csv");
        write_csv(&d, &path, &schema).unwrap();
        let back = load_csv(&path, &schema).unwrap();
        assert_eq!(d.len(), back.len());
        for i in 0..d.len() {
            assert_eq!(d.source(i), back.source(i));
            assert_eq!(d.a(i), back.a(i));
            assert_eq!(
                d.y(i).map(f64::to_bits),
                back.y(i).map(f64::to_bits),
                "row {i}"
            );
            for j in 0..d.n_covariates() {
                assert_eq!(
                    d.x()[(i, j)].to_bits(),
                    back.x()[(i, j)].to_bits(),
                    "row {i} covariate {j}"
                );
            }
        }
    }

    #[test]
    fn csv_errors_name_rows_and_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");

        std::fs::write(&path, "s,a,y,x1\n1,1,1.0,0.5\n2,0,0.0,0.1\n0,,,0.2\n").unwrap();
        let schema = CsvSchema::new("s", "a", "y", vec!["x1".into()]);
        let err = load_csv(&path, &schema).unwrap_err();
        match &err {
            Error::Parse { row, message } => {
                assert_eq!(*row, 2);
                assert!(message.contains("`s`"), "{message}");
            }
            other => panic!("expected Parse, got {other:?}"),
        }

        std::fs::write(&path, "s,a,y,x1\n1,1,1.0,abc\n0,,,0.2\n").unwrap();
        let err = load_csv(&path, &schema).unwrap_err();
        assert!(err.to_string().contains("not numeric"), "{err}");

        let missing = CsvSchema::new("s", "a", "y", vec!["nope".into()]);
        std::fs::write(&path, "s,a,y,x1\n1,1,1.0,0.5\n0,,,0.2\n").unwrap();
        let err = load_csv(&path, &missing).unwrap_err();
        assert!(err.to_string().contains("missing column `nope`"), "{err}");
    }

    #[test]
    fn load_csv_counts_populations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(
            &path,
            "s,a,y,x1,x2\n\
             1,1,2.5,0.1,1.0\n\
             1,0,1.5,-0.2,2.0\n\
             1,1,3.5,0.3,-1.0\n\
             1,0,0.5,0.4,0.5\n\
             0,,,1.5,0.0\n\
             0,,,-1.5,0.25\n",
        )
        .unwrap();
        let schema = CsvSchema::new("s", "a", "y", vec!["x1".into(), "x2".into()]).with_pi(0.5);
        let d = load_csv(&path, &schema).unwrap();
        assert_eq!(d.n_source(), 4);
        assert_eq!(d.n_target(), 2);
    }

    #[test]
    fn split_and_reconcat_preserves_rows() {
        let d = toy();
        let source_rows: Vec<Row> = d.rows().filter(|r| r.source).collect();
        let target_rows: Vec<Row> = d.rows().filter(|r| !r.source).collect();
        assert_eq!(source_rows.len() + target_rows.len(), d.len());
        let rebuilt = StudyData::from_rows(
            source_rows.into_iter().chain(target_rows),
            d.pi(),
        )
        .unwrap();
        // Same multiset of rows; order differs only between populations.
        let mut a: Vec<String> = d.rows().map(|r| format!("{r:?}")).collect();
        let mut b: Vec<String> = rebuilt.rows().map(|r| format!("{r:?}")).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn subset_supports_bootstrap_resampling() {
        let d = toy();
        let resampled = d.subset(&[0, 0, 1, 2, 4, 5]).unwrap();
        assert_eq!(resampled.len(), 6);
        assert_eq!(resampled.n_source(), 4);
        // Dropping all target rows violates validation.
        assert!(d.subset(&[0, 1, 2, 3]).is_err());
        assert!(d.subset(&[0, 1, 99]).is_err());
    }
}
