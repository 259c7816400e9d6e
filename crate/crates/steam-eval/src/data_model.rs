//! Cohort containers, covariate schema, and CSV ingestion/validation shared
//! by the whole pipeline.
//!
//! A study consists of three cohorts drawn from two populations: a labeled
//! source sample (covariates + binary outcome), an unlabeled source sample,
//! and an unlabeled target sample. All design matrices carry a leading
//! all-ones intercept column. Target outcomes, when present in an input file,
//! are quarantined as validation labels: estimation code never sees them;
//! only the `target_labeled` comparator and validation harnesses may ask for
//! them explicitly.

use ndarray::{Array1, Array2};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Immutable container for the three cohorts.
///
/// Construction validates the shape invariants (shared column count, leading
/// intercept column, finite covariates, outcomes in {0,1}); afterwards the
/// data is read-only and safe to share across parallel workers.
#[derive(Debug, Clone)]
pub struct StudyData {
    labeled_source: Array2<f64>,
    y: Array1<f64>,
    unlabeled_source: Array2<f64>,
    target: Array2<f64>,
    feature_names: Vec<String>,
    validation: Option<ValidationLabels>,
}

/// Outcomes observed for a subset of target rows, kept out of the estimation
/// path. Row indices refer to rows of the target matrix.
#[derive(Debug, Clone)]
pub struct ValidationLabels {
    pub target_rows: Vec<usize>,
    pub y: Vec<f64>,
}

impl StudyData {
    pub fn new(
        labeled_source: Array2<f64>,
        y: Array1<f64>,
        unlabeled_source: Array2<f64>,
        target: Array2<f64>,
        feature_names: Vec<String>,
        validation: Option<ValidationLabels>,
    ) -> Result<Self> {
        let cols = labeled_source.ncols();
        if cols < 2 {
            return Err(Error::InvalidInput(
                "design matrices need an intercept column plus at least one covariate".into(),
            ));
        }
        if unlabeled_source.ncols() != cols || target.ncols() != cols {
            return Err(Error::InvalidInput(format!(
                "cohort column counts differ: labeled {}, unlabeled {}, target {}",
                cols,
                unlabeled_source.ncols(),
                target.ncols()
            )));
        }
        if feature_names.len() != cols - 1 {
            return Err(Error::InvalidInput(format!(
                "{} feature names for {} covariate columns",
                feature_names.len(),
                cols - 1
            )));
        }
        if labeled_source.nrows() != y.len() {
            return Err(Error::InvalidInput(format!(
                "labeled rows {} != outcomes {}",
                labeled_source.nrows(),
                y.len()
            )));
        }
        for (name, m) in [
            ("labeled_source", &labeled_source),
            ("unlabeled_source", &unlabeled_source),
            ("target", &target),
        ] {
            if m.nrows() == 0 {
                return Err(Error::EmptyCohort {
                    cohort: match name {
                        "labeled_source" => "labeled source",
                        "unlabeled_source" => "unlabeled source",
                        _ => "target",
                    },
                });
            }
            for (i, row) in m.rows().into_iter().enumerate() {
                if row[0] != 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "{name} row {i} lacks the all-ones intercept column"
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "{name} row {i} contains a non-finite covariate"
                    )));
                }
            }
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("outcomes must be 0 or 1".into()));
        }
        if let Some(v) = &validation {
            if v.target_rows.len() != v.y.len() {
                return Err(Error::InvalidInput(
                    "validation label count mismatch".into(),
                ));
            }
            if v.target_rows.iter().any(|&r| r >= target.nrows()) {
                return Err(Error::InvalidInput(
                    "validation label row index out of range".into(),
                ));
            }
            if v.y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput(
                    "validation labels must be 0 or 1".into(),
                ));
            }
        }
        Ok(Self {
            labeled_source,
            y,
            unlabeled_source,
            target,
            feature_names,
            validation,
        })
    }

    /// Labeled source design matrix, n × (p+1).
    pub fn labeled_source(&self) -> &Array2<f64> {
        &self.labeled_source
    }

    /// Outcomes of the labeled source rows.
    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    /// Unlabeled source design matrix, N × (p+1).
    pub fn unlabeled_source(&self) -> &Array2<f64> {
        &self.unlabeled_source
    }

    /// Target design matrix, N_t × (p+1).
    pub fn target(&self) -> &Array2<f64> {
        &self.target
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Number of labeled source rows.
    pub fn n(&self) -> usize {
        self.labeled_source.nrows()
    }

    /// Number of unlabeled source rows.
    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled_source.nrows()
    }

    /// Number of target rows.
    pub fn n_target(&self) -> usize {
        self.target.nrows()
    }

    /// Number of covariate columns excluding the intercept.
    pub fn p(&self) -> usize {
        self.labeled_source.ncols() - 1
    }

    /// Quarantined target outcomes. Estimators must not call this; it exists
    /// for the `target_labeled` comparator and for validation harnesses.
    pub fn validation_labels(&self) -> Option<&ValidationLabels> {
        self.validation.as_ref()
    }
}

/// One term of a basis expansion. Covariates are numbered from 1 in the order
/// of `feature_names` (column 0 of a design matrix is the intercept).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisTerm {
    /// Names an existing covariate column. Raw covariates are always part of
    /// the design, so this term adds nothing; it is validated and kept so
    /// that a basis can be written down in full.
    Raw(usize),
    /// Product of two distinct covariates; appends one column.
    Interaction(usize, usize),
}

/// An ordered collection of basis terms applied identically to all cohorts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BasisExpansion {
    pub terms: Vec<BasisTerm>,
}

impl BasisExpansion {
    /// Expansion consisting only of pairwise interactions.
    pub fn interactions(pairs: &[(usize, usize)]) -> Self {
        Self {
            terms: pairs
                .iter()
                .map(|&(a, b)| BasisTerm::Interaction(a, b))
                .collect(),
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        for term in &self.terms {
            match *term {
                BasisTerm::Raw(i) => {
                    if i == 0 || i > p {
                        return Err(Error::InvalidBasis(format!(
                            "raw column {i} out of range 1..={p}"
                        )));
                    }
                }
                BasisTerm::Interaction(a, b) => {
                    if a == 0 || a > p || b == 0 || b > p {
                        return Err(Error::InvalidBasis(format!(
                            "interaction ({a},{b}) out of range 1..={p}"
                        )));
                    }
                    if a == b {
                        return Err(Error::InvalidBasis(format!(
                            "interaction ({a},{b}) must name two distinct covariates"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn interaction_pairs(&self) -> Vec<(usize, usize)> {
        self.terms
            .iter()
            .filter_map(|t| match *t {
                BasisTerm::Interaction(a, b) => Some((a, b)),
                BasisTerm::Raw(_) => None,
            })
            .collect()
    }
}

fn expand_matrix(m: &Array2<f64>, pairs: &[(usize, usize)]) -> Array2<f64> {
    let (rows, cols) = m.dim();
    let mut out = Array2::zeros((rows, cols + pairs.len()));
    out.slice_mut(ndarray::s![.., ..cols]).assign(m);
    for (k, &(a, b)) in pairs.iter().enumerate() {
        for r in 0..rows {
            out[[r, cols + k]] = m[[r, a]] * m[[r, b]];
        }
    }
    out
}

/// Appends one product column per interaction term to every cohort matrix.
/// The intercept stays first and raw covariates keep their positions.
pub fn expand_basis(data: &StudyData, expansion: &BasisExpansion) -> Result<StudyData> {
    expansion.validate(data.p())?;
    let pairs = expansion.interaction_pairs();
    let mut names = data.feature_names.clone();
    for &(a, b) in &pairs {
        names.push(format!(
            "{}*{}",
            data.feature_names[a - 1],
            data.feature_names[b - 1]
        ));
    }
    StudyData::new(
        expand_matrix(&data.labeled_source, &pairs),
        data.y.clone(),
        expand_matrix(&data.unlabeled_source, &pairs),
        expand_matrix(&data.target, &pairs),
        names,
        data.validation.clone(),
    )
}

/// Column-role bindings for CSV ingestion.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub s_col: String,
    pub label_col: String,
    pub y_col: String,
    /// Covariate columns in order; `None` means every column that is not a
    /// role column, in file order.
    pub feature_cols: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            s_col: "s".into(),
            label_col: "labeled".into(),
            y_col: "y".into(),
            feature_cols: None,
        }
    }
}

fn parse_flag(raw: &str, line: usize, column: &str) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Csv {
            line,
            column: column.to_string(),
            message: format!("expected 0 or 1, got `{other}`"),
        }),
    }
}

/// Reads a study from a UTF-8, comma-separated file with a mandatory header.
///
/// Rows with s=1 and labeled=1 become the labeled source cohort (y required),
/// s=1 and labeled=0 the unlabeled source cohort, and s=0 the target cohort.
/// A y value on a target row is stored as a quarantined validation label. An
/// intercept column is prepended to every cohort.
pub fn load_study_csv(path: &Path, schema: &CsvSchema) -> Result<StudyData> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or(Error::Csv {
            line: 1,
            column: name.to_string(),
            message: "column not found in header".into(),
        })
    };
    let s_idx = find(&schema.s_col)?;
    let label_idx = find(&schema.label_col)?;
    let y_idx = match headers.iter().position(|h| h == &schema.y_col) {
        Some(i) => Some(i),
        None => None,
    };
    let feature_idx: Vec<usize> = match &schema.feature_cols {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != s_idx && i != label_idx && Some(i) != y_idx)
            .collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::InvalidInput("no covariate columns".into()));
    }
    let feature_names: Vec<String> = feature_idx.iter().map(|&i| headers[i].clone()).collect();
    let width = feature_idx.len() + 1;

    let mut labeled_rows: Vec<f64> = Vec::new();
    let mut y_vals: Vec<f64> = Vec::new();
    let mut unlabeled_rows: Vec<f64> = Vec::new();
    let mut target_rows: Vec<f64> = Vec::new();
    let mut validation_rows: Vec<usize> = Vec::new();
    let mut validation_y: Vec<f64> = Vec::new();

    for (rec_no, record) in reader.records().enumerate() {
        let line = rec_no + 2; // header is line 1
        let record = record?;
        let get = |idx: usize| record.get(idx).unwrap_or("");
        let s = parse_flag(get(s_idx), line, &schema.s_col)?;
        let labeled = s && parse_flag(get(label_idx), line, &schema.label_col)?;

        let y_raw = y_idx.map(|i| get(i).trim()).unwrap_or("");
        let y_val = if y_raw.is_empty() {
            None
        } else {
            match y_raw {
                "0" => Some(0.0),
                "1" => Some(1.0),
                other => {
                    return Err(Error::Csv {
                        line,
                        column: schema.y_col.clone(),
                        message: format!("outcome must be 0 or 1, got `{other}`"),
                    })
                }
            }
        };

        let mut row = Vec::with_capacity(width);
        row.push(1.0);
        for &fi in &feature_idx {
            let raw = get(fi).trim();
            let v: f64 = raw.parse().map_err(|_| Error::Csv {
                line,
                column: headers[fi].clone(),
                message: format!("non-numeric covariate `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line,
                    column: headers[fi].clone(),
                    message: "non-finite covariate".into(),
                });
            }
            row.push(v);
        }

        match (s, labeled) {
            (true, true) => {
                let y = y_val.ok_or(Error::MissingOutcome { line })?;
                labeled_rows.extend_from_slice(&row);
                y_vals.push(y);
            }
            (true, false) => unlabeled_rows.extend_from_slice(&row),
            (false, _) => {
                if let Some(y) = y_val {
                    validation_rows.push(target_rows.len() / width);
                    validation_y.push(y);
                }
                target_rows.extend_from_slice(&row);
            }
        }
    }

    let to_matrix = |rows: Vec<f64>, cohort: &'static str| -> Result<Array2<f64>> {
        if rows.is_empty() {
            return Err(Error::EmptyCohort { cohort });
        }
        let n = rows.len() / width;
        Array2::from_shape_vec((n, width), rows)
            .map_err(|e| Error::InvalidInput(format!("shape error: {e}")))
    };

    let validation = if validation_rows.is_empty() {
        None
    } else {
        Some(ValidationLabels {
            target_rows: validation_rows,
            y: validation_y,
        })
    };

    StudyData::new(
        to_matrix(labeled_rows, "labeled source")?,
        Array1::from_vec(y_vals),
        to_matrix(unlabeled_rows, "unlabeled source")?,
        to_matrix(target_rows, "target")?,
        feature_names,
        validation,
    )
}

fn push_row(out: &mut String, s: u8, labeled: u8, y: Option<f64>, row: &[f64]) {
    let _ = write!(out, "{s},{labeled},");
    if let Some(y) = y {
        let _ = write!(out, "{y}");
    }
    for v in &row[1..] {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
}

/// Writes a study back to CSV in the layout `load_study_csv` reads. The
/// intercept column is dropped; validation labels, if any, are written into
/// the y column of their target rows so that a round trip is the identity.
pub fn save_study_csv(data: &StudyData, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("s,labeled,y");
    for name in data.feature_names() {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (i, row) in data.labeled_source.rows().into_iter().enumerate() {
        push_row(&mut out, 1, 1, Some(data.y[i]), row.as_slice().unwrap());
    }
    for row in data.unlabeled_source.rows() {
        push_row(&mut out, 1, 0, None, row.as_slice().unwrap());
    }
    let mut validation_of_row = vec![None; data.target.nrows()];
    if let Some(v) = &data.validation {
        for (&r, &y) in v.target_rows.iter().zip(&v.y) {
            validation_of_row[r] = Some(y);
        }
    }
    for (i, row) in data.target.rows().into_iter().enumerate() {
        push_row(&mut out, 0, 0, validation_of_row[i], row.as_slice().unwrap());
    }
    std::fs::write(path, out)?;
    Ok(())
}
