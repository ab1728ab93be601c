//! Logistic regression by Newton's method (IRLS) with an optional ridge
//! penalty, plus design-matrix encoding of mixed-type cohort columns.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CovariateKind, CovariateValue, MISSING_LEVEL};
use crate::error::{Error, Result};
use crate::num::{sigmoid, Real};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Version tag written into exported models.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// What a design-matrix column holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnDescriptor {
    Intercept,
    /// Standardized numeric covariate: `(value - mean) / sd`.
    Numeric {
        name: String,
        mean: f64,
        sd: f64,
    },
    /// 0/1 flag; missing values take `fill`.
    Binary {
        name: String,
        fill: f64,
    },
    /// 1 when the categorical feature equals `level`.
    Indicator {
        name: String,
        level: String,
    },
    /// 1 when the feature is missing.
    MissingFlag {
        name: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Impute numeric/binary gaps with the subset mean and add a missingness column.
    #[default]
    ImputeWithIndicator,
    /// Impute with the subset mean only.
    Impute,
}

/// Dense row-major design matrix. Column 0 is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    columns: Vec<ColumnDescriptor>,
    values: Vec<T>,
    n_rows: usize,
    /// Source cohort record position of each row.
    row_index: Vec<usize>,
}

impl<T: Real> DesignMatrix<T> {
    /// Builds a matrix from raw feature rows, prepending the intercept.
    /// Features are used as given (no standardization).
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        let mut columns = vec![ColumnDescriptor::Intercept];
        columns.extend((0..p).map(|j| ColumnDescriptor::Numeric {
            name: format!("x{}", j + 1),
            mean: 0.0,
            sd: 1.0,
        }));
        let mut values = Vec::with_capacity(rows.len() * (p + 1));
        for r in rows {
            values.push(T::one());
            values.extend_from_slice(r);
        }
        Ok(Self {
            columns,
            values,
            n_rows: rows.len(),
            row_index: (0..rows.len()).collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnDescriptor] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> &[T] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn row_index(&self) -> &[usize] {
        &self.row_index
    }

    /// Values of one column.
    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.n_rows).map(|i| self.row(i)[j]).collect()
    }
}

/// Where an encoded feature's values come from.
#[derive(Debug, Clone, Copy)]
enum Source {
    Covariate(usize, CovariateKind),
    Protected(usize),
}

fn resolve(cohort: &Cohort, name: &str) -> Result<Source> {
    let schema = cohort.schema();
    if let Some(j) = schema.covariate_index(name) {
        return Ok(Source::Covariate(j, schema.covariate_columns[j].kind));
    }
    if let Some(j) = schema.protected_index(name) {
        return Ok(Source::Protected(j));
    }
    Err(Error::UnknownCovariate(name.to_owned()))
}

fn numeric_at(cohort: &Cohort, src: Source, i: usize) -> Option<f64> {
    match src {
        Source::Covariate(j, _) => cohort.records()[i].covariates[j].as_f64(),
        Source::Protected(_) => None,
    }
}

fn category_at(cohort: &Cohort, src: Source, i: usize) -> String {
    let r = &cohort.records()[i];
    match src {
        Source::Covariate(j, _) => match &r.covariates[j] {
            CovariateValue::Category(s) => s.clone(),
            CovariateValue::Missing => MISSING_LEVEL.to_owned(),
            CovariateValue::Numeric(x) => format!("{x}"),
            CovariateValue::Binary(b) => u8::from(*b).to_string(),
        },
        Source::Protected(j) => r.protected[j]
            .clone()
            .unwrap_or_else(|| MISSING_LEVEL.to_owned()),
    }
}

fn feature_name(c: &ColumnDescriptor) -> Option<&str> {
    match c {
        ColumnDescriptor::Intercept => None,
        ColumnDescriptor::Numeric { name, .. }
        | ColumnDescriptor::Binary { name, .. }
        | ColumnDescriptor::Indicator { name, .. }
        | ColumnDescriptor::MissingFlag { name } => Some(name),
    }
}

/// Encodes the named features of the records at `indices`.
///
/// Features may be covariates or protected attributes (the latter are
/// treated as categorical). Categorical features with k levels give k - 1
/// indicators, the first level seen in `indices` being the reference;
/// missing categories form their own level. Numeric features are
/// standardized with the population standard deviation, and constant ones
/// are dropped.
pub fn encode_design<T: Real>(
    cohort: &Cohort,
    indices: &[usize],
    features: &[String],
    policy: MissingPolicy,
) -> Result<DesignMatrix<T>> {
    if indices.is_empty() {
        return Err(Error::Empty);
    }
    let mut columns = vec![ColumnDescriptor::Intercept];
    let mut seen = HashSet::new();
    for name in features {
        if !seen.insert(name.as_str()) {
            continue;
        }
        let src = resolve(cohort, name)?;
        let all_missing = indices.iter().all(|&i| match src {
            Source::Covariate(j, _) => cohort.records()[i].covariates[j].is_missing(),
            Source::Protected(j) => cohort.records()[i].protected[j].is_none(),
        });
        if all_missing {
            return Err(Error::CovariateAllMissing(name.clone()));
        }
        match src {
            Source::Covariate(_, CovariateKind::Numeric)
            | Source::Covariate(_, CovariateKind::Binary) => {
                let observed: Vec<f64> = indices
                    .iter()
                    .filter_map(|&i| numeric_at(cohort, src, i))
                    .collect();
                let n = observed.len() as f64;
                let mean = observed.iter().sum::<f64>() / n;
                let var = observed
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / n;
                let sd = var.sqrt();
                let any_missing = observed.len() < indices.len();
                if sd == 0.0 {
                    log::info!("dropping constant feature `{name}`");
                } else if matches!(src, Source::Covariate(_, CovariateKind::Numeric)) {
                    columns.push(ColumnDescriptor::Numeric {
                        name: name.clone(),
                        mean,
                        sd,
                    });
                } else {
                    columns.push(ColumnDescriptor::Binary {
                        name: name.clone(),
                        fill: mean,
                    });
                }
                if any_missing && policy == MissingPolicy::ImputeWithIndicator {
                    columns.push(ColumnDescriptor::MissingFlag { name: name.clone() });
                }
            }
            Source::Covariate(_, CovariateKind::Categorical) | Source::Protected(_) => {
                let mut levels: Vec<String> = Vec::new();
                for &i in indices {
                    let v = category_at(cohort, src, i);
                    if !levels.contains(&v) {
                        levels.push(v);
                    }
                }
                for level in levels.into_iter().skip(1) {
                    columns.push(ColumnDescriptor::Indicator {
                        name: name.clone(),
                        level,
                    });
                }
            }
        }
    }
    encode_with(cohort, indices, columns)
}

/// Encodes records using existing column descriptors, e.g. those of a
/// fitted model applied to new rows. Unseen categories map to the reference.
pub fn encode_with<T: Real>(
    cohort: &Cohort,
    indices: &[usize],
    columns: Vec<ColumnDescriptor>,
) -> Result<DesignMatrix<T>> {
    if columns.first() != Some(&ColumnDescriptor::Intercept) {
        return Err(Error::DescriptorMismatch);
    }
    let sources: Vec<Option<Source>> = columns
        .iter()
        .map(|c| feature_name(c).map(|n| resolve(cohort, n)).transpose())
        .collect::<Result<_>>()?;
    let p = columns.len();
    let mut values = Vec::with_capacity(indices.len() * p);
    for &i in indices {
        for (c, src) in columns.iter().zip(&sources) {
            let v = match (c, src) {
                (ColumnDescriptor::Intercept, _) => 1.0,
                (ColumnDescriptor::Numeric { mean, sd, .. }, Some(s)) => {
                    numeric_at(cohort, *s, i).map_or(0.0, |x| (x - mean) / sd)
                }
                (ColumnDescriptor::Binary { fill, .. }, Some(s)) => {
                    numeric_at(cohort, *s, i).unwrap_or(*fill)
                }
                (ColumnDescriptor::Indicator { level, .. }, Some(s)) => {
                    if category_at(cohort, *s, i) == *level {
                        1.0
                    } else {
                        0.0
                    }
                }
                (ColumnDescriptor::MissingFlag { .. }, Some(s)) => {
                    let missing = match s {
                        Source::Covariate(j, _) => cohort.records()[i].covariates[*j].is_missing(),
                        Source::Protected(j) => cohort.records()[i].protected[*j].is_none(),
                    };
                    if missing {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => unreachable!("non-intercept columns have a source"),
            };
            values.push(T::from_f64_lossy(v));
        }
    }
    Ok(DesignMatrix {
        columns,
        values,
        n_rows: indices.len(),
        row_index: indices.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub ridge: T,
    pub max_iter: usize,
    pub tol: T,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            ridge: T::lit(DEFAULT_RIDGE),
            max_iter: DEFAULT_MAX_ITER,
            tol: T::lit(DEFAULT_TOL),
        }
    }
}

impl<T: Real> FitOptions<T> {
    pub fn with_ridge(mut self, ridge: T) -> Self {
        self.ridge = ridge;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel<T> {
    pub columns: Vec<ColumnDescriptor>,
    pub coefficients: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: T,
    pub ridge: T,
}

fn penalized(columns: &[ColumnDescriptor], j: usize) -> bool {
    columns[j] != ColumnDescriptor::Intercept
}

fn linear_predictor<T: Real>(row: &[T], beta: &[T]) -> T {
    row.iter().zip(beta).map(|(&x, &b)| x * b).sum()
}

/// Penalized log-likelihood `l(beta) - ridge/2 * |beta_non-intercept|^2`.
pub fn log_likelihood<T: Real>(
    design: &DesignMatrix<T>,
    outcomes: &[bool],
    beta: &[T],
    ridge: T,
) -> T {
    let mut ll = T::zero();
    for (i, &y) in outcomes.iter().enumerate() {
        let eta = linear_predictor(design.row(i), beta);
        // log(1 + e^eta) evaluated stably
        let softplus = if eta > T::zero() {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        ll = ll + if y { eta } else { T::zero() } - softplus;
    }
    let penalty: T = (0..beta.len())
        .filter(|&j| penalized(design.columns(), j))
        .map(|j| beta[j] * beta[j])
        .sum();
    ll - ridge * T::lit(0.5) * penalty
}

/// Gradient of [`log_likelihood`] with respect to `beta`.
pub fn gradient<T: Real>(
    design: &DesignMatrix<T>,
    outcomes: &[bool],
    beta: &[T],
    ridge: T,
) -> Vec<T> {
    let p = design.n_cols();
    let mut g = vec![T::zero(); p];
    for (i, &y) in outcomes.iter().enumerate() {
        let row = design.row(i);
        let r = if y { T::one() } else { T::zero() } - sigmoid(linear_predictor(row, beta));
        for (gj, &x) in g.iter_mut().zip(row) {
            *gj = *gj + r * x;
        }
    }
    for (j, gj) in g.iter_mut().enumerate() {
        if penalized(design.columns(), j) {
            *gj = *gj - ridge * beta[j];
        }
    }
    g
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major, n x n)
/// by Cholesky factorization. Returns `None` when a pivot is not positive
/// relative to the diagonal scale.
fn cholesky_solve<T: Real>(mut a: Vec<T>, mut b: Vec<T>, n: usize) -> Option<Vec<T>> {
    let scale = (0..n).fold(T::zero(), |m, i| m.max(a[i * n + i].abs()));
    if !(scale > T::zero()) {
        return None;
    }
    let floor = scale * T::epsilon() * T::from_usize_lossy(n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d = d - a[j * n + k] * a[j * n + k];
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s = s - a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Some(b)
}

/// Fits `P(y = 1 | x) = sigmoid(x . beta)` by Newton's method from zero.
///
/// Converged means the gradient max-norm is at most `tol` after a Newton
/// step that was already small. Perfectly separable data with no ridge
/// penalty drives the coefficients to infinity; that case comes back as a
/// model with `converged = false`.
pub fn fit_logistic<T: Real>(
    design: &DesignMatrix<T>,
    outcomes: &[bool],
    options: FitOptions<T>,
) -> Result<LogisticModel<T>> {
    let n = design.n_rows();
    let p = design.n_cols();
    if outcomes.len() != n {
        return Err(Error::LengthMismatch(n, outcomes.len()));
    }
    if !outcomes.iter().any(|&y| y) || outcomes.iter().all(|&y| y) {
        return Err(Error::SingleClass);
    }
    if options.ridge < T::zero() {
        return Err(Error::InvalidArgument("ridge penalty must be >= 0".into()));
    }
    let columns = design.columns();
    let mut beta = vec![T::zero(); p];
    let mut last_step: Option<T> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut gnorm;
    loop {
        let g = gradient(design, outcomes, &beta, options.ridge);
        gnorm = max_abs(&g);
        let step_small =
            last_step.is_none_or(|s| s <= options.tol.sqrt() * (T::one() + max_abs(&beta)));
        if gnorm <= options.tol && step_small {
            converged = true;
            break;
        }
        if last_step.is_some_and(|s| s <= options.tol) || iterations >= options.max_iter {
            break;
        }

        let mut h = vec![T::zero(); p * p];
        let mut saturated = true;
        for (i, &y) in outcomes.iter().enumerate() {
            let row = design.row(i);
            let prob = sigmoid(linear_predictor(row, &beta));
            let target = if y { T::one() } else { T::zero() };
            if (target - prob).abs() > T::lit(1e-6) {
                saturated = false;
            }
            let w = prob * (T::one() - prob);
            for a in 0..p {
                let wa = w * row[a];
                for b in 0..=a {
                    h[a * p + b] = h[a * p + b] + wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[b * p + a] = h[a * p + b];
            }
            if penalized(columns, a) {
                h[a * p + a] = h[a * p + a] + options.ridge;
            }
        }
        let Some(step) = cholesky_solve(h, g, p) else {
            if saturated {
                log::warn!("logistic fit: data are perfectly separable; coefficients diverge");
                break;
            }
            return Err(Error::SingularHessian);
        };
        for (b, s) in beta.iter_mut().zip(&step) {
            *b = *b + *s;
        }
        last_step = Some(max_abs(&step));
        iterations += 1;
    }
    if !converged {
        log::warn!("logistic fit did not converge after {iterations} iteration(s)");
    }
    Ok(LogisticModel {
        columns: columns.to_vec(),
        coefficients: beta,
        converged,
        iterations,
        final_gradient_norm: gnorm,
        ridge: options.ridge,
    })
}

/// `sigmoid(x . beta)` for every row.
pub fn predict_proba<T: Real>(
    model: &LogisticModel<T>,
    design: &DesignMatrix<T>,
) -> Result<Vec<T>> {
    if design.columns() != model.columns.as_slice() {
        return Err(Error::DescriptorMismatch);
    }
    Ok((0..design.n_rows())
        .map(|i| sigmoid(linear_predictor(design.row(i), &model.coefficients)))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct ModelRecord<T> {
    schema_version: u32,
    #[serde(flatten)]
    model: LogisticModel<T>,
}

impl<T: Real + Serialize + for<'de> Deserialize<'de>> LogisticModel<T> {
    /// Structured text export: column descriptors and coefficients.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelRecord {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ModelRecord<T> = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("model record: {e}")))?;
        if rec.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model schema version {}",
                rec.schema_version
            )));
        }
        Ok(rec.model)
    }
}
