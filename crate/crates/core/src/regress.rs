//! Ordinary least squares with listwise deletion of missing rows.
//!
//! Fits use a Householder QR factorization of the column-equilibrated design
//! matrix. Degenerate fits (too few rows, rank deficiency) are reported through
//! `OlsResult::ok` rather than as errors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Surplus observations required beyond the number of regressors.
pub const DEFAULT_MIN_DOF: usize = 8;

/// Columns whose QR pivot falls below this (unit-norm columns) are treated as
/// linearly dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OlsOptions {
    pub include_intercept: bool,
    pub min_dof: usize,
}

impl Default for OlsOptions {
    fn default() -> Self {
        Self {
            include_intercept: true,
            min_dof: DEFAULT_MIN_DOF,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlsResult {
    /// Intercept first when included. Empty unless `ok`.
    pub coefficients: Vec<f64>,
    /// One entry per input row; `None` for dropped rows or failed fits.
    pub residuals: Vec<Option<f64>>,
    pub n_used: usize,
    pub ok: bool,
    /// 2-norm condition number of the column-equilibrated design.
    pub condition_number: Option<f64>,
}

impl OlsResult {
    fn failed(n_rows: usize, n_used: usize) -> Self {
        Self {
            coefficients: Vec::new(),
            residuals: vec![None; n_rows],
            n_used,
            ok: false,
            condition_number: None,
        }
    }

    /// Slope coefficients (intercept removed when present).
    pub fn slopes(&self, include_intercept: bool) -> &[f64] {
        if include_intercept && !self.coefficients.is_empty() {
            &self.coefficients[1..]
        } else {
            &self.coefficients
        }
    }
}

/// Fits `y` on the columns of `x`, dropping any row with a missing value.
pub fn ols(y: &[Option<f64>], x: &[&[Option<f64>]], opts: &OlsOptions) -> Result<OlsResult> {
    let n_rows = y.len();
    if let Some(bad) = x.iter().position(|c| c.len() != n_rows) {
        return Err(Error::Dimension(format!(
            "regressor column {bad} has {} rows, response has {n_rows}",
            x[bad].len()
        )));
    }
    let rows: Vec<usize> = (0..n_rows)
        .filter(|&r| y[r].is_some() && x.iter().all(|c| c[r].is_some()))
        .collect();
    let n = rows.len();
    let p = x.len() + usize::from(opts.include_intercept);
    if p == 0 || n < p + opts.min_dof {
        return Ok(OlsResult::failed(n_rows, n));
    }

    // Column-major design, each column scaled to unit norm.
    let mut a = vec![0.0; n * p];
    let mut scale = vec![1.0; p];
    {
        let mut j = 0;
        if opts.include_intercept {
            a[..n].fill(1.0);
            j = 1;
        }
        for c in x {
            for (k, &r) in rows.iter().enumerate() {
                a[j * n + k] = c[r].unwrap();
            }
            j += 1;
        }
    }
    for j in 0..p {
        let col = &mut a[j * n..(j + 1) * n];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(OlsResult::failed(n_rows, n));
        }
        col.iter_mut().for_each(|v| *v /= norm);
        scale[j] = norm;
    }
    let mut b: Vec<f64> = rows.iter().map(|&r| y[r].unwrap()).collect();

    // Householder QR; R overwrites the upper triangle, Qᵀ is applied to b.
    let mut diag = vec![0.0; p];
    for j in 0..p {
        let (col, rest) = a[j * n..].split_at_mut(n);
        let sigma = col[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if sigma <= RANK_TOL {
            return Ok(OlsResult::failed(n_rows, n));
        }
        let alpha = if col[j] > 0.0 { -sigma } else { sigma };
        col[j] -= alpha;
        let vnorm2 = col[j..].iter().map(|v| v * v).sum::<f64>();
        diag[j] = alpha;
        if vnorm2 > 0.0 {
            let v = &col[j..];
            let apply = |target: &mut [f64]| {
                let dot: f64 = v.iter().zip(&target[j..]).map(|(v, t)| v * t).sum();
                let f = 2.0 * dot / vnorm2;
                for (t, v) in target[j..].iter_mut().zip(v) {
                    *t -= f * v;
                }
            };
            apply(&mut b);
            for target in rest.chunks_mut(n) {
                apply(target);
            }
        }
    }

    // Back substitution on R c = Qᵀ b.
    let r_at = |i: usize, j: usize| if i == j { diag[j] } else { a[j * n + i] };
    let mut c = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = b[i];
        for j in (i + 1)..p {
            s -= r_at(i, j) * c[j];
        }
        c[i] = s / diag[i];
    }
    let coefficients: Vec<f64> = c.iter().zip(&scale).map(|(v, s)| v / s).collect();
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Ok(OlsResult::failed(n_rows, n));
    }

    let r_mat = DMatrix::from_fn(p, p, |i, j| if i <= j { r_at(i, j) } else { 0.0 });
    let sv = r_mat.singular_values();
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), s| (hi.max(*s), lo.min(*s)));
    let condition_number = (smin > 0.0).then(|| smax / smin);

    let mut residuals = vec![None; n_rows];
    for &r in &rows {
        let mut fitted = 0.0;
        let mut j = 0;
        if opts.include_intercept {
            fitted += coefficients[0];
            j = 1;
        }
        for col in x {
            fitted += coefficients[j] * col[r].unwrap();
            j += 1;
        }
        residuals[r] = Some(y[r].unwrap() - fitted);
    }

    Ok(OlsResult {
        coefficients,
        residuals,
        n_used: n,
        ok: true,
        condition_number,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RollingOptions {
    pub window: usize,
    /// Fraction of the window that must be usable rows.
    pub min_valid_fraction: f64,
    pub ols: OlsOptions,
}

impl RollingOptions {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            min_valid_fraction: 0.75,
            ols: OlsOptions::default(),
        }
    }

    fn min_rows(&self) -> usize {
        (self.min_valid_fraction * self.window as f64).ceil() as usize
    }
}

/// Trailing-window fits: the result at date `t` uses rows `t−window ..= t−1`
/// only, so it never sees data dated `t` or later.
pub fn rolling_ols(y: &[Option<f64>], x: &[&[Option<f64>]], opts: &RollingOptions) -> Result<Vec<OlsResult>> {
    let p = x.len() + usize::from(opts.ols.include_intercept);
    if opts.window < p + opts.ols.min_dof {
        return Err(Error::InvalidArgument(format!(
            "window {} is shorter than {} regressors plus {} surplus rows",
            opts.window, p, opts.ols.min_dof
        )));
    }
    if let Some(bad) = x.iter().position(|c| c.len() != y.len()) {
        return Err(Error::Dimension(format!("regressor column {bad} length differs from response")));
    }
    let min_rows = opts.min_rows();
    (0..y.len())
        .map(|t| {
            let lo = t.saturating_sub(opts.window);
            let cols: Vec<&[Option<f64>]> = x.iter().map(|c| &c[lo..t]).collect();
            let mut fit = ols(&y[lo..t], &cols, &opts.ols)?;
            if fit.ok && fit.n_used < min_rows {
                fit = OlsResult::failed(t - lo, fit.n_used);
            }
            Ok(fit)
        })
        .collect()
}
