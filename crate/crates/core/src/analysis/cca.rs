use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Ridge added to both covariance diagonals unless a caller overrides it.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Relative eigenvalue floor below which an unregularized covariance is
/// treated as singular.
const SINGULAR_TOL: f64 = 1e-12;

/// First canonical pair of two views.
#[derive(Clone, Debug, PartialEq)]
pub struct Cca {
    /// Largest canonical correlation, clamped to `[0, 1]`.
    pub rho: f64,
    /// Projection for `X` (length `p`).
    pub u: Vec<f64>,
    /// Projection for `Y` (length `q`).
    pub v: Vec<f64>,
    /// Column means used for centering.
    pub x_mean: Vec<f64>,
    pub y_mean: Vec<f64>,
}

fn centered(data: &[f64], n: usize, d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut m = DMatrix::from_row_slice(n, d, data);
    let mut means = Vec::with_capacity(d);
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        means.push(mean);
    }
    (m, means)
}

/// `(Σ + ridge·I)^{-1/2}` through a symmetric eigendecomposition.
fn inv_sqrt(cov: DMatrix<f64>, ridge: f64, which: &str) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let reg = cov + DMatrix::identity(d, d) * ridge;
    let eig = SymmetricEigen::new(reg);
    let max = eig.eigenvalues.max().max(0.0);
    let min = eig.eigenvalues.min();
    let floor = if ridge > 0.0 { 0.0 } else { SINGULAR_TOL * max };
    if !(min > floor) {
        return Err(Error::Analysis(format!(
            "covariance of {which} is singular (smallest eigenvalue {min:e}, largest {max:e}); \
             use a positive ridge such as {DEFAULT_RIDGE:e}"
        )));
    }
    let scaled = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * scaled * eig.eigenvectors.transpose())
}

/// First canonical correlation between row-aligned `X: n×p` and `Y: n×q`
/// (row-major). Columns are centered, each covariance is regularized by
/// `ridge·I` and whitened, and the top singular value of the whitened
/// cross-covariance is returned with its projection vectors.
pub fn first_canonical_correlation(x: &[f64], y: &[f64], n: usize, p: usize, q: usize, ridge: f64) -> Result<Cca> {
    if x.len() != n * p || y.len() != n * q {
        return Err(Error::Analysis(format!(
            "expected {n}×{p} and {n}×{q} matrices, got {} and {} values",
            x.len(),
            y.len()
        )));
    }
    if p == 0 || q == 0 || n <= p.max(q) {
        return Err(Error::Analysis(format!(
            "need more samples than features: n = {n}, p = {p}, q = {q}"
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Analysis(format!("ridge must be finite and ≥ 0, got {ridge}")));
    }
    let (xc, x_mean) = centered(x, n, p);
    let (yc, y_mean) = centered(y, n, q);
    let denom = (n - 1) as f64;
    let sxx = xc.transpose() * &xc / denom;
    let syy = yc.transpose() * &yc / denom;
    let sxy = xc.transpose() * &yc / denom;
    let wx = inv_sqrt(sxx, ridge, "X")?;
    let wy = inv_sqrt(syy, ridge, "Y")?;
    let t = &wx * sxy * &wy;
    let svd = t.svd(true, true);
    let (best, &sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty spectrum");
    let a = svd.u.as_ref().expect("left vectors").column(best).into_owned();
    let b = svd.v_t.as_ref().expect("right vectors").row(best).transpose();
    let u = &wx * a;
    let v = &wy * b;
    Ok(Cca {
        rho: sigma.clamp(0.0, 1.0),
        u: u.iter().copied().collect(),
        v: v.iter().copied().collect(),
        x_mean,
        y_mean,
    })
}

/// Canonical variates `(uᵀ(x_i − x̄), vᵀ(y_i − ȳ))` for every row.
pub fn canonical_scores(cca: &Cca, x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let (p, q) = (cca.u.len(), cca.v.len());
    x.chunks_exact(p)
        .zip(y.chunks_exact(q))
        .map(|(xr, yr)| {
            let s: f64 = xr.iter().zip(&cca.x_mean).zip(&cca.u).map(|((a, m), w)| (a - m) * w).sum();
            let t: f64 = yr.iter().zip(&cca.y_mean).zip(&cca.v).map(|((a, m), w)| (a - m) * w).sum();
            (s, t)
        })
        .collect()
}

/// `u,v` CSV of the canonical variates, one row per sample.
pub fn scatter_csv(cca: &Cca, x: &[f64], y: &[f64]) -> String {
    let mut out = String::from("u,v\n");
    for (s, t) in canonical_scores(cca, x, y) {
        out.push_str(&format!("{s},{t}\n"));
    }
    out
}
