//! Dense vector and matrix primitives.
//!
//! Parameters are stored as `f32`; every dot product and reduction
//! accumulates in `f64`. Most kernels here return `f64` vectors so the
//! callers can keep the whole forward pass in double precision.

use crate::error::{Error, Result};

/// Row-major dense matrix of 32-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

/// Nonlinearity applied by the lookup MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

#[inline]
pub fn dot64(a: &[f64], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * f64::from(y)).sum()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Circular correlation: `out[k] = sum_i a[i] * b[(k + i) mod d]`.
///
/// Direct O(d^2) evaluation.
pub fn circular_correlation(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "circular correlation needs equal lengths");
    let d = a.len();
    (0..d)
        .map(|k| {
            let mut acc = 0.0;
            for (i, &ai) in a.iter().enumerate() {
                acc += ai * b[(k + i) % d];
            }
            acc
        })
        .collect()
}

/// Gradients of `g . circular_correlation(a, b)` with respect to `a` and `b`.
pub fn circular_correlation_backward(a: &[f64], b: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = a.len();
    let mut ga = vec![0.0; d];
    let mut gb = vec![0.0; d];
    for (k, &gk) in g.iter().enumerate() {
        if gk == 0.0 {
            continue;
        }
        for i in 0..d {
            let j = (k + i) % d;
            ga[i] += gk * b[j];
            gb[j] += gk * a[i];
        }
    }
    (ga, gb)
}

/// Max-shifted softmax.
pub fn softmax(g: &[f64]) -> Vec<f64> {
    let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = g.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Central-difference gradient check with step `1e-3`.
///
/// Returns `max_i |fd_i - an_i| / max(1e-8, |fd_i| + |an_i|)`.
pub fn grad_check<F>(mut f: F, theta: &[f64], analytic: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    const EPS: f64 = 1e-3;
    if theta.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "parameter vector has {} entries, analytic gradient {}",
            theta.len(),
            analytic.len()
        )));
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + EPS;
        let up = f(&probe);
        probe[i] = theta[i] - EPS;
        let down = f(&probe);
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective not finite around coordinate {i}"
            )));
        }
        let fd = (up - down) / (2.0 * EPS);
        let an = analytic[i];
        let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Projects the rows of `points` onto their top two principal components.
///
/// Power iteration with deflation on the covariance matrix. Each component
/// is signed so that its largest-magnitude loading is positive. A component
/// with (numerically) zero variance projects to zeros.
pub fn pca2(points: &Mat) -> Result<Mat> {
    let m = points.rows();
    let d = points.cols();
    if m < 2 {
        return Err(Error::Shape(format!("pca2 needs at least 2 points, got {m}")));
    }
    let mut mean = vec![0.0f64; d];
    for i in 0..m {
        for (acc, &x) in mean.iter_mut().zip(points.row(i)) {
            *acc += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|x| *x /= m as f64);
    let centered: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            points
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(&x, mu)| f64::from(x) - mu)
                .collect()
        })
        .collect();

    let mut cov = vec![0.0f64; d * d];
    for row in &centered {
        for a in 0..d {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..d {
                cov[a * d + b] += row[a] * row[b];
            }
        }
    }
    cov.iter_mut().for_each(|x| *x /= (m - 1) as f64);

    let scale = cov.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(2);
    for _ in 0..2.min(d) {
        let comp = power_iteration(&cov, d, &components, scale);
        if let Some(v) = &comp {
            let lambda = rayleigh(&cov, d, v);
            for a in 0..d {
                for b in 0..d {
                    cov[a * d + b] -= lambda * v[a] * v[b];
                }
            }
        }
        components.push(comp.unwrap_or_else(|| vec![0.0; d]));
    }
    while components.len() < 2 {
        components.push(vec![0.0; d]);
    }

    let mut out = Mat::zeros(m, 2);
    for (i, row) in centered.iter().enumerate() {
        for (c, comp) in components.iter().enumerate() {
            let proj: f64 = row.iter().zip(comp).map(|(x, v)| x * v).sum();
            out.row_mut(i)[c] = proj as f32;
        }
    }
    Ok(out)
}

fn mat_vec(a: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|r| a[r * d..(r + 1) * d].iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn rayleigh(a: &[f64], d: usize, v: &[f64]) -> f64 {
    mat_vec(a, d, v).iter().zip(v).map(|(x, y)| x * y).sum()
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let p: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn power_iteration(cov: &[f64], d: usize, found: &[Vec<f64>], scale: f64) -> Option<Vec<f64>> {
    const TOL: f64 = 1e-6;
    const MAX_ITERS: usize = 1000;
    if scale <= 0.0 {
        return None;
    }
    // Deterministic, non-symmetric start so no eigenvector is missed by construction.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0).collect();
    orthogonalize(&mut v, found);
    if normalize(&mut v) == 0.0 {
        return None;
    }
    for _ in 0..MAX_ITERS {
        let mut next = mat_vec(cov, d, &v);
        orthogonalize(&mut next, found);
        let norm = normalize(&mut next);
        if norm <= scale * 1e-12 {
            return None;
        }
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        v = next;
        if delta < TOL {
            break;
        }
    }
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Some(v)
}
