//! Dense vector/matrix primitives and Householder kernels.
//!
//! Vectors are plain `f64` slices. [`Mat`] is a small row-major square matrix
//! used for whitening factors and as a test/export oracle; the hot paths never
//! materialize a reflection matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reflection vectors with a Euclidean norm below this are rejected.
pub const REFLECTION_FLOOR: f64 = 1e-8;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Reflects `x` in place across the hyperplane orthogonal to `v`, given the
/// precomputed `vv = <v, v>`. No validation.
#[inline]
pub(crate) fn reflect_in_place(v: &[f64], vv: f64, x: &mut [f64]) {
    let c = 2.0 * dot(v, x) / vv;
    axpy(-c, v, x);
}

/// `x - (2 <v,x> / <v,v>) v`, computed in O(d).
pub fn householder_apply(v: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_dims(v.len(), x.len())?;
    let vv = dot(v, v);
    let n = vv.sqrt();
    if !(n >= REFLECTION_FLOOR) {
        return Err(Error::ZeroReflectionVector { norm: n, floor: REFLECTION_FLOOR });
    }
    let mut out = x.to_vec();
    reflect_in_place(v, vv, &mut out);
    Ok(out)
}

/// Explicit `I - 2 v vᵀ / vᵀv`. Only used for export and as an oracle.
pub fn householder_matrix(v: &[f64]) -> Result<Mat> {
    let d = v.len();
    if d == 0 {
        return Err(Error::InvalidShape("empty reflection vector".into()));
    }
    let vv = dot(v, v);
    let n = vv.sqrt();
    if !(n >= REFLECTION_FLOOR) {
        return Err(Error::ZeroReflectionVector { norm: n, floor: REFLECTION_FLOOR });
    }
    let mut h = Mat::identity(d);
    for i in 0..d {
        for j in 0..d {
            h[(i, j)] -= 2.0 * v[i] * v[j] / vv;
        }
    }
    Ok(h)
}

/// Cosine similarity `<a,b> / (|a||b|)`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    dim: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Mat { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(dim * dim, data.len())?;
        Ok(Mat { dim, data })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &x) in diag.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    /// Builds a matrix whose j-th column is `cols[j]`.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let d = cols.len();
        let mut m = Self::zeros(d);
        for (j, c) in cols.iter().enumerate() {
            check_dims(d, c.len())?;
            for i in 0..d {
                m[(i, j)] = c[i];
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn transpose(&self) -> Mat {
        let d = self.dim;
        let mut t = Mat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        check_dims(self.dim, other.dim)?;
        let d = self.dim;
        let mut out = Mat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.dim, x.len())?;
        Ok((0..self.dim).map(|i| dot(self.row(i), x)).collect())
    }

    /// `Aᵀ x`
    pub fn tmul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        Ok(out)
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetrized(&self) -> Mat {
        let d = self.dim;
        let mut s = self.clone();
        for i in 0..d {
            for j in 0..i {
                let m = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = m;
                s[(j, i)] = m;
            }
        }
        s
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Lower Cholesky factor `C` with `C Cᵀ = cov`. The input is symmetrized first.
pub fn cholesky(cov: &Mat) -> Result<Mat> {
    let a = cov.symmetrized();
    let d = a.dim();
    let mut c = Mat::zeros(d);
    for j in 0..d {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= c[(j, k)] * c[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
        }
        let cjj = diag.sqrt();
        c[(j, j)] = cjj;
        for i in (j + 1)..d {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= c[(i, k)] * c[(j, k)];
            }
            c[(i, j)] = s / cjj;
        }
    }
    Ok(c)
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn lower_triangular_inverse(c: &Mat) -> Mat {
    let d = c.dim();
    let mut inv = Mat::zeros(d);
    for col in 0..d {
        for i in col..d {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= c[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = s / c[(i, i)];
        }
    }
    inv
}

/// A whitening matrix and its inverse.
///
/// `whiten · cov · whitenᵀ = I` and `dewhiten · dewhitenᵀ = cov`, where
/// `dewhiten` is the lower Cholesky factor of `cov`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitening {
    pub whiten: Mat,
    pub dewhiten: Mat,
}

impl Whitening {
    pub fn from_covariance(cov: &Mat) -> Result<Self> {
        let dewhiten = cholesky(cov)?;
        let whiten = lower_triangular_inverse(&dewhiten);
        Ok(Whitening { whiten, dewhiten })
    }

    pub fn dim(&self) -> usize {
        self.whiten.dim()
    }
}

/// Returns `L` with `L⁻¹ L⁻ᵀ = cov`.
pub fn cholesky_whitening(cov: &Mat) -> Result<Mat> {
    Ok(Whitening::from_covariance(cov)?.whiten)
}
