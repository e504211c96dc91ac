//! Margin-softmax classification losses and the cosine hinge, with
//! hand-derived gradients.
//!
//! A batch holds `N/2` original vectors followed by their `N/2` anonymized
//! counterparts; sample `i` is paired with `(i + N/2) mod N`, and anonymized
//! labels are the original labels shifted by `C`, giving `2C` classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};

/// Cosines are clamped this far inside [-1, 1] before taking angles.
pub const ANGLE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Aam,
    Waam,
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::Aam => "aam",
            LossVariant::Waam => "waam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Additive angular margin on the target class (radians).
    pub m1: f64,
    /// Angular margin subtracted on the paired class (radians).
    pub m2: f64,
    /// Logit scale.
    pub s: f64,
    /// Weight of the cosine hinge.
    pub lambda: f64,
    /// Hinge threshold `m` in `max(0, cos - m)`.
    pub cos_margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { m1: 0.2, m2: 0.2, s: 30.0, lambda: 20.0, cos_margin: 0.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.m1 >= 0.0
            && self.m2 >= 0.0
            && self.s > 0.0
            && self.lambda >= 0.0
            && (-1.0..=1.0).contains(&self.cos_margin)
            && [self.m1, self.m2, self.s, self.lambda].iter().all(|x| x.is_finite());
        if !ok {
            return Err(Error::InvalidConfig(format!("loss config out of range: {self:?}")));
        }
        Ok(())
    }
}

/// `d × 2C` class-weight matrix, stored column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    dim: usize,
    num_original: usize,
    weights: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(dim: usize, num_original: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || num_original == 0 {
            return Err(Error::InvalidShape("head needs dim >= 1 and C >= 1".into()));
        }
        if weights.len() != dim * 2 * num_original {
            return Err(Error::DimensionMismatch { expected: dim * 2 * num_original, got: weights.len() });
        }
        Ok(ClassifierHead { dim, num_original, weights })
    }

    /// Gaussian columns scaled to unit norm.
    pub fn init(dim: usize, num_original: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(dim * 2 * num_original);
        for _ in 0..2 * num_original {
            let col: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&col).max(1e-12);
            weights.extend(col.into_iter().map(|x| x / n));
        }
        Self::new(dim, num_original, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_original(&self) -> usize {
        self.num_original
    }

    pub fn num_classes(&self) -> usize {
        2 * self.num_original
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.weights[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    /// Checks the pairing structure against `C = num_original`.
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<usize>, num_original: usize) -> Result<Self> {
        let n = vectors.len();
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::InvalidShape(format!("batch size {n} must be even and positive")));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
        }
        let half = n / 2;
        for i in 0..half {
            if labels[i] >= num_original || labels[i + half] != labels[i] + num_original {
                return Err(Error::InvalidShape(format!(
                    "pair {i}: labels ({}, {}) break the y / y + C pairing",
                    labels[i],
                    labels[i + half]
                )));
            }
        }
        Ok(Batch { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn paired_index(&self, i: usize) -> usize {
        (i + self.len() / 2) % self.len()
    }
}

/// Loss value with gradients w.r.t. every batch vector and the head weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_vectors: Vec<Vec<f64>>,
    pub grad_head: Vec<f64>,
}

fn clamp_cos(c: f64) -> (f64, bool) {
    let lo = -1.0 + ANGLE_CLAMP;
    let hi = 1.0 - ANGLE_CLAMP;
    if c < lo {
        (lo, false)
    } else if c > hi {
        (hi, false)
    } else {
        (c, true)
    }
}

/// `cos(θ + m)` with `θ = arccos c`, and its derivative w.r.t. `c`.
fn cos_plus(c: f64, m: f64) -> (f64, f64) {
    let (cc, inside) = clamp_cos(c);
    let sin = (1.0 - cc * cc).sqrt();
    let val = cc * m.cos() - sin * m.sin();
    let der = if inside { m.cos() + cc / sin * m.sin() } else { 0.0 };
    (val, der)
}

/// `cos(θ - m)` and its derivative w.r.t. `c`.
fn cos_minus(c: f64, m: f64) -> (f64, f64) {
    let (cc, inside) = clamp_cos(c);
    let sin = (1.0 - cc * cc).sqrt();
    let val = cc * m.cos() + sin * m.sin();
    let der = if inside { m.cos() - cc / sin * m.sin() } else { 0.0 };
    (val, der)
}

fn check_batch(batch: &Batch, head: &ClassifierHead) -> Result<()> {
    for v in &batch.vectors {
        if v.len() != head.dim {
            return Err(Error::DimensionMismatch { expected: head.dim, got: v.len() });
        }
    }
    if let Some(&l) = batch.labels.iter().find(|&&l| l >= head.num_classes()) {
        return Err(Error::InvalidShape(format!("label {l} >= 2C = {}", head.num_classes())));
    }
    Ok(())
}

fn classification(batch: &Batch, head: &ClassifierHead, cfg: &LossConfig, variant: LossVariant) -> Result<LossOutput> {
    cfg.validate()?;
    check_batch(batch, head)?;
    let d = head.dim;
    let k = head.num_classes();
    let n = batch.len();
    let inv_n = 1.0 / n as f64;

    let mut wnorm = Vec::with_capacity(k);
    let mut what = Vec::with_capacity(k * d);
    for j in 0..k {
        let col = head.column(j);
        let nj = norm(col);
        if nj == 0.0 {
            return Err(Error::ZeroVector);
        }
        wnorm.push(nj);
        what.extend(col.iter().map(|x| x / nj));
    }

    let mut total = 0.0;
    let mut grad_vectors = Vec::with_capacity(n);
    let mut grad_head = vec![0.0; k * d];
    let mut logits = vec![0.0; k];
    let mut dlogit_dc = vec![0.0; k];
    let mut cosines = vec![0.0; k];
    for i in 0..n {
        let x = &batch.vectors[i];
        let xn = norm(x);
        if xn == 0.0 {
            return Err(Error::ZeroVector);
        }
        let xhat: Vec<f64> = x.iter().map(|v| v / xn).collect();
        let target = batch.labels[i];
        let paired = match variant {
            LossVariant::Aam => None,
            LossVariant::Waam => Some(batch.labels[batch.paired_index(i)]),
        };
        for j in 0..k {
            let c = dot(&xhat, &what[j * d..(j + 1) * d]);
            cosines[j] = c;
            let (val, der) = if j == target {
                cos_plus(c, cfg.m1)
            } else if Some(j) == paired {
                cos_minus(c, cfg.m2)
            } else {
                (c, 1.0)
            };
            logits[j] = cfg.s * val;
            dlogit_dc[j] = cfg.s * der;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[target];

        let mut gx = vec![0.0; d];
        for j in 0..k {
            let p = (logits[j] - lse).exp();
            let dl = (p - if j == target { 1.0 } else { 0.0 }) * inv_n;
            let dc = dl * dlogit_dc[j];
            if dc == 0.0 {
                continue;
            }
            let wj = &what[j * d..(j + 1) * d];
            let c = cosines[j];
            // d c / d x = (ŵ - c x̂) / |x|,  d c / d w = (x̂ - c ŵ) / |w|
            axpy(dc / xn, wj, &mut gx);
            axpy(-dc * c / xn, &xhat, &mut gx);
            let gw = &mut grad_head[j * d..(j + 1) * d];
            axpy(dc / wnorm[j], &xhat, gw);
            axpy(-dc * c / wnorm[j], wj, gw);
        }
        grad_vectors.push(gx);
    }
    Ok(LossOutput { loss: total * inv_n, grad_vectors, grad_head })
}

/// Additive angular margin softmax averaged over the batch.
pub fn aam_loss(batch: &Batch, head: &ClassifierHead, cfg: &LossConfig) -> Result<LossOutput> {
    classification(batch, head, cfg, LossVariant::Aam)
}

/// AAM with the paired class's logit replaced by `s cos(θ_paired - m2)`.
pub fn waam_loss(batch: &Batch, head: &ClassifierHead, cfg: &LossConfig) -> Result<LossOutput> {
    classification(batch, head, cfg, LossVariant::Waam)
}

pub fn classification_loss(
    batch: &Batch,
    head: &ClassifierHead,
    cfg: &LossConfig,
    variant: LossVariant,
) -> Result<LossOutput> {
    classification(batch, head, cfg, variant)
}

/// `max(0, cos(x_o, x_a) - m)` with gradients w.r.t. both vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub cosine: f64,
    pub grad_original: Vec<f64>,
    pub grad_anonymized: Vec<f64>,
}

pub fn cosine_pair_loss(x_o: &[f64], x_a: &[f64], cos_margin: f64) -> Result<PairLoss> {
    if x_o.len() != x_a.len() {
        return Err(Error::DimensionMismatch { expected: x_o.len(), got: x_a.len() });
    }
    let no = norm(x_o);
    let na = norm(x_a);
    if no == 0.0 || na == 0.0 {
        return Err(Error::ZeroVector);
    }
    let c = dot(x_o, x_a) / (no * na);
    let d = x_o.len();
    if c <= cos_margin {
        return Ok(PairLoss { loss: 0.0, cosine: c, grad_original: vec![0.0; d], grad_anonymized: vec![0.0; d] });
    }
    let grad = |a: &[f64], na: f64, b: &[f64], nb: f64| -> Vec<f64> {
        (0..d).map(|k| b[k] / (na * nb) - c * a[k] / (na * na)).collect()
    };
    Ok(PairLoss {
        loss: c - cos_margin,
        cosine: c,
        grad_original: grad(x_o, no, x_a, na),
        grad_anonymized: grad(x_a, na, x_o, no),
    })
}

/// `L_c + λ · mean_i L_s(x_i, x_{i+N/2})`.
///
/// Original vectors are constants of the anonymizer, so the returned gradient
/// is zero on the first half of the batch; head gradients come from every
/// sample.
pub fn combined_objective(
    batch: &Batch,
    head: &ClassifierHead,
    cfg: &LossConfig,
    variant: LossVariant,
) -> Result<LossOutput> {
    let mut out = classification(batch, head, cfg, variant)?;
    let half = batch.len() / 2;
    let w = cfg.lambda / half as f64;
    let mut sim = 0.0;
    for i in 0..half {
        let pl = cosine_pair_loss(&batch.vectors[i], &batch.vectors[i + half], cfg.cos_margin)?;
        sim += pl.loss;
        if w != 0.0 {
            axpy(w, &pl.grad_anonymized, &mut out.grad_vectors[i + half]);
        }
    }
    for g in &mut out.grad_vectors[..half] {
        g.iter_mut().for_each(|x| *x = 0.0);
    }
    out.loss += w * sim;
    Ok(out)
}
