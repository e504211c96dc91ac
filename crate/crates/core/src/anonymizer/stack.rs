//! Householder stacks.
//!
//! A stack with layers `W_1, …, W_L` represents `W = W_1 W_2 ⋯ W_L`, where
//! each layer is `W_l = H_{q_l} ⋯ H_2 H_1`. Applied to a vector, `W_L` acts
//! first and `W_1` last; inside a layer `H_1` acts first. Parameters are stored
//! flat, layer by layer, reflection by reflection, in that paper order.
//!
//! ROH stacks store the reflection vectors directly. LOH stacks store one
//! small generator per reflection: a width-3 zero-padded 1-D convolution over
//! the conditioning input (treated as a length-d single-channel sequence) with
//! `d` output channels, reduced to a d-vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, reflect_in_place, Mat, REFLECTION_FLOOR};

pub const KERNEL_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Roh,
    Loh,
}

/// How the `d × d` convolution output of an LOH generator becomes a d-vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LohReduction {
    /// Average each output channel over sequence positions.
    #[default]
    MeanPool,
    /// Take output channel `c` at position `c`.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholderStack {
    dim: usize,
    variant: Variant,
    reduction: LohReduction,
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

impl HouseholderStack {
    pub fn from_params(
        variant: Variant,
        dim: usize,
        layer_sizes: Vec<usize>,
        reduction: LohReduction,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_shape(dim, &layer_sizes)?;
        let stack = HouseholderStack { dim, variant, reduction, layer_sizes, params };
        let expected = stack.num_reflections() * stack.block_len();
        if stack.params.len() != expected {
            return Err(Error::InvalidShape(format!("expected {expected} parameters, got {}", stack.params.len())));
        }
        if !stack.params.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("stack parameters".into()));
        }
        if variant == Variant::Roh {
            for r in 0..stack.num_reflections() {
                let n = norm(stack.block(r));
                if !(n >= REFLECTION_FLOOR) {
                    return Err(Error::ZeroReflectionVector { norm: n, floor: REFLECTION_FLOOR });
                }
            }
        }
        Ok(stack)
    }

    /// A single-layer ROH stack from explicit reflection vectors (`H_1` first).
    pub fn roh_from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
        }
        let params = vectors.concat();
        Self::from_params(Variant::Roh, dim, vec![vectors.len()], LohReduction::default(), params)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn reduction(&self) -> LohReduction {
        self.reduction
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_reflections(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameters per reflection.
    pub fn block_len(&self) -> usize {
        match self.variant {
            Variant::Roh => self.dim,
            Variant::Loh => self.dim * (KERNEL_WIDTH + 1),
        }
    }

    fn block(&self, r: usize) -> &[f64] {
        let b = self.block_len();
        &self.params[r * b..(r + 1) * b]
    }

    /// Flat reflection indices in the order they act on a vector.
    pub fn application_order(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.layer_sizes.len());
        let mut acc = 0;
        for &q in &self.layer_sizes {
            starts.push(acc);
            acc += q;
        }
        let mut order = Vec::with_capacity(acc);
        for (l, &q) in self.layer_sizes.iter().enumerate().rev() {
            order.extend(starts[l]..starts[l] + q);
        }
        order
    }

    /// Conv taps seen by output channel `c` for input `cond`.
    fn features(&self, cond: &[f64], c: usize, pooled: &[f64; KERNEL_WIDTH]) -> [f64; KERNEL_WIDTH] {
        match self.reduction {
            LohReduction::MeanPool => *pooled,
            LohReduction::Diagonal => {
                let mut f = [0.0; KERNEL_WIDTH];
                for (t, ft) in f.iter_mut().enumerate() {
                    let p = c as isize + t as isize - 1;
                    if p >= 0 && (p as usize) < self.dim {
                        *ft = cond[p as usize];
                    }
                }
                f
            }
        }
    }

    fn pooled_taps(&self, cond: &[f64]) -> [f64; KERNEL_WIDTH] {
        let d = self.dim;
        let total: f64 = cond.iter().sum();
        // tap t reads x[p + t - 1]; padding drops one end for t = 0 and t = 2
        [(total - cond[d - 1]) / d as f64, total / d as f64, (total - cond[0]) / d as f64]
    }

    /// Reflection vector `r` for conditioning input `cond`; the flag reports
    /// whether the LOH zero-vector fallback was used.
    pub fn reflection_vector(&self, r: usize, cond: &[f64]) -> Result<(Vec<f64>, bool)> {
        match self.variant {
            Variant::Roh => {
                let v = self.block(r);
                let n = norm(v);
                if !(n >= REFLECTION_FLOOR) {
                    return Err(Error::ZeroReflectionVector { norm: n, floor: REFLECTION_FLOOR });
                }
                Ok((v.to_vec(), false))
            }
            Variant::Loh => {
                let d = self.dim;
                let block = self.block(r);
                let (w, b) = block.split_at(d * KERNEL_WIDTH);
                let pooled = self.pooled_taps(cond);
                let mut v = b.to_vec();
                for (c, vc) in v.iter_mut().enumerate() {
                    let f = self.features(cond, c, &pooled);
                    for t in 0..KERNEL_WIDTH {
                        *vc += w[c * KERNEL_WIDTH + t] * f[t];
                    }
                }
                let n = norm(&v);
                if n >= REFLECTION_FLOOR && n.is_finite() {
                    Ok((v, false))
                } else {
                    Ok((fallback_vector(cond), true))
                }
            }
        }
    }

    /// Every reflection vector for `cond`, in application order.
    pub fn reflection_vectors(&self, cond: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.application_order().into_iter().map(|r| Ok(self.reflection_vector(r, cond)?.0)).collect()
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        Ok(())
    }

    /// `W x`, with LOH reflections generated from `cond`.
    pub fn apply_conditioned(&self, cond: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check(cond)?;
        self.check(x)?;
        let mut y = x.to_vec();
        for r in self.application_order() {
            let (v, _) = self.reflection_vector(r, cond)?;
            let vv = dot(&v, &v);
            reflect_in_place(&v, vv, &mut y);
        }
        Ok(y)
    }

    /// `Wᵀ y`: the same reflections in reverse order.
    pub fn apply_inverse_conditioned(&self, cond: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check(cond)?;
        self.check(y)?;
        let mut x = y.to_vec();
        for r in self.application_order().into_iter().rev() {
            let (v, _) = self.reflection_vector(r, cond)?;
            let vv = dot(&v, &v);
            reflect_in_place(&v, vv, &mut x);
        }
        Ok(x)
    }

    /// Explicit `W` (columns are `W e_j`).
    pub fn matrix(&self, cond: &[f64]) -> Result<Mat> {
        self.check(cond)?;
        let vs = self.reflection_vectors(cond)?;
        let vvs: Vec<f64> = vs.iter().map(|v| dot(v, v)).collect();
        let cols: Vec<Vec<f64>> = (0..self.dim)
            .map(|j| {
                let mut e = vec![0.0; self.dim];
                e[j] = 1.0;
                for (v, &vv) in vs.iter().zip(&vvs) {
                    reflect_in_place(v, vv, &mut e);
                }
                e
            })
            .collect();
        Mat::from_columns(&cols)
    }

    /// `max_ij |<W e_i, W e_j> - δ_ij|`
    pub fn orthogonality_error(&self, cond: &[f64]) -> Result<f64> {
        let w = self.matrix(cond)?;
        let wt = w.transpose();
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let ip = dot(wt.row(i), wt.row(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        Ok(worst)
    }

    /// Back-propagates `grad_out = dL/d(W x)` through the stack given the
    /// forward output `output = W x`. Parameter gradients are accumulated into
    /// `param_grad`; the returned vector is `dL/dx`. The conditioning input is
    /// treated as a constant.
    pub fn backward(&self, cond: &[f64], output: &[f64], grad_out: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        self.check(cond)?;
        self.check(output)?;
        self.check(grad_out)?;
        if param_grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: param_grad.len() });
        }
        let d = self.dim;
        let bl = self.block_len();
        let pooled = if self.variant == Variant::Loh { self.pooled_taps(cond) } else { [0.0; KERNEL_WIDTH] };
        let mut y = output.to_vec();
        let mut g = grad_out.to_vec();
        for r in self.application_order().into_iter().rev() {
            let (v, fallback) = self.reflection_vector(r, cond)?;
            let vv = dot(&v, &v);
            // reflections are involutions: recover this step's input
            reflect_in_place(&v, vv, &mut y);
            let x = &y;
            let a = dot(&v, x);
            let gv_dot = dot(&g, &v);
            let c = 2.0 * a / vv;
            // d/dv of x - (2 <v,x>/<v,v>) v
            let mut gv = vec![0.0; d];
            axpy(-2.0 * gv_dot / vv, x, &mut gv);
            axpy(4.0 * a * gv_dot / (vv * vv), &v, &mut gv);
            axpy(-c, &g, &mut gv);
            let pg = &mut param_grad[r * bl..(r + 1) * bl];
            match self.variant {
                Variant::Roh => axpy(1.0, &gv, pg),
                Variant::Loh if !fallback => {
                    let (gw, gb) = pg.split_at_mut(d * KERNEL_WIDTH);
                    for c in 0..d {
                        let f = self.features(cond, c, &pooled);
                        for t in 0..KERNEL_WIDTH {
                            gw[c * KERNEL_WIDTH + t] += gv[c] * f[t];
                        }
                        gb[c] += gv[c];
                    }
                }
                Variant::Loh => {}
            }
            // H is symmetric
            reflect_in_place(&v, vv, &mut g);
        }
        Ok(g)
    }
}

/// `e_1 + ½ x̂`: always has norm at least ½.
fn fallback_vector(cond: &[f64]) -> Vec<f64> {
    let n = norm(cond);
    let mut v = vec![0.0; cond.len()];
    if n > 0.0 && n.is_finite() {
        axpy(0.5 / n, cond, &mut v);
    }
    v[0] += 1.0;
    v
}

fn validate_shape(dim: usize, layer_sizes: &[usize]) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidShape("dimension must be >= 1".into()));
    }
    if layer_sizes.is_empty() {
        return Err(Error::InvalidShape("need at least one layer".into()));
    }
    if let Some(q) = layer_sizes.iter().find(|&&q| q == 0 || q > dim) {
        return Err(Error::InvalidShape(format!("layer size {q} outside [1, {dim}]")));
    }
    Ok(())
}

/// Seeded initialization. ROH vectors are uniform on the unit sphere; LOH
/// generator weights are Gaussian with standard deviation `1/sqrt(3)` for the
/// kernel taps and 1 for the biases.
pub fn init_stack(
    variant: Variant,
    dim: usize,
    layer_sizes: &[usize],
    seed: u64,
    reduction: LohReduction,
) -> Result<HouseholderStack> {
    validate_shape(dim, layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = layer_sizes.iter().sum();
    let mut params = Vec::new();
    match variant {
        Variant::Roh => {
            for _ in 0..total {
                let v = loop {
                    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                    let n = norm(&v);
                    if n > 1e-3 {
                        break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
                    }
                };
                params.extend(v);
            }
        }
        Variant::Loh => {
            let tap_std = 1.0 / (KERNEL_WIDTH as f64).sqrt();
            for _ in 0..total {
                for _ in 0..dim * KERNEL_WIDTH {
                    params.push(tap_std * rng.sample::<f64, _>(StandardNormal));
                }
                for _ in 0..dim {
                    params.push(rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
    }
    HouseholderStack::from_params(variant, dim, layer_sizes.to_vec(), reduction, params)
}

/// `W x` with LOH reflections conditioned on `x` itself.
pub fn apply_stack(stack: &HouseholderStack, x: &[f64]) -> Result<Vec<f64>> {
    stack.apply_conditioned(x, x)
}
