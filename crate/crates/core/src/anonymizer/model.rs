use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add, sub, Mat, Whitening};

use super::stack::HouseholderStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Form {
    /// `W (x - μ) + μ`
    #[default]
    Simplified,
    /// `L⁻¹ W L (x - μ) + μ`
    GeneralWhitened,
}

/// Everything needed to anonymize: the stack, the frozen training mean and,
/// for the whitened form, the whitening pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizerModel {
    pub stack: HouseholderStack,
    pub mu_train: Vec<f64>,
    pub whitening: Option<Whitening>,
    pub form: Form,
    pub seed: u64,
}

impl AnonymizerModel {
    pub fn simplified(stack: HouseholderStack, mu_train: Vec<f64>, seed: u64) -> Result<Self> {
        Self::new(stack, mu_train, None, Form::Simplified, seed)
    }

    pub fn whitened(stack: HouseholderStack, mu_train: Vec<f64>, whitening: Whitening, seed: u64) -> Result<Self> {
        Self::new(stack, mu_train, Some(whitening), Form::GeneralWhitened, seed)
    }

    pub fn new(
        stack: HouseholderStack,
        mu_train: Vec<f64>,
        whitening: Option<Whitening>,
        form: Form,
        seed: u64,
    ) -> Result<Self> {
        let model = AnonymizerModel { stack, mu_train, whitening, form, seed };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.stack.dim();
        if self.mu_train.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.mu_train.len() });
        }
        if !self.mu_train.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("mu_train".into()));
        }
        match (self.form, &self.whitening) {
            (Form::GeneralWhitened, None) => {
                return Err(Error::InvalidShape("whitened form requires a whitening pair".into()))
            }
            (_, Some(w)) => {
                if w.dim() != d || w.dewhiten.dim() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: w.dim() });
                }
                let prod = w.whiten.matmul(&w.dewhiten)?;
                if !(prod.max_abs_diff(&Mat::identity(d)) < 1e-10) {
                    return Err(Error::InvalidShape("whitening pair is not mutually inverse".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.stack.dim()
    }

    /// Vector fed to the stack for input `x`.
    pub fn stack_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        let centered = sub(x, &self.mu_train);
        match (self.form, &self.whitening) {
            (Form::GeneralWhitened, Some(w)) => w.whiten.mul_vec(&centered),
            _ => Ok(centered),
        }
    }

    /// Maps a rotated stack output back to embedding space.
    pub fn finish(&self, rotated: &[f64]) -> Result<Vec<f64>> {
        let back = match (self.form, &self.whitening) {
            (Form::GeneralWhitened, Some(w)) => w.dewhiten.mul_vec(rotated)?,
            _ => rotated.to_vec(),
        };
        Ok(add(&back, &self.mu_train))
    }

    /// Pulls `dL/dy` back to `dL/d(stack output)`.
    pub fn grad_to_stack_output(&self, grad: &[f64]) -> Result<Vec<f64>> {
        match (self.form, &self.whitening) {
            (Form::GeneralWhitened, Some(w)) => w.dewhiten.tmul_vec(grad),
            _ => Ok(grad.to_vec()),
        }
    }

    /// Anonymizes `x`, generating LOH reflections from `cond`.
    pub fn anonymize_conditioned(&self, cond: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let z = self.stack_input(x)?;
        let r = self.stack.apply_conditioned(cond, &z)?;
        self.finish(&r)
    }

    pub fn anonymize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.anonymize_conditioned(x, x)
    }
}

pub fn anonymize(model: &AnonymizerModel, x: &[f64]) -> Result<Vec<f64>> {
    model.anonymize(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anonymizer::stack::{apply_stack, init_stack, LohReduction, Variant};
    use crate::linalg::{dot, norm};

    #[test]
    fn reflection_fixes_orthogonal_complement() {
        let stack = HouseholderStack::roh_from_vectors(&[vec![0.0, 0.0, 1.0]]).unwrap();
        let mu = vec![1.0, 2.0, 3.0];
        let model = AnonymizerModel::simplified(stack, mu, 0).unwrap();
        // x - mu = (1, -1, 0) is orthogonal to v
        let x = [2.0, 1.0, 3.0];
        assert_eq!(model.anonymize(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_mean_simplified_is_the_stack() {
        for variant in [Variant::Roh, Variant::Loh] {
            let stack = init_stack(variant, 6, &[3, 3], 1, LohReduction::MeanPool).unwrap();
            let model = AnonymizerModel::simplified(stack.clone(), vec![0.0; 6], 1).unwrap();
            let x = [0.1, -0.4, 1.0, 2.0, -3.0, 0.5];
            assert_eq!(model.anonymize(&x).unwrap(), apply_stack(&stack, &x).unwrap());
        }
    }

    #[test]
    fn whitened_form_requires_pair() {
        let stack = init_stack(Variant::Roh, 2, &[1], 1, LohReduction::MeanPool).unwrap();
        assert!(AnonymizerModel::new(stack.clone(), vec![0.0; 2], None, Form::GeneralWhitened, 0).is_err());
        let bad = Whitening { whiten: Mat::identity(2), dewhiten: Mat::from_diag(&[2.0, 1.0]) };
        assert!(AnonymizerModel::whitened(stack.clone(), vec![0.0; 2], bad, 0).is_err());
        let good = Whitening::from_covariance(&Mat::from_diag(&[4.0, 9.0])).unwrap();
        let m = AnonymizerModel::whitened(stack, vec![1.0, 1.0], good, 0).unwrap();
        let y = m.anonymize(&[3.0, 4.0]).unwrap();
        // Mahalanobis norm around mu is preserved
        let z = [(y[0] - 1.0) / 2.0, (y[1] - 1.0) / 3.0];
        let z0 = [2.0 / 2.0, 3.0 / 3.0];
        assert!((dot(&z, &z) - dot(&z0, &z0)).abs() < 1e-12);
        assert!(norm(&y) > 0.0);
    }
}
