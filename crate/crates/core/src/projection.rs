//! Stage one: per-modality affine maps into the shared latent space,
//! `h = W·z + b`, optionally scaled to unit L2 norm.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::dataio::{Dims, ModalityKind};
use crate::error::{Error, Result};
use crate::init::{xavier_uniform, zeros_param};
use crate::rng::rng_for;
use crate::tensor::{Graph, Tensor, Var, ZERO_NORM};

static ZERO_NORM_FALLBACKS: AtomicUsize = AtomicUsize::new(0);

/// Process-wide count of eager projections that hit the zero-norm fallback.
pub fn zero_norm_fallbacks() -> usize {
    ZERO_NORM_FALLBACKS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub modality: ModalityKind,
    /// `[d_s, d_m]`
    pub weight: Tensor,
    /// `[d_s]`
    pub bias: Tensor,
    pub normalize_output: bool,
}

/// A head's parameters recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub weight: Var,
    pub bias: Var,
}

impl ProjectionHead {
    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Projects a single embedding.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z.len())?;
        let (d_s, d_m) = (self.output_dim(), self.input_dim());
        let w = self.weight.data();
        let mut h: Vec<f64> = (0..d_s)
            .map(|r| {
                let row = &w[r * d_m..(r + 1) * d_m];
                row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.bias.data()[r]
            })
            .collect();
        if self.normalize_output {
            let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < ZERO_NORM {
                ZERO_NORM_FALLBACKS.fetch_add(1, Ordering::Relaxed);
                log::warn!("{} projection has zero norm; substituting e1", self.modality);
                h.fill(0.0);
                h[0] = 1.0;
            } else {
                h.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(h)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::shape(format!(
                "{} projection expects d_{} = {}, got {got}",
                self.modality,
                self.modality.short_name(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> HeadVars {
        HeadVars {
            weight: g.leaf(&self.weight),
            bias: g.leaf(&self.bias),
        }
    }

    /// Batched projection of `z[rows, d_m]` on a graph.
    pub fn forward(&self, g: &mut Graph, vars: HeadVars, z: Var) -> Result<Var> {
        self.check_dim(*g.shape(z).last().unwrap_or(&0))?;
        let h = g.linear(z, vars.weight, vars.bias)?;
        Ok(if self.normalize_output {
            g.l2_normalize_rows(h)
        } else {
            h
        })
    }
}

/// Xavier-uniform weights and zero biases for the three modalities.
pub fn init_heads(dims: Dims, d_s: usize, seed: u64) -> Result<[ProjectionHead; 3]> {
    if d_s < 2 {
        return Err(Error::param(format!("shared dimension {d_s} must be at least 2")));
    }
    let mut rng = rng_for(seed, "init/projection");
    Ok(ModalityKind::ALL.map(|m| ProjectionHead {
        modality: m,
        weight: xavier_uniform(&mut rng, d_s, dims.get(m).max(1)),
        bias: zeros_param(&[d_s]),
        normalize_output: true,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::xavier_bound;

    fn head(weight: Tensor, bias: Vec<f64>, normalize: bool) -> ProjectionHead {
        let d = bias.len();
        ProjectionHead {
            modality: ModalityKind::Video,
            weight,
            bias: Tensor::new(vec![d], bias).unwrap(),
            normalize_output: normalize,
        }
    }

    #[test]
    fn zero_weight_unit_bias() {
        let h = head(Tensor::zeros(&[3, 5]), vec![1.0, 0.0, 0.0], true);
        assert_eq!(h.project(&[9.0, -1.0, 2.0, 0.5, 7.0]).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_without_norm() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let h = head(eye, vec![0.0; 3], false);
        assert_eq!(h.project(&[0.3, -4.0, 2.5]).unwrap(), vec![0.3, -4.0, 2.5]);
    }

    #[test]
    fn normalized_output_has_unit_norm() {
        let heads = init_heads(Dims::new(7, 9, 11), 6, 4).unwrap();
        for h in &heads {
            let z: Vec<f64> = (0..h.input_dim()).map(|i| (i as f64).sin() + 0.1).collect();
            let out = h.project(&z).unwrap();
            assert_eq!(out.len(), 6);
            let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_norm_falls_back() {
        let h = head(Tensor::zeros(&[2, 2]), vec![0.0, 0.0], true);
        let before = zero_norm_fallbacks();
        assert_eq!(h.project(&[1.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        assert!(zero_norm_fallbacks() > before);
    }

    #[test]
    fn dim_mismatch_names_modality() {
        let h = head(Tensor::zeros(&[2, 4]), vec![0.0, 0.0], true);
        let msg = h.project(&[1.0; 3]).unwrap_err().to_string();
        assert!(msg.contains("video") && msg.contains('4') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let dims = Dims::new(64, 96, 80);
        let a = init_heads(dims, 32, 1).unwrap();
        let b = init_heads(dims, 32, 1).unwrap();
        assert_eq!(a, b);
        for h in &a {
            let bound = xavier_bound(h.input_dim(), 32);
            assert!(h.weight.data().iter().all(|w| w.abs() <= bound));
            assert!(h.bias.data().iter().all(|&v| v == 0.0));
            assert!(h.weight.requires_grad);
        }
        assert!(init_heads(dims, 1, 0).is_err());
    }

    #[test]
    fn init_mean_is_near_zero() {
        // 10^4+ entries of U(-b, b): sd of the mean is b/√(3n).
        let heads = init_heads(Dims::new(100, 100, 100), 100, 5).unwrap();
        let w = heads[0].weight.data();
        let n = w.len() as f64;
        let bound = xavier_bound(100, 100);
        let mean = w.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * bound / (3.0 * n).sqrt(), "{mean}");
    }

    #[test]
    fn graph_forward_matches_eager() {
        let heads = init_heads(Dims::new(5, 5, 5), 4, 2).unwrap();
        let h = &heads[2];
        let mut g = Graph::new();
        let vars = h.bind(&mut g);
        let rows = vec![0.5, -1.0, 2.0, 0.0, 1.5, 3.0, 0.1, -0.2, 0.3, -0.4];
        let z = g.constant(vec![2, 5], rows.clone()).unwrap();
        let out = h.forward(&mut g, vars, z).unwrap();
        for r in 0..2 {
            let eager = h.project(&rows[r * 5..(r + 1) * 5]).unwrap();
            for c in 0..4 {
                assert!((g.value(out)[r * 4 + c] - eager[c]).abs() < 1e-14);
            }
        }
    }
}
