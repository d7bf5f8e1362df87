//! Synthetic stand-in for pretrained-model embeddings.
//!
//! Authentic samples share one latent `u ~ N(0, I_k)` across modalities:
//! `z_m = M_m·u + σ·η_m`. In hard mode a manipulated sample draws an
//! independent latent per modality, so each modality's marginal is identical
//! to the authentic one and only cross-modal agreement carries the label. In
//! easy mode a manipulated sample keeps the shared latent but its
//! audio-visual embedding is shifted by `fake_shift` in every coordinate.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dims, EmbeddingBundle, Label, ModalityKind, Sample};
use crate::checksum::crc64;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Easy,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_real: usize,
    pub n_fake: usize,
    pub latent_dim: usize,
    pub dims: Dims,
    pub noise_sigma: f64,
    pub mode: SynthMode,
    /// Per-coordinate offset added to manipulated audio-visual embeddings (easy mode only).
    pub fake_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_real: 1250,
            n_fake: 1250,
            latent_dim: 16,
            dims: Dims::new(64, 96, 80),
            noise_sigma: 0.3,
            mode: SynthMode::Easy,
            fake_shift: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("synth.{field}: {why}")));
        if self.n_real < 1 {
            return bad("n_real", "must be at least 1".into());
        }
        if self.n_fake < 1 {
            return bad("n_fake", "must be at least 1".into());
        }
        for m in ModalityKind::ALL {
            if self.dims.get(m) == 0 {
                return bad(
                    &format!("dims.{}", dims_field(m)),
                    "must be positive".into(),
                );
            }
        }
        let min_dim = self.dims.as_array().into_iter().min().unwrap_or(0);
        if self.latent_dim < 1 || self.latent_dim > min_dim {
            return bad(
                "latent_dim",
                format!("{} must be in 1..={min_dim}", self.latent_dim),
            );
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", format!("{} must be finite and >= 0", self.noise_sigma));
        }
        if !self.fake_shift.is_finite() {
            return bad("fake_shift", "must be finite".into());
        }
        Ok(())
    }
}

fn dims_field(m: ModalityKind) -> &'static str {
    match m {
        ModalityKind::Audio => "audio",
        ModalityKind::Video => "video",
        ModalityKind::AudioVisual => "audiovisual",
    }
}

/// The seeded `d_m × k` mixing matrices (row-major) for each modality.
pub fn mixing_matrices(config: &SynthConfig) -> [Vec<f64>; 3] {
    let mut rng = rng_for(config.seed, "synth/mixing");
    let k = config.latent_dim;
    let scale = 1.0 / (k as f64).sqrt();
    ModalityKind::ALL.map(|m| {
        (0..config.dims.get(m) * k)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    })
}

pub fn synth_generate(config: &SynthConfig) -> Result<EmbeddingBundle> {
    config.validate()?;
    let mixing = mixing_matrices(config);
    let k = config.latent_dim;
    let n = config.n_real + config.n_fake;

    let mut labels: Vec<Label> = std::iter::repeat(Label::Authentic)
        .take(config.n_real)
        .chain(std::iter::repeat(Label::Manipulated).take(config.n_fake))
        .collect();
    labels.shuffle(&mut rng_for(config.seed, "synth/order"));

    let mut rng = rng_for(config.seed, "synth/samples");
    let latent = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..k).map(|_| rng.sample(StandardNormal)).collect()
    };
    let mut samples = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let shared = latent(&mut rng);
        let latents: [Vec<f64>; 3] = if label == Label::Manipulated && config.mode == SynthMode::Hard {
            [latent(&mut rng), latent(&mut rng), latent(&mut rng)]
        } else {
            [shared.clone(), shared.clone(), shared]
        };
        let embeddings = ModalityKind::ALL.map(|m| {
            let d = config.dims.get(m);
            let mix = &mixing[m.index()];
            let u = &latents[m.index()];
            let shift = if label == Label::Manipulated
                && config.mode == SynthMode::Easy
                && m == ModalityKind::AudioVisual
            {
                config.fake_shift
            } else {
                0.0
            };
            Some(
                (0..d)
                    .map(|r| {
                        let signal: f64 = (0..k).map(|c| mix[r * k + c] * u[c]).sum();
                        let noise: f64 = rng.sample(StandardNormal);
                        (signal + config.noise_sigma * noise + shift) as f32
                    })
                    .collect(),
            )
        });
        samples.push(Sample {
            id: format!("syn-{i:06}"),
            label,
            embeddings,
        });
    }

    let mix_bytes: Vec<u8> = mixing
        .iter()
        .flatten()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let provenance = format!(
        "synthetic; config={}; mixing_crc64={:016x}",
        serde_json::to_string(config).expect("config serializes"),
        crc64(&mix_bytes)
    );
    EmbeddingBundle::new(config.dims, samples, provenance)
}
