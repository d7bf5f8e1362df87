//! Embedding datasets: in-memory types, the CEB v1 binary format, the
//! synthetic generator and split/batch utilities.

pub mod ceb;
mod split;
pub mod synth;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ceb::{decode_bundle, encode_bundle, read_bundle, write_bundle};
pub use split::{batch_iter, split};
pub use synth::{synth_generate, SynthConfig, SynthMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Audio = 0,
    Video = 1,
    AudioVisual = 2,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 3] = [Self::Audio, Self::Video, Self::AudioVisual];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::Audio => "a",
            Self::Video => "v",
            Self::AudioVisual => "av",
        }
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Audio => "audio",
            Self::Video => "video",
            Self::AudioVisual => "audiovisual",
        })
    }
}

/// Ground truth. Scores follow the same polarity: higher means manipulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Authentic = 0,
    Manipulated = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Authentic),
            1 => Some(Self::Manipulated),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }
}

/// Per-modality embedding widths `(d_a, d_v, d_av)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub audio: usize,
    pub video: usize,
    pub audiovisual: usize,
}

impl Dims {
    pub fn new(audio: usize, video: usize, audiovisual: usize) -> Self {
        Self {
            audio,
            video,
            audiovisual,
        }
    }

    pub fn get(&self, m: ModalityKind) -> usize {
        match m {
            ModalityKind::Audio => self.audio,
            ModalityKind::Video => self.video,
            ModalityKind::AudioVisual => self.audiovisual,
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.audio, self.video, self.audiovisual]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: Label,
    /// Raw embeddings indexed by [`ModalityKind::index`]; `None` when absent.
    pub embeddings: [Option<Vec<f32>>; 3],
}

impl Sample {
    pub fn embedding(&self, m: ModalityKind) -> Option<&[f32]> {
        self.embeddings[m.index()].as_deref()
    }

    pub fn has(&self, m: ModalityKind) -> bool {
        self.embeddings[m.index()].is_some()
    }

    /// Presence bitmask: bit0 audio, bit1 video, bit2 audio-visual.
    pub fn presence_mask(&self) -> u8 {
        ModalityKind::ALL
            .iter()
            .filter(|m| self.has(**m))
            .fold(0u8, |acc, m| acc | (1 << m.index()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub dims: Dims,
    pub samples: Vec<Sample>,
    /// Free-text origin (generator config, exporter model ids). Not part of the
    /// CEB v1 byte layout.
    pub provenance: String,
}

impl EmbeddingBundle {
    pub fn new(dims: Dims, samples: Vec<Sample>, provenance: impl Into<String>) -> Result<Self> {
        let bundle = Self {
            dims,
            samples,
            provenance: provenance.into(),
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Checks unique ids, at least one modality per sample and widths matching `dims`.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::contract(format!("duplicate sample id {:?}", s.id)));
            }
            if s.presence_mask() == 0 {
                return Err(Error::contract(format!("sample {:?} has no modality", s.id)));
            }
            for m in ModalityKind::ALL {
                if let Some(z) = s.embedding(m) {
                    let want = self.dims.get(m);
                    if want == 0 || z.len() != want {
                        return Err(Error::shape(format!(
                            "sample {:?}: {m} embedding has {} values, bundle declares d_{} = {want}",
                            s.id,
                            z.len(),
                            m.short_name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Sub-bundle with the given sample indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            dims: self.dims,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Human-readable problems that do not prevent loading (non-finite values).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.samples {
            for m in ModalityKind::ALL {
                if let Some(z) = s.embedding(m) {
                    if let Some(pos) = z.iter().position(|v| !v.is_finite()) {
                        out.push(format!(
                            "sample {:?}: non-finite {m} value at index {pos}",
                            s.id
                        ));
                    }
                }
            }
        }
        out
    }
}
