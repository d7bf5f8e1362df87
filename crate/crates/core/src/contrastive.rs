//! Cross-modal contrastive alignment.
//!
//! Embeddings of a batch live on a flattened `(sample, modality)` grid: the
//! embedding of modality `m` of sample `s` has index `3·s + m`. Positives pull
//! together the modalities of authentic samples; everything from other samples
//! in the batch acts as a negative.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NceTerm, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// The positive term is part of the normalizer (InfoNCE).
    Standard,
    /// Normalizer over negatives only, as printed in the original formulation.
    /// Not bounded below.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    /// Cross-modal pairs within each authentic sample.
    SameSampleAuthentic,
    /// Additionally, same-modality pairs across authentic samples.
    SupervisedLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub denominator_mode: DenominatorMode,
    pub pair_policy: PairPolicy,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            denominator_mode: DenominatorMode::Standard,
            pair_policy: PairPolicy::SameSampleAuthentic,
        }
    }
}

/// Label and modality presence of one batch member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchMember {
    pub label: Label,
    pub present: [bool; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    /// Ordered `(anchor, partner)` positives.
    pub positives: Vec<(usize, usize)>,
    /// Sorted negatives for every anchor that appears in `positives`.
    pub negatives: BTreeMap<usize, Vec<usize>>,
    /// Positives dropped because their anchor had no negative.
    pub dropped: usize,
}

impl PairSet {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "cosine similarity of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn build_pairs(batch: &[BatchMember], policy: PairPolicy) -> Result<PairSet> {
    if batch.len() < 2 {
        return Err(Error::param(format!(
            "pair construction needs at least 2 samples, got {}",
            batch.len()
        )));
    }
    let index = |s: usize, m: usize| 3 * s + m;
    let present = |s: usize| (0..3).filter(move |&m| batch[s].present[m]);

    let mut positives = Vec::new();
    for (s, member) in batch.iter().enumerate() {
        if member.label != Label::Authentic {
            continue;
        }
        for a in present(s) {
            for b in present(s) {
                if a != b {
                    positives.push((index(s, a), index(s, b)));
                }
            }
            if policy == PairPolicy::SupervisedLabel {
                for (t, other) in batch.iter().enumerate() {
                    if t != s && other.label == Label::Authentic && other.present[a] {
                        positives.push((index(s, a), index(t, a)));
                    }
                }
            }
        }
    }

    let positive_set: HashSet<(usize, usize)> = positives.iter().copied().collect();
    let mut negatives: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(anchor, _) in &positives {
        if negatives.contains_key(&anchor) {
            continue;
        }
        let s = anchor / 3;
        let mut negs = Vec::new();
        for (t, member) in batch.iter().enumerate() {
            for m in present(t) {
                let k = index(t, m);
                let cross_sample = t != s;
                let manipulated_self = t == s && k != anchor && member.label == Label::Manipulated;
                if (cross_sample || manipulated_self) && !positive_set.contains(&(anchor, k)) {
                    negs.push(k);
                }
            }
        }
        negatives.insert(anchor, negs);
    }

    let before = positives.len();
    positives.retain(|(a, _)| !negatives[a].is_empty());
    negatives.retain(|_, negs| !negs.is_empty());
    let dropped = before - positives.len();
    if positives.is_empty() {
        log::debug!("batch has no usable positive pair; contrastive term is zero");
    }
    Ok(PairSet {
        positives,
        negatives,
        dropped,
    })
}

/// Per-positive terms over a similarity matrix indexed like the pair set.
pub fn nce_terms(pairs: &PairSet, mode: DenominatorMode) -> Vec<NceTerm> {
    pairs
        .positives
        .iter()
        .map(|&(anchor, positive)| {
            let negs = &pairs.negatives[&anchor];
            let candidates = match mode {
                DenominatorMode::Standard => {
                    let mut c = Vec::with_capacity(negs.len() + 1);
                    c.push(positive);
                    c.extend_from_slice(negs);
                    c
                }
                DenominatorMode::PaperLiteral => negs.clone(),
            };
            NceTerm {
                anchor,
                positive,
                candidates,
            }
        })
        .collect()
}

/// Contrastive loss over the rows of `h` (`[n, d]`, indexed like `pairs`).
///
/// Only rows referenced by `pairs` are touched; they are L2-normalized so that
/// the similarity matrix holds cosine similarities. Returns a zero scalar for an
/// empty pair set.
pub fn contrastive_loss(g: &mut Graph, h: Var, pairs: &PairSet, cfg: &ContrastiveConfig) -> Result<Var> {
    if !(cfg.tau > 0.0) {
        return Err(Error::param(format!("temperature {} must be positive", cfg.tau)));
    }
    let n = g.shape(h).first().copied().unwrap_or(0);
    let mut used: Vec<usize> = pairs
        .positives
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .chain(pairs.negatives.values().flatten().copied())
        .collect();
    used.sort_unstable();
    used.dedup();
    if let Some(&bad) = used.iter().find(|&&i| i >= n) {
        return Err(Error::contract(format!(
            "pair index {bad} out of range for {n} embeddings"
        )));
    }
    if used.is_empty() {
        let zero = g.constant(vec![1, 1], vec![0.0])?;
        return g.info_nce(zero, Vec::new(), cfg.tau);
    }
    let remap: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let rows = g.gather_rows(h, &used)?;
    let unit = g.l2_normalize_rows(rows);
    let sim = g.matmul_bt(unit, unit)?;
    let terms = nce_terms(pairs, cfg.denominator_mode)
        .into_iter()
        .map(|t| NceTerm {
            anchor: remap[&t.anchor],
            positive: remap[&t.positive],
            candidates: t.candidates.iter().map(|c| remap[c]).collect(),
        })
        .collect();
    g.info_nce(sim, terms, cfg.tau)
}
