use rand::seq::SliceRandom;

use super::{EmbeddingBundle, Label};
use crate::error::{Error, Result};
use crate::rng::{derive_seed_indexed, rng_for};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stratified train/eval split. Each class contributes `round(n_class · eval_fraction)`
/// samples to eval; both sides keep the input's relative order.
pub fn split(
    bundle: &EmbeddingBundle,
    eval_fraction: f64,
    seed: u64,
) -> Result<(EmbeddingBundle, EmbeddingBundle)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::param(format!(
            "eval fraction {eval_fraction} must lie strictly between 0 and 1"
        )));
    }
    if bundle.len() < 2 {
        return Err(Error::param("split needs at least 2 samples"));
    }
    let mut rng = rng_for(seed, "split");
    let mut is_eval = vec![false; bundle.len()];
    for label in [Label::Authentic, Label::Manipulated] {
        let mut idx: Vec<usize> = (0..bundle.len())
            .filter(|&i| bundle.samples[i].label == label)
            .collect();
        if idx.is_empty() {
            return Err(Error::param(format!(
                "cannot stratify: no {label:?} samples in bundle"
            )));
        }
        idx.shuffle(&mut rng);
        let take = ((idx.len() as f64) * eval_fraction).round() as usize;
        for &i in &idx[..take.min(idx.len())] {
            is_eval[i] = true;
        }
    }
    let (eval, train): (Vec<usize>, Vec<usize>) = (0..bundle.len()).partition(|&i| is_eval[i]);
    Ok((bundle.subset(&train), bundle.subset(&eval)))
}

/// Sample indices for one epoch, shuffled by `(seed, epoch)` and cut into
/// batches of `batch_size`; the final short batch is kept.
pub fn batch_iter(
    bundle: &EmbeddingBundle,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::param(format!(
            "batch size {batch_size} is below 2; contrastive loss needs in-batch negatives"
        )));
    }
    let mut order: Vec<usize> = (0..bundle.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(seed, "batches", &[epoch as u64]));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
