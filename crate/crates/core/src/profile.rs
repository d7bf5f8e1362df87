//! Inference cost of a model: wall-clock time, analytic FLOPs and parameter memory.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{EmbeddingBundle, Sample};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    /// Median over repetitions of wall-clock time per sample.
    pub inference_ms_per_sample: f64,
    /// Analytic count for one pass over the bundle.
    pub flop_count: u64,
    pub peak_param_bytes: usize,
    pub param_count: usize,
    pub samples: usize,
    pub repetitions: usize,
    /// Per-repetition wall-clock milliseconds for the whole bundle.
    pub timings_ms: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// FLOPs of scoring every sample of `bundle` (projection through sigmoid).
pub fn bundle_flops(model: &Model, bundle: &EmbeddingBundle) -> Result<u64> {
    let mut total = 0;
    for chunk in bundle.samples.chunks(256) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        total += model.forward_flops(&batch)?;
    }
    Ok(total)
}

pub fn profile(model: &Model, bundle: &EmbeddingBundle, repetitions: usize) -> Result<ProfileReport> {
    if repetitions < 3 {
        return Err(Error::param(format!(
            "profiling needs at least 3 repetitions, got {repetitions}"
        )));
    }
    if bundle.is_empty() {
        return Err(Error::param("cannot profile on an empty bundle"));
    }
    let flop_count = bundle_flops(model, bundle)?;
    let mut timings_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let scores = model.predict(bundle)?;
        std::hint::black_box(scores);
        timings_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(ProfileReport {
        inference_ms_per_sample: median(&timings_ms) / bundle.len() as f64,
        flop_count,
        peak_param_bytes: model.param_bytes(),
        param_count: model.param_count(),
        samples: bundle.len(),
        repetitions,
        timings_ms,
    })
}
