//! Training loop, learning-rate schedule and evaluation.

use serde::{Deserialize, Serialize};

use crate::contrastive::{build_pairs, contrastive_loss, ContrastiveConfig, DenominatorMode, PairPolicy};
use crate::dataio::{batch_iter, EmbeddingBundle, Label, Sample};
use crate::error::{Error, Result};
use crate::fusion::{check_lambda, total_loss, FusionStrategy};
use crate::metrics::{accuracy, auc, eer, ScoreSet};
use crate::model::{Architecture, Model};
use crate::rng::derive_seed_indexed;
use crate::tensor::{AdamConfig, AdamState, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Adam β1.
    pub momentum: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub decay_factor: f64,
    pub decay_every: usize,
    /// Weight of the contrastive term in the total loss.
    pub lambda: f64,
    pub tau: f64,
    pub d_s: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub fusion: FusionStrategy,
    pub pair_policy: PairPolicy,
    pub denominator_mode: DenominatorMode,
    pub normalize_projections: bool,
    /// Leading epochs trained on the contrastive term alone.
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 50,
            momentum: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            dropout: 0.5,
            activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            decay_factor: 0.1,
            decay_every: 10,
            lambda: 0.5,
            tau: 0.07,
            d_s: arch.d_s,
            n_layers: arch.n_layers,
            n_heads: arch.n_heads,
            ffn_mult: arch.ffn_mult,
            fusion: arch.fusion,
            pair_policy: PairPolicy::SameSampleAuthentic,
            denominator_mode: DenominatorMode::Standard,
            normalize_projections: arch.normalize_projections,
            warmup_epochs: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("train.{field}: {why}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if !(self.decay_factor > 0.0) {
            return bad("decay_factor", "must be positive");
        }
        if self.decay_every == 0 {
            return bad("decay_every", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", "must lie in [0, 1]");
        }
        if !(self.tau > 0.0) {
            return bad("tau", "must be positive");
        }
        if self.d_s < 2 {
            return bad("d_s", "must be at least 2");
        }
        if self.n_heads == 0 || self.d_s % self.n_heads != 0 {
            return bad("n_heads", "must divide d_s");
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult", "must be at least 1");
        }
        if let Err(e) = self.fusion.validate() {
            return bad("fusion", &e.to_string());
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            d_s: self.d_s,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            ffn_mult: self.ffn_mult,
            fusion: self.fusion,
            normalize_projections: self.normalize_projections,
        }
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            denominator_mode: self.denominator_mode,
            pair_policy: self.pair_policy,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.momentum,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// `base_lr · decay_factor^⌊epoch / decay_every⌋`, by repeated multiplication.
pub fn lr_schedule(base_lr: f64, epoch: usize, decay_factor: f64, decay_every: usize) -> f64 {
    let steps = epoch / decay_every.max(1);
    (0..steps).fold(base_lr, |lr, _| lr * decay_factor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub eer: f64,
    pub auc: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Batch means of the total, contrastive and classification losses.
    pub loss: f64,
    pub contrastive_loss: f64,
    pub cls_loss: f64,
    pub eval: Option<EvalMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
}

/// Scores every sample of `bundle` with `model`.
pub fn score(model: &Model, bundle: &EmbeddingBundle) -> Result<ScoreSet> {
    let probs = model.predict(bundle)?;
    let labels: Vec<Label> = bundle.samples.iter().map(|s| s.label).collect();
    ScoreSet::from_parts(&probs, &labels)
}

pub fn evaluate(model: &Model, bundle: &EmbeddingBundle) -> Result<EvalMetrics> {
    let scores = score(model, bundle)?;
    Ok(EvalMetrics {
        eer: eer(&scores)?,
        auc: auc(&scores)?,
        acc: accuracy(&scores, 0.5),
    })
}

/// Losses of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub contrastive: f64,
    pub cls: f64,
}

/// Forward, backward and one Adam update on `batch`.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &[&Sample],
    cfg: &TrainConfig,
    lambda: f64,
    lr: f64,
    dropout_seed: u64,
) -> Result<StepLosses> {
    check_lambda(lambda)?;
    let mut g = Graph::training(dropout_seed);
    let vars = model.bind(&mut g);
    let fwd = model.forward(&mut g, &vars, batch, cfg.dropout)?;
    let lc = if batch.len() >= 2 {
        let pairs = build_pairs(&fwd.members, cfg.pair_policy)?;
        contrastive_loss(&mut g, fwd.tokens, &pairs, &cfg.contrastive())?
    } else {
        g.constant(vec![], vec![0.0])?
    };
    let targets: Vec<f64> = batch.iter().map(|s| s.label.as_f64()).collect();
    let lcls = g.bce_with_logits(fwd.logits, &targets)?;
    let total = total_loss(&mut g, lc, lcls, lambda)?;
    let losses = StepLosses {
        total: g.scalar(total),
        contrastive: g.scalar(lc),
        cls: g.scalar(lcls),
    };
    if !losses.total.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            batch: 0,
            message: format!("non-finite loss {}", losses.total),
        });
    }
    let grads = g.backward(total)?;
    let mut params = model.params_mut();
    for (v, p) in vars.all().iter().zip(params.iter_mut()) {
        grads.write_into(*v, p);
    }
    let stepped = adam.step(&mut params, lr, cfg.weight_decay);
    params.iter_mut().for_each(|p| p.zero_grad());
    stepped?;
    Ok(losses)
}

/// Trains a fresh model on `train_set`, evaluating on `eval_set` after each epoch.
pub fn train(train_set: &EmbeddingBundle, eval_set: &EmbeddingBundle, cfg: &TrainConfig) -> Result<TrainedModel> {
    train_with(train_set, eval_set, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    train_set: &EmbeddingBundle,
    eval_set: &EmbeddingBundle,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(Error::param("training and evaluation bundles must be nonempty"));
    }
    if train_set.count(Label::Authentic) == 0 || train_set.count(Label::Manipulated) == 0 {
        return Err(Error::param("training bundle must contain both labels"));
    }
    let mut model = Model::init(train_set.dims, cfg.architecture(), cfg.seed)?;
    model.check_compatible(eval_set.dims)?;
    let mut adam = AdamState::new(cfg.adam(), model.named_params().into_iter().map(|(_, t)| t));
    let eval_scorable = eval_set.count(Label::Authentic) > 0 && eval_set.count(Label::Manipulated) > 0;
    if !eval_scorable {
        log::warn!("evaluation bundle has a single class; per-epoch metrics are skipped");
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(cfg.lr, epoch, cfg.decay_factor, cfg.decay_every);
        let lambda = if epoch < cfg.warmup_epochs { 1.0 } else { cfg.lambda };
        let batches = batch_iter(train_set, cfg.batch_size, cfg.seed, epoch)?;
        let (mut total, mut contrast, mut cls) = (0.0, 0.0, 0.0);
        for (bi, idx) in batches.iter().enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set.samples[i]).collect();
            let seed = derive_seed_indexed(cfg.seed, "dropout", &[epoch as u64, bi as u64]);
            let step = train_step(&mut model, &mut adam, &batch, cfg, lambda, lr, seed).map_err(|e| match e {
                Error::Training { message, .. } => Error::Training {
                    epoch,
                    batch: bi,
                    message,
                },
                other => other,
            })?;
            total += step.total;
            contrast += step.contrastive;
            cls += step.cls;
        }
        let n = batches.len() as f64;
        let eval = if eval_scorable {
            Some(evaluate(&model, eval_set)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss: total / n,
            contrastive_loss: contrast / n,
            cls_loss: cls / n,
            eval,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (contrastive {:.5}, cls {:.5}){}",
            record.loss,
            record.contrastive_loss,
            record.cls_loss,
            eval.map(|m| format!(", eval auc {:.4} eer {:.4} acc {:.4}", m.auc, m.eer, m.acc))
                .unwrap_or_default()
        );
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainedModel {
        model,
        config: cfg.clone(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{split, synth_generate, SynthConfig};

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(1e-3, 0, 0.1, 10), 1e-3);
        assert_eq!(lr_schedule(1e-3, 9, 0.1, 10), 1e-3);
        assert_eq!(lr_schedule(1e-3, 10, 0.1, 10), 1e-4);
        assert_eq!(lr_schedule(1e-3, 25, 0.1, 10), 1e-5);
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.epochs, 50);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 1e-4);
        assert_eq!(cfg.dropout, 0.5);
    }

    #[test]
    fn validation_names_field() {
        let cfg = TrainConfig {
            n_heads: 5,
            ..TrainConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("train.n_heads"), "{msg}");
    }

    fn small_data(seed: u64) -> (EmbeddingBundle, EmbeddingBundle) {
        let data = synth_generate(&SynthConfig {
            n_real: 40,
            n_fake: 40,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        split(&data, 0.25, seed).unwrap()
    }

    #[test]
    fn single_class_train_rejected() {
        let (tr, ev) = small_data(1);
        let idx: Vec<usize> = (0..tr.len()).filter(|&i| tr.samples[i].label == Label::Authentic).collect();
        let only_real = tr.subset(&idx);
        assert!(matches!(
            train(&only_real, &ev, &TrainConfig::default()),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let (tr, ev) = small_data(2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&tr, &ev, &cfg).unwrap();
        let b = train(&tr, &ev, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 2);
        assert!(a.history.iter().all(|r| r.eval.is_some()));
    }

    #[test]
    fn contrastive_only_leaves_classifier_untouched() {
        let (tr, ev) = small_data(3);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            lambda: 1.0,
            weight_decay: 0.0,
            seed: 4,
            ..TrainConfig::default()
        };
        let init = Model::init(tr.dims, cfg.architecture(), cfg.seed).unwrap();
        let trained = train(&tr, &ev, &cfg).unwrap();
        assert_eq!(trained.model.classifier, init.classifier);
        assert_ne!(trained.model.heads, init.heads);
    }
}
