//! The 2×2×2 ablation grid over contrastive weight, refiner depth and fusion.

use serde::{Deserialize, Serialize};

use crate::dataio::EmbeddingBundle;
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::trainer::{train, EvalMetrics, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lambda: f64,
    pub n_layers: usize,
    pub fusion: FusionStrategy,
}

impl Cell {
    pub fn label(&self) -> String {
        let fusion = match self.fusion {
            FusionStrategy::Concat => "concat".to_string(),
            FusionStrategy::Mean => "mean".to_string(),
            FusionStrategy::Weighted(w) => format!("weighted{w:?}"),
        };
        format!("lambda={} L={} fusion={fusion}", self.lambda, self.n_layers)
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            n_layers: self.n_layers,
            fusion: self.fusion,
            ..base.clone()
        }
    }
}

/// The eight cells `{0, λ*} × {0, L*} × {mean, concat}`; the first is the full model.
pub fn grid(base: &TrainConfig) -> Vec<Cell> {
    let mut cells = Vec::with_capacity(8);
    for lambda in [base.lambda, 0.0] {
        for n_layers in [base.n_layers, 0] {
            for fusion in [FusionStrategy::Concat, FusionStrategy::Mean] {
                cells.push(Cell {
                    lambda,
                    n_layers,
                    fusion,
                });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub cell: usize,
    pub seed: u64,
    pub metrics: Option<EvalMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample mean and (n−1) standard deviation; `None` for no values.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub label: String,
    pub completed: usize,
    pub failed: usize,
    pub eer: Option<MeanSd>,
    pub auc: Option<MeanSd>,
    pub acc: Option<MeanSd>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Eer,
    Acc,
}

/// One-factor comparison of the full model against the cell that removes one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelComparison {
    pub panel: String,
    pub description: String,
    pub metric: Metric,
    pub full: Option<f64>,
    pub ablated: Option<f64>,
    /// Whether the full model is at least as good; `None` when a mean is missing.
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<Run>,
    pub panels: Vec<PanelComparison>,
    /// Cell labels ordered by mean EER, best first.
    pub ranking: Vec<String>,
}

fn summarize(cell: Cell, runs: &[&Run]) -> CellSummary {
    let ok: Vec<EvalMetrics> = runs.iter().filter_map(|r| r.metrics).collect();
    let pick = |f: fn(&EvalMetrics) -> f64| MeanSd::of(&ok.iter().map(f).collect::<Vec<_>>());
    CellSummary {
        cell,
        label: cell.label(),
        completed: ok.len(),
        failed: runs.len() - ok.len(),
        eer: pick(|m| m.eer),
        auc: pick(|m| m.auc),
        acc: pick(|m| m.acc),
    }
}

fn compare(panel: &str, description: &str, metric: Metric, full: &CellSummary, ablated: &CellSummary) -> PanelComparison {
    let get = |c: &CellSummary| match metric {
        Metric::Eer => c.eer.map(|s| s.mean),
        Metric::Acc => c.acc.map(|s| s.mean),
    };
    let (f, a) = (get(full), get(ablated));
    let holds = f.zip(a).map(|(f, a)| match metric {
        Metric::Eer => f <= a,
        Metric::Acc => f >= a,
    });
    PanelComparison {
        panel: panel.into(),
        description: description.into(),
        metric,
        full: f,
        ablated: a,
        holds,
    }
}

/// Assembles summaries, panel comparisons and the ranking from finished runs.
pub fn report(cells: &[Cell], seeds: &[u64], runs: Vec<Run>) -> AblationReport {
    let summaries: Vec<CellSummary> = cells
        .iter()
        .enumerate()
        .map(|(i, &c)| summarize(c, &runs.iter().filter(|r| r.cell == i).collect::<Vec<_>>()))
        .collect();
    // grid order: 0 full, 1 mean fusion, 2 no refiner, 4 no contrastive
    let panels = vec![
        compare("ii", "contrastive alignment on vs off (lambda = 0)", Metric::Eer, &summaries[0], &summaries[4]),
        compare("iii", "refiner on vs off (L = 0)", Metric::Acc, &summaries[0], &summaries[2]),
        compare("iv", "concat vs mean fusion", Metric::Acc, &summaries[0], &summaries[1]),
    ];
    let mut ranked: Vec<&CellSummary> = summaries.iter().collect();
    ranked.sort_by(|a, b| {
        let key = |c: &CellSummary| c.eer.map_or(f64::INFINITY, |s| s.mean);
        key(a).total_cmp(&key(b))
    });
    let ranking = ranked.iter().map(|c| c.label.clone()).collect();
    AblationReport {
        seeds: seeds.to_vec(),
        cells: summaries,
        runs,
        panels,
        ranking,
    }
}

/// Trains every cell for every seed. Per-run failures are recorded, not raised.
pub fn run_ablation(
    train_set: &EmbeddingBundle,
    eval_set: &EmbeddingBundle,
    base: &TrainConfig,
    seeds: &[u64],
    mut on_run: impl FnMut(&Cell, &Run),
) -> Result<AblationReport> {
    if seeds.len() < 3 {
        return Err(Error::param(format!(
            "ablation needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    base.validate()?;
    let cells = grid(base);
    let mut runs = Vec::with_capacity(cells.len() * seeds.len());
    for (i, cell) in cells.iter().enumerate() {
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..cell.apply(base)
            };
            let run = match train(train_set, eval_set, &cfg) {
                Ok(t) => Run {
                    cell: i,
                    seed,
                    metrics: t.history.last().and_then(|r| r.eval),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{} seed {seed} failed: {e}", cell.label());
                    Run {
                        cell: i,
                        seed,
                        metrics: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            on_run(cell, &run);
            runs.push(run);
        }
    }
    Ok(report(&cells, seeds, runs))
}
