//! The full detector: projection heads, absent-modality embeddings, refiner,
//! fusion and classifier, with batched forward passes on a [`Graph`].

use serde::{Deserialize, Serialize};

use crate::contrastive::BatchMember;
use crate::dataio::{Dims, EmbeddingBundle, ModalityKind, Sample};
use crate::error::{Error, Result};
use crate::fusion::{fuse, ClassifierHead, ClassifierVars, FusionStrategy};
use crate::init::zeros_param;
use crate::projection::{init_heads, HeadVars, ProjectionHead};
use crate::refiner::{init_refiner, RefinerBlock, RefinerVars, TOKENS};
use crate::tensor::{kernels, Graph, Tensor, Var};

/// Shape-determining hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub d_s: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub fusion: FusionStrategy,
    pub normalize_projections: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            d_s: 32,
            n_layers: 2,
            n_heads: 4,
            ffn_mult: 4,
            fusion: FusionStrategy::Concat,
            normalize_projections: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dims: Dims,
    pub arch: Architecture,
    pub heads: [ProjectionHead; 3],
    /// Learned stand-ins for missing modalities, `[d_s]` each.
    pub absent: [Tensor; 3],
    pub refiner: RefinerBlock,
    pub classifier: ClassifierHead,
}

/// Model parameters recorded on a graph.
#[derive(Debug, Clone)]
pub struct ModelVars {
    heads: [HeadVars; 3],
    absent: [Var; 3],
    refiner: RefinerVars,
    classifier: ClassifierVars,
    all: Vec<Var>,
}

impl ModelVars {
    /// Handles in [`Model::named_params`] order.
    pub fn all(&self) -> &[Var] {
        &self.all
    }
}

/// Intermediate nodes of one batched forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Projected tokens `[3·B, d_s]`, sample-major; absent slots hold the absent embedding.
    pub tokens: Var,
    pub refined: Var,
    pub fused: Var,
    /// `[B, 1]`
    pub logits: Var,
    pub attention: Vec<Var>,
    pub members: Vec<BatchMember>,
}

impl Model {
    pub fn init(dims: Dims, arch: Architecture, seed: u64) -> Result<Self> {
        arch.fusion.validate()?;
        let mut heads = init_heads(dims, arch.d_s, seed)?;
        for h in &mut heads {
            h.normalize_output = arch.normalize_projections;
        }
        let refiner = init_refiner(arch.d_s, arch.n_heads, arch.n_layers, arch.ffn_mult, seed)?;
        let classifier = ClassifierHead::init(arch.fusion.output_dim(arch.d_s), seed);
        Ok(Self {
            dims,
            arch,
            heads,
            absent: [0, 1, 2].map(|_| zeros_param(&[arch.d_s])),
            refiner,
            classifier,
        })
    }

    /// Every trainable tensor with a stable name, in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for h in &self.heads {
            let m = h.modality.short_name();
            out.push((format!("projection.{m}.weight"), &h.weight));
            out.push((format!("projection.{m}.bias"), &h.bias));
        }
        for (m, t) in ModalityKind::ALL.iter().zip(&self.absent) {
            out.push((format!("absent.{}", m.short_name()), t));
        }
        out.extend(self.refiner.named_params());
        out.extend(self.classifier.named_params());
        out
    }

    /// Mutable parameters in [`Model::named_params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out.extend(self.absent.iter_mut());
        out.extend(self.refiner.params_mut());
        out.extend(self.classifier.params_mut());
        out
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Bytes held by parameters at 64-bit precision.
    pub fn param_bytes(&self) -> usize {
        self.param_count() * std::mem::size_of::<f64>()
    }

    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        let heads = [0, 1, 2].map(|i| self.heads[i].bind(g));
        let absent = [0, 1, 2].map(|i| g.leaf(&self.absent[i]));
        let refiner = self.refiner.bind(g);
        let classifier = self.classifier.bind(g);
        let mut all = Vec::new();
        for h in &heads {
            all.push(h.weight);
            all.push(h.bias);
        }
        all.extend(absent);
        all.extend(refiner.vars());
        all.extend([
            classifier.hidden_w,
            classifier.hidden_b,
            classifier.out_w,
            classifier.out_b,
        ]);
        ModelVars {
            heads,
            absent,
            refiner,
            classifier,
            all,
        }
    }

    /// Checks that a bundle's modality widths match the projection heads.
    pub fn check_compatible(&self, dims: Dims) -> Result<()> {
        for m in ModalityKind::ALL {
            let got = dims.get(m);
            let want = self.heads[m.index()].input_dim();
            if got != 0 && got != want {
                return Err(Error::shape(format!(
                    "{m} embeddings have d_{} = {got}, model expects {want}",
                    m.short_name()
                )));
            }
        }
        Ok(())
    }

    /// Projected tokens for `batch` as a `[3·B, d_s]` node.
    pub fn tokens(&self, g: &mut Graph, vars: &ModelVars, batch: &[&Sample]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::contract("forward pass over an empty batch"));
        }
        let d_s = self.arch.d_s;
        let mut blocks = Vec::new();
        // slot[s][m] = row of the concatenated table feeding token (s, m)
        let mut slot = vec![[0usize; TOKENS]; batch.len()];
        let mut offset = 0;
        for m in ModalityKind::ALL {
            let head = &self.heads[m.index()];
            let rows: Vec<usize> = (0..batch.len()).filter(|&s| batch[s].has(m)).collect();
            if rows.is_empty() {
                continue;
            }
            let d_m = head.input_dim();
            let mut data = Vec::with_capacity(rows.len() * d_m);
            for &s in &rows {
                let z = batch[s].embedding(m).expect("present");
                if z.len() != d_m {
                    return Err(Error::shape(format!(
                        "sample {:?}: {m} embedding has {} values, model expects d_{} = {d_m}",
                        batch[s].id,
                        z.len(),
                        m.short_name()
                    )));
                }
                data.extend(z.iter().map(|&v| f64::from(v)));
            }
            let z = g.constant(vec![rows.len(), d_m], data)?;
            blocks.push(head.forward(g, vars.heads[m.index()], z)?);
            for (i, &s) in rows.iter().enumerate() {
                slot[s][m.index()] = offset + i;
            }
            offset += rows.len();
        }
        for m in ModalityKind::ALL {
            if batch.iter().all(|s| s.has(m)) {
                continue;
            }
            blocks.push(g.reshape(vars.absent[m.index()], &[1, d_s])?);
            for (s, sample) in batch.iter().enumerate() {
                if !sample.has(m) {
                    slot[s][m.index()] = offset;
                }
            }
            offset += 1;
        }
        let table = if blocks.len() == 1 {
            blocks[0]
        } else {
            g.concat_rows(&blocks)?
        };
        let order: Vec<usize> = slot.iter().flatten().copied().collect();
        g.gather_rows(table, &order)
    }

    /// Full forward pass. `dropout` only acts when `g` is in training mode.
    pub fn forward(&self, g: &mut Graph, vars: &ModelVars, batch: &[&Sample], dropout: f64) -> Result<Forward> {
        let tokens = self.tokens(g, vars, batch)?;
        let refined = self.refiner.forward(g, &vars.refiner, tokens, dropout)?;
        let fused = fuse(g, refined.tokens, self.arch.fusion)?;
        let logits = self.classifier.logits(g, vars.classifier, fused, dropout)?;
        let members = batch
            .iter()
            .map(|s| BatchMember {
                label: s.label,
                present: [0, 1, 2].map(|i| s.embeddings[i].is_some()),
            })
            .collect();
        Ok(Forward {
            tokens,
            refined: refined.tokens,
            fused,
            logits,
            attention: refined.attention,
            members,
        })
    }

    /// Manipulation probabilities `ŷ` for every sample, evaluated in chunks.
    pub fn predict(&self, bundle: &EmbeddingBundle) -> Result<Vec<f64>> {
        self.check_compatible(bundle.dims)?;
        let mut out = Vec::with_capacity(bundle.len());
        for chunk in bundle.samples.chunks(256) {
            let batch: Vec<&Sample> = chunk.iter().collect();
            let mut g = Graph::new();
            let vars = self.bind(&mut g);
            let f = self.forward(&mut g, &vars, &batch, 0.0)?;
            out.extend(g.value(f.logits).iter().map(|&l| kernels::sigmoid(l)));
        }
        Ok(out)
    }

    /// Analytic floating-point operation count of an evaluation forward pass.
    pub fn forward_flops(&self, batch: &[&Sample]) -> Result<u64> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let f = self.forward(&mut g, &vars, batch, 0.0)?;
        g.sigmoid(f.logits);
        Ok(g.flop_count())
    }
}
