//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmodal_core::contrastive::{build_pairs, contrastive_loss};
use xmodal_core::dataio::{Dims, EmbeddingBundle, Label, Sample};
use xmodal_core::fusion::total_loss;
use xmodal_core::metrics::ScoreSet;
use xmodal_core::model::{Architecture, Model};
use xmodal_core::tensor::{Graph, NceTerm, Tensor, Var};
use xmodal_core::trainer::TrainConfig;
use xmodal_core::Result;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

pub type BuildFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    /// Dropout masks come from this seed when set.
    pub training: Option<u64>,
    pub build: BuildFn,
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(rng, n, 1.0)).unwrap()
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        training: None,
        build: Box::new(build),
    }
}

/// One instance of every differentiable graph operation with inputs drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let r = &mut rng(seed);
    let mut relu_in = tensor(r, &[4, 5]);
    relu_in
        .data_mut()
        .iter_mut()
        .for_each(|v| *v += 0.1 * v.signum());
    let mut cases = vec![
        case("matmul", vec![tensor(r, &[3, 4]), tensor(r, &[4, 5])], |g, v| g.matmul(v[0], v[1])),
        case("matmul batched", vec![tensor(r, &[2, 3, 4]), tensor(r, &[2, 4, 2])], |g, v| {
            g.matmul(v[0], v[1])
        }),
        case("matmul_bt", vec![tensor(r, &[3, 4]), tensor(r, &[5, 4])], |g, v| g.matmul_bt(v[0], v[1])),
        case("matmul_bt batched", vec![tensor(r, &[2, 3, 4]), tensor(r, &[2, 3, 4])], |g, v| {
            g.matmul_bt(v[0], v[1])
        }),
        case("linear", vec![tensor(r, &[3, 4]), tensor(r, &[2, 4]), tensor(r, &[2])], |g, v| {
            g.linear(v[0], v[1], v[2])
        }),
        case("add", vec![tensor(r, &[3, 4]), tensor(r, &[3, 4])], |g, v| g.add(v[0], v[1])),
        case("add_bias", vec![tensor(r, &[2, 3, 4]), tensor(r, &[4])], |g, v| g.add_bias(v[0], v[1])),
        case("scale", vec![tensor(r, &[3, 4])], |g, v| Ok(g.scale(v[0], -1.7))),
        case("relu", vec![relu_in], |g, v| Ok(g.relu(v[0]))),
        case("sigmoid", vec![tensor(r, &[3, 4])], |g, v| Ok(g.sigmoid(v[0]))),
        case(
            "layer_norm",
            vec![tensor(r, &[3, 6]), tensor(r, &[6]), tensor(r, &[6])],
            |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
        ),
        case("softmax_rows", vec![tensor(r, &[2, 3, 4])], |g, v| Ok(g.softmax_rows(v[0]))),
        case("reshape", vec![tensor(r, &[2, 6])], |g, v| g.reshape(v[0], &[3, 4])),
        case("slice_cols", vec![tensor(r, &[3, 5])], |g, v| g.slice_cols(v[0], 1, 3)),
        case("concat_cols", vec![tensor(r, &[3, 2]), tensor(r, &[3, 4])], |g, v| {
            g.concat_cols(&[v[0], v[1]])
        }),
        case("concat_rows", vec![tensor(r, &[2, 3]), tensor(r, &[1, 3])], |g, v| {
            g.concat_rows(&[v[0], v[1]])
        }),
        case("gather_rows", vec![tensor(r, &[3, 2])], |g, v| g.gather_rows(v[0], &[2, 0, 2, 1])),
        case("fill_rows", vec![tensor(r, &[4, 3]), tensor(r, &[3])], |g, v| {
            g.fill_rows(v[0], v[1], &[true, false, true, false])
        }),
        case("l2_normalize_rows", vec![tensor(r, &[4, 3])], |g, v| Ok(g.l2_normalize_rows(v[0]))),
        case("sum", vec![tensor(r, &[3, 4])], |g, v| Ok(g.sum(v[0]))),
        case("mean", vec![tensor(r, &[3, 4])], |g, v| Ok(g.mean(v[0]))),
        case("bce_with_logits", vec![tensor(r, &[4, 1])], |g, v| {
            g.bce_with_logits(v[0], &[0.0, 1.0, 1.0, 0.0])
        }),
        case("info_nce", vec![tensor(r, &[4, 4])], |g, v| {
            let terms = vec![
                NceTerm {
                    anchor: 0,
                    positive: 1,
                    candidates: vec![1, 2, 3],
                },
                NceTerm {
                    anchor: 2,
                    positive: 3,
                    candidates: vec![3, 0],
                },
                NceTerm {
                    anchor: 1,
                    positive: 0,
                    candidates: vec![0, 1, 2, 3],
                },
            ];
            g.info_nce(v[0], terms, 0.7)
        }),
    ];
    let mut drop = case("dropout", vec![tensor(r, &[5, 6])], |g, v| g.dropout(v[0], 0.4));
    drop.training = Some(seed);
    cases.push(drop);
    cases
}

fn graph_for(c: &OpCase) -> Graph {
    match c.training {
        Some(s) => Graph::training(s),
        None => Graph::new(),
    }
}

/// `Σ out ⊙ w` for a fixed weight vector, so every output element reaches the loss.
fn reduce(g: &mut Graph, out: Var, weights: &[f64]) -> Result<Var> {
    let n = g.value(out).len();
    let flat = g.reshape(out, &[1, n])?;
    let w = g.constant(vec![n, 1], weights.to_vec())?;
    let y = g.matmul(flat, w)?;
    Ok(g.sum(y))
}

fn case_loss(c: &OpCase, inputs: &[Tensor], weights: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = graph_for(c);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(&t.clone().trainable())).collect();
    let out = (c.build)(&mut g, &vars)?;
    let loss = reduce(&mut g, out, weights)?;
    let grads = g.backward(loss)?;
    Ok((g.scalar(loss), vars.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Worst relative error over the inputs of one op case.
pub fn check_op(c: &OpCase, weight_seed: u64) -> Result<f64> {
    let mut probe = graph_for(c);
    let vars: Vec<Var> = c.inputs.iter().map(|t| probe.leaf(t)).collect();
    let out = (c.build)(&mut probe, &vars)?;
    let weights = uniform(&mut rng(weight_seed), probe.value(out).len(), 1.0);

    let (_, analytic) = case_loss(c, &c.inputs, &weights)?;
    let mut worst: f64 = 0.0;
    for (i, input) in c.inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for j in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut inputs = c.inputs.clone();
                inputs[i].data_mut()[j] += delta;
                Ok(case_loss(c, &inputs, &weights)?.0)
            };
            numeric[j] = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_error(&analytic[i], &numeric));
    }
    Ok(worst)
}

pub fn gradcheck_dims() -> Dims {
    Dims::new(5, 4, 6)
}

pub fn gradcheck_arch() -> Architecture {
    Architecture {
        d_s: 6,
        n_layers: 2,
        n_heads: 2,
        ffn_mult: 2,
        ..Architecture::default()
    }
}

/// A model with every parameter randomized so no path is trivially zero.
pub fn randomized_model(seed: u64) -> Model {
    let mut model = Model::init(gradcheck_dims(), gradcheck_arch(), seed).unwrap();
    let r = &mut rng(seed ^ 0x9e37_79b9);
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    model
}

/// Four samples of both labels; one lacks video so the absent embedding is exercised.
pub fn gradcheck_batch(seed: u64) -> Vec<Sample> {
    let dims = gradcheck_dims();
    let r = &mut rng(seed.wrapping_add(17));
    (0..4)
        .map(|i| {
            let mut embeddings = dims
                .as_array()
                .map(|d| Some((0..d).map(|_| r.random_range(-1.0f32..1.0)).collect::<Vec<f32>>()));
            if i == 2 {
                embeddings[1] = None;
            }
            Sample {
                id: format!("s{i}"),
                label: if i % 2 == 0 {
                    Label::Authentic
                } else {
                    Label::Manipulated
                },
                embeddings,
            }
        })
        .collect()
}

/// Total training loss of `model` on `batch` with dropout active, plus parameter
/// gradients when `with_grad` is set.
pub fn end_to_end_loss(model: &Model, batch: &[Sample], dropout_seed: u64, with_grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let cfg = TrainConfig {
        dropout: 0.2,
        ..TrainConfig::default()
    };
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut g = Graph::training(dropout_seed);
    let vars = model.bind(&mut g);
    let fwd = model.forward(&mut g, &vars, &refs, cfg.dropout)?;
    let pairs = build_pairs(&fwd.members, cfg.pair_policy)?;
    let lc = contrastive_loss(&mut g, fwd.tokens, &pairs, &cfg.contrastive())?;
    let targets: Vec<f64> = refs.iter().map(|s| s.label.as_f64()).collect();
    let lcls = g.bce_with_logits(fwd.logits, &targets)?;
    let total = total_loss(&mut g, lc, lcls, 0.5)?;
    if !with_grad {
        return Ok((g.scalar(total), Vec::new()));
    }
    let grads = g.backward(total)?;
    Ok((g.scalar(total), vars.all().iter().map(|&v| grads.wrt(v)).collect()))
}

/// Worst per-parameter-tensor relative error of the full loss gradient.
pub fn check_end_to_end(seed: u64) -> Result<f64> {
    let mut model = randomized_model(seed);
    let batch = gradcheck_batch(seed);
    let (_, analytic) = end_to_end_loss(&model, &batch, seed, true)?;
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let original = model.params_mut()[p].data()[j];
            let mut at = |v: f64| -> Result<f64> {
                model.params_mut()[p].data_mut()[j] = v;
                Ok(end_to_end_loss(&model, &batch, seed, false)?.0)
            };
            *n = (at(original + FD_STEP)? - at(original - FD_STEP)?) / (2.0 * FD_STEP);
            model.params_mut()[p].data_mut()[j] = original;
        }
        worst = worst.max(rel_error(grad, &numeric));
    }
    Ok(worst)
}

/// Random score set with few distinct values so ties are common.
pub fn random_score_set(rng: &mut ChaCha8Rng, max_len: usize) -> ScoreSet {
    let n = rng.random_range(2..=max_len);
    let levels = rng.random_range(1..=n);
    let mut entries: Vec<(f64, Label)> = (0..n)
        .map(|_| {
            let s = rng.random_range(0..levels) as f64 / levels as f64;
            let l = if rng.random_bool(0.5) {
                Label::Manipulated
            } else {
                Label::Authentic
            };
            (s, l)
        })
        .collect();
    entries[0].1 = Label::Authentic;
    entries[1].1 = Label::Manipulated;
    ScoreSet::new(entries).unwrap()
}

/// Exhaustive threshold sweep: every distinct score plus +∞, rates by direct counting.
pub fn brute_force_eer(entries: &[(f64, Label)]) -> f64 {
    let real: Vec<f64> = entries.iter().filter(|e| e.1 == Label::Authentic).map(|e| e.0).collect();
    let fake: Vec<f64> = entries.iter().filter(|e| e.1 == Label::Manipulated).map(|e| e.0).collect();
    let mut thresholds: Vec<f64> = entries.iter().map(|e| e.0).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let fpr = real.iter().filter(|&&s| s >= t).count() as f64 / real.len() as f64;
            let fnr = fake.iter().filter(|&&s| s < t).count() as f64 / fake.len() as f64;
            (fpr, fnr)
        })
        .collect();
    // FPR falls and FNR rises with t; the first t with FPR ≤ FNR brackets the crossing.
    for i in 0..rates.len() {
        let (fpr, fnr) = rates[i];
        if fpr <= fnr {
            if fpr == fnr || i == 0 {
                return fpr;
            }
            let (pf, pn) = rates[i - 1];
            let (d0, d1) = (pf - pn, fpr - fnr);
            return pf + d0 / (d0 - d1) * (fpr - pf);
        }
    }
    unreachable!("FPR at +inf is zero")
}

/// Pairwise count: manipulated above authentic scores 1, ties 1/2.
pub fn brute_force_auc(entries: &[(f64, Label)]) -> f64 {
    let mut doubled = 0u64;
    let mut pairs = 0u64;
    for a in entries.iter().filter(|e| e.1 == Label::Authentic) {
        for m in entries.iter().filter(|e| e.1 == Label::Manipulated) {
            pairs += 1;
            doubled += if m.0 > a.0 {
                2
            } else if m.0 == a.0 {
                1
            } else {
                0
            };
        }
    }
    doubled as f64 / (2 * pairs) as f64
}

pub fn conformance_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/conformance_v1.ceb")
}

/// The bundle stored in the conformance vector, written out by hand.
pub fn conformance_bundle() -> EmbeddingBundle {
    let s = |id: &str, label, embeddings| Sample {
        id: id.into(),
        label,
        embeddings,
    };
    EmbeddingBundle {
        dims: Dims::new(3, 2, 4),
        samples: vec![
            s(
                "real-000",
                Label::Authentic,
                [
                    Some(vec![0.5, -1.25, 3.0]),
                    Some(vec![0.1, -0.0]),
                    Some(vec![1.0, 2.0, -3.5, 1e-3]),
                ],
            ),
            s(
                "fake-001",
                Label::Manipulated,
                [Some(vec![-2.0, 0.25, 7.75]), None, Some(vec![0.0, 65504.0, -1e-7, 0.333])],
            ),
            s("clip-é中", Label::Authentic, [None, Some(vec![6.5, -0.75]), None]),
        ],
        provenance: String::new(),
    }
}

/// Expected bytes of the conformance vector assembled field by field.
pub fn conformance_bytes() -> Vec<u8> {
    let mut b = b"CEB1".to_vec();
    b.push(1);
    b.extend(3u32.to_le_bytes());
    for d in [3u32, 2, 4] {
        b.extend(d.to_le_bytes());
    }
    let floats = |b: &mut Vec<u8>, vs: &[f32]| vs.iter().for_each(|v| b.extend(v.to_le_bytes()));
    b.extend(8u16.to_le_bytes());
    b.extend(b"real-000");
    b.extend([0u8, 0b111]);
    floats(&mut b, &[0.5, -1.25, 3.0, 0.1, -0.0, 1.0, 2.0, -3.5, 1e-3]);
    b.extend(8u16.to_le_bytes());
    b.extend(b"fake-001");
    b.extend([1u8, 0b101]);
    floats(&mut b, &[-2.0, 0.25, 7.75, 0.0, 65504.0, -1e-7, 0.333]);
    let id = "clip-é中".as_bytes();
    b.extend((id.len() as u16).to_le_bytes());
    b.extend(id);
    b.extend([0u8, 0b010]);
    floats(&mut b, &[6.5, -0.75]);
    b.extend(crc64_xz_bitwise(&b).to_le_bytes());
    b
}

/// Reflected CRC-64/XZ computed one bit at a time.
pub fn crc64_xz_bitwise(data: &[u8]) -> u64 {
    const POLY: u64 = 0xC96C_5795_D787_0F42;
    let mut crc = u64::MAX;
    for &byte in data {
        crc ^= u64::from(byte);
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ POLY } else { crc >> 1 };
        }
    }
    !crc
}

/// Contrastive loss for one anchor with positive similarity 1 and one negative at 0, τ = 1.
pub fn contrastive_scalar_case(mode: xmodal_core::contrastive::DenominatorMode) -> f64 {
    use std::collections::BTreeMap;
    use xmodal_core::contrastive::{ContrastiveConfig, PairSet};
    let mut g = Graph::new();
    let h = g.constant(vec![3, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let pairs = PairSet {
        positives: vec![(0, 1)],
        negatives: BTreeMap::from([(0, vec![2])]),
        dropped: 0,
    };
    let cfg = ContrastiveConfig {
        tau: 1.0,
        denominator_mode: mode,
        ..ContrastiveConfig::default()
    };
    let loss = contrastive_loss(&mut g, h, &pairs, &cfg).unwrap();
    g.scalar(loss)
}

/// Loss over similarities `s` at temperature `τ`, and over `c·s` at `c·τ`, for a power of two `c`.
pub fn tau_rescaled_pair(seed: u64) -> (f64, f64) {
    let r = &mut rng(seed);
    let sim = uniform(r, 16, 1.0);
    let terms = || {
        vec![
            NceTerm {
                anchor: 0,
                positive: 1,
                candidates: vec![1, 2, 3],
            },
            NceTerm {
                anchor: 3,
                positive: 2,
                candidates: vec![2, 0, 1],
            },
        ]
    };
    let loss = |s: Vec<f64>, tau: f64| {
        let mut g = Graph::new();
        let v = g.constant(vec![4, 4], s).unwrap();
        let l = g.info_nce(v, terms(), tau).unwrap();
        g.scalar(l)
    };
    let scaled = sim.iter().map(|v| v * 4.0).collect();
    (loss(sim, 0.3), loss(scaled, 0.3 * 4.0))
}

/// `softmax(QKᵀ/√d)V` evaluated with explicit loops and `exp`.
pub fn attention_by_formula(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; t * d];
    for i in 0..t {
        let scores: Vec<f64> = (0..t)
            .map(|j| (0..d).map(|c| q[i * d + c] * k[j * d + c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let z: f64 = w.iter().sum();
        for c in 0..d {
            out[i * d + c] = (0..t).map(|j| w[j] / z * v[j * d + c]).sum();
        }
    }
    out
}

/// Largest deviation between the library attention and the loop formula on a 3×4 case.
pub fn attention_formula_gap(seed: u64) -> f64 {
    use xmodal_core::refiner::attention;
    let r = &mut rng(seed);
    let (q, k, v) = (uniform(r, 12, 2.0), uniform(r, 12, 2.0), uniform(r, 12, 2.0));
    let t = |x: &[f64]| Tensor::new(vec![3, 4], x.to_vec()).unwrap();
    let got = attention(&t(&q), &t(&k), &t(&v)).unwrap();
    let want = attention_by_formula(&q, &k, &v, 3, 4);
    got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Largest `|Σ_j a_ij − 1|` over every attention map of a randomized model on a batch.
pub fn attention_row_sum_gap(seed: u64) -> f64 {
    let model = randomized_model(seed);
    let batch = gradcheck_batch(seed);
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let fwd = model.forward(&mut g, &vars, &refs, 0.0).unwrap();
    assert!(!fwd.attention.is_empty());
    let mut worst: f64 = 0.0;
    for &a in &fwd.attention {
        let cols = *g.shape(a).last().unwrap();
        for row in g.value(a).chunks(cols) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

/// Whether a zero-layer refiner returns its input bit for bit, trained weights or not.
pub fn zero_layer_refiner_is_identity(seed: u64) -> bool {
    use xmodal_core::refiner::init_refiner;
    let mut block = init_refiner(8, 2, 0, 4, seed).unwrap();
    let r = &mut rng(seed);
    for p in block.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
    }
    let tokens: Vec<Vec<f64>> = (0..3).map(|_| uniform(r, 8, 3.0)).collect();
    let out = block.refine(&tokens).unwrap();
    out.iter().zip(&tokens).all(|(a, b)| a == b)
}

/// A small easy-mode problem that trains in well under a second.
pub fn small_problem(seed: u64) -> (EmbeddingBundle, EmbeddingBundle, TrainConfig) {
    use xmodal_core::dataio::{split, synth_generate, SynthConfig};
    let data = synth_generate(&SynthConfig {
        n_real: 60,
        n_fake: 60,
        dims: Dims::new(12, 10, 8),
        latent_dim: 4,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let (train, eval) = split(&data, 0.25, seed).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        d_s: 8,
        n_heads: 2,
        seed,
        ..TrainConfig::default()
    };
    (train, eval, cfg)
}

/// Least-squares latent estimate `(MᵀM)⁻¹Mᵀz` for a row-major `d × k` matrix `m`.
pub fn recover_latent(m: &[f64], d: usize, k: usize, z: &[f32]) -> Vec<f64> {
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for r in 0..d {
        let row = &m[r * k..(r + 1) * k];
        for i in 0..k {
            b[i] += row[i] * f64::from(z[r]);
            for j in 0..k {
                a[i * k + j] += row[i] * row[j];
            }
        }
    }
    // Gaussian elimination with partial pivoting.
    for c in 0..k {
        let p = (c..k).max_by(|&x, &y| a[x * k + c].abs().total_cmp(&a[y * k + c].abs())).unwrap();
        if p != c {
            for j in 0..k {
                a.swap(c * k + j, p * k + j);
            }
            b.swap(c, p);
        }
        for r in c + 1..k {
            let f = a[r * k + c] / a[c * k + c];
            for j in c..k {
                a[r * k + j] -= f * a[c * k + j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|j| a[r * k + j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r * k + r];
    }
    x
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
