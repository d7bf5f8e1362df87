//! Stage two: a non-causal pre-norm transformer over the three modality tokens.
//!
//! Tokens of a batch are stacked as `[3·B, d_s]` in `(sample, modality)` order.
//! Learned modality-type embeddings give each token its identity; there is no
//! positional encoding and no mask.

use crate::error::{Error, Result};
use crate::init::{ones_param, xavier_uniform, zeros_param};
use crate::rng::rng_for;
use crate::tensor::{kernels, Graph, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const TOKENS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerLayer {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    /// `[d_s, d_s]` each, applied as `x·Wᵀ`.
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    /// `[ffn_mult·d_s, d_s]`
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    /// `[d_s, ffn_mult·d_s]`
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
}

impl RefinerLayer {
    fn params(&self) -> [&Tensor; 12] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
        ]
    }

    fn params_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
        ]
    }

    const PARAM_NAMES: [&'static str; 12] = [
        "ln1.gamma",
        "ln1.beta",
        "attn.w_q",
        "attn.w_k",
        "attn.w_v",
        "attn.w_o",
        "ln2.gamma",
        "ln2.beta",
        "ffn.w1",
        "ffn.b1",
        "ffn.w2",
        "ffn.b2",
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerBlock {
    pub d_s: usize,
    pub n_heads: usize,
    /// `[3, d_s]`, one row per modality.
    pub type_embeddings: Tensor,
    pub layers: Vec<RefinerLayer>,
}

/// Parameter handles of a block recorded on a graph, in [`RefinerBlock::named_params`] order.
#[derive(Debug, Clone)]
pub struct RefinerVars(Vec<Var>);

impl RefinerVars {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Refined tokens plus every attention-weight matrix (`[3·B, 3]` per layer and head).
#[derive(Debug, Clone)]
pub struct RefinerOutput {
    pub tokens: Var,
    pub attention: Vec<Var>,
}

/// `softmax(Q·Kᵀ/√d_k)·V` for `Q, K, V` of shape `[t, d_k]`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (t, d_k) = match q.shape() {
        [t, d] => (*t, *d),
        s => return Err(Error::shape(format!("attention query must be a matrix, got {s:?}"))),
    };
    if d_k == 0 {
        return Err(Error::param("attention key width d_k is zero"));
    }
    if t == 0 {
        return Err(Error::contract("attention over zero tokens"));
    }
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape(format!(
            "attention operands {:?}, {:?}, {:?} differ",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut scores = vec![0.0; t * t];
    kernels::matmul_nt_acc(q.data(), k.data(), &mut scores, t, d_k, t);
    let scale = 1.0 / (d_k as f64).sqrt();
    scores.iter_mut().for_each(|s| *s *= scale);
    let weights = kernels::softmax_rows(&scores, t);
    let mut out = vec![0.0; t * d_k];
    kernels::matmul_nn_acc(&weights, v.data(), &mut out, t, t, d_k);
    Tensor::new(vec![t, d_k], out)
}

impl RefinerBlock {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn d_k(&self) -> usize {
        self.d_s / self.n_heads
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("refiner.type_embeddings".to_string(), &self.type_embeddings)];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, p) in RefinerLayer::PARAM_NAMES.iter().zip(layer.params()) {
                out.push((format!("refiner.layer{i}.{name}"), p));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.type_embeddings];
        for layer in &mut self.layers {
            out.extend(layer.params_mut());
        }
        out
    }

    pub fn bind(&self, g: &mut Graph) -> RefinerVars {
        RefinerVars(self.named_params().into_iter().map(|(_, p)| g.leaf(p)).collect())
    }

    /// Refines `tokens` (`[3·B, d_s]`). `dropout` is applied to attention weights
    /// and FFN outputs when `g` is in training mode.
    pub fn forward(&self, g: &mut Graph, vars: &RefinerVars, tokens: Var, dropout: f64) -> Result<RefinerOutput> {
        let shape = g.shape(tokens).to_vec();
        if shape.len() != 2 || shape[1] != self.d_s || shape[0] % TOKENS != 0 || shape[0] == 0 {
            return Err(Error::contract(format!(
                "refiner expects [3·B, {}] tokens, got {shape:?}",
                self.d_s
            )));
        }
        if self.layers.is_empty() {
            return Ok(RefinerOutput {
                tokens,
                attention: Vec::new(),
            });
        }
        let batch = shape[0] / TOKENS;
        let (d_s, heads, d_k) = (self.d_s, self.n_heads, self.d_k());
        let scale = 1.0 / (d_k as f64).sqrt();

        let type_rows: Vec<usize> = (0..batch * TOKENS).map(|i| i % TOKENS).collect();
        let types = g.gather_rows(vars.0[0], &type_rows)?;
        let mut x = g.add(tokens, types)?;
        let mut attention = Vec::with_capacity(self.layers.len() * heads);

        for (li, _) in self.layers.iter().enumerate() {
            let p = &vars.0[1 + li * 12..1 + (li + 1) * 12];
            let [ln1_g, ln1_b, w_q, w_k, w_v, w_o, ln2_g, ln2_b, w1, b1, w2, b2] =
                <[Var; 12]>::try_from(p).expect("12 params per layer");

            let a = g.layer_norm(x, ln1_g, ln1_b, LAYER_NORM_EPS)?;
            let q = g.matmul_bt(a, w_q)?;
            let k = g.matmul_bt(a, w_k)?;
            let v = g.matmul_bt(a, w_v)?;
            let mut head_outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let split = |g: &mut Graph, t: Var| -> Result<Var> {
                    let s = g.slice_cols(t, h * d_k, d_k)?;
                    g.reshape(s, &[batch, TOKENS, d_k])
                };
                let qh = split(g, q)?;
                let kh = split(g, k)?;
                let vh = split(g, v)?;
                let scores = g.matmul_bt(qh, kh)?;
                let scores = g.scale(scores, scale);
                let scores = g.reshape(scores, &[batch * TOKENS, TOKENS])?;
                let weights = g.softmax_rows(scores);
                attention.push(weights);
                let weights = g.dropout(weights, dropout)?;
                let weights = g.reshape(weights, &[batch, TOKENS, TOKENS])?;
                let out = g.matmul(weights, vh)?;
                head_outs.push(g.reshape(out, &[batch * TOKENS, d_k])?);
            }
            let merged = g.concat_cols(&head_outs)?;
            let projected = g.matmul_bt(merged, w_o)?;
            x = g.add(x, projected)?;

            let b = g.layer_norm(x, ln2_g, ln2_b, LAYER_NORM_EPS)?;
            let hidden = g.linear(b, w1, b1)?;
            let hidden = g.relu(hidden);
            let ffn = g.linear(hidden, w2, b2)?;
            let ffn = g.dropout(ffn, dropout)?;
            x = g.add(x, ffn)?;
        }
        debug_assert_eq!(g.shape(x), &[batch * TOKENS, d_s]);
        Ok(RefinerOutput {
            tokens: x,
            attention,
        })
    }

    /// Refines one sample's three tokens in evaluation mode.
    pub fn refine(&self, tokens: &[Vec<f64>]) -> Result<[Vec<f64>; 3]> {
        if tokens.len() != TOKENS || tokens.iter().any(|t| t.len() != self.d_s) {
            return Err(Error::contract(format!(
                "refine expects 3 tokens of length {}, got {:?}",
                self.d_s,
                tokens.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let x = g.constant(vec![TOKENS, self.d_s], tokens.concat())?;
        let out = self.forward(&mut g, &vars, x, 0.0)?;
        let v = g.value(out.tokens);
        let d = self.d_s;
        Ok([0, 1, 2].map(|i| v[i * d..(i + 1) * d].to_vec()))
    }
}

/// Xavier-uniform Q/K/V and first FFN weights; zero residual output
/// projections (`W_O`, second FFN weight), biases and type embeddings; unit
/// layer-norm gains. A fresh block is the identity map.
pub fn init_refiner(d_s: usize, n_heads: usize, n_layers: usize, ffn_mult: usize, seed: u64) -> Result<RefinerBlock> {
    if n_heads == 0 || d_s == 0 || d_s % n_heads != 0 {
        return Err(Error::param(format!(
            "model width {d_s} is not divisible into {n_heads} heads"
        )));
    }
    if ffn_mult == 0 {
        return Err(Error::param("feed-forward expansion must be at least 1"));
    }
    let mut rng = rng_for(seed, "init/refiner");
    let hidden = ffn_mult * d_s;
    let layers = (0..n_layers)
        .map(|_| RefinerLayer {
            ln1_gamma: ones_param(&[d_s]),
            ln1_beta: zeros_param(&[d_s]),
            w_q: xavier_uniform(&mut rng, d_s, d_s),
            w_k: xavier_uniform(&mut rng, d_s, d_s),
            w_v: xavier_uniform(&mut rng, d_s, d_s),
            w_o: zeros_param(&[d_s, d_s]),
            ln2_gamma: ones_param(&[d_s]),
            ln2_beta: zeros_param(&[d_s]),
            ffn_w1: xavier_uniform(&mut rng, hidden, d_s),
            ffn_b1: zeros_param(&[hidden]),
            ffn_w2: zeros_param(&[d_s, hidden]),
            ffn_b2: zeros_param(&[d_s]),
        })
        .collect();
    Ok(RefinerBlock {
        d_s,
        n_heads,
        type_embeddings: zeros_param(&[TOKENS, d_s]),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Replaces every parameter of `b` with uniform noise.
    fn randomize(b: &mut RefinerBlock, rng: &mut ChaCha8Rng) {
        for layer in &mut b.layers {
            for p in layer.params_mut() {
                let shape = p.shape().to_vec();
                *p = random(rng, &shape);
            }
        }
    }

    #[test]
    fn single_token_returns_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (random(&mut rng, &[1, 4]), random(&mut rng, &[1, 4]), random(&mut rng, &[1, 4]));
        assert_eq!(attention(&q, &k, &v).unwrap(), v);
    }

    #[test]
    fn saturated_self_attention_selects_own_value() {
        let big = 1e4;
        let q = Tensor::from_rows(&[vec![big, 0.0], vec![0.0, big]]).unwrap();
        let v = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = attention(&q, &q, &v).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn zero_width_is_rejected() {
        let e = Tensor::zeros(&[3, 0]);
        assert!(matches!(attention(&e, &e, &e), Err(Error::Param(_))));
    }

    #[test]
    fn init_divisibility() {
        let b = init_refiner(32, 4, 2, 4, 0).unwrap();
        assert_eq!(b.d_k(), 8);
        assert_eq!(b.n_layers(), 2);
        assert!(matches!(init_refiner(32, 5, 2, 4, 0), Err(Error::Param(_))));
        assert_eq!(init_refiner(32, 4, 2, 4, 9).unwrap(), init_refiner(32, 4, 2, 4, 9).unwrap());
        assert_ne!(init_refiner(32, 4, 2, 4, 9).unwrap(), init_refiner(32, 4, 2, 4, 10).unwrap());
    }

    #[test]
    fn zero_layers_is_identity() {
        let b = init_refiner(8, 2, 0, 4, 0).unwrap();
        let tokens = vec![vec![0.5; 8], vec![-1.0; 8], (0..8).map(f64::from).collect()];
        let out = b.refine(&tokens).unwrap();
        assert_eq!(out.to_vec(), tokens);
    }

    #[test]
    fn fresh_block_is_identity() {
        let b = init_refiner(8, 2, 2, 4, 1).unwrap();
        let tokens = vec![vec![0.5; 8], vec![-1.0; 8], (0..8).map(f64::from).collect()];
        assert_eq!(b.refine(&tokens).unwrap().to_vec(), tokens);
    }

    #[test]
    fn wrong_token_count_is_a_contract_error() {
        let b = init_refiner(8, 2, 1, 4, 0).unwrap();
        assert!(matches!(b.refine(&[vec![0.0; 8], vec![0.0; 8]]), Err(Error::Contract(_))));
        assert!(matches!(b.refine(&[vec![0.0; 8], vec![0.0; 8], vec![0.0; 7]]), Err(Error::Contract(_))));
    }

    #[test]
    fn equal_tokens_without_types_give_equal_outputs() {
        let mut b = init_refiner(8, 2, 2, 4, 3).unwrap();
        randomize(&mut b, &mut ChaCha8Rng::seed_from_u64(4));
        let t: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let out = b.refine(&[t.clone(), t.clone(), t]).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[1], out[2]);
    }

    #[test]
    fn swapping_tokens_and_types_permutes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b = init_refiner(8, 2, 2, 4, 3).unwrap();
        randomize(&mut b, &mut rng);
        b.type_embeddings = random(&mut rng, &[3, 8]);
        let tokens: Vec<Vec<f64>> = (0..3).map(|_| random(&mut rng, &[8]).into_data()).collect();
        let out = b.refine(&tokens).unwrap();

        let mut swapped = b.clone();
        let te = b.type_embeddings.data();
        let mut data = te[..8].to_vec();
        data.extend_from_slice(&te[16..24]);
        data.extend_from_slice(&te[8..16]);
        swapped.type_embeddings = Tensor::new(vec![3, 8], data).unwrap();
        let out2 = swapped
            .refine(&[tokens[0].clone(), tokens[2].clone(), tokens[1].clone()])
            .unwrap();
        for (x, y) in out[0].iter().zip(&out2[0]) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in out[1].iter().zip(&out2[2]) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in out[2].iter().zip(&out2[1]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn one_layer_output_is_bounded() {
        // Pre-norm residual: ‖out‖ ≤ ‖in‖ + ‖attn branch‖ + ‖ffn branch‖, and each
        // branch is bounded by its weight norms times the normalized-input norm.
        let mut b = init_refiner(8, 2, 1, 4, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        randomize(&mut b, &mut rng);
        let ln = &mut b.layers[0];
        ln.ln1_gamma = Tensor::filled(&[8], 1.0);
        ln.ln1_beta = Tensor::zeros(&[8]);
        ln.ln2_gamma = Tensor::filled(&[8], 1.0);
        ln.ln2_beta = Tensor::zeros(&[8]);
        let tokens: Vec<Vec<f64>> = (0..3).map(|_| random(&mut rng, &[8]).into_data()).collect();
        let out = b.refine(&tokens).unwrap();
        let fro = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let l = &b.layers[0];
        let ln_bound = (8f64).sqrt(); // unit gain, zero shift: ‖LN(x)‖ ≤ √d
        // Per head the output is a convex combination of value rows; across heads
        // that costs at most a √3 (token count) factor.
        let attn = fro(&l.w_o) * fro(&l.w_v) * ln_bound * 3f64.sqrt();
        let ffn = fro(&l.ffn_w2) * (fro(&l.ffn_w1) * ln_bound + fro(&l.ffn_b1)) + fro(&l.ffn_b2);
        for (t, o) in tokens.iter().zip(&out) {
            assert!(o.iter().all(|v| v.is_finite()));
            let n_in = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n_out = o.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n_out <= n_in + attn + ffn, "{n_out} > {}", n_in + attn + ffn);
        }
    }
}
