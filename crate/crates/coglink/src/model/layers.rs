//! Graph builders for every block of the network. Each function appends
//! operations to a [`Graph`] and returns the output variable; parameters
//! are resolved by hierarchical name through [`ParamVars`].
//!
//! Masking contract: attention excludes masked keys (softmax renormalizes
//! over the rest), pooling denominators count only live cells, and every
//! sub-block output is multiplied by the cell/pair mask before its
//! residual add, so masked positions stay exactly zero through the stack.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::phonology::TokenGrid;
use crate::tensor::Tensor;

use super::{DropoutSpec, ModelConfig, MsaMask, ParameterStore};

/// Inverted dropout over sub-block outputs: each kept element scales by
/// 1/(1-rate), so inference needs no correction. Seeded, hence
/// reproducible; `None` (inference, gradient checks) is the identity.
pub(crate) struct DropoutState {
    rng: ChaCha8Rng,
    rate: f64,
}

impl DropoutState {
    pub fn new(spec: &DropoutSpec) -> Option<Self> {
        if spec.rate <= 0.0 {
            return None;
        }
        assert!(spec.rate < 1.0, "dropout rate must be < 1");
        Some(DropoutState {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            rate: spec.rate,
        })
    }
}

fn dropout(g: &mut Graph, x: Var, drop: &mut Option<DropoutState>) -> Var {
    let Some(state) = drop else { return x };
    let shape = g.value(x).shape().to_vec();
    let keep = 1.0 - state.rate;
    let scale = 1.0 / keep;
    let numel: usize = shape.iter().product();
    let mask: Vec<f64> = (0..numel)
        .map(|_| {
            if state.rng.gen_bool(keep) {
                scale
            } else {
                0.0
            }
        })
        .collect();
    let m = g.constant(Tensor::new(shape, mask).unwrap());
    g.mul(x, m)
}

pub(crate) struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, Var)> {
        self.vars.iter().map(|(n, v)| (n, *v))
    }
}

/// Insert every parameter into the graph, trainable or frozen.
pub(crate) fn bind_params(g: &mut Graph, store: &ParameterStore, trainable: bool) -> ParamVars {
    let mut vars = BTreeMap::new();
    for (name, tensor) in store.iter() {
        let var = if trainable {
            g.param(tensor.clone())
        } else {
            g.constant(tensor.clone())
        };
        vars.insert(name.clone(), var);
    }
    ParamVars { vars }
}

/// Constant mask tensors shared by every layer of one forward pass.
pub(crate) struct MaskVars {
    /// `[r, c, 1]`: 1.0 at live cells.
    pub col_f: Var,
    /// `[r, r, 1]`: 1.0 where both rows are live.
    pub pair_f: Var,
    /// `[r, 1, 1, c]` softmax key mask for row attention.
    pub row_keys: Tensor,
    /// `[c, 1, 1, r]` softmax key mask for column attention.
    pub col_keys: Tensor,
    /// `[1, 1, 1, r]` softmax key mask over rows for pair attention.
    pub pair_keys: Tensor,
    /// Per-cell liveness, row-major `r * c`.
    pub col_bits: Vec<bool>,
}

pub(crate) fn mask_vars(g: &mut Graph, mask: &MsaMask) -> MaskVars {
    let (r, c) = (mask.rows(), mask.cols());
    let bit = |b: bool| if b { 1.0 } else { 0.0 };

    let col_f_data: Vec<f64> = mask.cell_bits().iter().map(|&b| bit(b)).collect();
    let col_f = g.constant(Tensor::new(vec![r, c, 1], col_f_data.clone()).unwrap());

    let mut pair = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            pair.push(bit(mask.row_live(i) && mask.row_live(j)));
        }
    }
    let pair_f = g.constant(Tensor::new(vec![r, r, 1], pair).unwrap());

    let row_keys = Tensor::new(vec![r, 1, 1, c], col_f_data.clone()).unwrap();
    let mut colt = vec![0.0; r * c];
    for i in 0..r {
        for k in 0..c {
            colt[k * r + i] = col_f_data[i * c + k];
        }
    }
    let col_keys = Tensor::new(vec![c, 1, 1, r], colt).unwrap();
    let pair_keys = Tensor::new(
        vec![1, 1, 1, r],
        (0..r).map(|i| bit(mask.row_live(i))).collect(),
    )
    .unwrap();

    MaskVars {
        col_f,
        pair_f,
        row_keys,
        col_keys,
        pair_keys,
        col_bits: mask.cell_bits().to_vec(),
    }
}

/// `x @ weight + bias` over the last axis.
pub(crate) fn linear(g: &mut Graph, x: Var, pv: &ParamVars, prefix: &str) -> Var {
    let w = pv.get(&format!("{prefix}.weight"));
    let b = pv.get(&format!("{prefix}.bias"));
    let in_shape = g.value(x).shape().to_vec();
    let din = *in_shape.last().unwrap();
    let dout = g.value(w).shape()[1];
    let n = g.value(x).numel() / din;
    let flat = g.reshape(x, &[n, din]);
    let mm = g.matmul(flat, w);
    let biased = g.add(mm, b);
    let mut out_shape = in_shape;
    *out_shape.last_mut().unwrap() = dout;
    g.reshape(biased, &out_shape)
}

pub(crate) fn layer_norm(g: &mut Graph, x: Var, pv: &ParamVars, prefix: &str) -> Var {
    let gamma = pv.get(&format!("{prefix}.gamma"));
    let beta = pv.get(&format!("{prefix}.beta"));
    g.layer_norm(x, gamma, beta)
}

/// Scaled dot-product attention over the middle axis of `x: [b, n, d]`,
/// returning the context `[b, n, d]` before any output projection.
/// `key_mask` broadcasts against the `[b, h, n, n]` score tensor;
/// `bias` (if any) is added to the scores before the softmax.
fn attention_context(
    g: &mut Graph,
    x: Var,
    pv: &ParamVars,
    prefix: &str,
    heads: usize,
    key_mask: &Tensor,
    bias: Option<Var>,
) -> Var {
    let shape = g.value(x).shape().to_vec();
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    let dh = d / heads;

    let split = |g: &mut Graph, v: Var| {
        let r = g.reshape(v, &[b, n, heads, dh]);
        g.permute(r, &[0, 2, 1, 3]) // [b, h, n, dh]
    };
    let q = linear(g, x, pv, &format!("{prefix}.q"));
    let k = linear(g, x, pv, &format!("{prefix}.k"));
    let v = linear(g, x, pv, &format!("{prefix}.v"));
    let q = split(g, q);
    let k = split(g, k);
    let v = split(g, v);

    let kt = g.permute(k, &[0, 1, 3, 2]);
    let scores = g.matmul(q, kt);
    let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    if let Some(bias) = bias {
        scores = g.add(scores, bias);
    }
    let attn = g.softmax(scores, Some(key_mask));
    let ctx = g.matmul(attn, v);
    let ctx = g.permute(ctx, &[0, 2, 1, 3]);
    g.reshape(ctx, &[b, n, d])
}

/// One MSA block: row attention, column attention, feed-forward, each a
/// pre-norm residual sub-block.
pub(crate) fn msa_layer(
    g: &mut Graph,
    x: Var,
    pv: &ParamVars,
    idx: usize,
    mv: &MaskVars,
    cfg: &ModelConfig,
    drop: &mut Option<DropoutState>,
) -> Var {
    let p = format!("msa.{idx}");

    // row self-attention: within each row, across columns
    let h = layer_norm(g, x, pv, &format!("{p}.row_attn.norm"));
    let ctx = attention_context(
        g,
        h,
        pv,
        &format!("{p}.row_attn"),
        cfg.attention_heads,
        &mv.row_keys,
        None,
    );
    let a = linear(g, ctx, pv, &format!("{p}.row_attn.out"));
    let a = dropout(g, a, drop);
    let a = g.mul(a, mv.col_f);
    let x = g.add(x, a);

    // column self-attention: within each column, across rows
    let h = layer_norm(g, x, pv, &format!("{p}.col_attn.norm"));
    let ht = g.permute(h, &[1, 0, 2]);
    let ctx = attention_context(
        g,
        ht,
        pv,
        &format!("{p}.col_attn"),
        cfg.attention_heads,
        &mv.col_keys,
        None,
    );
    let a = linear(g, ctx, pv, &format!("{p}.col_attn.out"));
    let a = g.permute(a, &[1, 0, 2]);
    let a = dropout(g, a, drop);
    let a = g.mul(a, mv.col_f);
    let x = g.add(x, a);

    // position-wise feed-forward
    let h = layer_norm(g, x, pv, &format!("{p}.ffn.norm"));
    let f = linear(g, h, pv, &format!("{p}.ffn.fc1"));
    let f = g.gelu(f);
    let f = linear(g, f, pv, &format!("{p}.ffn.fc2"));
    let f = dropout(g, f, drop);
    let f = g.mul(f, mv.col_f);
    g.add(x, f)
}

/// Token + column-position embedding, zeroed at masked cells.
pub(crate) fn embed(
    g: &mut Graph,
    pv: &ParamVars,
    grid: &TokenGrid,
    mv: &MaskVars,
    cfg: &ModelConfig,
) -> Var {
    let (r, c) = (grid.rows(), grid.cols());
    let ids: Vec<usize> = grid.ids().iter().map(|&x| x as usize).collect();
    let tok = {
        let table = pv.get("embed.token");
        g.gather_rows(table, &ids)
    };
    let pos_ids: Vec<usize> = (0..r * c).map(|i| i % c).collect();
    let pos = {
        let table = pv.get("embed.position");
        g.gather_rows(table, &pos_ids)
    };
    let sum = g.add(tok, pos);
    let x = g.reshape(sum, &[r, c, cfg.hidden_size]);
    g.mul(x, mv.col_f)
}

/// Mean over shared live columns of projected outer products:
/// `r x c' x d -> r x r x d`.
pub(crate) fn outer_product_mean(
    g: &mut Graph,
    x: Var,
    pv: &ParamVars,
    mv: &MaskVars,
    drop: &mut Option<DropoutState>,
) -> Var {
    let h = layer_norm(g, x, pv, "opm.norm");
    let a = linear(g, h, pv, "opm.left");
    let b = linear(g, h, pv, "opm.right");
    let o = g.pair_outer_mean(a, b, &mv.col_bits);
    let z = linear(g, o, pv, "opm.out");
    let z = dropout(g, z, drop);
    g.mul(z, mv.pair_f)
}

/// Gated triangular multiplicative update; `outgoing` combines edges
/// (i,k) and (j,k), incoming combines (k,i) and (k,j).
pub(crate) fn triangular_multiplication(
    g: &mut Graph,
    z: Var,
    pv: &ParamVars,
    prefix: &str,
    outgoing: bool,
    mv: &MaskVars,
    drop: &mut Option<DropoutState>,
) -> Var {
    let h = layer_norm(g, z, pv, &format!("{prefix}.norm"));
    let make_edges = |g: &mut Graph, side: &str| {
        let proj = linear(g, h, pv, &format!("{prefix}.{side}_proj"));
        let gate = linear(g, h, pv, &format!("{prefix}.{side}_gate"));
        let gate = g.sigmoid(gate);
        let e = g.mul(proj, gate);
        g.mul(e, mv.pair_f)
    };
    let left = make_edges(g, "left");
    let right = make_edges(g, "right");
    let u = g.tri_mul(left, right, outgoing);
    let un = layer_norm(g, u, pv, &format!("{prefix}.u_norm"));
    let o = linear(g, un, pv, &format!("{prefix}.out"));
    let gate = linear(g, h, pv, &format!("{prefix}.gate"));
    let gate = g.sigmoid(gate);
    let o = g.mul(o, gate);
    let o = dropout(g, o, drop);
    let o = g.mul(o, mv.pair_f);
    g.add(z, o)
}

/// Triangular attention. Around the starting node, position (i,j)
/// attends over (i,k) with an additive bias from z[j,k]; the ending-node
/// orientation is the same computation on the transposed pair tensor.
#[allow(clippy::too_many_arguments)]
pub(crate) fn triangular_attention(
    g: &mut Graph,
    z: Var,
    pv: &ParamVars,
    prefix: &str,
    ending: bool,
    mv: &MaskVars,
    cfg: &ModelConfig,
    drop: &mut Option<DropoutState>,
) -> Var {
    let zin = if ending { g.permute(z, &[1, 0, 2]) } else { z };
    let r = g.value(zin).shape()[0];
    let d = cfg.hidden_size;
    let heads = cfg.attention_heads;

    let h = layer_norm(g, zin, pv, &format!("{prefix}.norm"));

    // additive score bias from the pair representation: [1, h, j, k]
    let bias = {
        let flat = g.reshape(h, &[r * r, d]);
        let w = pv.get(&format!("{prefix}.pair_bias.weight"));
        let bm = g.matmul(flat, w);
        let b3 = g.reshape(bm, &[r, r, heads]);
        let bp = g.permute(b3, &[2, 0, 1]);
        g.reshape(bp, &[1, heads, r, r])
    };

    let ctx = attention_context(g, h, pv, prefix, heads, &mv.pair_keys, Some(bias));
    let gate = linear(g, h, pv, &format!("{prefix}.gate"));
    let gate = g.sigmoid(gate);
    let gated = g.mul(ctx, gate);
    let o = linear(g, gated, pv, &format!("{prefix}.out"));
    let o = dropout(g, o, drop);
    let o = g.mul(o, mv.pair_f);
    let out = g.add(zin, o);
    if ending {
        g.permute(out, &[1, 0, 2])
    } else {
        out
    }
}

/// Position-wise transition on the pair tensor.
pub(crate) fn pair_transition(
    g: &mut Graph,
    z: Var,
    pv: &ParamVars,
    prefix: &str,
    mv: &MaskVars,
    drop: &mut Option<DropoutState>,
) -> Var {
    let h = layer_norm(g, z, pv, &format!("{prefix}.norm"));
    let f = linear(g, h, pv, &format!("{prefix}.fc1"));
    let f = g.gelu(f);
    let f = linear(g, f, pv, &format!("{prefix}.fc2"));
    let f = dropout(g, f, drop);
    let f = g.mul(f, mv.pair_f);
    g.add(z, f)
}

/// One pairwise block: both triangular multiplications, both triangular
/// attentions, then the transition; all residual.
pub(crate) fn pair_layer(
    g: &mut Graph,
    z: Var,
    pv: &ParamVars,
    idx: usize,
    mv: &MaskVars,
    cfg: &ModelConfig,
    drop: &mut Option<DropoutState>,
) -> Var {
    let z = triangular_multiplication(g, z, pv, &format!("pair.{idx}.tri_out"), true, mv, drop);
    let z = triangular_multiplication(g, z, pv, &format!("pair.{idx}.tri_in"), false, mv, drop);
    let z = triangular_attention(g, z, pv, &format!("pair.{idx}.attn_start"), false, mv, cfg, drop);
    let z = triangular_attention(g, z, pv, &format!("pair.{idx}.attn_end"), true, mv, cfg, drop);
    pair_transition(g, z, pv, &format!("pair.{idx}.transition"), mv, drop)
}

/// Full stack: embeddings to two-class pair logits `[r, r, 2]`.
pub(crate) fn build_logits(
    g: &mut Graph,
    pv: &ParamVars,
    grid: &TokenGrid,
    mask: &MsaMask,
    cfg: &ModelConfig,
    drop: &mut Option<DropoutState>,
) -> Var {
    let mv = mask_vars(g, mask);
    let mut x = embed(g, pv, grid, &mv, cfg);
    for i in 0..cfg.msa_layers {
        x = msa_layer(g, x, pv, i, &mv, cfg, drop);
    }
    let mut z = outer_product_mean(g, x, pv, &mv, drop);
    for i in 0..cfg.pair_layers {
        z = pair_layer(g, z, pv, i, &mv, cfg, drop);
    }
    let h = layer_norm(g, z, pv, "final_norm");
    linear(g, h, pv, "classifier")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::LAYER_NORM_EPS;
    use crate::model::{ModelConfig, ParameterStore};

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            hidden_size: 4,
            intermediate_size: 4,
            msa_layers: 1,
            pair_layers: 1,
            attention_heads: 1,
            pair_projection_size: 2,
            vocab_size: 8,
            max_rows: 8,
            max_cols: 8,
        }
    }

    fn full_mask(g: &mut Graph, r: usize, c: usize) -> MaskVars {
        let m = MsaMask::new(r, c, vec![true; r * c]).unwrap();
        mask_vars(g, &m)
    }

    // straight-line helpers used as the independent recomputation
    fn ln_vec(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let mean = x.iter().sum::<f64>() / d;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mean) * rstd * gamma[i] + beta[i])
            .collect()
    }

    fn lin_vec(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
        let (din, dout) = (w.shape()[0], w.shape()[1]);
        (0..dout)
            .map(|o| {
                b.data()[o]
                    + (0..din)
                        .map(|i| x[i] * w.data()[i * dout + o])
                        .sum::<f64>()
            })
            .collect()
    }

    fn sig_vec(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
    }

    fn gelu_vec(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let u = 0.797_884_560_802_865_4 * (v + 0.044_715 * v * v * v);
                0.5 * v * (1.0 + u.tanh())
            })
            .collect()
    }

    #[test]
    fn msa_layer_single_cell_matches_straight_line_recomputation() {
        // r=1, c=1: every attention has one key with weight one, so the
        // whole block is a straight-line circuit we can recompute.
        let cfg = toy_cfg();
        let store = ParameterStore::init(&cfg, 11).unwrap();
        let x0 = vec![0.3, -0.7, 1.1, 0.25];

        let mut g = Graph::new();
        let pv = bind_params(&mut g, &store, false);
        let mv = full_mask(&mut g, 1, 1);
        let xv = g.constant(Tensor::new(vec![1, 1, 4], x0.clone()).unwrap());
        let out = msa_layer(&mut g, xv, &pv, 0, &mv, &cfg, &mut None);
        let got = g.value(out).data().to_vec();

        let p = |s: &str| store.get(s);
        let attn_block = |x: &[f64], pre: &str| -> Vec<f64> {
            let h = ln_vec(
                x,
                p(&format!("{pre}.norm.gamma")).data(),
                p(&format!("{pre}.norm.beta")).data(),
            );
            // one key: softmax weight is 1, context is v(h)
            let v = lin_vec(&h, p(&format!("{pre}.v.weight")), p(&format!("{pre}.v.bias")));
            let o = lin_vec(&v, p(&format!("{pre}.out.weight")), p(&format!("{pre}.out.bias")));
            x.iter().zip(&o).map(|(a, b)| a + b).collect()
        };
        let x1 = attn_block(&x0, "msa.0.row_attn");
        let x2 = attn_block(&x1, "msa.0.col_attn");
        let h = ln_vec(
            &x2,
            p("msa.0.ffn.norm.gamma").data(),
            p("msa.0.ffn.norm.beta").data(),
        );
        let f = lin_vec(&h, p("msa.0.ffn.fc1.weight"), p("msa.0.ffn.fc1.bias"));
        let f = gelu_vec(&f);
        let f = lin_vec(&f, p("msa.0.ffn.fc2.weight"), p("msa.0.ffn.fc2.bias"));
        let want: Vec<f64> = x2.iter().zip(&f).map(|(a, b)| a + b).collect();

        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn msa_layer_row_permutation_equivariance() {
        let cfg = toy_cfg();
        let store = ParameterStore::init(&cfg, 5).unwrap();
        let (r, c) = (3, 2);
        let data: Vec<f64> = (0..r * c * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = |rows: &[usize]| -> Vec<f64> {
            let permuted: Vec<f64> = rows
                .iter()
                .flat_map(|&i| data[i * c * 4..(i + 1) * c * 4].to_vec())
                .collect();
            let mut g = Graph::new();
            let pv = bind_params(&mut g, &store, false);
            let mv = full_mask(&mut g, r, c);
            let xv = g.constant(Tensor::new(vec![r, c, 4], permuted).unwrap());
            let out = msa_layer(&mut g, xv, &pv, 0, &mv, &cfg, &mut None);
            g.value(out).data().to_vec()
        };
        let base = run(&[0, 1, 2]);
        let perm = run(&[2, 0, 1]);
        for (i, &src) in [2usize, 0, 1].iter().enumerate() {
            let a = &perm[i * c * 4..(i + 1) * c * 4];
            let b = &base[src * c * 4..(src + 1) * c * 4];
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn outer_product_mean_zero_projection_yields_bias() {
        let cfg = toy_cfg();
        let mut store = ParameterStore::init(&cfg, 2).unwrap();
        for name in ["opm.left.weight", "opm.left.bias", "opm.right.weight", "opm.right.bias"] {
            let t = store.get_mut(name);
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let (r, c, d) = (2, 3, 4);
        let mut g = Graph::new();
        let pv = bind_params(&mut g, &store, false);
        let mv = full_mask(&mut g, r, c);
        let x = g.constant(Tensor::full(&[r, c, d], 0.9));
        let z = outer_product_mean(&mut g, x, &pv, &mv, &mut None);
        let bias = store.get("opm.out.bias").data();
        for i in 0..r {
            for j in 0..r {
                for t in 0..d {
                    assert!((g.value(z).at(&[i, j, t]) - bias[t]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn outer_product_mean_single_row_contract() {
        let cfg = toy_cfg();
        let store = ParameterStore::init(&cfg, 3).unwrap();
        let mut g = Graph::new();
        let pv = bind_params(&mut g, &store, false);
        let mv = full_mask(&mut g, 1, 2);
        let x = g.constant(Tensor::full(&[1, 2, 4], 0.5));
        let z = outer_product_mean(&mut g, x, &pv, &mv, &mut None);
        assert_eq!(g.value(z).shape(), &[1, 1, 4]);
    }

    #[test]
    fn triangular_multiplication_closed_gate_is_identity() {
        let cfg = toy_cfg();
        let mut store = ParameterStore::init(&cfg, 4).unwrap();
        {
            let t = store.get_mut("pair.0.tri_out.gate.weight");
            for v in t.data_mut() {
                *v = 0.0;
            }
            let t = store.get_mut("pair.0.tri_out.gate.bias");
            for v in t.data_mut() {
                *v = -40.0; // sigmoid(-40) ~ 4e-18: the update is shut off
            }
        }
        let r = 3;
        let zdata: Vec<f64> = (0..r * r * 4).map(|i| (i as f64 * 0.13).cos()).collect();
        let mut g = Graph::new();
        let pv = bind_params(&mut g, &store, false);
        let mv = full_mask(&mut g, r, 1);
        let z = g.constant(Tensor::new(vec![r, r, 4], zdata.clone()).unwrap());
        let out = triangular_multiplication(&mut g, z, &pv, "pair.0.tri_out", true, &mv, &mut None);
        for (a, b) in g.value(out).data().iter().zip(&zdata) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn triangular_multiplication_symmetric_input_shared_projections() {
        // With symmetric z and identical left/right projections, the
        // outgoing and incoming updates coincide.
        let cfg = toy_cfg();
        let mut store = ParameterStore::init(&cfg, 9).unwrap();
        for side in ["proj", "gate"] {
            let w = store.get(&format!("pair.0.tri_out.left_{side}.weight")).clone();
            *store.get_mut(&format!("pair.0.tri_out.right_{side}.weight")) = w;
            let b = store.get(&format!("pair.0.tri_out.left_{side}.bias")).clone();
            *store.get_mut(&format!("pair.0.tri_out.right_{side}.bias")) = b;
            // mirror into the incoming block too
            for part in ["weight", "bias"] {
                let src = store
                    .get(&format!("pair.0.tri_out.left_{side}.{part}"))
                    .clone();
                *store.get_mut(&format!("pair.0.tri_in.left_{side}.{part}")) = src.clone();
                *store.get_mut(&format!("pair.0.tri_in.right_{side}.{part}")) = src;
            }
        }
        for name in ["norm.gamma", "norm.beta", "u_norm.gamma", "u_norm.beta", "out.weight", "out.bias", "gate.weight", "gate.bias"] {
            let src = store.get(&format!("pair.0.tri_out.{name}")).clone();
            *store.get_mut(&format!("pair.0.tri_in.{name}")) = src;
        }

        let r = 3;
        let mut zt = Tensor::zeros(&[r, r, 4]);
        for i in 0..r {
            for j in 0..r {
                for t in 0..4 {
                    let v = ((i * j + t) as f64 * 0.31).sin();
                    *zt.at_mut(&[i, j, t]) = v;
                    *zt.at_mut(&[j, i, t]) = v;
                }
            }
        }
        let mut g = Graph::new();
        let pv = bind_params(&mut g, &store, false);
        let mv = full_mask(&mut g, r, 1);
        let z = g.constant(zt);
        let out = triangular_multiplication(&mut g, z, &pv, "pair.0.tri_out", true, &mv, &mut None);
        let inc = triangular_multiplication(&mut g, z, &pv, "pair.0.tri_in", false, &mv, &mut None);
        for (a, b) in g.value(out).data().iter().zip(g.value(inc).data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn triangular_attention_single_row_is_gated_value_passthrough() {
        let cfg = toy_cfg();
        let store = ParameterStore::init(&cfg, 6).unwrap();
        let z0 = vec![0.4, -0.2, 0.9, -1.3];
        let mut g = Graph::new();
        let pv = bind_params(&mut g, &store, false);
        let mv = full_mask(&mut g, 1, 1);
        let z = g.constant(Tensor::new(vec![1, 1, 4], z0.clone()).unwrap());
        let out = triangular_attention(&mut g, z, &pv, "pair.0.attn_start", false, &mv, &cfg, &mut None);

        let p = |s: &str| store.get(s);
        let h = ln_vec(
            &z0,
            p("pair.0.attn_start.norm.gamma").data(),
            p("pair.0.attn_start.norm.beta").data(),
        );
        // one key: attention weight 1 regardless of bias, context = v(h)
        let v = lin_vec(&h, p("pair.0.attn_start.v.weight"), p("pair.0.attn_start.v.bias"));
        let gate = sig_vec(&lin_vec(
            &h,
            p("pair.0.attn_start.gate.weight"),
            p("pair.0.attn_start.gate.bias"),
        ));
        let gated: Vec<f64> = v.iter().zip(&gate).map(|(a, b)| a * b).collect();
        let o = lin_vec(&gated, p("pair.0.attn_start.out.weight"), p("pair.0.attn_start.out.bias"));
        let want: Vec<f64> = z0.iter().zip(&o).map(|(a, b)| a + b).collect();
        for (a, b) in g.value(out).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn triangular_attention_two_keys_matches_hand_softmax() {
        // r=2, one head: recompute the attention weights as normalized
        // exponentials by hand and compare the full output.
        let cfg = toy_cfg();
        let store = ParameterStore::init(&cfg, 8).unwrap();
        let r = 2;
        let d = 4;
        let mut zt = Tensor::zeros(&[r, r, d]);
        for (n, v) in zt.data_mut().iter_mut().enumerate() {
            *v = ((n as f64) * 0.7).sin();
        }
        let mut g = Graph::new();
        let pv = bind_params(&mut g, &store, false);
        let mv = full_mask(&mut g, r, 1);
        let z = g.constant(zt.clone());
        let out = triangular_attention(&mut g, z, &pv, "pair.0.attn_start", false, &mv, &cfg, &mut None);

        let p = |s: &str| store.get(s);
        let pre = "pair.0.attn_start";
        let h: Vec<Vec<Vec<f64>>> = (0..r)
            .map(|i| {
                (0..r)
                    .map(|j| {
                        let cell: Vec<f64> =
                            (0..d).map(|t| zt.at(&[i, j, t])).collect();
                        ln_vec(
                            &cell,
                            p(&format!("{pre}.norm.gamma")).data(),
                            p(&format!("{pre}.norm.beta")).data(),
                        )
                    })
                    .collect()
            })
            .collect();
        let lin3 = |x: &Vec<f64>, name: &str| -> Vec<f64> {
            lin_vec(x, p(&format!("{pre}.{name}.weight")), p(&format!("{pre}.{name}.bias")))
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let bias_w = p(&format!("{pre}.pair_bias.weight"));
        let mut want = Vec::new();
        for i in 0..r {
            for j in 0..r {
                let q = lin3(&h[i][j], "q");
                // keys (i, k), bias from normed z[j, k]
                let scores: Vec<f64> = (0..r)
                    .map(|k| {
                        let kk = lin3(&h[i][k], "k");
                        let b = dot(
                            &h[j][k],
                            &(0..d).map(|t| bias_w.data()[t]).collect::<Vec<_>>(),
                        );
                        dot(&q, &kk) / (d as f64).sqrt() + b
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let zsum: f64 = exps.iter().sum();
                let weights: Vec<f64> = exps.iter().map(|e| e / zsum).collect();
                let mut ctx = vec![0.0; d];
                for k in 0..r {
                    let v = lin3(&h[i][k], "v");
                    for t in 0..d {
                        ctx[t] += weights[k] * v[t];
                    }
                }
                let gate = sig_vec(&lin3(&h[i][j], "gate"));
                let gated: Vec<f64> = ctx.iter().zip(&gate).map(|(a, b)| a * b).collect();
                let o = lin3(&gated, "out");
                for t in 0..d {
                    want.push(zt.at(&[i, j, t]) + o[t]);
                }
            }
        }
        for (a, b) in g.value(out).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn pair_layer_composition_equals_sequential_sub_ops() {
        let cfg = toy_cfg();
        let store = ParameterStore::init(&cfg, 10).unwrap();
        let r = 3;
        let zdata: Vec<f64> = (0..r * r * 4).map(|i| ((i as f64) * 0.21).sin()).collect();
        let zt = Tensor::new(vec![r, r, 4], zdata).unwrap();

        let mut g = Graph::new();
        let pv = bind_params(&mut g, &store, false);
        let mv = full_mask(&mut g, r, 2);
        let z = g.constant(zt.clone());
        let full = pair_layer(&mut g, z, &pv, 0, &mv, &cfg, &mut None);

        let z1 = g.constant(zt);
        let z1 = triangular_multiplication(&mut g, z1, &pv, "pair.0.tri_out", true, &mv, &mut None);
        let z1 = triangular_multiplication(&mut g, z1, &pv, "pair.0.tri_in", false, &mv, &mut None);
        let z1 = triangular_attention(&mut g, z1, &pv, "pair.0.attn_start", false, &mv, &cfg, &mut None);
        let z1 = triangular_attention(&mut g, z1, &pv, "pair.0.attn_end", true, &mv, &cfg, &mut None);
        let z1 = pair_transition(&mut g, z1, &pv, "pair.0.transition", &mv, &mut None);

        assert_eq!(g.value(full).data(), g.value(z1).data());
    }

    #[test]
    fn pair_layer_preserves_shape() {
        let cfg = toy_cfg();
        let store = ParameterStore::init(&cfg, 12).unwrap();
        let r = 4;
        let mut g = Graph::new();
        let pv = bind_params(&mut g, &store, false);
        let mv = full_mask(&mut g, r, 2);
        let z = g.constant(Tensor::full(&[r, r, 4], 0.1));
        let out = pair_layer(&mut g, z, &pv, 0, &mv, &cfg, &mut None);
        assert_eq!(g.value(out).shape(), &[r, r, 4]);
    }
}
