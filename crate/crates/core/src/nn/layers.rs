//! Parameter layouts and forward builders for linear and transformer layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, ParamTree, Tensor, Var, ROPE_BASE};
use crate::error::Result;

pub const NORM_EPS: f64 = 1e-6;

/// Adds `{name}.w` of shape `[input, output]`, scaled by `gain / sqrt(input)`, and a zero `{name}.b` if `bias`.
pub fn init_linear<R: Rng>(params: &mut ParamTree, name: &str, input: usize, output: usize, bias: bool, gain: f64, rng: &mut R) -> Result<()> {
    let std = gain / (input as f64).sqrt();
    params.insert(format!("{name}.w"), Tensor::randn(&[input, output], std, rng))?;
    if bias {
        params.insert(format!("{name}.b"), Tensor::zeros(&[output]))?;
    }
    Ok(())
}

/// `x W (+ b)`, using the bias only when the tree holds one.
pub fn linear(g: &mut Graph, x: Var, name: &str) -> Result<Var> {
    let w = g.param(&format!("{name}.w"))?;
    let y = g.matmul(x, w)?;
    let b = format!("{name}.b");
    if g.has_param(&b) {
        let b = g.param(&b)?;
        g.add_row(y, b)
    } else {
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub causal: bool,
}

/// Pre-norm blocks without biases, followed by a final RMS norm.
pub fn init_transformer<R: Rng>(params: &mut ParamTree, prefix: &str, cfg: &TransformerConfig, rng: &mut R) -> Result<()> {
    let out_gain = 1.0 / ((2 * cfg.layers.max(1)) as f64).sqrt();
    for l in 0..cfg.layers {
        let p = format!("{prefix}.{l}");
        params.insert(format!("{p}.norm1"), Tensor::new(vec![cfg.dim], vec![1.0; cfg.dim])?)?;
        for proj in ["wq", "wk", "wv"] {
            init_linear(params, &format!("{p}.{proj}"), cfg.dim, cfg.dim, false, 1.0, rng)?;
        }
        init_linear(params, &format!("{p}.wo"), cfg.dim, cfg.dim, false, out_gain, rng)?;
        params.insert(format!("{p}.norm2"), Tensor::new(vec![cfg.dim], vec![1.0; cfg.dim])?)?;
        init_linear(params, &format!("{p}.ff1"), cfg.dim, cfg.ffn_dim, false, 1.0, rng)?;
        init_linear(params, &format!("{p}.ff2"), cfg.ffn_dim, cfg.dim, false, out_gain, rng)?;
    }
    params.insert(format!("{prefix}.norm_f"), Tensor::new(vec![cfg.dim], vec![1.0; cfg.dim])?)?;
    Ok(())
}

/// Runs the stack over `[T, dim]` rows split into independent `blocks`.
pub fn transformer(g: &mut Graph, x: Var, prefix: &str, cfg: &TransformerConfig, positions: &[f64], blocks: &[usize]) -> Result<Var> {
    let mut h = x;
    for l in 0..cfg.layers {
        let p = format!("{prefix}.{l}");
        let gain = g.param(&format!("{p}.norm1"))?;
        let n = g.rms_norm(h, gain, NORM_EPS)?;
        let q = linear(g, n, &format!("{p}.wq"))?;
        let k = linear(g, n, &format!("{p}.wk"))?;
        let v = linear(g, n, &format!("{p}.wv"))?;
        let q = g.rope(q, cfg.heads, positions, ROPE_BASE)?;
        let k = g.rope(k, cfg.heads, positions, ROPE_BASE)?;
        let a = g.attention(q, k, v, cfg.heads, cfg.causal, blocks)?;
        let a = linear(g, a, &format!("{p}.wo"))?;
        h = g.add(h, a)?;
        let gain = g.param(&format!("{p}.norm2"))?;
        let n = g.rms_norm(h, gain, NORM_EPS)?;
        let f = linear(g, n, &format!("{p}.ff1"))?;
        let f = g.gelu(f);
        let f = linear(g, f, &format!("{p}.ff2"))?;
        h = g.add(h, f)?;
    }
    let gain = g.param(&format!("{prefix}.norm_f"))?;
    g.rms_norm(h, gain, NORM_EPS)
}
