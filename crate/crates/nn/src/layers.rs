//! Transformer building blocks on top of [`Graph`].
//!
//! Layers only hold parameter names; values live in a [`ParamStore`] so the
//! same layer description serves training tapes and inference tapes alike.

use crate::error::{NnError, Result};
use crate::graph::{AttnBlock, Graph, Var};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-9;

/// One row of the standard sinusoidal embedding at a (possibly negative or
/// fractional) position: `[sin(p w_0), cos(p w_0), sin(p w_1), ...]` with
/// `w_i = 10000^(-2i/d)`.
pub fn sinusoidal_row(pos: f64, d: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let w = 10000f64.powf(-((2 * i) as f64) / d as f64);
        let (s, c) = (pos * w).sin_cos();
        row.push(s);
        row.push(c);
    }
    row
}

/// `n x d` sinusoidal positional embedding for positions `0..n`.
pub fn sinusoidal_pe(n: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(NnError::OddDim(d));
    }
    let data = (0..n).flat_map(|t| sinusoidal_row(t as f64, d)).collect();
    Tensor::matrix(n, d, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(NnError::Invalid(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        store.init_uniform(&format!("{}.w", self.name), &[self.d_in, self.d_out], self.d_in, rng)?;
        store.init_uniform(&format!("{}.b", self.name), &[1, self.d_out], self.d_in, rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, &format!("{}.w", self.name))?;
        let b = g.param(store, &format!("{}.b", self.name))?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        store.init_const(&format!("{}.g", self.name), &[1, self.dim], 1.0)?;
        store.init_const(&format!("{}.b", self.name), &[1, self.dim], 0.0)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, &format!("{}.g", self.name))?;
        let beta = g.param(store, &format!("{}.b", self.name))?;
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(name: &str, d: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(format!("{name}.q"), d, d),
            k: Linear::new(format!("{name}.k"), d, d),
            v: Linear::new(format!("{name}.v"), d, d),
            o: Linear::new(format!("{name}.o"), d, d),
            heads,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        for l in [&self.q, &self.k, &self.v, &self.o] {
            l.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        memory: Var,
        blocks: &[AttnBlock],
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, memory)?;
        let v = self.v.forward(g, store, memory)?;
        let a = g.attention(q, k, v, self.heads, blocks.to_vec(), key_mask)?;
        self.o.forward(g, store, a)
    }
}

/// Pre-norm transformer layer: self-attention, optional cross-attention
/// against a memory, then a GELU feed-forward.
#[derive(Clone, Debug)]
pub struct Block {
    ln_self: LayerNorm,
    self_attn: Attention,
    cross: Option<(LayerNorm, Attention)>,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

impl Block {
    pub fn new(name: &str, cfg: &TransformerConfig, cross: bool) -> Self {
        let d = cfg.d_model;
        Self {
            ln_self: LayerNorm::new(format!("{name}.ln1"), d),
            self_attn: Attention::new(&format!("{name}.attn"), d, cfg.heads),
            cross: cross.then(|| {
                (
                    LayerNorm::new(format!("{name}.ln_x"), d),
                    Attention::new(&format!("{name}.xattn"), d, cfg.heads),
                )
            }),
            ln_ff: LayerNorm::new(format!("{name}.ln2"), d),
            ff_in: Linear::new(format!("{name}.ff1"), d, cfg.d_ff),
            ff_out: Linear::new(format!("{name}.ff2"), cfg.d_ff, d),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.ln_self.init(store)?;
        self.self_attn.init(store, rng)?;
        if let Some((ln, attn)) = &self.cross {
            ln.init(store)?;
            attn.init(store, rng)?;
        }
        self.ln_ff.init(store)?;
        self.ff_in.init(store, rng)?;
        self.ff_out.init(store, rng)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        self_blocks: &[AttnBlock],
        memory: Option<(Var, &[AttnBlock])>,
    ) -> Result<Var> {
        let h = self.ln_self.forward(g, store, x)?;
        let a = self.self_attn.forward(g, store, h, h, self_blocks, None)?;
        let mut x = g.add(x, a)?;
        if let (Some((ln, attn)), Some((mem, blocks))) = (&self.cross, memory) {
            let h = ln.forward(g, store, x)?;
            let a = attn.forward(g, store, h, mem, blocks, None)?;
            x = g.add(x, a)?;
        }
        let h = self.ln_ff.forward(g, store, x)?;
        let h = self.ff_in.forward(g, store, h)?;
        let h = g.gelu(h);
        let h = self.ff_out.forward(g, store, h)?;
        g.add(x, h)
    }
}

/// Stack of [`Block`]s followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct Transformer {
    blocks: Vec<Block>,
    ln_out: LayerNorm,
}

impl Transformer {
    pub fn new(name: &str, cfg: &TransformerConfig, cross: bool) -> Self {
        Self {
            blocks: (0..cfg.layers)
                .map(|i| Block::new(&format!("{name}.{i}"), cfg, cross))
                .collect(),
            ln_out: LayerNorm::new(format!("{name}.ln_out"), cfg.d_model),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        self.ln_out.init(store)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        mut x: Var,
        self_blocks: &[AttnBlock],
        memory: Option<(Var, &[AttnBlock])>,
    ) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(g, store, x, self_blocks, memory)?;
        }
        self.ln_out.forward(g, store, x)
    }
}
