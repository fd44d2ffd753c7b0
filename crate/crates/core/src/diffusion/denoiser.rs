//! Phase-space noise predictors.
//!
//! Every sample becomes a small token set: a diffusion-step token, a text
//! token (semantic model only), four parameter tokens (the F, A, B, S rows of
//! the noisy latent) and `n_tok` frame tokens holding the periodic signal of
//! the clean-latent estimate on a fixed grid. The transitional models attend
//! from these tokens to the parameter and frame tokens of a neighbor's clean
//! latent. The noise estimate is read from the parameter-token outputs.

use phasecomp_nn::graph::AttnBlock;
use phasecomp_nn::layers::{Linear, Transformer};
use phasecomp_nn::{sinusoidal_row, Checkpoint, Graph, ParamStore, Rng, Segment, Tensor, TransformerConfig, Var};

use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::kv::{self, KvWriter};
use crate::phase::{build_time_window, comp_pe_anchored, phase_reparameterize, LatentStats, PhaseParams, WindowMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DenoiserKind {
    /// Text-conditioned semantic model.
    Spdm,
    /// Transitional model conditioned on the preceding segment.
    TpdmForward,
    /// Transitional model conditioned on the following segment.
    TpdmBackward,
}

impl DenoiserKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DenoiserKind::Spdm => "spdm",
            DenoiserKind::TpdmForward => "tpdm-forward",
            DenoiserKind::TpdmBackward => "tpdm-backward",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spdm" => Some(DenoiserKind::Spdm),
            "tpdm-forward" => Some(DenoiserKind::TpdmForward),
            "tpdm-backward" => Some(DenoiserKind::TpdmBackward),
            _ => None,
        }
    }

    pub fn is_transitional(self) -> bool {
        self != DenoiserKind::Spdm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub q: usize,
    pub d_text: usize,
    /// Frame tokens per sample.
    pub n_tok: usize,
    pub pe_dim: usize,
    pub model: TransformerConfig,
    pub vocab: Vec<String>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            q: 32,
            d_text: 32,
            n_tok: 48,
            pe_dim: 16,
            model: TransformerConfig { d_model: 64, heads: 4, d_ff: 128, layers: 2 },
            vocab: crate::synth::VOCAB.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.q == 0 || self.q % 2 != 0 || self.n_tok < 2 || self.pe_dim % 2 != 0 || self.model.d_model % 2 != 0 {
            return Err(Error::invalid("bad denoiser dimensions"));
        }
        if self.vocab.is_empty() || self.vocab.iter().any(|v| v.is_empty() || v.contains(char::is_whitespace)) {
            return Err(Error::invalid("vocabulary tokens must be non-empty words"));
        }
        Ok(())
    }

    /// Anchor of the canonical frame-token grid.
    pub fn token_anchor(&self) -> usize {
        self.n_tok / 2
    }
}

/// What a sample is conditioned on.
#[derive(Clone, Copy, Debug)]
pub enum Condition<'a> {
    Text(&'a [String]),
    /// Normalized clean-latent estimate of the neighboring segment.
    Neighbor(&'a [f64]),
}

#[derive(Clone, Copy, Debug)]
pub struct DenoiseInput<'a> {
    /// Training-step index of the noise level.
    pub k: usize,
    /// Normalized noisy latent, length `4Q`.
    pub pk: &'a [f64],
    pub cond: Condition<'a>,
}

#[derive(Clone, Debug)]
struct Nets {
    step_a: Linear,
    step_b: Linear,
    text_proj: Option<Linear>,
    param_in: Linear,
    frame_in: Linear,
    mem_param_in: Option<Linear>,
    mem_frame_in: Option<Linear>,
    tf: Transformer,
    out: Linear,
}

const TEXT_TABLE: &str = "den.text.emb";
const ROLE: &str = "den.role";
const MEM_ROLE: &str = "den.mem_role";

impl Nets {
    fn new(kind: DenoiserKind, c: &DenoiserConfig) -> Self {
        let d = c.model.d_model;
        let tr = kind.is_transitional();
        let frame_w = c.q + 3 * c.pe_dim;
        Self {
            step_a: Linear::new("den.step.a", d, d),
            step_b: Linear::new("den.step.b", d, d),
            text_proj: (!tr).then(|| Linear::new("den.text.proj", c.d_text, d)),
            param_in: Linear::new("den.param_in", c.q, d),
            frame_in: Linear::new("den.frame_in", frame_w, d),
            mem_param_in: tr.then(|| Linear::new("den.mem.param_in", c.q, d)),
            mem_frame_in: tr.then(|| Linear::new("den.mem.frame_in", frame_w, d)),
            tf: Transformer::new("den.tf", &c.model, tr),
            out: Linear::new("den.out", d, c.q),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    pub kind: DenoiserKind,
    pub config: DenoiserConfig,
    pub store: ParamStore,
    pub schedule: DiffusionSchedule,
    stats: LatentStats,
    nets: Nets,
}

impl Denoiser {
    /// Freshly initialized model. `stats` are the autoencoder's latent
    /// statistics, needed to evaluate frame tokens in unnormalized units.
    pub fn new(
        kind: DenoiserKind,
        config: DenoiserConfig,
        schedule: DiffusionSchedule,
        stats: LatentStats,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if stats.dim() != 4 * config.q {
            return Err(Error::invalid(format!("latent stats cover {} entries, need {}", stats.dim(), 4 * config.q)));
        }
        let nets = Nets::new(kind, &config);
        let d = config.model.d_model;
        let mut store = ParamStore::new();
        let mut rng = Rng::with_stream(seed, 0);
        nets.step_a.init(&mut store, &mut rng)?;
        nets.step_b.init(&mut store, &mut rng)?;
        if let Some(l) = &nets.text_proj {
            store.init_uniform(TEXT_TABLE, &[config.vocab.len(), config.d_text], config.d_text, &mut rng)?;
            l.init(&mut store, &mut rng)?;
        }
        nets.param_in.init(&mut store, &mut rng)?;
        store.init_uniform(ROLE, &[4, d], d, &mut rng)?;
        nets.frame_in.init(&mut store, &mut rng)?;
        if let (Some(a), Some(b)) = (&nets.mem_param_in, &nets.mem_frame_in) {
            a.init(&mut store, &mut rng)?;
            store.init_uniform(MEM_ROLE, &[4, d], d, &mut rng)?;
            b.init(&mut store, &mut rng)?;
        }
        nets.tf.init(&mut store, &mut rng)?;
        nets.out.init(&mut store, &mut rng)?;
        Ok(Self { kind, config, store, schedule, stats, nets })
    }

    pub fn stats(&self) -> &LatentStats {
        &self.stats
    }

    pub fn latent_dim(&self) -> usize {
        4 * self.config.q
    }

    fn token_ids(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.config
                    .vocab
                    .iter()
                    .position(|v| v == t)
                    .ok_or_else(|| Error::UnknownToken(t.clone()))
            })
            .collect()
    }

    /// Mean of the learned token embeddings; the empty list maps to zero.
    pub fn text_encode(&self, tokens: &[String]) -> Result<Vec<f64>> {
        if self.kind != DenoiserKind::Spdm {
            return Err(Error::invalid("only the semantic model has a text encoder"));
        }
        let ids = self.token_ids(tokens)?;
        let table = self.store.get(TEXT_TABLE).expect("semantic model has a text table");
        let mut out = vec![0.0; self.config.d_text];
        if ids.is_empty() {
            return Ok(out);
        }
        for &i in &ids {
            for (o, v) in out.iter_mut().zip(table.row_slice(i)) {
                *o += v;
            }
        }
        let n = ids.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    /// `n_tok x (Q + 3 pe)` rows: the periodic signal of a normalized latent
    /// on the canonical grid, next to Comp-PE.
    fn frame_features(&self, normalized: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let c = &self.config;
        let p = self.stats.denormalize(&PhaseParams::from_flat(normalized, true)?)?;
        let w = build_time_window(c.n_tok, c.q, WindowMode::Mix, c.token_anchor())?;
        let sig = phase_reparameterize(&p, &w)?;
        let pe = comp_pe_anchored(c.n_tok, c.pe_dim, c.token_anchor())?;
        for t in 0..c.n_tok {
            out.extend_from_slice(sig.row_slice(t));
            out.extend_from_slice(pe.row_slice(t));
        }
        Ok(())
    }

    fn validate_inputs(&self, inputs: &[DenoiseInput]) -> Result<()> {
        let dim = self.latent_dim();
        for inp in inputs {
            if inp.pk.len() != dim {
                return Err(Error::invalid(format!("latent has {} entries, expected {dim}", inp.pk.len())));
            }
            if inp.k >= self.schedule.k_train {
                return Err(Error::invalid(format!("step {} outside [0, {})", inp.k, self.schedule.k_train)));
            }
            match (self.kind, inp.cond) {
                (DenoiserKind::Spdm, Condition::Text(_)) => {}
                (DenoiserKind::Spdm, Condition::Neighbor(_)) => {
                    return Err(Error::invalid("semantic model expects a text condition"));
                }
                (_, Condition::Neighbor(n)) if n.len() == dim => {}
                (_, _) => return Err(Error::invalid("transitional model expects a neighbor latent of length 4Q")),
            }
        }
        Ok(())
    }

    /// `[4B, Q]` noise predictions, sample-major, rows F, A, B, S.
    pub fn eps_graph(&self, g: &mut Graph, inputs: &[DenoiseInput]) -> Result<Var> {
        self.validate_inputs(inputs)?;
        let c = &self.config;
        let (b, d, q, nt) = (inputs.len(), c.model.d_model, c.q, c.n_tok);
        let frame_w = q + 3 * c.pe_dim;
        let s = &self.store;

        let steps: Vec<f64> = inputs.iter().flat_map(|i| sinusoidal_row(i.k as f64, d)).collect();
        let st = g.constant(Tensor::matrix(b, d, steps)?);
        let st = self.nets.step_a.forward(g, s, st)?;
        let st = g.gelu(st);
        let st = self.nets.step_b.forward(g, s, st)?;

        let pk: Vec<f64> = inputs.iter().flat_map(|i| i.pk.iter().copied()).collect();
        let pv = g.constant(Tensor::matrix(4 * b, q, pk)?);
        let pt = self.nets.param_in.forward(g, s, pv)?;
        let role = g.param(s, ROLE)?;
        let roles = g.gather_rows(role, (0..4 * b).map(|i| i % 4).collect())?;
        let pt = g.add(pt, roles)?;

        let mut frames = Vec::with_capacity(b * nt * frame_w);
        for inp in inputs {
            let shrink = self.schedule.alpha_bar_at(Some(inp.k))?.sqrt();
            let est: Vec<f64> = inp.pk.iter().map(|v| shrink * v).collect();
            self.frame_features(&est, &mut frames)?;
        }
        let fv = g.constant(Tensor::matrix(b * nt, frame_w, frames)?);
        let ft = self.nets.frame_in.forward(g, s, fv)?;

        let (tokens, per_sample, param_at, memory) = if let Some(proj) = &self.nets.text_proj {
            let v = c.vocab.len();
            let mut avg = vec![0.0; b * v];
            for (r, inp) in inputs.iter().enumerate() {
                let Condition::Text(toks) = inp.cond else { unreachable!("validated") };
                let ids = self.token_ids(toks)?;
                for &id in &ids {
                    avg[r * v + id] += 1.0 / ids.len() as f64;
                }
            }
            let avg = g.constant(Tensor::matrix(b, v, avg)?);
            let table = g.param(s, TEXT_TABLE)?;
            let emb = g.matmul(avg, table)?;
            let tt = proj.forward(g, s, emb)?;
            let all = g.concat_rows(&[st, tt, pt, ft])?;
            let mut idx = Vec::with_capacity(b * (6 + nt));
            for r in 0..b {
                idx.push(r);
                idx.push(b + r);
                idx.extend(2 * b + 4 * r..2 * b + 4 * r + 4);
                idx.extend(6 * b + r * nt..6 * b + (r + 1) * nt);
            }
            (g.gather_rows(all, idx)?, 6 + nt, 2, None)
        } else {
            let all = g.concat_rows(&[st, pt, ft])?;
            let mut idx = Vec::with_capacity(b * (5 + nt));
            for r in 0..b {
                idx.push(r);
                idx.extend(b + 4 * r..b + 4 * r + 4);
                idx.extend(5 * b + r * nt..5 * b + (r + 1) * nt);
            }
            let tokens = g.gather_rows(all, idx)?;

            let mut nb = Vec::with_capacity(4 * b * q);
            let mut nframes = Vec::with_capacity(b * nt * frame_w);
            for inp in inputs {
                let Condition::Neighbor(n) = inp.cond else { unreachable!("validated") };
                nb.extend_from_slice(n);
                self.frame_features(n, &mut nframes)?;
            }
            let nv = g.constant(Tensor::matrix(4 * b, q, nb)?);
            let mp = self.nets.mem_param_in.as_ref().expect("transitional").forward(g, s, nv)?;
            let mrole = g.param(s, MEM_ROLE)?;
            let mroles = g.gather_rows(mrole, (0..4 * b).map(|i| i % 4).collect())?;
            let mp = g.add(mp, mroles)?;
            let nfv = g.constant(Tensor::matrix(b * nt, frame_w, nframes)?);
            let mf = self.nets.mem_frame_in.as_ref().expect("transitional").forward(g, s, nfv)?;
            let mall = g.concat_rows(&[mp, mf])?;
            let mut midx = Vec::with_capacity(b * (4 + nt));
            for r in 0..b {
                midx.extend(4 * r..4 * r + 4);
                midx.extend(4 * b + r * nt..4 * b + (r + 1) * nt);
            }
            (tokens, 5 + nt, 1, Some(g.gather_rows(mall, midx)?))
        };

        let self_segs = Segment::stack(&vec![per_sample; b]);
        let self_blocks: Vec<AttnBlock> = self_segs.iter().map(|s| AttnBlock { query: *s, key: *s }).collect();
        let cross_blocks: Vec<AttnBlock> = Segment::stack(&vec![4 + nt; b])
            .into_iter()
            .zip(&self_segs)
            .map(|(key, query)| AttnBlock { query: *query, key })
            .collect();
        let h = self.nets.tf.forward(g, s, tokens, &self_blocks, memory.map(|m| (m, cross_blocks.as_slice())))?;
        let rows = g.gather_rows(h, self_segs.iter().flat_map(|sg| sg.offset + param_at..sg.offset + param_at + 4).collect())?;
        Ok(self.nets.out.forward(g, s, rows)?)
    }

    /// Noise predictions, one `4Q` vector per input.
    pub fn predict(&self, inputs: &[DenoiseInput]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::inference();
        let e = self.eps_graph(&mut g, inputs)?;
        Ok(g.value(e).data().chunks(self.latent_dim()).map(<[f64]>::to_vec).collect())
    }

    /// Mean absolute error against `targets` on a training tape.
    pub fn loss_on_graph(&self, g: &mut Graph, inputs: &[DenoiseInput], targets: &[Vec<f64>]) -> Result<Var> {
        if targets.len() != inputs.len() || targets.iter().any(|t| t.len() != self.latent_dim()) {
            return Err(Error::invalid("one 4Q target per input required"));
        }
        let e = self.eps_graph(g, inputs)?;
        let t = g.constant(Tensor::matrix(4 * inputs.len(), self.config.q, targets.concat())?);
        let d = g.sub(e, t)?;
        let a = g.abs(d);
        Ok(g.mean(a))
    }

    pub fn config_text(&self) -> String {
        let c = &self.config;
        let mut text = KvWriter::new()
            .put("kind", self.kind.as_str())
            .put("q", c.q)
            .put("d_text", c.d_text)
            .put("n_tok", c.n_tok)
            .put("pe_dim", c.pe_dim)
            .put("d_model", c.model.d_model)
            .put("heads", c.model.heads)
            .put("d_ff", c.model.d_ff)
            .put("layers", c.model.layers)
            .put("vocab", c.vocab.join(" "))
            .put("frame_tokens_from", "shrinkage estimate sqrt(alpha_bar) * P_k")
            .put("mixing_index", "inference step over k_infer")
            .put("pae_stats_digest", self.stats.digest())
            .put("schedule_digest", self.schedule.digest())
            .finish();
        text.push_str(&self.schedule.to_text());
        text
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.kind.as_str(), self.config_text(), &self.store);
        ck.stats.insert("latent.mean".into(), Tensor::row(self.stats.mean.clone()));
        ck.stats.insert("latent.std".into(), Tensor::row(self.stats.std.clone()));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind = DenoiserKind::parse(&ck.kind)
            .ok_or_else(|| Error::DigestMismatch(format!("`{}` is not a denoiser checkpoint", ck.kind)))?;
        let text = &ck.config;
        let config = DenoiserConfig {
            q: kv::get(text, "q")?,
            d_text: kv::get(text, "d_text")?,
            n_tok: kv::get(text, "n_tok")?,
            pe_dim: kv::get(text, "pe_dim")?,
            model: TransformerConfig {
                d_model: kv::get(text, "d_model")?,
                heads: kv::get(text, "heads")?,
                d_ff: kv::get(text, "d_ff")?,
                layers: kv::get(text, "layers")?,
            },
            vocab: kv::get::<String>(text, "vocab")?.split_whitespace().map(str::to_string).collect(),
        };
        let schedule = DiffusionSchedule::from_text(text)?;
        if kv::get::<String>(text, "schedule_digest")? != schedule.digest() {
            return Err(Error::DigestMismatch("schedule digest does not match schedule parameters".into()));
        }
        let (Some(mean), Some(std)) = (ck.stats.get("latent.mean"), ck.stats.get("latent.std")) else {
            return Err(Error::Untrained(format!("{} checkpoint lacks latent statistics", kind.as_str())));
        };
        let stats = LatentStats { mean: mean.data().to_vec(), std: std.data().to_vec() };
        if kv::get::<String>(text, "pae_stats_digest")? != stats.digest() {
            return Err(Error::DigestMismatch("stored latent statistics do not match their digest".into()));
        }
        let fresh = Self::new(kind, config, schedule, stats, 0)?;
        for (name, t) in fresh.store.iter() {
            match ck.params.get(name) {
                Some(v) if v.shape() == t.shape() => {}
                _ => return Err(Error::format("checkpoint", format!("parameter `{name}` missing or misshapen"))),
            }
        }
        Ok(Self { store: ck.param_store()?, ..fresh })
    }
}
