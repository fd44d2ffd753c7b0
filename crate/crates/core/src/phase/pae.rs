//! Action-centric periodic autoencoder.
//!
//! The encoder is a transformer over four learned query tokens followed by
//! one token per frame (channels plus Comp-PE). The query outputs are read
//! out as F, A, B and S. The decoder evaluates the periodic signal on a mixT
//! window and maps each signal row (plus Comp-PE) back to a frame.

use phasecomp_nn::graph::AttnBlock;
use phasecomp_nn::layers::{Linear, Transformer};
use phasecomp_nn::{adam_step, clip_grad_norm, AdamConfig, Checkpoint, Graph, ParamStore, Rng, Segment, Tensor,
    TransformerConfig, Var};

use super::params::{LatentStats, PhaseParams};
use super::window::{build_time_window, comp_pe_anchored, WindowMode};
use crate::error::{Error, Result};
use crate::kv::{self, KvWriter};
use crate::motion::{ChannelLayout, ChannelRole, MotionSegment};

pub const CHECKPOINT_KIND: &str = "act-pae";

#[derive(Clone, Debug, PartialEq)]
pub struct PaeConfig {
    pub layout: ChannelLayout,
    pub q: usize,
    /// Width of each of the three Comp-PE blocks.
    pub pe_dim: usize,
    pub model: TransformerConfig,
    pub n_min: usize,
    pub n_max: usize,
    /// Scale applied to root-translation channels before encoding.
    pub emphasis: f64,
    pub fps: f64,
}

impl Default for PaeConfig {
    fn default() -> Self {
        Self {
            layout: ChannelLayout::planar(),
            q: 32,
            pe_dim: 16,
            model: TransformerConfig { d_model: 64, heads: 4, d_ff: 128, layers: 2 },
            n_min: 24,
            n_max: 96,
            emphasis: 15.0,
            fps: 24.0,
        }
    }
}

impl PaeConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.q == 0 || self.q % 2 != 0 {
            return Err(Error::invalid(format!("q must be even and positive, got {}", self.q)));
        }
        if self.pe_dim % 2 != 0 {
            return Err(phasecomp_nn::NnError::OddDim(self.pe_dim).into());
        }
        if self.n_min < 2 || self.n_min > self.n_max {
            return Err(Error::invalid(format!("bad length range [{}, {}]", self.n_min, self.n_max)));
        }
        if !(self.emphasis > 0.0) {
            return Err(Error::invalid("emphasis must be positive"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        KvWriter::new()
            .put("kind", CHECKPOINT_KIND)
            .put("layout", self.layout.to_line())
            .put("q", self.q)
            .put("pe_dim", self.pe_dim)
            .put("d_model", self.model.d_model)
            .put("heads", self.model.heads)
            .put("d_ff", self.model.d_ff)
            .put("layers", self.model.layers)
            .put("n_min", self.n_min)
            .put("n_max", self.n_max)
            .put("emphasis", format!("{:?}", self.emphasis))
            .put("fps", format!("{:?}", self.fps))
            .put("time_window", WindowMode::Mix.as_str())
            .finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg = Self {
            layout: ChannelLayout::from_line(&kv::get::<String>(text, "layout")?)?,
            q: kv::get(text, "q")?,
            pe_dim: kv::get(text, "pe_dim")?,
            model: TransformerConfig {
                d_model: kv::get(text, "d_model")?,
                heads: kv::get(text, "heads")?,
                d_ff: kv::get(text, "d_ff")?,
                layers: kv::get(text, "layers")?,
            },
            n_min: kv::get(text, "n_min")?,
            n_max: kv::get(text, "n_max")?,
            emphasis: kv::get(text, "emphasis")?,
            fps: kv::get(text, "fps")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn check_length(&self, n: usize) -> Result<()> {
        if n < self.n_min || n > self.n_max {
            return Err(Error::LengthOutOfRange { n, min: self.n_min, max: self.n_max });
        }
        Ok(())
    }
}

/// Output scale per readout role and column half (frame-time columns,
/// normalized-time columns). Frequencies on frame time are in radians per
/// frame, shifts in frames; on normalized time both are in window units.
const READOUT_SCALE: [[f64; 2]; 4] = [[0.3, 6.0], [1.0, 1.0], [1.0, 1.0], [12.0, 0.5]];
const ROLES: [&str; 4] = ["f", "a", "b", "s"];

#[derive(Clone, Debug)]
struct Nets {
    frame_in: Linear,
    encoder: Transformer,
    heads: Vec<Linear>,
    dec_sig: Linear,
    dec_pe: Linear,
    decoder: Transformer,
    dec_out: Linear,
}

impl Nets {
    fn new(cfg: &PaeConfig) -> Self {
        let d = cfg.model.d_model;
        let e = cfg.layout.width();
        Self {
            frame_in: Linear::new("pae.enc.in", e + 3 * cfg.pe_dim, d),
            encoder: Transformer::new("pae.enc.tf", &cfg.model, false),
            heads: ROLES.iter().map(|r| Linear::new(format!("pae.head.{r}"), d, cfg.q)).collect(),
            dec_sig: Linear::new("pae.dec.sig", cfg.q, d),
            dec_pe: Linear::new("pae.dec.pe", 3 * cfg.pe_dim, d),
            decoder: Transformer::new("pae.dec.tf", &cfg.model, false),
            dec_out: Linear::new("pae.dec.out", d, e),
        }
    }
}

/// One segment prepared for the network: emphasis-scaled frames and anchor.
#[derive(Clone, Debug)]
struct Item {
    data: Vec<f64>,
    n: usize,
    anchor: usize,
}

#[derive(Clone, Debug)]
pub struct ActPae {
    pub config: PaeConfig,
    pub store: ParamStore,
    stats: Option<LatentStats>,
    nets: Nets,
}

impl ActPae {
    /// Freshly initialized model without latent statistics.
    pub fn new(config: PaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let nets = Nets::new(&config);
        let mut store = ParamStore::new();
        let mut rng = Rng::with_stream(seed, 0);
        nets.frame_in.init(&mut store, &mut rng)?;
        store.init_uniform("pae.enc.query", &[4, config.model.d_model], config.model.d_model, &mut rng)?;
        nets.encoder.init(&mut store, &mut rng)?;
        for h in &nets.heads {
            h.init(&mut store, &mut rng)?;
        }
        nets.dec_sig.init(&mut store, &mut rng)?;
        nets.dec_pe.init(&mut store, &mut rng)?;
        nets.decoder.init(&mut store, &mut rng)?;
        nets.dec_out.init(&mut store, &mut rng)?;
        Ok(Self { config, store, stats: None, nets })
    }

    pub fn stats(&self) -> Result<&LatentStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::Untrained("phase autoencoder has no latent statistics".into()))
    }

    pub fn set_stats(&mut self, stats: LatentStats) -> Result<()> {
        if stats.dim() != 4 * self.config.q {
            return Err(Error::invalid(format!("stats cover {} entries, need {}", stats.dim(), 4 * self.config.q)));
        }
        self.stats = Some(stats);
        Ok(())
    }

    /// Default anchor of a semantic segment.
    pub fn center(n: usize) -> usize {
        n / 2
    }

    fn emphasis_mask(&self) -> Vec<bool> {
        let idx = self.config.layout.channels_with_role(ChannelRole::RootTranslation);
        (0..self.config.layout.width()).map(|c| idx.contains(&c)).collect()
    }

    fn item(&self, m: &MotionSegment, anchor: usize) -> Result<Item> {
        let e = self.config.layout.width();
        if m.channels() != e {
            return Err(Error::ChannelMismatch { expected: e, got: m.channels() });
        }
        self.config.check_length(m.frames())?;
        if anchor >= m.frames() {
            return Err(Error::AnchorOutOfRange { anchor, n: m.frames() });
        }
        let mask = self.emphasis_mask();
        let c = self.config.emphasis;
        let data = m
            .data()
            .chunks(e)
            .flat_map(|row| row.iter().zip(&mask).map(move |(v, &emph)| if emph { v * c } else { *v }))
            .collect();
        Ok(Item { data, n: m.frames(), anchor })
    }

    fn readout_scale(&self, role: usize) -> Tensor {
        let q = self.config.q;
        Tensor::row((0..q).map(|j| READOUT_SCALE[role][usize::from(j >= q / 2)]).collect())
    }

    /// `[4B, Q]` latent rows, sample-major with role order F, A, B, S.
    fn encode_graph(&self, g: &mut Graph, items: &[Item]) -> Result<Var> {
        let pe = self.config.pe_dim;
        let e = self.config.layout.width();
        let total: usize = items.iter().map(|it| it.n).sum();
        let mut x = Vec::with_capacity(total * (e + 3 * pe));
        for it in items {
            let cpe = comp_pe_anchored(it.n, pe, it.anchor)?;
            for t in 0..it.n {
                x.extend_from_slice(&it.data[t * e..(t + 1) * e]);
                x.extend_from_slice(cpe.row_slice(t));
            }
        }
        let x = g.constant(Tensor::matrix(total, e + 3 * pe, x)?);
        let frames = self.nets.frame_in.forward(g, &self.store, x)?;
        let queries = g.param(&self.store, "pae.enc.query")?;
        let all = g.concat_rows(&[queries, frames])?;
        let mut idx = Vec::with_capacity(total + 4 * items.len());
        let mut frame_off = 4;
        for it in items {
            idx.extend(0..4);
            idx.extend(frame_off..frame_off + it.n);
            frame_off += it.n;
        }
        let tokens = g.gather_rows(all, idx)?;
        let segs = Segment::stack(&items.iter().map(|it| it.n + 4).collect::<Vec<_>>());
        let blocks: Vec<AttnBlock> = segs.iter().map(|s| AttnBlock { query: *s, key: *s }).collect();
        let h = self.nets.encoder.forward(g, &self.store, tokens, &blocks, None)?;
        let b = items.len();
        let mut per_role = Vec::with_capacity(4);
        for (r, head) in self.nets.heads.iter().enumerate() {
            let rows = g.gather_rows(h, segs.iter().map(|s| s.offset + r).collect())?;
            let out = head.forward(g, &self.store, rows)?;
            let scale = g.constant(self.readout_scale(r));
            per_role.push(g.mul_row(out, scale)?);
        }
        let cat = g.concat_rows(&per_role)?;
        Ok(g.gather_rows(cat, (0..4 * b).map(|i| (i % 4) * b + i / 4).collect())?)
    }

    /// `[sum N, E]` emphasis-scaled frames from `[4B, Q]` latent rows.
    fn decode_graph(&self, g: &mut Graph, params: Var, shapes: &[(usize, usize)]) -> Result<Var> {
        let q = self.config.q;
        let pe = self.config.pe_dim;
        let total: usize = shapes.iter().map(|s| s.0).sum();
        let mut time = Vec::with_capacity(total * q);
        let mut pes = Vec::with_capacity(total * 3 * pe);
        for &(n, anchor) in shapes {
            self.config.check_length(n)?;
            time.extend_from_slice(build_time_window(n, q, WindowMode::Mix, anchor)?.t.data());
            pes.extend_from_slice(comp_pe_anchored(n, pe, anchor)?.data());
        }
        let segs = Segment::stack(&shapes.iter().map(|s| s.0).collect::<Vec<_>>());
        let sig = g.phase_signal(params, Tensor::matrix(total, q, time)?, segs.clone())?;
        let a = self.nets.dec_sig.forward(g, &self.store, sig)?;
        let pev = g.constant(Tensor::matrix(total, 3 * pe, pes)?);
        let b = self.nets.dec_pe.forward(g, &self.store, pev)?;
        let tok = g.add(a, b)?;
        let blocks: Vec<AttnBlock> = segs.iter().map(|s| AttnBlock { query: *s, key: *s }).collect();
        let h = self.nets.decoder.forward(g, &self.store, tok, &blocks, None)?;
        Ok(self.nets.dec_out.forward(g, &self.store, h)?)
    }

    /// Mean squared reconstruction error of a batch, in emphasis-scaled units.
    fn loss_graph(&self, g: &mut Graph, items: &[Item]) -> Result<Var> {
        let p = self.encode_graph(g, items)?;
        let shapes: Vec<(usize, usize)> = items.iter().map(|it| (it.n, it.anchor)).collect();
        let out = self.decode_graph(g, p, &shapes)?;
        let target: Vec<f64> = items.iter().flat_map(|it| it.data.iter().copied()).collect();
        let target = g.constant(Tensor::matrix(target.len() / self.config.layout.width(), self.config.layout.width(), target)?);
        let d = g.sub(out, target)?;
        let sq = g.mul(d, d)?;
        Ok(g.mean(sq))
    }

    /// Encodes with the segment's center as anchor.
    pub fn encode(&self, m: &MotionSegment) -> Result<PhaseParams> {
        self.encode_anchored(m, Self::center(m.frames()))
    }

    pub fn encode_anchored(&self, m: &MotionSegment, anchor: usize) -> Result<PhaseParams> {
        Ok(self.encode_batch(&[(m, anchor)])?.remove(0))
    }

    pub fn encode_batch(&self, batch: &[(&MotionSegment, usize)]) -> Result<Vec<PhaseParams>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let items = batch.iter().map(|(m, a)| self.item(m, *a)).collect::<Result<Vec<_>>>()?;
        let mut g = Graph::inference();
        let p = self.encode_graph(&mut g, &items)?;
        let flat = g.value(p).data();
        let q = self.config.q;
        Ok(flat.chunks(4 * q).map(|c| PhaseParams::from_flat(c, false).expect("4Q chunk")).collect())
    }

    pub fn decode(&self, p: &PhaseParams, n: usize, anchor: usize) -> Result<MotionSegment> {
        Ok(self.decode_batch(&[(p, n, anchor)])?.remove(0))
    }

    pub fn decode_batch(&self, batch: &[(&PhaseParams, usize, usize)]) -> Result<Vec<MotionSegment>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.config.q;
        let mut flat = Vec::with_capacity(batch.len() * 4 * q);
        for (p, _, _) in batch {
            if p.normalized {
                return Err(Error::invalid("decode needs unnormalized phase parameters"));
            }
            if p.q() != q {
                return Err(Error::invalid(format!("latent has Q = {}, model expects {q}", p.q())));
            }
            flat.extend(p.to_flat());
        }
        let shapes: Vec<(usize, usize)> = batch.iter().map(|(_, n, a)| (*n, *a)).collect();
        let mut g = Graph::inference();
        let pv = g.constant(Tensor::matrix(4 * batch.len(), q, flat)?);
        let out = self.decode_graph(&mut g, pv, &shapes)?;
        let e = self.config.layout.width();
        let mask = self.emphasis_mask();
        let c = self.config.emphasis;
        let mut data = g.value(out).data().to_vec();
        for row in data.chunks_mut(e) {
            for (v, &emph) in row.iter_mut().zip(&mask) {
                if emph {
                    *v /= c;
                }
            }
        }
        let mut out = Vec::with_capacity(batch.len());
        let mut off = 0;
        for &(n, _) in &shapes {
            out.push(MotionSegment::new(data[off..off + n * e].to_vec(), n, self.config.fps, self.config.layout.clone())?);
            off += n * e;
        }
        Ok(out)
    }

    /// Mean squared reconstruction error over `batch`, in emphasis-scaled
    /// units (the training objective).
    pub fn reconstruction_loss(&self, batch: &[(&MotionSegment, usize)]) -> Result<f64> {
        let items = batch.iter().map(|(m, a)| self.item(m, *a)).collect::<Result<Vec<_>>>()?;
        let mut g = Graph::inference();
        let l = self.loss_graph(&mut g, &items)?;
        Ok(g.value(l).data()[0])
    }

    /// Builds the training loss on a training tape, for gradient checks.
    pub fn loss_on_graph(&self, g: &mut Graph, batch: &[(&MotionSegment, usize)]) -> Result<Var> {
        let items = batch.iter().map(|(m, a)| self.item(m, *a)).collect::<Result<Vec<_>>>()?;
        self.loss_graph(g, &items)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, self.config.to_text(), &self.store);
        if let Some(st) = &self.stats {
            ck.stats.insert("latent.mean".into(), Tensor::row(st.mean.clone()));
            ck.stats.insert("latent.std".into(), Tensor::row(st.std.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::DigestMismatch(format!("expected a `{CHECKPOINT_KIND}` checkpoint, got `{}`", ck.kind)));
        }
        let config = PaeConfig::from_text(&ck.config)?;
        let fresh = Self::new(config.clone(), 0)?;
        for (name, t) in fresh.store.iter() {
            match ck.params.get(name) {
                Some(v) if v.shape() == t.shape() => {}
                _ => return Err(Error::format("checkpoint", format!("parameter `{name}` missing or misshapen"))),
            }
        }
        let store = ck.param_store()?;
        let stats = match (ck.stats.get("latent.mean"), ck.stats.get("latent.std")) {
            (Some(m), Some(s)) => Some(LatentStats { mean: m.data().to_vec(), std: s.data().to_vec() }),
            _ => None,
        };
        let mut model = Self { config, store, stats: None, nets: fresh.nets };
        if let Some(st) = stats {
            model.set_stats(st)?;
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaeTrainConfig {
    pub epochs: usize,
    /// Stops early once this many optimizer updates have run.
    pub max_updates: Option<usize>,
    pub batch: usize,
    pub adam: AdamConfig,
    pub clip: f64,
    pub seed: u64,
}

impl Default for PaeTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, max_updates: None, batch: 32, adam: AdamConfig::default(), clip: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean training loss of each (possibly partial) epoch.
    pub epoch_loss: Vec<f64>,
    pub updates: usize,
}

/// Trains on `(segment, anchor)` pairs, then fits latent statistics on the
/// encoded training set.
pub fn train_actpae(
    data: &[(MotionSegment, usize)],
    config: &PaeConfig,
    tcfg: &PaeTrainConfig,
) -> Result<(ActPae, TrainLog)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if tcfg.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut model = ActPae::new(config.clone(), tcfg.seed)?;
    let items = data.iter().map(|(m, a)| model.item(m, *a)).collect::<Result<Vec<_>>>()?;
    let mut rng = Rng::with_stream(tcfg.seed, 1);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = TrainLog::default();
    'outer: for epoch in 0..tcfg.epochs {
        rng.shuffle(&mut order);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(tcfg.batch) {
            if tcfg.max_updates.is_some_and(|m| log.updates >= m) {
                if count > 0 {
                    log.epoch_loss.push(sum / count as f64);
                }
                break 'outer;
            }
            let batch: Vec<Item> = chunk.iter().map(|&i| items[i].clone()).collect();
            let mut g = Graph::new();
            let loss = model.loss_graph(&mut g, &batch)?;
            let lv = g.value(loss).data()[0];
            let mut grads = g.backward(loss)?.params();
            clip_grad_norm(&mut grads, tcfg.clip);
            adam_step(&mut model.store, &grads, &tcfg.adam)?;
            sum += lv;
            count += 1;
            log.updates += 1;
        }
        let mean = sum / count.max(1) as f64;
        log::info!("act-pae epoch {} loss {mean:.6} ({} updates)", epoch + 1, log.updates);
        log.epoch_loss.push(mean);
    }
    let mut latents = Vec::with_capacity(data.len());
    for chunk in data.chunks(64) {
        let batch: Vec<(&MotionSegment, usize)> = chunk.iter().map(|(m, a)| (m, *a)).collect();
        latents.extend(model.encode_batch(&batch)?.into_iter().map(|p| p.to_flat()));
    }
    model.set_stats(LatentStats::fit(&latents)?)?;
    Ok((model, log))
}
