use phasecomp_nn::{adam_step, clip_grad_norm, AdamConfig, Graph, Rng};

use super::denoiser::{Condition, DenoiseInput, Denoiser, DenoiserConfig, DenoiserKind};
use super::schedule::{add_noise, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::phase::{ActPae, LatentStats};
use crate::phase::pae::TrainLog;
use crate::synth::Pair;

/// Normalized latents of one training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair {
    pub p: Vec<f64>,
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub c_p: Vec<String>,
    pub c_s: Vec<String>,
}

/// Encodes and normalizes every pair with the autoencoder's statistics.
pub fn encode_pairs(pae: &ActPae, pairs: &[Pair]) -> Result<Vec<LatentPair>> {
    let stats = pae.stats()?;
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(32) {
        let mut batch = Vec::with_capacity(3 * chunk.len());
        for p in chunk {
            batch.push((&p.x_p, ActPae::center(p.x_p.frames())));
            batch.push((&p.x_t, p.anchor_t));
            batch.push((&p.x_s, ActPae::center(p.x_s.frames())));
        }
        let enc = pae.encode_batch(&batch)?;
        for (p, lat) in chunk.iter().zip(enc.chunks(3)) {
            let norm = |i: usize| stats.normalize_flat(&lat[i].to_flat());
            out.push(LatentPair { p: norm(0)?, t: norm(1)?, s: norm(2)?, c_p: p.c_p.clone(), c_s: p.c_s.clone() });
        }
    }
    Ok(out)
}

/// One training target with its condition, borrowed from a [`LatentPair`].
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub target: &'a [f64],
    pub cond: Condition<'a>,
}

/// Training terms of each model: the semantic model denoises both semantic
/// latents under their text; the forward model denoises a latent given its
/// predecessor's clean latent, the backward model given its successor's.
pub fn samples(kind: DenoiserKind, data: &[LatentPair]) -> Vec<Sample<'_>> {
    let mut out = Vec::with_capacity(2 * data.len());
    for d in data {
        match kind {
            DenoiserKind::Spdm => {
                out.push(Sample { target: &d.p, cond: Condition::Text(&d.c_p) });
                out.push(Sample { target: &d.s, cond: Condition::Text(&d.c_s) });
            }
            DenoiserKind::TpdmForward => {
                out.push(Sample { target: &d.t, cond: Condition::Neighbor(&d.p) });
                out.push(Sample { target: &d.s, cond: Condition::Neighbor(&d.t) });
            }
            DenoiserKind::TpdmBackward => {
                out.push(Sample { target: &d.p, cond: Condition::Neighbor(&d.t) });
                out.push(Sample { target: &d.t, cond: Condition::Neighbor(&d.s) });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserTrainConfig {
    pub epochs: usize,
    pub max_updates: Option<usize>,
    pub batch: usize,
    pub adam: AdamConfig,
    pub clip: f64,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, max_updates: None, batch: 64, adam: AdamConfig::default(), clip: 1.0, seed: 0 }
    }
}

/// Noised inputs and noise targets for `batch`, drawing a uniform step and
/// a standard-normal noise vector per sample.
fn noised<'a>(
    batch: &[Sample<'a>],
    sched: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<(Vec<(usize, Vec<f64>)>, Vec<Vec<f64>>)> {
    let mut noisy = Vec::with_capacity(batch.len());
    let mut eps = Vec::with_capacity(batch.len());
    for s in batch {
        let k = rng.below(sched.k_train);
        let e = rng.normal_vec(s.target.len());
        noisy.push((k, add_noise(s.target, &e, Some(k), sched)?));
        eps.push(e);
    }
    Ok((noisy, eps))
}

fn inputs<'a>(batch: &[Sample<'a>], noisy: &'a [(usize, Vec<f64>)]) -> Vec<DenoiseInput<'a>> {
    batch
        .iter()
        .zip(noisy)
        .map(|(s, (k, pk))| DenoiseInput { k: *k, pk, cond: s.cond })
        .collect()
}

/// Trains one model with the mean absolute noise-prediction error.
pub fn train_denoiser(
    kind: DenoiserKind,
    data: &[LatentPair],
    stats: &LatentStats,
    config: &DenoiserConfig,
    sched: &DiffusionSchedule,
    tcfg: &DenoiserTrainConfig,
) -> Result<(Denoiser, TrainLog)> {
    let all = samples(kind, data);
    if all.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if tcfg.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let stream = kind as u64;
    let mut model = Denoiser::new(kind, config.clone(), sched.clone(), stats.clone(), tcfg.seed.wrapping_add(stream))?;
    let mut order_rng = Rng::with_stream(tcfg.seed, 10 + stream);
    let mut noise_rng = Rng::with_stream(tcfg.seed, 20 + stream);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut log = TrainLog::default();
    'outer: for epoch in 0..tcfg.epochs {
        order_rng.shuffle(&mut order);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(tcfg.batch) {
            if tcfg.max_updates.is_some_and(|m| log.updates >= m) {
                if count > 0 {
                    log.epoch_loss.push(sum / count as f64);
                }
                break 'outer;
            }
            let batch: Vec<Sample> = chunk.iter().map(|&i| all[i]).collect();
            let (noisy, eps) = noised(&batch, sched, &mut noise_rng)?;
            let inp = inputs(&batch, &noisy);
            let mut g = Graph::new();
            let loss = model.loss_on_graph(&mut g, &inp, &eps)?;
            sum += g.value(loss).data()[0];
            let mut grads = g.backward(loss)?.params();
            clip_grad_norm(&mut grads, tcfg.clip);
            adam_step(&mut model.store, &grads, &tcfg.adam)?;
            count += 1;
            log.updates += 1;
        }
        let mean = sum / count.max(1) as f64;
        log::info!("{} epoch {} loss {mean:.6} ({} updates)", kind.as_str(), epoch + 1, log.updates);
        log.epoch_loss.push(mean);
    }
    Ok((model, log))
}

/// Held-out mean absolute error of the model and of the all-zero predictor
/// on the same noised samples.
pub fn heldout_l1(model: &Denoiser, data: &[LatentPair], seed: u64) -> Result<(f64, f64)> {
    let all = samples(model.kind, data);
    if all.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = Rng::with_stream(seed, 30 + model.kind as u64);
    let (mut m, mut z, mut n) = (0.0, 0.0, 0.0);
    for chunk in all.chunks(64) {
        let (noisy, eps) = noised(chunk, &model.schedule, &mut rng)?;
        let pred = model.predict(&inputs(chunk, &noisy))?;
        for (p, e) in pred.iter().zip(&eps) {
            for (a, b) in p.iter().zip(e) {
                m += (a - b).abs();
                z += b.abs();
                n += 1.0;
            }
        }
    }
    Ok((m / n, z / n))
}

/// The three models of a stack, trained one after another.
pub fn train_denoisers(
    data: &[LatentPair],
    stats: &LatentStats,
    config: &DenoiserConfig,
    sched: &DiffusionSchedule,
    tcfg: &DenoiserTrainConfig,
) -> Result<[(Denoiser, TrainLog); 3]> {
    Ok([
        train_denoiser(DenoiserKind::Spdm, data, stats, config, sched, tcfg)?,
        train_denoiser(DenoiserKind::TpdmForward, data, stats, config, sched, tcfg)?,
        train_denoiser(DenoiserKind::TpdmBackward, data, stats, config, sched, tcfg)?,
    ])
}
