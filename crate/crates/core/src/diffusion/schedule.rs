use phasecomp_nn::checkpoint::sha256_hex;

use crate::error::{Error, Result};
use crate::kv::{self, KvWriter};

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

/// Linear beta ramp with its cumulative products and the descending,
/// evenly spaced inference timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    pub k_train: usize,
    pub k_infer: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub betas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// `k_infer` training-step indices, descending; the last is 0.
    pub timesteps: Vec<usize>,
}

pub fn make_schedule(k_train: usize, k_infer: usize) -> Result<DiffusionSchedule> {
    DiffusionSchedule::linear(k_train, k_infer, BETA_START, BETA_END)
}

impl DiffusionSchedule {
    pub fn linear(k_train: usize, k_infer: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if k_train == 0 || k_infer == 0 || k_infer > k_train {
            return Err(Error::invalid(format!("need 1 <= k_infer <= k_train, got {k_infer} and {k_train}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!("bad beta range [{beta_start}, {beta_end}]")));
        }
        let betas: Vec<f64> = if k_train == 1 {
            vec![beta_start]
        } else {
            (0..k_train)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (k_train - 1) as f64)
                .collect()
        };
        let mut alpha_bar = Vec::with_capacity(k_train);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let stride = k_train / k_infer;
        let timesteps = (0..k_infer).rev().map(|i| i * stride).collect();
        Ok(Self { k_train, k_infer, beta_start, beta_end, betas, alpha_bar, timesteps })
    }

    /// Cumulative alpha at step `k`; `None` is the clean end (1).
    pub fn alpha_bar_at(&self, k: Option<usize>) -> Result<f64> {
        match k {
            None => Ok(1.0),
            Some(k) => self
                .alpha_bar
                .get(k)
                .copied()
                .ok_or_else(|| Error::invalid(format!("step {k} outside [0, {})", self.k_train))),
        }
    }

    /// Timestep after inference iteration `i`, `None` after the last one.
    pub fn prev_timestep(&self, i: usize) -> Option<usize> {
        self.timesteps.get(i + 1).copied()
    }

    pub fn to_text(&self) -> String {
        KvWriter::new()
            .put("schedule", "linear")
            .put("k_train", self.k_train)
            .put("k_infer", self.k_infer)
            .put("beta_start", format!("{:?}", self.beta_start))
            .put("beta_end", format!("{:?}", self.beta_end))
            .finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        if kv::get::<String>(text, "schedule")? != "linear" {
            return Err(Error::format("schedule", "only the linear schedule is supported"));
        }
        Self::linear(
            kv::get(text, "k_train")?,
            kv::get(text, "k_infer")?,
            kv::get(text, "beta_start")?,
            kv::get(text, "beta_end")?,
        )
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("latent lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `sqrt(ab) * p0 + sqrt(1 - ab) * eps` at step `k`.
pub fn add_noise(p0: &[f64], eps: &[f64], k: Option<usize>, sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    check_len(p0, eps)?;
    let ab = sched.alpha_bar_at(k)?;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(p0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Clean-latent estimate implied by a noise prediction.
pub fn eps_to_x0(pk: &[f64], eps: &[f64], k: Option<usize>, sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    check_len(pk, eps)?;
    let ab = sched.alpha_bar_at(k)?;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(pk.iter().zip(eps).map(|(x, e)| (x - s * e) / a).collect())
}

/// Deterministic DDIM update from `k` to `k_prev`; returns the next latent
/// and the clean-latent estimate.
pub fn ddim_step(
    pk: &[f64],
    eps: &[f64],
    k: usize,
    k_prev: Option<usize>,
    sched: &DiffusionSchedule,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if k_prev.is_some_and(|p| p >= k) {
        return Err(Error::invalid(format!("k_prev {k_prev:?} must precede k = {k}")));
    }
    let x0 = eps_to_x0(pk, eps, Some(k), sched)?;
    let next = add_noise(&x0, eps, k_prev, sched)?;
    Ok((next, x0))
}
