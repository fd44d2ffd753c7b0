use phasecomp_nn::checkpoint::sha256_hex;
use phasecomp_nn::Tensor;

use super::window::TimeWindow;
use crate::error::{Error, Result};

/// Frequency, amplitude, offset and shift vectors of one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseParams {
    pub f: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    pub normalized: bool,
}

impl PhaseParams {
    pub fn q(&self) -> usize {
        self.f.len()
    }

    /// Flattened `[F, A, B, S]`, length `4Q`.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.f, &self.a, &self.b, &self.s].into_iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[f64], normalized: bool) -> Result<Self> {
        if flat.is_empty() || flat.len() % 4 != 0 {
            return Err(Error::invalid(format!("latent of length {} is not 4Q", flat.len())));
        }
        let q = flat.len() / 4;
        Ok(Self {
            f: flat[..q].to_vec(),
            a: flat[q..2 * q].to_vec(),
            b: flat[2 * q..3 * q].to_vec(),
            s: flat[3 * q..].to_vec(),
            normalized,
        })
    }

    /// `4 x Q` matrix with rows F, A, B, S.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(4, self.q(), self.to_flat()).expect("4Q values")
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Evaluates `A sin(F (T - S)) + B` entrywise; returns an `N x Q` signal.
pub fn phase_reparameterize(p: &PhaseParams, w: &TimeWindow) -> Result<Tensor> {
    if p.normalized {
        return Err(Error::invalid("reparameterization needs unnormalized phase parameters"));
    }
    let (n, q) = w.t.dims2();
    if q != p.q() {
        return Err(Error::invalid(format!("window has {q} columns, latent has Q = {}", p.q())));
    }
    let mut out = Vec::with_capacity(n * q);
    for r in 0..n {
        let t = w.t.row_slice(r);
        for j in 0..q {
            out.push(p.a[j] * (p.f[j] * (t[j] - p.s[j])).sin() + p.b[j]);
        }
    }
    Ok(Tensor::matrix(n, q, out)?)
}

/// Per-entry mean and standard deviation of flattened latents.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Floor on the stored deviation so constant latent entries stay invertible.
const STD_FLOOR: f64 = 1e-8;

impl LatentStats {
    pub fn fit(latents: &[Vec<f64>]) -> Result<Self> {
        let first = latents.first().ok_or(Error::EmptyDataset)?;
        let dim = first.len();
        let n = latents.len() as f64;
        let mut mean = vec![0.0; dim];
        for l in latents {
            if l.len() != dim {
                return Err(Error::invalid("latents of different lengths"));
            }
            for (m, v) in mean.iter_mut().zip(l) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for l in latents {
            for ((s, v), m) in var.iter_mut().zip(l).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, p: &PhaseParams) -> Result<PhaseParams> {
        if p.normalized {
            return Ok(p.clone());
        }
        let flat = self.normalize_flat(&p.to_flat())?;
        PhaseParams::from_flat(&flat, true)
    }

    pub fn denormalize(&self, p: &PhaseParams) -> Result<PhaseParams> {
        if !p.normalized {
            return Ok(p.clone());
        }
        let flat = self.denormalize_flat(&p.to_flat())?;
        PhaseParams::from_flat(&flat, false)
    }

    pub fn normalize_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect())
    }

    pub fn denormalize_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::invalid(format!("latent length {len}, stats cover {}", self.dim())));
        }
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of mean then std.
    pub fn digest(&self) -> String {
        let bytes: Vec<u8> = self.mean.iter().chain(&self.std).flat_map(|v| v.to_le_bytes()).collect();
        sha256_hex(&bytes)
    }
}
