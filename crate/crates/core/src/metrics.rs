//! Geometric motion metrics.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::motion::{ChannelRole, ChannelSelector, MotionSegment};

/// A scored comparison: reference and candidate of identical shape, the
/// frames to score and the channels to look at.
#[derive(Clone, Debug)]
pub struct EvalWindow<'a> {
    pub reference: &'a MotionSegment,
    pub candidate: &'a MotionSegment,
    pub mask: Vec<usize>,
    pub selector: ChannelSelector,
}

impl<'a> EvalWindow<'a> {
    pub fn new(
        reference: &'a MotionSegment,
        candidate: &'a MotionSegment,
        mask: Vec<usize>,
        selector: ChannelSelector,
    ) -> Result<Self> {
        if reference.layout != candidate.layout {
            return Err(Error::ChannelMismatch { expected: reference.channels(), got: candidate.channels() });
        }
        if reference.frames() != candidate.frames() {
            return Err(Error::invalid(format!(
                "reference has {} frames, candidate {}",
                reference.frames(),
                candidate.frames()
            )));
        }
        if mask.is_empty() || mask.iter().any(|&t| t >= reference.frames()) {
            return Err(Error::invalid("mask must be nonempty and inside the clip"));
        }
        if selector.resolve(&reference.layout).is_empty() {
            return Err(Error::invalid("selector picks no channels"));
        }
        Ok(Self { reference, candidate, mask, selector })
    }

    /// Every frame in `start..end`.
    pub fn range(
        reference: &'a MotionSegment,
        candidate: &'a MotionSegment,
        start: usize,
        end: usize,
        selector: ChannelSelector,
    ) -> Result<Self> {
        Self::new(reference, candidate, (start..end).collect(), selector)
    }

    fn channels(&self) -> Vec<usize> {
        self.selector.resolve(&self.reference.layout)
    }
}

/// Mean over masked frames of `|v_cand - v_ref|`, with velocity the
/// difference to the previous frame.
pub fn l2_vel(w: &EvalWindow) -> Result<f64> {
    if w.mask.len() < 2 {
        return Err(Error::invalid("velocity error needs at least two masked frames"));
    }
    if w.mask.contains(&0) {
        return Err(Error::invalid("masked frame 0 has no predecessor"));
    }
    let ch = w.channels();
    let total: f64 = w
        .mask
        .iter()
        .map(|&t| {
            ch.iter()
                .map(|&c| {
                    let vr = w.reference.get(t, c) - w.reference.get(t - 1, c);
                    let vc = w.candidate.get(t, c) - w.candidate.get(t - 1, c);
                    (vc - vr).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / w.mask.len() as f64)
}

/// Mean over masked frames of the Euclidean distance between the selected
/// rotation channels.
pub fn l2_rot(w: &EvalWindow) -> Result<f64> {
    let layout = &w.reference.layout;
    let rot: Vec<usize> = w
        .channels()
        .into_iter()
        .filter(|&c| {
            layout.channels_with_role(ChannelRole::RootRotation).contains(&c)
                || layout.channels_with_role(ChannelRole::JointRotation).contains(&c)
        })
        .collect();
    if rot.is_empty() {
        return Err(Error::invalid("selector excludes every rotation channel"));
    }
    let total: f64 = w
        .mask
        .iter()
        .map(|&t| rot.iter().map(|&c| (w.candidate.get(t, c) - w.reference.get(t, c)).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(total / w.mask.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Npss {
    pub value: f64,
    /// The reference carries no power at all; `value` is 0 by convention.
    pub zero_reference: bool,
}

/// One-sided power spectrum of `x` (bins `0..=len/2`).
fn power_spectrum(planner: &mut FftPlanner<f64>, x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// Earth mover's distance between two spectra, in bins. A spectrum with no
/// power is treated as all mass at bin 0.
fn spectral_emd(a: &[f64], b: &[f64]) -> f64 {
    let unit = |s: &[f64]| -> Vec<f64> {
        let total: f64 = s.iter().sum();
        if total > 0.0 {
            s.iter().map(|v| v / total).collect()
        } else {
            let mut u = vec![0.0; s.len()];
            u[0] = 1.0;
            u
        }
    };
    let (a, b) = (unit(a), unit(b));
    let (mut ca, mut cb, mut d) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        ca += x;
        cb += y;
        d += (ca - cb).abs();
    }
    d
}

/// Normalized power spectrum similarity over the masked frames (taken in
/// mask order): per channel, the earth mover's distance between unit-sum
/// power spectra, averaged with the reference's spectral power as weight.
pub fn npss(w: &EvalWindow) -> Result<Npss> {
    if w.mask.len() < 4 {
        return Err(Error::invalid("NPSS needs at least four masked frames"));
    }
    let mut planner = FftPlanner::new();
    let (mut num, mut den) = (0.0, 0.0);
    for c in w.channels() {
        let r: Vec<f64> = w.mask.iter().map(|&t| w.reference.get(t, c)).collect();
        let x: Vec<f64> = w.mask.iter().map(|&t| w.candidate.get(t, c)).collect();
        let (pr, px) = (power_spectrum(&mut planner, &r), power_spectrum(&mut planner, &x));
        let weight: f64 = pr.iter().sum();
        num += weight * spectral_emd(&pr, &px);
        den += weight;
    }
    if den == 0.0 {
        log::warn!("NPSS reference has no spectral power; reporting 0");
        return Ok(Npss { value: 0.0, zero_reference: true });
    }
    Ok(Npss { value: num / den, zero_reference: false })
}

/// Root mean square of the third time derivative (third difference times
/// fps cubed) over all frames and selected channels.
pub fn rms_jerk(m: &MotionSegment, selector: &ChannelSelector) -> Result<f64> {
    let n = m.frames();
    if n < 4 {
        return Err(Error::invalid(format!("jerk needs at least 4 frames, got {n}")));
    }
    let ch = selector.resolve(&m.layout);
    if ch.is_empty() {
        return Err(Error::invalid("selector picks no channels"));
    }
    let f3 = m.fps.powi(3);
    let mut sum = 0.0;
    for t in 3..n {
        for &c in &ch {
            let j = m.get(t, c) - 3.0 * m.get(t - 1, c) + 3.0 * m.get(t - 2, c) - m.get(t - 3, c);
            sum += (j * f3).powi(2);
        }
    }
    Ok((sum / ((n - 3) * ch.len()) as f64).sqrt())
}

/// Largest frame-to-frame step at the given boundaries (frame `b` against
/// `b - 1`) relative to the median step elsewhere. A sequence with zero
/// median step scores 0.
pub fn boundary_gap(seq: &MotionSegment, boundaries: &[usize], selector: &ChannelSelector) -> Result<f64> {
    let n = seq.frames();
    if let Some(&b) = boundaries.iter().find(|&&b| b == 0 || b >= n) {
        return Err(Error::invalid(format!("boundary {b} outside [1, {})", n)));
    }
    let ch = selector.resolve(&seq.layout);
    let step = |t: usize| ch.iter().map(|&c| (seq.get(t, c) - seq.get(t - 1, c)).powi(2)).sum::<f64>().sqrt();
    let mut inner: Vec<f64> = (1..n).filter(|t| !boundaries.contains(t)).map(step).collect();
    if inner.is_empty() {
        return Ok(0.0);
    }
    inner.sort_by(f64::total_cmp);
    let mid = inner.len() / 2;
    let median = if inner.len() % 2 == 1 { inner[mid] } else { 0.5 * (inner[mid - 1] + inner[mid]) };
    if median == 0.0 {
        return Ok(0.0);
    }
    Ok(boundaries.iter().map(|&b| step(b)).fold(0.0, f64::max) / median)
}

/// Rows of `(metric, group, value)` in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<(String, String, f64)>,
}

impl EvalReport {
    pub fn push(&mut self, metric: &str, group: &str, value: f64) {
        self.rows.push((metric.to_string(), group.to_string(), value));
    }

    pub fn get(&self, metric: &str, group: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == metric && r.1 == group).map(|r| r.2)
    }

    /// Tab-separated table with a header line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tgroup\tvalue\n");
        for (m, g, v) in &self.rows {
            s.push_str(&format!("{m}\t{g}\t{v:?}\n"));
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::format("report", msg);
        let mut lines = text.lines();
        if lines.next() != Some("metric\tgroup\tvalue") {
            return Err(bad("missing header".into()));
        }
        let mut r = Self::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            let [m, g, v] = f[..] else { return Err(bad(format!("expected 3 fields: {line}"))) };
            r.push(m, g, v.parse().map_err(|_| bad(format!("bad value `{v}`")))?);
        }
        Ok(r)
    }

    pub fn summary(&self) -> String {
        let w = self.rows.iter().map(|r| r.0.len() + r.1.len() + 3).max().unwrap_or(0);
        self.rows
            .iter()
            .map(|(m, g, v)| format!("{:<w$} {v:.6}\n", format!("{m} [{g}]")))
            .collect()
    }
}
