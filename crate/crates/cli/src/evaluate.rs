//! Held-out evaluation: inbetweening against linear interpolation,
//! smoothness of two-segment compositions, and a frequency-feature
//! classifier for conditioned inbetweening.

use std::f64::consts::TAU;

use phasecomp::composer::{compose_pair, derive_transition_spans, inbetween, Stack};
use phasecomp::metrics::{boundary_gap, l2_rot, l2_vel, npss, rms_jerk, EvalReport, EvalWindow};
use phasecomp::motion::{ChannelSelector, MotionSegment};
use phasecomp::synth::{gen_action, ActionTemplate, Corpus, Split};
use phasecomp::Result;

/// A held-out window `x_p | gap | x_s` cut from a test stream with the gap
/// centered on an action boundary.
#[derive(Clone, Debug)]
pub struct GapCase {
    pub stream: usize,
    pub start: usize,
    pub truth: MotionSegment,
    pub context: usize,
    pub gap: usize,
}

impl GapCase {
    pub fn prev(&self) -> MotionSegment {
        self.truth.slice(0, self.context).expect("case bounds")
    }

    pub fn next(&self) -> MotionSegment {
        self.truth.slice(self.context + self.gap, self.truth.frames()).expect("case bounds")
    }
}

/// Up to `count` gap cases, one per test pair in index order, skipping
/// pairs whose stream is too short around the boundary.
pub fn gap_cases(corpus: &Corpus, count: usize, context: usize, gap: usize) -> Result<Vec<GapCase>> {
    let mut out = Vec::new();
    for p in corpus.index.iter().filter(|p| p.split == Split::Test) {
        if out.len() == count {
            break;
        }
        let m = &corpus.streams[p.stream].motion;
        let Some(start) = p.s_start.checked_sub(context + gap / 2) else { continue };
        let end = start + 2 * context + gap;
        if end > m.frames() {
            continue;
        }
        out.push(GapCase { stream: p.stream, start, truth: m.slice(start, end)?, context, gap });
    }
    Ok(out)
}

/// `x_p`, then a per-channel straight line from the last frame of `x_p` to
/// the first frame of `x_s` over `n` new frames, then `x_s`.
pub fn linear_interpolation(x_p: &MotionSegment, n: usize, x_s: &MotionSegment) -> Result<MotionSegment> {
    let (a, b) = (x_p.frame(x_p.frames() - 1), x_s.frame(0));
    let mut data = x_p.data().to_vec();
    for j in 0..n {
        let w = (j + 1) as f64 / (n + 1) as f64;
        data.extend(a.iter().zip(b).map(|(u, v)| u + w * (v - u)));
    }
    data.extend_from_slice(x_s.data());
    MotionSegment::new(data, x_p.frames() + n + x_s.frames(), x_p.fps, x_p.layout.clone())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapScores {
    pub l2_vel: f64,
    pub l2_rot: f64,
    pub npss: f64,
    /// Jerk of the candidate over the gap and one frame on each side.
    pub rms_jerk: f64,
}

/// Scores a candidate for `case`. Velocity error covers the gap and the
/// first frame after it; rotation error and NPSS cover the gap.
pub fn score_gap(case: &GapCase, candidate: &MotionSegment) -> Result<GapScores> {
    let (c, g) = (case.context, case.gap);
    let vel = EvalWindow::range(&case.truth, candidate, c, c + g + 1, ChannelSelector::All)?;
    let rot = EvalWindow::range(&case.truth, candidate, c, c + g, ChannelSelector::rotations())?;
    let spec = EvalWindow::range(&case.truth, candidate, c, c + g, ChannelSelector::All)?;
    let jerk = rms_jerk(&candidate.slice(c - 1, c + g + 1)?, &ChannelSelector::All)?;
    Ok(GapScores { l2_vel: l2_vel(&vel)?, l2_rot: l2_rot(&rot)?, npss: npss(&spec)?.value, rms_jerk: jerk })
}

#[derive(Clone, Debug, Default)]
pub struct GapSummary {
    pub ours: Vec<GapScores>,
    pub linear: Vec<GapScores>,
    /// Every case kept its endpoint latents and input frames exactly.
    pub frozen_ok: bool,
}

impl GapSummary {
    pub fn win_rate(&self, f: impl Fn(&GapScores) -> f64) -> f64 {
        let wins = self.ours.iter().zip(&self.linear).filter(|(o, l)| f(o) < f(l)).count();
        wins as f64 / self.ours.len().max(1) as f64
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Unconditioned inbetweening over `cases`, seeded `seed + i`.
pub fn evaluate_gaps(stack: &Stack, cases: &[GapCase], seed: u64) -> Result<GapSummary> {
    let mut s = GapSummary { frozen_ok: true, ..Default::default() };
    for (i, case) in cases.iter().enumerate() {
        let (x_p, x_s) = (case.prev(), case.next());
        let before = [stack.encode_normalized(&x_p)?, stack.encode_normalized(&x_s)?];
        let r = inbetween(stack, &x_p, &x_s, case.gap, None, seed + i as u64)?;
        let n = r.output.frames();
        s.frozen_ok &= r.frozen == before
            && r.latents[0] == before[0]
            && r.latents[4] == before[1]
            && r.output.slice(0, case.context)?.data() == x_p.data()
            && r.output.slice(n - x_s.frames(), n)?.data() == x_s.data();
        s.ours.push(score_gap(case, &r.output)?);
        s.linear.push(score_gap(case, &linear_interpolation(&x_p, case.gap, &x_s)?)?);
    }
    Ok(s)
}

#[derive(Clone, Debug, Default)]
pub struct SmoothnessSummary {
    pub gaps: Vec<f64>,
    pub transition_jerk: Vec<f64>,
    pub truth_jerk: Vec<f64>,
}

impl SmoothnessSummary {
    pub fn median_gap(&self) -> f64 {
        let mut v = self.gaps.clone();
        v.sort_by(f64::total_cmp);
        match v.len() {
            0 => 0.0,
            n if n % 2 == 1 => v[n / 2],
            n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    }

    pub fn mean_transition_jerk(&self) -> f64 {
        mean(self.transition_jerk.iter().copied())
    }

    pub fn mean_truth_jerk(&self) -> f64 {
        mean(self.truth_jerk.iter().copied())
    }
}

/// Composes the prompts and lengths of the first `count` test pairs (seeded
/// `seed + i`) and compares the transition regions with the ground-truth
/// transitions of the same pairs.
pub fn evaluate_compositions(stack: &Stack, corpus: &Corpus, count: usize, seed: u64) -> Result<SmoothnessSummary> {
    let mut s = SmoothnessSummary::default();
    let sel = ChannelSelector::All;
    for (i, idx) in corpus.index.iter().filter(|p| p.split == Split::Test).take(count).enumerate() {
        let pair = corpus.pair(idx)?;
        let (n_p, n_s) = (pair.x_p.frames(), pair.x_s.frames());
        let c = compose_pair(stack, &pair.c_p, &pair.c_s, n_p, n_s, seed + i as u64)?;
        let t = derive_transition_spans(&[n_p, n_s]).transitions[0];
        s.gaps.push(boundary_gap(&c.output, &[n_p], &sel)?);
        s.transition_jerk.push(rms_jerk(&c.output.slice(t.start, t.end())?, &sel)?);
        s.truth_jerk.push(rms_jerk(&pair.x_t, &sel)?);
    }
    Ok(s)
}

/// Dominant nonzero DFT frequency (Hz) of every channel after removing its
/// mean; channels without any variation get 0.
pub fn frequency_features(m: &MotionSegment) -> Vec<f64> {
    let n = m.frames();
    (0..m.channels())
        .map(|c| {
            let x: Vec<f64> = (0..n).map(|t| m.get(t, c)).collect();
            let mu = x.iter().sum::<f64>() / n as f64;
            let power = |k: usize| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = TAU * (k * t) as f64 / n as f64;
                    re += (v - mu) * a.cos();
                    im -= (v - mu) * a.sin();
                }
                re * re + im * im
            };
            let (best, p) = (1..=n / 2).map(|k| (k, power(k))).fold((0, 0.0), |acc, kp| if kp.1 > acc.1 { kp } else { acc });
            if p <= 1e-12 {
                0.0
            } else {
                best as f64 * m.fps / n as f64
            }
        })
        .collect()
}

/// Nearest class mean of frequency features.
#[derive(Clone, Debug)]
pub struct FrequencyClassifier {
    pub classes: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
}

impl FrequencyClassifier {
    /// Fits on `per_class` generator clips of `n` frames for each action.
    pub fn fit(vocab: &[String], n: usize, fps: f64, idle_amp: f64, per_class: usize, seed: u64) -> Result<Self> {
        let mut centroids = Vec::with_capacity(vocab.len());
        for (ci, name) in vocab.iter().enumerate() {
            let t = ActionTemplate::by_name(name, idle_amp)?;
            let mut acc: Vec<f64> = Vec::new();
            for j in 0..per_class {
                let m = gen_action(&t, n, fps, seed.wrapping_add((ci * per_class + j) as u64))?;
                let f = frequency_features(&m);
                if acc.is_empty() {
                    acc = vec![0.0; f.len()];
                }
                for (a, v) in acc.iter_mut().zip(f) {
                    *a += v / per_class as f64;
                }
            }
            centroids.push(acc);
        }
        Ok(Self { classes: vocab.to_vec(), centroids })
    }

    pub fn classify(&self, m: &MotionSegment) -> &str {
        let f = frequency_features(m);
        let dist = |c: &[f64]| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let best = (0..self.classes.len()).min_by(|&a, &b| dist(&self.centroids[a]).total_cmp(&dist(&self.centroids[b])));
        &self.classes[best.expect("at least one class")]
    }
}

/// Conditioned inbetweening: case `i` is conditioned on `vocab[i % len]` and
/// the generated middle is classified. Returns the accuracy.
pub fn evaluate_conditioned(
    stack: &Stack,
    cases: &[GapCase],
    classifier: &FrequencyClassifier,
    seed: u64,
) -> Result<f64> {
    let mut hits = 0;
    for (i, case) in cases.iter().enumerate() {
        let want = &classifier.classes[i % classifier.classes.len()];
        let r = inbetween(stack, &case.prev(), &case.next(), case.gap, Some(std::slice::from_ref(want)), seed + i as u64)?;
        if classifier.classify(&r.middle) == want {
            hits += 1;
        }
    }
    Ok(hits as f64 / cases.len().max(1) as f64)
}

/// Report rows for the inbetweening comparison and the composition study.
pub fn report(gaps: &GapSummary, smooth: &SmoothnessSummary, conditioned: Option<f64>) -> EvalReport {
    let mut r = EvalReport::default();
    for (group, rows) in [("umib", &gaps.ours), ("linear", &gaps.linear)] {
        r.push("l2_vel", group, mean(rows.iter().map(|s| s.l2_vel)));
        r.push("l2_rot", group, mean(rows.iter().map(|s| s.l2_rot)));
        r.push("npss", group, mean(rows.iter().map(|s| s.npss)));
        r.push("rms_jerk", group, mean(rows.iter().map(|s| s.rms_jerk)));
    }
    r.push("win_rate_l2_vel", "umib", gaps.win_rate(|s| s.l2_vel));
    r.push("win_rate_npss", "umib", gaps.win_rate(|s| s.npss));
    r.push("frozen_contract", "umib", if gaps.frozen_ok { 1.0 } else { 0.0 });
    r.push("rms_jerk", "composed_transition", smooth.mean_transition_jerk());
    r.push("rms_jerk", "truth_transition", smooth.mean_truth_jerk());
    r.push("boundary_gap_median", "composed", smooth.median_gap());
    if let Some(acc) = conditioned {
        r.push("classifier_accuracy", "cmib", acc);
    }
    r
}
