use std::f64::consts::{PI, TAU};

use phasecomp_nn::Rng;

use crate::error::{Error, Result};
use crate::motion::{ChannelLayout, MotionSegment};

/// Seconds spanned by the root heading-change channel.
pub const TURN_HORIZON: f64 = 0.25;

/// Default action vocabulary.
pub const VOCAB: [&str; 6] = ["idle", "walk", "wave", "squat", "spin", "reach"];

/// Resting arm elevation of the waving arm, radians.
const WAVE_BASE: f64 = 2.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionKind {
    Idle,
    Walk,
    Wave,
    Squat,
    Spin,
    Reach,
}

/// Parameter ranges of one action. `freq` is in Hz, `amp` in radians and
/// `drift` is the root rate (m/s forward for walking, rad/s heading for
/// spinning).
#[derive(Clone, Debug, PartialEq)]
pub struct ActionTemplate {
    pub name: String,
    pub kind: ActionKind,
    pub freq: (f64, f64),
    pub amp: (f64, f64),
    pub drift: (f64, f64),
}

impl ActionTemplate {
    pub fn by_name(name: &str, idle_amp: f64) -> Result<Self> {
        let (kind, freq, amp, drift) = match name {
            "idle" => (ActionKind::Idle, (0.2, 0.8), (0.5 * idle_amp, idle_amp), (0.0, 0.0)),
            "walk" => (ActionKind::Walk, (0.8, 1.2), (0.35, 0.55), (0.9, 1.5)),
            "wave" => (ActionKind::Wave, (1.5, 2.5), (0.35, 0.6), (0.0, 0.0)),
            "squat" => (ActionKind::Squat, (0.3, 0.6), (0.8, 1.3), (0.0, 0.0)),
            "spin" => (ActionKind::Spin, (0.8, 1.5), (0.1, 0.2), (2.0, 3.5)),
            "reach" => (ActionKind::Reach, (0.5, 0.9), (1.2, 1.8), (0.0, 0.0)),
            other => return Err(Error::UnknownToken(other.to_string())),
        };
        Ok(Self { name: name.to_string(), kind, freq, amp, drift })
    }

    pub fn sample(&self, rng: &mut Rng) -> ActionInstance {
        let pick = |rng: &mut Rng, (lo, hi): (f64, f64)| if hi > lo { rng.uniform(lo, hi) } else { lo };
        let freq = pick(rng, self.freq);
        let amp = pick(rng, self.amp);
        let mut drift = pick(rng, self.drift);
        let phase = rng.uniform(0.0, TAU);
        let mut aux = [0.0; 36];
        for a in aux.iter_mut() {
            *a = rng.uniform(0.0, 1.0);
        }
        if self.kind == ActionKind::Spin && aux[0] < 0.5 {
            drift = -drift;
        }
        ActionInstance { kind: self.kind, freq, amp, drift, phase, aux, idle_freq: self.freq }
    }
}

/// Joint angles and root rates at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose {
    pub joints: [f64; 6],
    /// Forward and lateral root speed, m/s.
    pub speed: f64,
    pub lateral: f64,
    /// Heading rate, rad/s.
    pub turn: f64,
}

impl Pose {
    pub fn lerp(&self, other: &Pose, w: f64) -> Pose {
        let mix = |a: f64, b: f64| a + w * (b - a);
        let mut joints = [0.0; 6];
        for (j, o) in joints.iter_mut().enumerate() {
            *o = mix(self.joints[j], other.joints[j]);
        }
        Pose {
            joints,
            speed: mix(self.speed, other.speed),
            lateral: mix(self.lateral, other.lateral),
            turn: mix(self.turn, other.turn),
        }
    }

    /// Channel values in the planar layout at frame rate `fps`.
    pub fn channels(&self, fps: f64) -> Vec<f64> {
        let h = self.turn * TURN_HORIZON;
        let mut out = vec![self.speed / fps, self.lateral / fps, h.cos(), h.sin()];
        for j in self.joints {
            out.extend([j.cos(), j.sin()]);
        }
        out
    }
}

/// One sampled set of generator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionInstance {
    pub kind: ActionKind,
    pub freq: f64,
    pub amp: f64,
    pub drift: f64,
    pub phase: f64,
    aux: [f64; 36],
    idle_freq: (f64, f64),
}

pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

impl ActionInstance {
    /// Pose at `t` seconds after the action starts (negative `t` is allowed
    /// and extends the trajectory backwards).
    pub fn pose(&self, t: f64) -> Pose {
        let w = TAU * self.freq;
        let ph = w * t + self.phase;
        let mut p = Pose::default();
        match self.kind {
            ActionKind::Idle => {
                let (lo, hi) = self.idle_freq;
                for j in 0..6 {
                    p.joints[j] = (0..3)
                        .map(|i| {
                            let f = lo + (hi - lo) * self.aux[6 * j + 2 * i];
                            let phi = TAU * self.aux[6 * j + 2 * i + 1];
                            self.amp / 3.0 * (TAU * f * t + phi).sin()
                        })
                        .sum();
                }
            }
            ActionKind::Walk => {
                let a = self.amp;
                p.joints = [
                    a * ph.sin(),
                    1.2 * a * 0.5 * (1.0 - (ph + 0.5).cos()),
                    a * (ph + PI).sin(),
                    1.2 * a * 0.5 * (1.0 - (ph + PI + 0.5).cos()),
                    0.6 * a * (ph + PI).sin(),
                    0.6 * a * ph.sin(),
                ];
                p.speed = self.drift * (1.0 + 0.1 * (2.0 * ph).sin());
                p.lateral = 0.05 * ph.sin();
            }
            ActionKind::Wave => {
                p.joints[5] = WAVE_BASE + self.amp * ph.sin();
                p.joints[4] = 0.1;
            }
            ActionKind::Squat => {
                let u = 0.5 * (1.0 - ph.cos());
                let k = self.amp * u;
                p.joints = [0.8 * k, k, 0.8 * k, k, 0.9 * k, 0.9 * k];
            }
            ActionKind::Spin => {
                p.turn = self.drift;
                let arm = 1.4 + self.amp * ph.sin();
                p.joints = [0.15 * (2.0 * ph).sin(), 0.1, -0.15 * (2.0 * ph).sin(), 0.1, arm, arm];
            }
            ActionKind::Reach => {
                let r = self.amp * smoothstep(t * self.freq);
                let (main, other) = if self.aux[0] < 0.5 { (4, 5) } else { (5, 4) };
                p.joints[main] = r;
                p.joints[other] = 0.1 * r;
                p.joints[0] = 0.15 * r / self.amp;
                p.joints[2] = 0.15 * r / self.amp;
            }
        }
        p
    }
}

/// Generates `n` frames of one action. Uses RNG stream 0 of `seed`, the same
/// draw a single-action stream makes.
pub fn gen_action(template: &ActionTemplate, n: usize, fps: f64, seed: u64) -> Result<MotionSegment> {
    let inst = template.sample(&mut Rng::with_stream(seed, 0));
    let data = (0..n).flat_map(|f| inst.pose(f as f64 / fps).channels(fps)).collect();
    MotionSegment::new(data, n, fps, ChannelLayout::planar())?.with_labels(vec![template.name.clone(); n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_pairs_unit_norm() {
        for name in VOCAB {
            let t = ActionTemplate::by_name(name, 0.05).unwrap();
            let m = gen_action(&t, 60, 24.0, 3).unwrap();
            for f in 0..m.frames() {
                for (c, s) in m.layout.rotation_pairs() {
                    let norm = (m.get(f, c).powi(2) + m.get(f, s).powi(2)).sqrt();
                    assert!((norm - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn unknown_template() {
        assert!(matches!(ActionTemplate::by_name("jump", 0.05), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn sampled_parameters_in_range() {
        for name in VOCAB {
            let t = ActionTemplate::by_name(name, 0.05).unwrap();
            for seed in 0..20 {
                let inst = t.sample(&mut Rng::new(seed));
                assert!(inst.freq >= t.freq.0 && inst.freq <= t.freq.1);
                assert!(inst.amp >= t.amp.0 && inst.amp <= t.amp.1);
                assert!(inst.drift.abs() >= t.drift.0 && inst.drift.abs() <= t.drift.1);
            }
        }
    }
}
