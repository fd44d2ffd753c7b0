use phasecomp_nn::Rng;

use super::actions::{smoothstep, ActionInstance, ActionTemplate};
use crate::error::{Error, Result};
use crate::motion::{ChannelLayout, MotionSegment};

/// One action of a stream and its nominal frame span.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpan {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Frame spans of consecutive actions with the given lengths.
pub fn spans(actions: &[(String, usize)]) -> Vec<ActionSpan> {
    let mut start = 0;
    actions
        .iter()
        .map(|(name, len)| {
            let s = ActionSpan { name: name.clone(), start, len: *len };
            start += len;
            s
        })
        .collect()
}

/// Chains actions, crossfading generator output with a smoothstep weight
/// over `window` frames centered on each boundary. Action `i` draws its
/// parameters from RNG stream `i` of `seed` and runs on its own clock that
/// starts at its nominal first frame; an action repeated back to back
/// continues as one uninterrupted instance.
pub fn gen_stream(
    actions: &[(String, usize)],
    fps: f64,
    window: usize,
    idle_amp: f64,
    seed: u64,
) -> Result<MotionSegment> {
    if actions.is_empty() {
        return Err(Error::invalid("stream needs at least one action"));
    }
    let spans = spans(actions);
    // A repeated action continues the previous instance on the same clock.
    let mut insts: Vec<ActionInstance> = Vec::with_capacity(actions.len());
    let mut origin: Vec<usize> = Vec::with_capacity(actions.len());
    for (i, (name, _)) in actions.iter().enumerate() {
        if i > 0 && actions[i - 1].0 == *name {
            insts.push(insts[i - 1].clone());
            origin.push(origin[i - 1]);
        } else {
            insts.push(ActionTemplate::by_name(name, idle_amp)?.sample(&mut Rng::with_stream(seed, i as u64)));
            origin.push(spans[i].start);
        }
    }
    let n: usize = actions.iter().map(|a| a.1).sum();
    let half = window as f64 / 2.0;
    let mut data = Vec::with_capacity(n * 16);
    let mut labels = Vec::with_capacity(n);
    let mut cur = 0;
    for f in 0..n {
        while cur + 1 < spans.len() && f >= spans[cur + 1].start {
            cur += 1;
        }
        let local = |i: usize| (f as f64 - origin[i] as f64) / fps;
        let mut pose = insts[cur].pose(local(cur));
        let mut label = spans[cur].name.clone();
        // Fade in from the previous action near this action's start, or out
        // toward the next one near its end.
        let blend_with = if cur > 0 && (f as f64) < spans[cur].start as f64 + half {
            Some((cur - 1, cur, spans[cur].start))
        } else if cur + 1 < spans.len() && (f as f64) >= spans[cur + 1].start as f64 - half {
            Some((cur, cur + 1, spans[cur + 1].start))
        } else {
            None
        };
        if window > 0 {
            if let Some((a, b, boundary)) = blend_with.filter(|(a, b, _)| spans[*a].name != spans[*b].name) {
                let w = smoothstep((f as f64 - (boundary as f64 - half)) / window as f64);
                pose = insts[a].pose(local(a)).lerp(&insts[b].pose(local(b)), w);
                label = format!("{}>{}", spans[a].name, spans[b].name);
            }
        }
        data.extend(pose.channels(fps));
        labels.push(label);
    }
    MotionSegment::new(data, n, fps, ChannelLayout::planar())?.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::actions::gen_action;

    fn acts(list: &[(&str, usize)]) -> Vec<(String, usize)> {
        list.iter().map(|(a, n)| (a.to_string(), *n)).collect()
    }

    fn max_delta(m: &MotionSegment, from: usize, to: usize) -> f64 {
        (from..=to)
            .map(|t| {
                m.frame(t)
                    .iter()
                    .zip(m.frame(t + 1))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_action_equals_gen_action() {
        let s = gen_stream(&acts(&[("wave", 40)]), 24.0, 12, 0.05, 9).unwrap();
        let a = gen_action(&ActionTemplate::by_name("wave", 0.05).unwrap(), 40, 24.0, 9).unwrap();
        assert_eq!(s, a);
    }

    #[test]
    fn idle_idle_has_no_seam() {
        let s = gen_stream(&acts(&[("idle", 48), ("idle", 48)]), 24.0, 12, 0.05, 4).unwrap();
        let within = max_delta(&s, 0, 46).max(max_delta(&s, 48, 94));
        let seam = max_delta(&s, 47, 47);
        assert!(seam <= within, "{seam} vs {within}");
    }

    #[test]
    fn walk_squat_seam_is_bounded() {
        let s = gen_stream(&acts(&[("walk", 48), ("squat", 48)]), 24.0, 12, 0.05, 1).unwrap();
        let within = max_delta(&s, 0, 40).max(max_delta(&s, 55, 94));
        let seam = max_delta(&s, 41, 54);
        assert!(seam <= 2.0 * within, "{seam} vs {within}");
    }

    #[test]
    fn labels_mark_blends() {
        let s = gen_stream(&acts(&[("walk", 30), ("wave", 30)]), 24.0, 12, 0.05, 1).unwrap();
        let l = s.labels.as_ref().unwrap();
        assert_eq!(l[0], "walk");
        assert_eq!(l[24], "walk>wave");
        assert_eq!(l[35], "walk>wave");
        assert_eq!(l[36], "wave");
    }
}
