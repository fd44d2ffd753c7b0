use super::chain::Span;
use crate::error::{Error, Result};
use crate::motion::MotionSegment;

/// Per output frame, the contributing segments and their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendPlan {
    pub frames: Vec<Vec<(usize, f64)>>,
}

impl BlendPlan {
    /// Crossfade over spans on a shared timeline. Each frame is covered by
    /// one or two spans; where two overlap, the later-starting one ramps in
    /// linearly (weight `j / L` at overlap frame `j` of `L`).
    pub fn crossfade(spans: &[Span], total: usize) -> Result<Self> {
        let mut frames = Vec::with_capacity(total);
        for t in 0..total {
            let mut cover: Vec<usize> = (0..spans.len()).filter(|&i| spans[i].start <= t && t < spans[i].end()).collect();
            cover.sort_by_key(|&i| (spans[i].start, i));
            frames.push(match cover[..] {
                [] => return Err(Error::invalid(format!("frame {t} is not covered by any segment"))),
                [only] => vec![(only, 1.0)],
                [a, b] => {
                    let (lo, hi) = (spans[b].start, spans[a].end().min(spans[b].end()));
                    let w = (t - lo) as f64 / (hi - lo) as f64;
                    vec![(a, 1.0 - w), (b, w)]
                }
                _ => return Err(Error::invalid(format!("frame {t} is covered by more than two segments"))),
            });
        }
        Ok(Self { frames })
    }

    /// Layout of an inbetweening output. Segment ids: 0 = preceding input,
    /// 1 = first transition, 2 = generated middle, 3 = second transition,
    /// 4 = following input. Input frames have weight 1 on their own segment;
    /// the generated region fades from the first transition (weight 1 on its
    /// first frame) into the middle and from the middle into the second
    /// transition (weight 1 on its last frame).
    pub fn inbetween(n_p: usize, n_i: usize, n_s: usize) -> Result<Self> {
        if n_i < 2 {
            return Err(Error::invalid("inbetween region needs at least 2 frames"));
        }
        let h = n_i / 2;
        let mut frames = Vec::with_capacity(n_p + n_i + n_s);
        frames.extend((0..n_p).map(|_| vec![(0, 1.0)]));
        for j in 0..h {
            let w = j as f64 / h as f64;
            frames.push(vec![(1, 1.0 - w), (2, w)]);
        }
        let l = n_i - h;
        for j in 0..l {
            let w = (j + 1) as f64 / l as f64;
            frames.push(vec![(2, 1.0 - w), (3, w)]);
        }
        frames.extend((0..n_s).map(|_| vec![(4, 1.0)]));
        Ok(Self { frames })
    }

    /// One line per frame: `frame id:weight ...`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# frame segment:weight ...\n");
        for (t, f) in self.frames.iter().enumerate() {
            s.push_str(&t.to_string());
            for (id, w) in f {
                s.push_str(&format!(" {id}:{w:?}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Per-frame convex combination of `parts`, each placed at its global
/// offset. Contributions with zero weight are skipped, so a part need not
/// cover frames where it does not contribute.
pub fn blend(parts: &[(usize, &MotionSegment)], plan: &BlendPlan) -> Result<MotionSegment> {
    let first = parts.first().ok_or_else(|| Error::invalid("nothing to blend"))?.1;
    let e = first.channels();
    if parts.iter().any(|(_, m)| m.layout != first.layout) {
        return Err(Error::ChannelMismatch { expected: e, got: parts.iter().map(|p| p.1.channels()).find(|&c| c != e).unwrap_or(e) });
    }
    let mut data = Vec::with_capacity(plan.frames.len() * e);
    let mut labels = Vec::with_capacity(plan.frames.len());
    for (t, contrib) in plan.frames.iter().enumerate() {
        let mut row = vec![0.0; e];
        let mut label: Option<String> = None;
        for &(id, w) in contrib {
            if w == 0.0 {
                continue;
            }
            let (off, m) = parts.get(id).ok_or_else(|| Error::invalid(format!("plan refers to missing segment {id}")))?;
            let local = t
                .checked_sub(*off)
                .filter(|&l| l < m.frames())
                .ok_or_else(|| Error::invalid(format!("segment {id} does not cover frame {t}")))?;
            if w == 1.0 {
                // Copied so that sole contributors pass through bit for bit.
                row.copy_from_slice(m.frame(local));
            } else {
                for (r, v) in row.iter_mut().zip(m.frame(local)) {
                    *r += w * v;
                }
            }
            if label.is_none() {
                label = m.labels.as_ref().map(|l| l[local].clone());
            }
        }
        data.extend(row);
        labels.push(label.unwrap_or_default());
    }
    let out = MotionSegment::new(data, plan.frames.len(), first.fps, first.layout.clone())?;
    if parts.iter().all(|(_, m)| m.labels.is_some()) {
        return out.with_labels(labels);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::chain::derive_transition_spans;
    use crate::motion::ChannelLayout;

    fn constant(n: usize, v: f64) -> MotionSegment {
        let l = ChannelLayout::planar();
        MotionSegment::new(vec![v; n * l.width()], n, 24.0, l).unwrap()
    }

    #[test]
    fn identity_plan() {
        let m = constant(5, 0.3);
        let plan = BlendPlan::crossfade(&[Span { start: 0, len: 5, anchor: 2 }], 5).unwrap();
        assert_eq!(blend(&[(0, &m)], &plan).unwrap(), m);
    }

    #[test]
    fn midpoint_of_four_frame_overlap() {
        let spans = [Span { start: 0, len: 8, anchor: 4 }, Span { start: 4, len: 8, anchor: 4 }];
        let plan = BlendPlan::crossfade(&spans, 12).unwrap();
        let (a, b) = (constant(8, 1.0), constant(8, 3.0));
        let out = blend(&[(0, &a), (4, &b)], &plan).unwrap();
        assert_eq!(out.get(6, 0), 2.0);
        assert_eq!(out.get(3, 0), 1.0);
        assert_eq!(out.get(4, 0), 1.0);
    }

    #[test]
    fn chain_weights_sum_to_one() {
        let c = derive_transition_spans(&[30, 47, 25]);
        let mut spans = c.semantic.clone();
        spans.extend(&c.transitions);
        let plan = BlendPlan::crossfade(&spans, c.total_frames()).unwrap();
        for f in &plan.frames {
            assert!((f.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(f.iter().all(|x| x.1 >= 0.0));
        }
    }

    #[test]
    fn uncovered_frame_rejected() {
        assert!(BlendPlan::crossfade(&[Span { start: 1, len: 3, anchor: 1 }], 4).is_err());
    }

    #[test]
    fn inbetween_plan_keeps_inputs() {
        let plan = BlendPlan::inbetween(3, 5, 2).unwrap();
        assert_eq!(plan.frames.len(), 10);
        assert_eq!(plan.frames[2], vec![(0, 1.0)]);
        assert_eq!(plan.frames[3], vec![(1, 1.0), (2, 0.0)]);
        assert_eq!(plan.frames[7], vec![(2, 0.0), (3, 1.0)]);
        assert_eq!(plan.frames[8], vec![(4, 1.0)]);
    }
}
