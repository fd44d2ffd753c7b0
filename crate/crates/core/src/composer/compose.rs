use super::blend::{blend, BlendPlan};
use super::chain::{derive_transition_spans, ChainSpec, SegmentChain, Span};
use super::engine::{denoise_chain, EpsModel, ExecMode, Node};
use crate::diffusion::{DenoiseInput, Denoiser, DenoiserKind, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::motion::MotionSegment;
use crate::phase::{ActPae, PhaseParams};

/// Autoencoder plus the three noise predictors, checked for consistency.
#[derive(Clone, Debug)]
pub struct Stack {
    pub pae: ActPae,
    pub spdm: Denoiser,
    pub forward: Denoiser,
    pub backward: Denoiser,
    /// Bound on clean-latent estimates during sampling, in normalized units.
    pub x0_clip: Option<f64>,
}

pub const DEFAULT_X0_CLIP: f64 = 3.0;

impl Stack {
    /// Refuses models whose latent statistics or schedules disagree.
    pub fn new(pae: ActPae, spdm: Denoiser, forward: Denoiser, backward: Denoiser) -> Result<Self> {
        let digest = pae.stats()?.digest();
        for (d, kind) in [(&spdm, DenoiserKind::Spdm), (&forward, DenoiserKind::TpdmForward), (&backward, DenoiserKind::TpdmBackward)] {
            if d.kind != kind {
                return Err(Error::invalid(format!("expected a {} model, got {}", kind.as_str(), d.kind.as_str())));
            }
            if d.stats().digest() != digest {
                return Err(Error::DigestMismatch(format!(
                    "{} was trained on different autoencoder latent statistics",
                    kind.as_str()
                )));
            }
            if d.schedule != spdm.schedule {
                return Err(Error::DigestMismatch(format!("{} uses a different noise schedule", kind.as_str())));
            }
            if d.latent_dim() != 4 * pae.config.q {
                return Err(Error::invalid(format!("{} latent size does not match the autoencoder", kind.as_str())));
            }
        }
        Ok(Self { pae, spdm, forward, backward, x0_clip: Some(DEFAULT_X0_CLIP) })
    }

    fn model(&self, kind: DenoiserKind) -> &Denoiser {
        match kind {
            DenoiserKind::Spdm => &self.spdm,
            DenoiserKind::TpdmForward => &self.forward,
            DenoiserKind::TpdmBackward => &self.backward,
        }
    }

    /// Normalized latent of a segment encoded around its center.
    pub fn encode_normalized(&self, m: &MotionSegment) -> Result<Vec<f64>> {
        self.pae.stats()?.normalize_flat(&self.pae.encode(m)?.to_flat())
    }

    fn decode_normalized(&self, items: &[(&[f64], Span)]) -> Result<Vec<MotionSegment>> {
        let stats = self.pae.stats()?;
        let params = items
            .iter()
            .map(|(l, _)| PhaseParams::from_flat(&stats.denormalize_flat(l)?, false))
            .collect::<Result<Vec<_>>>()?;
        let batch: Vec<(&PhaseParams, usize, usize)> = params.iter().zip(items).map(|(p, (_, s))| (p, s.len, s.anchor)).collect();
        self.pae.decode_batch(&batch)
    }
}

impl EpsModel for Stack {
    fn schedule(&self) -> &DiffusionSchedule {
        &self.spdm.schedule
    }

    fn latent_dim(&self) -> usize {
        self.spdm.latent_dim()
    }

    fn predict(&self, kind: DenoiserKind, inputs: &[DenoiseInput]) -> Result<Vec<Vec<f64>>> {
        self.model(kind).predict(inputs)
    }

    fn x0_clip(&self) -> Option<f64> {
        self.x0_clip
    }
}

/// Result of a chain composition. Node order is semantic 0, transition 0,
/// semantic 1, and so on.
#[derive(Clone, Debug)]
pub struct Composition {
    pub chain: SegmentChain,
    pub latents: Vec<Vec<f64>>,
    pub segments: Vec<MotionSegment>,
    pub plan: BlendPlan,
    pub output: MotionSegment,
    pub sweeps: usize,
}

impl Composition {
    pub fn semantic(&self, i: usize) -> &MotionSegment {
        &self.segments[2 * i]
    }

    pub fn transition(&self, i: usize) -> &MotionSegment {
        &self.segments[2 * i + 1]
    }
}

fn label(m: MotionSegment, text: &str) -> Result<MotionSegment> {
    let n = m.frames();
    m.with_labels(vec![text.to_string(); n])
}

/// Composes a chain of prompted segments. Every semantic segment is mixed
/// with its neighbors' transitional predictions; transitions are purely
/// transitional. All segments are denoised together, so the number of
/// scheduler sweeps does not depend on the chain length.
pub fn compose_long(stack: &Stack, spec: &ChainSpec, mode: ExecMode) -> Result<Composition> {
    spec.validate(stack.pae.config.n_min, stack.pae.config.n_max)?;
    let lengths: Vec<usize> = spec.segments.iter().map(|s| s.1).collect();
    let chain = derive_transition_spans(&lengths);
    for t in &chain.transitions {
        stack.pae.config.check_length(t.len)?;
    }
    let mut nodes = Vec::with_capacity(2 * lengths.len());
    let mut spans = Vec::with_capacity(2 * lengths.len());
    for (i, (text, _)) in spec.segments.iter().enumerate() {
        nodes.push(Node::semantic(Some(text.clone()), 2 * i as u64));
        spans.push(chain.semantic[i]);
        if let Some(t) = chain.transitions.get(i) {
            nodes.push(Node::transition(2 * i as u64 + 1));
            spans.push(*t);
        }
    }
    let run = denoise_chain(stack, &nodes, spec.seed, mode)?;
    let items: Vec<(&[f64], Span)> = run.latents.iter().map(Vec::as_slice).zip(spans.iter().copied()).collect();
    let decoded = stack.decode_normalized(&items)?;
    let names: Vec<String> = spec.segments.iter().map(|s| s.0.join("+")).collect();
    let segments = decoded
        .into_iter()
        .enumerate()
        .map(|(j, m)| match j % 2 {
            0 => label(m, &names[j / 2]),
            _ => label(m, &format!("{}>{}", names[j / 2], names[j / 2 + 1])),
        })
        .collect::<Result<Vec<_>>>()?;
    let plan = BlendPlan::crossfade(&spans, chain.total_frames())?;
    let parts: Vec<(usize, &MotionSegment)> = spans.iter().map(|s| s.start).zip(&segments).collect();
    let output = blend(&parts, &plan)?;
    Ok(Composition { chain, latents: run.latents, segments, plan, output, sweeps: run.sweeps })
}

/// Two prompted segments and the transition between them.
pub fn compose_pair(
    stack: &Stack,
    c_p: &[String],
    c_s: &[String],
    n_p: usize,
    n_s: usize,
    seed: u64,
) -> Result<Composition> {
    let spec = ChainSpec::new(vec![(c_p.to_vec(), n_p), (c_s.to_vec(), n_s)], seed);
    compose_long(stack, &spec, ExecMode::Batched)
}

#[derive(Clone, Debug)]
pub struct Inbetween {
    /// Latents of the two inputs as encoded before denoising.
    pub frozen: [Vec<f64>; 2],
    /// Final latents in node order: input, transition, middle, transition,
    /// input.
    pub latents: Vec<Vec<f64>>,
    /// Decoded middle and transitions.
    pub middle: MotionSegment,
    pub transitions: [MotionSegment; 2],
    pub plan: BlendPlan,
    pub output: MotionSegment,
    pub sweeps: usize,
}

/// Fills a gap of `n_i` frames between two motions. Their latents stay
/// fixed; the middle and the two transitions around it are denoised. With a
/// prompt the middle is also steered by the semantic model, otherwise it is
/// driven by its neighbors alone. Input frames are copied to the output
/// unchanged.
pub fn inbetween(
    stack: &Stack,
    x_p: &MotionSegment,
    x_s: &MotionSegment,
    n_i: usize,
    c_i: Option<&[String]>,
    seed: u64,
) -> Result<Inbetween> {
    if x_p.frames() < 2 || x_s.frames() < 2 {
        return Err(Error::invalid("inbetween inputs need at least 2 frames"));
    }
    let cfg = &stack.pae.config;
    cfg.check_length(n_i)?;
    for m in [x_p, x_s] {
        if m.layout != cfg.layout {
            return Err(Error::ChannelMismatch { expected: cfg.layout.width(), got: m.channels() });
        }
    }
    let chain = derive_transition_spans(&[x_p.frames(), n_i, x_s.frames()]);
    for t in &chain.transitions {
        cfg.check_length(t.len)?;
    }
    let frozen = [stack.encode_normalized(x_p)?, stack.encode_normalized(x_s)?];
    let nodes = [
        Node::frozen(frozen[0].clone(), 0),
        Node::transition(1),
        Node::semantic(c_i.map(<[String]>::to_vec), 2),
        Node::transition(3),
        Node::frozen(frozen[1].clone(), 4),
    ];
    let run = denoise_chain(stack, &nodes, seed, ExecMode::Batched)?;
    let (t1, mid, t2) = (chain.transitions[0], chain.semantic[1], chain.transitions[1]);
    let mut dec = stack
        .decode_normalized(&[(&run.latents[1], t1), (&run.latents[2], mid), (&run.latents[3], t2)])?
        .into_iter();
    let (d1, dm, d2) = (dec.next().expect("3"), dec.next().expect("3"), dec.next().expect("3"));
    let plan = BlendPlan::inbetween(x_p.frames(), n_i, x_s.frames())?;
    let parts = [(0, x_p), (t1.start, &d1), (mid.start, &dm), (t2.start, &d2), (chain.semantic[2].start, x_s)];
    let output = blend(&parts, &plan)?;
    Ok(Inbetween {
        frozen,
        latents: run.latents,
        middle: dm,
        transitions: [d1, d2],
        plan,
        output,
        sweeps: run.sweeps,
    })
}
