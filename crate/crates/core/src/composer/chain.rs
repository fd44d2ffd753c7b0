use crate::error::{Error, Result};

/// Ordered text prompts with segment lengths, plus the seed of the run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainSpec {
    pub segments: Vec<(Vec<String>, usize)>,
    pub seed: u64,
}

impl ChainSpec {
    pub fn new(segments: Vec<(Vec<String>, usize)>, seed: u64) -> Self {
        Self { segments, seed }
    }

    pub fn validate(&self, n_min: usize, n_max: usize) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("chain has no segments"));
        }
        for &(_, n) in &self.segments {
            if n < n_min || n > n_max {
                return Err(Error::LengthOutOfRange { n, min: n_min, max: n_max });
            }
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.1).sum()
    }

    /// Request file:
    ///
    /// ```text
    /// cpd-chain 1
    /// seed 7
    /// segment 48 walk
    /// segment 60 squat wave
    /// ```
    ///
    /// Blank lines and `#` comments are ignored; a segment may list no tokens.
    pub fn to_text(&self) -> String {
        let mut s = format!("cpd-chain 1\nseed {}\n", self.seed);
        for (tokens, n) in &self.segments {
            s.push_str(&format!("segment {n}"));
            for t in tokens {
                s.push(' ');
                s.push_str(t);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::format("chain", msg);
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some("cpd-chain 1") {
            return Err(bad("missing `cpd-chain 1` header".into()));
        }
        let mut seed = None;
        let mut segments = Vec::new();
        for line in lines {
            let mut words = line.split_whitespace();
            match words.next() {
                Some("seed") => {
                    let v = words.next().and_then(|w| w.parse().ok()).ok_or_else(|| bad(format!("bad seed line `{line}`")))?;
                    seed = Some(v);
                }
                Some("segment") => {
                    let n = words.next().and_then(|w| w.parse().ok()).ok_or_else(|| bad(format!("bad segment line `{line}`")))?;
                    segments.push((words.map(str::to_string).collect(), n));
                }
                _ => return Err(bad(format!("unexpected line `{line}`"))),
            }
        }
        Ok(Self { segments, seed: seed.ok_or_else(|| bad("missing seed".into()))? })
    }
}

/// A frame span on the global timeline. `anchor` is local to the span.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
    pub anchor: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Semantic spans laid end to end and the transitional span between each
/// neighboring pair. A transition covers the second half of its predecessor
/// and the first half of its successor; odd lengths put the extra frame in
/// the second half. Its anchor is the shared boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentChain {
    pub semantic: Vec<Span>,
    pub transitions: Vec<Span>,
}

impl SegmentChain {
    pub fn total_frames(&self) -> usize {
        self.semantic.last().map_or(0, Span::end)
    }
}

pub fn derive_transition_spans(lengths: &[usize]) -> SegmentChain {
    let mut semantic = Vec::with_capacity(lengths.len());
    let mut start = 0;
    for &n in lengths {
        semantic.push(Span { start, len: n, anchor: n / 2 });
        start += n;
    }
    let transitions = semantic
        .windows(2)
        .map(|w| {
            let a = w[0].start + w[0].len / 2;
            let b = w[1].start + w[1].len / 2;
            Span { start: a, len: b - a, anchor: w[1].start - a }
        })
        .collect();
    SegmentChain { semantic, transitions }
}
