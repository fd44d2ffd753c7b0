//! Synthetic corpus: streams of chained actions, the pair index derived from
//! them, and their on-disk layout.
//!
//! Directory layout:
//!
//! ```text
//! manifest.txt        key = value lines (see `Corpus::manifest_text`)
//! streams.tsv         id, split, actions as name:len,name:len,...
//! pairs.tsv           id, stream, split, p_start, p_len, s_start, s_len, c_p, c_s
//! streams/NNNNN.motion  one motion file per stream
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use phasecomp_nn::Rng;

use super::actions::VOCAB;
use super::stream::{gen_stream, spans};
use crate::error::{Error, Result};
use crate::kv::{self, KvWriter};
use crate::motion::{ChannelLayout, MotionSegment};

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub train_streams: usize,
    pub test_streams: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub fps: f64,
    /// Crossfade window between actions, frames.
    pub window: usize,
    pub idle_amp: f64,
    pub vocab: Vec<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_streams: 2000,
            test_streams: 500,
            min_actions: 2,
            max_actions: 4,
            n_min: 24,
            n_max: 96,
            fps: 24.0,
            window: 12,
            idle_amp: 0.05,
            vocab: VOCAB.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_actions < 1 || self.min_actions > self.max_actions {
            return Err(Error::invalid("bad actions-per-stream range"));
        }
        if self.n_min < 2 || self.n_min > self.n_max {
            return Err(Error::invalid("bad segment length range"));
        }
        if self.vocab.is_empty() {
            return Err(Error::invalid("empty vocabulary"));
        }
        for v in &self.vocab {
            if !VOCAB.contains(&v.as_str()) {
                return Err(Error::UnknownToken(v.clone()));
            }
        }
        if self.vocab.len() < 2 && self.min_actions > 1 {
            return Err(Error::invalid("need two actions in the vocabulary to chain distinct actions"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::invalid("fps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::format("corpus", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub id: usize,
    pub split: Split,
    pub actions: Vec<(String, usize)>,
    pub motion: MotionSegment,
}

/// Location of one (previous, next) action pair inside a stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairIndex {
    pub id: usize,
    pub stream: usize,
    pub split: Split,
    pub p_start: usize,
    pub p_len: usize,
    pub s_start: usize,
    pub s_len: usize,
    pub c_p: String,
    pub c_s: String,
}

impl PairIndex {
    /// Transitional span `(start, len, anchor)`: the second half of the
    /// previous segment and the first half of the next, anchored at their
    /// shared boundary.
    pub fn transition(&self) -> (usize, usize, usize) {
        let start = self.p_start + self.p_len / 2;
        let end = self.s_start + self.s_len / 2;
        (start, end - start, self.s_start - start)
    }
}

/// Materialized training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub id: usize,
    pub stream: usize,
    pub split: Split,
    /// Stream frame where `x_p` and `x_s` start.
    pub p_start: usize,
    pub s_start: usize,
    pub x_p: MotionSegment,
    pub x_t: MotionSegment,
    pub x_s: MotionSegment,
    /// Boundary frame inside `x_t`.
    pub anchor_t: usize,
    pub c_p: Vec<String>,
    pub c_s: Vec<String>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream_seed(seed: u64, id: usize) -> u64 {
    splitmix64(seed ^ splitmix64(id as u64))
}

/// Draws action sequences and renders every stream. Stream ids are ranked by
/// a seeded hash and the first `test_streams` of that ranking form the test
/// split.
pub fn generate_streams(cfg: &CorpusConfig) -> Result<Vec<Stream>> {
    cfg.validate()?;
    let total = cfg.train_streams + cfg.test_streams;
    let mut ranked: Vec<(u64, usize)> = (0..total).map(|i| (splitmix64(cfg.seed.wrapping_add(0x5EED) ^ i as u64), i)).collect();
    ranked.sort_unstable();
    let test: BTreeSet<usize> = ranked.iter().take(cfg.test_streams).map(|r| r.1).collect();
    (0..total)
        .map(|id| {
            let seed = stream_seed(cfg.seed, id);
            let mut rng = Rng::with_stream(seed, u64::MAX);
            let count = rng.range_inclusive(cfg.min_actions, cfg.max_actions);
            let mut actions: Vec<(String, usize)> = Vec::with_capacity(count);
            for _ in 0..count {
                let name = loop {
                    let cand = &cfg.vocab[rng.below(cfg.vocab.len())];
                    if actions.last().is_none_or(|(prev, _)| prev != cand) {
                        break cand.clone();
                    }
                };
                actions.push((name, rng.range_inclusive(cfg.n_min, cfg.n_max)));
            }
            let motion = gen_stream(&actions, cfg.fps, cfg.window, cfg.idle_amp, seed)?;
            let split = if test.contains(&id) { Split::Test } else { Split::Train };
            Ok(Stream { id, split, actions, motion })
        })
        .collect()
}

/// Consecutive action spans become pairs. Spans longer than `n_max` keep the
/// frames nearest the shared boundary; pairs with a span shorter than `n_min`
/// are skipped and counted.
pub fn extract_pairs(streams: &[Stream], n_min: usize, n_max: usize) -> (Vec<PairIndex>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for st in streams {
        let sp = spans(&st.actions);
        for w in sp.windows(2) {
            let (p, s) = (&w[0], &w[1]);
            if p.len < n_min || s.len < n_min {
                skipped += 1;
                continue;
            }
            let p_len = p.len.min(n_max);
            let s_len = s.len.min(n_max);
            out.push(PairIndex {
                id: out.len(),
                stream: st.id,
                split: st.split,
                p_start: p.start + p.len - p_len,
                p_len,
                s_start: s.start,
                s_len,
                c_p: p.name.clone(),
                c_s: s.name.clone(),
            });
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} pairs with a span shorter than {n_min} frames");
    }
    (out, skipped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub streams: Vec<Stream>,
    pub index: Vec<PairIndex>,
    pub skipped: usize,
}

impl Corpus {
    pub fn generate(cfg: &CorpusConfig) -> Result<Self> {
        let streams = generate_streams(cfg)?;
        let (index, skipped) = extract_pairs(&streams, cfg.n_min, cfg.n_max);
        Ok(Self { config: cfg.clone(), streams, index, skipped })
    }

    pub fn pair(&self, idx: &PairIndex) -> Result<Pair> {
        let st = self
            .streams
            .get(idx.stream)
            .filter(|s| s.id == idx.stream)
            .ok_or_else(|| Error::format("corpus", format!("pair {} names missing stream {}", idx.id, idx.stream)))?;
        let m = &st.motion;
        let (t_start, t_len, anchor_t) = idx.transition();
        Ok(Pair {
            id: idx.id,
            stream: idx.stream,
            split: idx.split,
            p_start: idx.p_start,
            s_start: idx.s_start,
            x_p: m.slice(idx.p_start, idx.p_start + idx.p_len)?,
            x_t: m.slice(t_start, t_start + t_len)?,
            x_s: m.slice(idx.s_start, idx.s_start + idx.s_len)?,
            anchor_t,
            c_p: vec![idx.c_p.clone()],
            c_s: vec![idx.c_s.clone()],
        })
    }

    pub fn pairs(&self, split: Split) -> Result<Vec<Pair>> {
        self.index.iter().filter(|p| p.split == split).map(|p| self.pair(p)).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.index.iter().filter(|p| p.split == split).count()
    }

    pub fn manifest_text(&self) -> String {
        let c = &self.config;
        KvWriter::new()
            .put("format", "cpd-corpus 1")
            .put("seed", c.seed)
            .put("fps", format!("{:?}", c.fps))
            .put("n_min", c.n_min)
            .put("n_max", c.n_max)
            .put("min_actions", c.min_actions)
            .put("max_actions", c.max_actions)
            .put("transition_window", c.window)
            .put("idle_amp", format!("{:?}", c.idle_amp))
            .put("vocab", c.vocab.join(" "))
            .put("layout", ChannelLayout::planar().to_line())
            .put("train_streams", c.train_streams)
            .put("test_streams", c.test_streams)
            .put("train_pairs", self.count(Split::Train))
            .put("test_pairs", self.count(Split::Test))
            .put("skipped_pairs", self.skipped)
            .finish()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let sdir = dir.join("streams");
        std::fs::create_dir_all(&sdir)?;
        std::fs::write(dir.join("manifest.txt"), self.manifest_text())?;
        let mut st = String::from("id\tsplit\tactions\n");
        for s in &self.streams {
            let acts: Vec<String> = s.actions.iter().map(|(a, n)| format!("{a}:{n}")).collect();
            let _ = writeln!(st, "{}\t{}\t{}", s.id, s.split.as_str(), acts.join(","));
            s.motion.save(&sdir.join(format!("{:05}.motion", s.id)))?;
        }
        std::fs::write(dir.join("streams.tsv"), st)?;
        let mut pt = String::from("id\tstream\tsplit\tp_start\tp_len\ts_start\ts_len\tc_p\tc_s\n");
        for p in &self.index {
            let _ = writeln!(
                pt,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.id,
                p.stream,
                p.split.as_str(),
                p.p_start,
                p.p_len,
                p.s_start,
                p.s_len,
                p.c_p,
                p.c_s
            );
        }
        std::fs::write(dir.join("pairs.tsv"), pt)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format("corpus", msg);
        let man = std::fs::read_to_string(dir.join("manifest.txt"))?;
        if kv::get::<String>(&man, "format")? != "cpd-corpus 1" {
            return Err(bad("unsupported corpus format".into()));
        }
        let config = CorpusConfig {
            seed: kv::get(&man, "seed")?,
            train_streams: kv::get(&man, "train_streams")?,
            test_streams: kv::get(&man, "test_streams")?,
            min_actions: kv::get(&man, "min_actions")?,
            max_actions: kv::get(&man, "max_actions")?,
            n_min: kv::get(&man, "n_min")?,
            n_max: kv::get(&man, "n_max")?,
            fps: kv::get(&man, "fps")?,
            window: kv::get(&man, "transition_window")?,
            idle_amp: kv::get(&man, "idle_amp")?,
            vocab: kv::get::<String>(&man, "vocab")?.split_whitespace().map(str::to_string).collect(),
        };
        config.validate()?;
        let mut streams = Vec::new();
        for (ln, line) in std::fs::read_to_string(dir.join("streams.tsv"))?.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, split, acts] = cols.as_slice() else {
                return Err(bad(format!("streams.tsv line {}", ln + 1)));
            };
            let id: usize = id.parse().map_err(|_| bad(format!("bad stream id `{id}`")))?;
            let actions = acts
                .split(',')
                .map(|a| {
                    let (name, n) = a.split_once(':').ok_or_else(|| bad(format!("bad action `{a}`")))?;
                    Ok((name.to_string(), n.parse().map_err(|_| bad(format!("bad length in `{a}`")))?))
                })
                .collect::<Result<Vec<(String, usize)>>>()?;
            let motion = MotionSegment::load(&dir.join("streams").join(format!("{id:05}.motion")))?;
            let expected: usize = actions.iter().map(|a| a.1).sum();
            if motion.frames() != expected || id != streams.len() {
                return Err(bad(format!("stream {id} does not match its index entry")));
            }
            streams.push(Stream { id, split: Split::parse(split)?, actions, motion });
        }
        let mut index = Vec::new();
        for (ln, line) in std::fs::read_to_string(dir.join("pairs.tsv"))?.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 9 {
                return Err(bad(format!("pairs.tsv line {}", ln + 1)));
            }
            let num = |i: usize| cols[i].parse::<usize>().map_err(|_| bad(format!("pairs.tsv line {}", ln + 1)));
            let p = PairIndex {
                id: num(0)?,
                stream: num(1)?,
                split: Split::parse(cols[2])?,
                p_start: num(3)?,
                p_len: num(4)?,
                s_start: num(5)?,
                s_len: num(6)?,
                c_p: cols[7].to_string(),
                c_s: cols[8].to_string(),
            };
            let st = streams.get(p.stream).ok_or_else(|| bad(format!("pair {} names missing stream", p.id)))?;
            if st.split != p.split || p.s_start + p.s_len > st.motion.frames() || p.p_start + p.p_len != p.s_start {
                return Err(bad(format!("pair {} inconsistent with its stream", p.id)));
            }
            index.push(p);
        }
        let corpus = Self { config, streams, index, skipped: kv::get(&man, "skipped_pairs")? };
        let counts_ok = corpus.streams.len() == corpus.config.train_streams + corpus.config.test_streams
            && corpus.count(Split::Train) == kv::get::<usize>(&man, "train_pairs")?
            && corpus.count(Split::Test) == kv::get::<usize>(&man, "test_pairs")?;
        if !counts_ok {
            return Err(bad("manifest counts do not match files".into()));
        }
        Ok(corpus)
    }
}

/// Segments for autoencoder training: every distinct semantic span (anchored
/// at its center) and every transitional span (anchored at its boundary).
pub fn pae_segments(pairs: &[Pair]) -> Vec<(MotionSegment, usize)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in pairs {
        for (start, seg) in [(p.p_start, &p.x_p), (p.s_start, &p.x_s)] {
            if seen.insert((p.stream, start, seg.frames())) {
                out.push((seg.clone(), seg.frames() / 2));
            }
        }
        out.push((p.x_t.clone(), p.anchor_t));
    }
    out
}
