//! Motion segments, channel layouts and the text motion file.
//!
//! Motion file format (UTF-8, one record per line, `#` starts a comment):
//!
//! ```text
//! cpd-motion 1
//! fps 24
//! frames <N>
//! layout <role>:<name>:<width> ...
//! labels <0|1>
//! <label>? <v_0> ... <v_{E-1}>      (N lines)
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so a write/read cycle
//! reproduces every `f64` bit for bit. When `labels 1`, each data line starts
//! with a whitespace-free label token.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelRole {
    RootTranslation,
    RootRotation,
    JointRotation,
}

impl ChannelRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelRole::RootTranslation => "root_translation",
            ChannelRole::RootRotation => "root_rotation",
            ChannelRole::JointRotation => "joint_rotation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "root_translation" => Some(ChannelRole::RootTranslation),
            "root_rotation" => Some(ChannelRole::RootRotation),
            "joint_rotation" => Some(ChannelRole::JointRotation),
            _ => None,
        }
    }

    pub fn is_rotation(self) -> bool {
        !matches!(self, ChannelRole::RootTranslation)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelGroup {
    pub name: String,
    pub role: ChannelRole,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelLayout {
    groups: Vec<ChannelGroup>,
}

/// Joints of the planar skeleton, in channel order.
pub const JOINTS: [&str; 6] = ["hip_l", "knee_l", "hip_r", "knee_r", "shoulder_l", "shoulder_r"];

impl ChannelLayout {
    /// Rotation groups must have width 2 (a `(cos, sin)` pair).
    pub fn new(groups: Vec<ChannelGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("layout has no channel groups"));
        }
        for g in &groups {
            if g.width == 0 || (g.role.is_rotation() && g.width != 2) {
                return Err(Error::invalid(format!("group `{}` has invalid width {}", g.name, g.width)));
            }
        }
        Ok(Self { groups })
    }

    /// The 16-channel planar layout: per-frame root displacement in the body
    /// frame (forward, lateral), root heading change as `(cos, sin)`, then six
    /// joint angles as `(cos, sin)` pairs.
    pub fn planar() -> Self {
        let mut groups = vec![
            ChannelGroup { name: "root_vel".into(), role: ChannelRole::RootTranslation, width: 2 },
            ChannelGroup { name: "root_turn".into(), role: ChannelRole::RootRotation, width: 2 },
        ];
        groups.extend(JOINTS.iter().map(|j| ChannelGroup {
            name: (*j).into(),
            role: ChannelRole::JointRotation,
            width: 2,
        }));
        Self { groups }
    }

    pub fn groups(&self) -> &[ChannelGroup] {
        &self.groups
    }

    pub fn width(&self) -> usize {
        self.groups.iter().map(|g| g.width).sum()
    }

    /// First channel index of the named group.
    pub fn offset_of(&self, name: &str) -> Option<usize> {
        let mut off = 0;
        for g in &self.groups {
            if g.name == name {
                return Some(off);
            }
            off += g.width;
        }
        None
    }

    pub fn channels_with_role(&self, role: ChannelRole) -> Vec<usize> {
        let mut out = Vec::new();
        let mut off = 0;
        for g in &self.groups {
            if g.role == role {
                out.extend(off..off + g.width);
            }
            off += g.width;
        }
        out
    }

    /// `(cos, sin)` channel index pairs of every rotation group.
    pub fn rotation_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for g in &self.groups {
            if g.role.is_rotation() {
                out.push((off, off + 1));
            }
            off += g.width;
        }
        out
    }

    /// Rest value of every channel: zero translation, zero angles.
    pub fn rest_pose(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        for g in &self.groups {
            if g.role.is_rotation() {
                out.extend([1.0, 0.0]);
            } else {
                out.extend(std::iter::repeat_n(0.0, g.width));
            }
        }
        out
    }

    /// Space-separated `role:name:width` tokens.
    pub fn to_line(&self) -> String {
        self.groups
            .iter()
            .map(|g| format!("{}:{}:{}", g.role.as_str(), g.name, g.width))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        Self::parse_tokens(&line.split_whitespace().collect::<Vec<_>>())
    }

    fn parse_tokens(tokens: &[&str]) -> Result<Self> {
        let groups = tokens
            .iter()
            .map(|t| {
                let parts: Vec<&str> = t.split(':').collect();
                let [role, name, width] = parts.as_slice() else {
                    return Err(Error::format("motion file", format!("bad layout token `{t}`")));
                };
                let role = ChannelRole::parse(role)
                    .ok_or_else(|| Error::format("motion file", format!("unknown role `{role}`")))?;
                let width = width
                    .parse()
                    .map_err(|_| Error::format("motion file", format!("bad width in `{t}`")))?;
                Ok(ChannelGroup { name: (*name).to_string(), role, width })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(groups)
    }
}

/// Which channels a metric looks at.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChannelSelector {
    All,
    Roles(Vec<ChannelRole>),
    Channels(Vec<usize>),
}

impl ChannelSelector {
    pub fn rotations() -> Self {
        ChannelSelector::Roles(vec![ChannelRole::RootRotation, ChannelRole::JointRotation])
    }

    pub fn resolve(&self, layout: &ChannelLayout) -> Vec<usize> {
        match self {
            ChannelSelector::All => (0..layout.width()).collect(),
            ChannelSelector::Roles(roles) => {
                let mut idx: Vec<usize> = roles.iter().flat_map(|r| layout.channels_with_role(*r)).collect();
                idx.sort_unstable();
                idx.dedup();
                idx
            }
            ChannelSelector::Channels(c) => c.iter().copied().filter(|&i| i < layout.width()).collect(),
        }
    }
}

/// `N x E` frames of one clip, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSegment {
    data: Vec<f64>,
    n: usize,
    pub fps: f64,
    pub layout: ChannelLayout,
    /// Optional per-frame labels.
    pub labels: Option<Vec<String>>,
}

impl MotionSegment {
    pub fn new(data: Vec<f64>, n: usize, fps: f64, layout: ChannelLayout) -> Result<Self> {
        let e = layout.width();
        if data.len() != n * e {
            return Err(Error::invalid(format!("{} values for {n} frames of {e} channels", data.len())));
        }
        if n < 2 {
            return Err(Error::invalid(format!("a segment needs at least 2 frames, got {n}")));
        }
        if !(fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite frame value"));
        }
        Ok(Self { data, n, fps, layout, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::invalid(format!("{} labels for {} frames", labels.len(), self.n)));
        }
        if labels.iter().any(|l| l.is_empty() || l.chars().any(char::is_whitespace)) {
            return Err(Error::invalid("labels must be non-empty and whitespace-free"));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.layout.width()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let e = self.channels();
        &self.data[t * e..(t + 1) * e]
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.channels() + c]
    }

    /// Copy of frames `start..end`, labels included.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n {
            return Err(Error::invalid(format!("slice {start}..{end} of {} frames", self.n)));
        }
        let e = self.channels();
        let mut out = Self::new(self.data[start * e..end * e].to_vec(), end - start, self.fps, self.layout.clone())?;
        out.labels = self.labels.as_ref().map(|l| l[start..end].to_vec());
        Ok(out)
    }

    /// Frames of `parts` one after another (hard cut).
    pub fn concat(parts: &[&MotionSegment]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut data = Vec::new();
        let mut labels = Some(Vec::new());
        for p in parts {
            if p.layout != first.layout || p.fps != first.fps {
                return Err(Error::invalid("cannot concatenate segments with different layout or fps"));
            }
            data.extend_from_slice(&p.data);
            labels = match (labels, &p.labels) {
                (Some(mut acc), Some(l)) => {
                    acc.extend(l.iter().cloned());
                    Some(acc)
                }
                _ => None,
            };
        }
        let n = data.len() / first.channels();
        let mut out = Self::new(data, n, first.fps, first.layout.clone())?;
        out.labels = labels;
        Ok(out)
    }

    /// Integrates the body-frame root displacement channels into a planar
    /// world trajectory `(x, y, heading)` per frame, starting at the origin
    /// facing +x. Heading advances by the per-frame share of the
    /// `root_turn` angle, which spans `turn_horizon` seconds.
    pub fn root_trajectory(&self, turn_horizon: f64) -> Vec<(f64, f64, f64)> {
        let vel = self.layout.offset_of("root_vel");
        let turn = self.layout.offset_of("root_turn");
        let (mut x, mut y, mut h) = (0.0f64, 0.0f64, 0.0f64);
        let mut out = Vec::with_capacity(self.n);
        for t in 0..self.n {
            out.push((x, y, h));
            let f = self.frame(t);
            if let Some(v) = vel {
                let (fwd, lat) = (f[v], f[v + 1]);
                x += fwd * h.cos() - lat * h.sin();
                y += fwd * h.sin() + lat * h.cos();
            }
            if let Some(r) = turn {
                h += f[r + 1].atan2(f[r]) / (turn_horizon * self.fps);
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cpd-motion 1");
        let _ = writeln!(s, "fps {:?}", self.fps);
        let _ = writeln!(s, "frames {}", self.n);
        let _ = writeln!(s, "layout {}", self.layout.to_line());
        let _ = writeln!(s, "labels {}", u8::from(self.labels.is_some()));
        for t in 0..self.n {
            let mut first = true;
            if let Some(l) = &self.labels {
                s.push_str(&l[t]);
                first = false;
            }
            for v in self.frame(t) {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::format("motion file", msg);
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
        let mut header = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
            let mut toks = line.split_whitespace();
            if toks.next() != Some(key) {
                return Err(bad(format!("expected `{key}`, got `{line}`")));
            }
            Ok(toks.map(str::to_string).collect())
        };
        if header("cpd-motion")? != ["1"] {
            return Err(bad("unsupported version".into()));
        }
        let one = |v: Vec<String>, key: &str| -> Result<String> {
            match v.as_slice() {
                [x] => Ok(x.clone()),
                _ => Err(bad(format!("`{key}` takes one value"))),
            }
        };
        let fps: f64 = one(header("fps")?, "fps")?.parse().map_err(|_| bad("bad fps".into()))?;
        let n: usize = one(header("frames")?, "frames")?.parse().map_err(|_| bad("bad frame count".into()))?;
        let layout_toks = header("layout")?;
        let layout = ChannelLayout::parse_tokens(&layout_toks.iter().map(String::as_str).collect::<Vec<_>>())?;
        let has_labels = match one(header("labels")?, "labels")?.as_str() {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("bad labels flag `{other}`"))),
        };
        let e = layout.width();
        let mut data = Vec::with_capacity(n * e);
        let mut labels = Vec::new();
        for t in 0..n {
            let line = lines.next().ok_or_else(|| bad(format!("missing frame {t}")))?;
            let mut toks = line.split_whitespace();
            if has_labels {
                labels.push(toks.next().ok_or_else(|| bad(format!("missing label on frame {t}")))?.to_string());
            }
            let before = data.len();
            for tok in toks {
                data.push(tok.parse::<f64>().map_err(|_| bad(format!("bad value `{tok}` on frame {t}")))?);
            }
            if data.len() - before != e {
                return Err(bad(format!("frame {t} has {} values, expected {e}", data.len() - before)));
            }
        }
        if lines.next().is_some() {
            return Err(bad("trailing data after last frame".into()));
        }
        let seg = Self::new(data, n, fps, layout)?;
        if has_labels {
            seg.with_labels(labels)
        } else {
            Ok(seg)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
