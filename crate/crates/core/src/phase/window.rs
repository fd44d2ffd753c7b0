use phasecomp_nn::{sinusoidal_row, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    /// Linear progression: `-1` at frame 0, `0` at the anchor, `+1` at the
    /// last frame, each side mapped separately.
    Norm,
    /// Signed frame offsets from the anchor.
    Frame,
    /// First `Q/2` columns `Frame`, remaining columns `Norm`.
    Mix,
}

impl WindowMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowMode::Norm => "normT",
            WindowMode::Frame => "frameT",
            WindowMode::Mix => "mixT",
        }
    }
}

/// `N x Q` time coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeWindow {
    pub t: Tensor,
    pub mode: WindowMode,
    pub anchor: usize,
}

/// Normalized time of frame `t`. Frames on each side of the anchor are
/// spread linearly over their own half-interval, so the endpoints are exactly
/// -1 and +1 even for an off-center anchor.
pub fn norm_time(t: usize, n: usize, anchor: usize) -> f64 {
    use std::cmp::Ordering::*;
    match t.cmp(&anchor) {
        Less => -((anchor - t) as f64) / anchor as f64,
        Equal => 0.0,
        Greater => (t - anchor) as f64 / (n - 1 - anchor) as f64,
    }
}

pub fn frame_time(t: usize, anchor: usize) -> f64 {
    t as f64 - anchor as f64
}

pub fn build_time_window(n: usize, q: usize, mode: WindowMode, anchor: usize) -> Result<TimeWindow> {
    if n == 0 || anchor >= n {
        return Err(Error::AnchorOutOfRange { anchor, n });
    }
    if q == 0 || (mode == WindowMode::Mix && q % 2 != 0) {
        return Err(Error::invalid(format!("latent width {q} unusable for {}", mode.as_str())));
    }
    let split = match mode {
        WindowMode::Frame => q,
        WindowMode::Norm => 0,
        WindowMode::Mix => q / 2,
    };
    let mut data = Vec::with_capacity(n * q);
    for t in 0..n {
        let (ft, nt) = (frame_time(t, anchor), norm_time(t, n, anchor));
        data.extend((0..q).map(|c| if c < split { ft } else { nt }));
    }
    Ok(TimeWindow { t: Tensor::matrix(n, q, data)?, mode, anchor })
}

/// Composite positional embedding with the middle block centered on `N/2`.
pub fn comp_pe(n: usize, d: usize) -> Result<Tensor> {
    comp_pe_anchored(n, d, n / 2)
}

/// `N x 3d`: sinusoidal embeddings whose zero position sits on the first
/// frame, on `middle`, and on the last frame.
pub fn comp_pe_anchored(n: usize, d: usize, middle: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(phasecomp_nn::NnError::OddDim(d).into());
    }
    let mut data = Vec::with_capacity(n * 3 * d);
    for t in 0..n {
        let t = t as f64;
        for zero in [0.0, middle as f64, n as f64 - 1.0] {
            data.extend(sinusoidal_row(t - zero, d));
        }
    }
    Ok(Tensor::matrix(n, 3 * d, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use phasecomp_nn::sinusoidal_pe;

    fn col(w: &TimeWindow, c: usize) -> Vec<f64> {
        (0..w.t.rows()).map(|r| w.t.at(r, c)).collect()
    }

    #[test]
    fn symmetric_norm_window() {
        let w = build_time_window(3, 2, WindowMode::Norm, 1).unwrap();
        assert_eq!(col(&w, 0), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn frame_offsets() {
        let w = build_time_window(4, 2, WindowMode::Frame, 2).unwrap();
        assert_eq!(col(&w, 1), vec![-2.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn off_center_anchor_is_piecewise() {
        // Left of the anchor: one frame over [-1, 0]. Right: three frames up to +1.
        let w = build_time_window(5, 2, WindowMode::Norm, 1).unwrap();
        let expect = [-1.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in col(&w, 0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mix_splits_columns() {
        let w = build_time_window(6, 4, WindowMode::Mix, 2).unwrap();
        assert_eq!(col(&w, 0), col(&w, 1));
        assert_eq!(col(&w, 0), vec![-2.0, -1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(col(&w, 3)[5], 1.0);
        assert_eq!(col(&w, 2)[0], -1.0);
    }

    #[test]
    fn window_errors() {
        assert!(matches!(build_time_window(4, 2, WindowMode::Norm, 4), Err(Error::AnchorOutOfRange { .. })));
        assert!(build_time_window(4, 3, WindowMode::Mix, 1).is_err());
    }

    #[test]
    fn comp_pe_blocks() {
        let one = comp_pe(1, 4).unwrap();
        assert_eq!(one.row_slice(0), [0.0, 1.0, 0.0, 1.0].repeat(3).as_slice());

        let d = 6;
        let pe = comp_pe(5, d).unwrap();
        let base = sinusoidal_pe(5, d).unwrap();
        assert_eq!(&pe.row_slice(2)[d..2 * d], base.row_slice(0));
        assert_eq!(&pe.row_slice(3)[..d], base.row_slice(3));

        let pe = comp_pe(7, 8).unwrap();
        for t in 0..7 {
            let pos = t as f64 - 6.0;
            for i in 0..4 {
                let w = 1.0 / 10000f64.powf(2.0 * i as f64 / 8.0);
                assert!((pe.at(t, 16 + 2 * i) - (pos * w).sin()).abs() < 1e-15);
                assert!((pe.at(t, 16 + 2 * i + 1) - (pos * w).cos()).abs() < 1e-15);
            }
        }
    }
}
