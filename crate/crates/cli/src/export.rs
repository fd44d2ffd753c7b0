//! Joint positions from channel data by planar forward kinematics.
//!
//! The root path is integrated from the velocity and heading channels
//! (`MotionSegment::root_trajectory`); world axes are x, y on the ground and z
//! up. Limbs swing in the body's sagittal plane, spanned by the heading
//! direction `f` and `z`. A limb at angle `a` points along
//! `sin(a) f - cos(a) z`, so 0 hangs straight down and positive angles swing
//! forward. Knees bend backward: the shin angle is `hip - knee`.
//!
//! Output is tab-separated text: a `#` comment line with fps and bone
//! lengths, a header row, then one row per frame with `x y z` for each joint
//! in [`EXPORT_JOINTS`] order, in meters.

use std::fmt::Write as _;

use phasecomp::motion::MotionSegment;
use phasecomp::synth::actions::TURN_HORIZON;

use crate::error::CliError;

pub const EXPORT_JOINTS: [&str; 12] = [
    "pelvis", "neck", "hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r", "shoulder_l", "hand_l", "shoulder_r",
    "hand_r",
];

pub const PELVIS_HEIGHT: f64 = 0.95;
pub const THIGH: f64 = 0.46;
pub const SHIN: f64 = 0.45;
pub const TORSO: f64 = 0.55;
pub const ARM: f64 = 0.62;
pub const HIP_HALF_WIDTH: f64 = 0.1;
pub const SHOULDER_HALF_WIDTH: f64 = 0.18;

type P3 = [f64; 3];

fn add(a: P3, b: P3, s: f64) -> P3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

/// Joint positions of every frame, in [`EXPORT_JOINTS`] order.
pub fn joint_positions(m: &MotionSegment) -> Result<Vec<[P3; 12]>, CliError> {
    let layout = &m.layout;
    let offsets: Vec<usize> = phasecomp::motion::JOINTS
        .iter()
        .map(|j| layout.offset_of(j).ok_or_else(|| CliError::Data(format!("layout lacks joint `{j}`"))))
        .collect::<Result<_, _>>()?;
    let path = m.root_trajectory(TURN_HORIZON);
    let mut out = Vec::with_capacity(m.frames());
    for (t, &(x, y, h)) in path.iter().enumerate() {
        let f = m.frame(t);
        let ang: Vec<f64> = offsets.iter().map(|&o| f[o + 1].atan2(f[o])).collect();
        let fwd = [h.cos(), h.sin(), 0.0];
        let lat = [-h.sin(), h.cos(), 0.0];
        let limb = |a: f64| -> P3 { add([0.0, 0.0, -a.cos()], fwd, a.sin()) };
        let pelvis = [x, y, PELVIS_HEIGHT];
        let neck = add(pelvis, [0.0, 0.0, 1.0], TORSO);
        let leg = |side: f64, hip_a: f64, knee_a: f64| {
            let hip = add(pelvis, lat, side * HIP_HALF_WIDTH);
            let knee = add(hip, limb(hip_a), THIGH);
            let ankle = add(knee, limb(hip_a - knee_a), SHIN);
            [hip, knee, ankle]
        };
        let arm = |side: f64, a: f64| {
            let shoulder = add(neck, lat, side * SHOULDER_HALF_WIDTH);
            [shoulder, add(shoulder, limb(a), ARM)]
        };
        let [hl, kl, al] = leg(1.0, ang[0], ang[1]);
        let [hr, kr, ar] = leg(-1.0, ang[2], ang[3]);
        let [sl, wl] = arm(1.0, ang[4]);
        let [sr, wr] = arm(-1.0, ang[5]);
        out.push([pelvis, neck, hl, kl, al, hr, kr, ar, sl, wl, sr, wr]);
    }
    Ok(out)
}

pub fn export_text(m: &MotionSegment) -> Result<String, CliError> {
    let frames = joint_positions(m)?;
    let mut s = format!(
        "# joint positions, fps {:?}, pelvis {PELVIS_HEIGHT} thigh {THIGH} shin {SHIN} torso {TORSO} arm {ARM}\nframe",
        m.fps
    );
    for j in EXPORT_JOINTS {
        let _ = write!(s, "\t{j}_x\t{j}_y\t{j}_z");
    }
    s.push('\n');
    for (t, joints) in frames.iter().enumerate() {
        let _ = write!(s, "{t}");
        for p in joints {
            let _ = write!(s, "\t{:.6}\t{:.6}\t{:.6}", p[0], p[1], p[2]);
        }
        s.push('\n');
    }
    Ok(s)
}
