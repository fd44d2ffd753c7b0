use std::f64::consts::TAU;

use phasecomp::metrics::*;
use phasecomp::motion::{ChannelLayout, ChannelSelector, MotionSegment};
use phasecomp::synth::{gen_action, gen_stream, ActionTemplate};
use phasecomp_nn::Rng;
use proptest::prelude::*;

fn seg(n: usize, f: impl Fn(usize, usize) -> f64) -> MotionSegment {
    let l = ChannelLayout::planar();
    let e = l.width();
    MotionSegment::new((0..n * e).map(|i| f(i / e, i % e)).collect(), n, 24.0, l).unwrap()
}

fn random(n: usize, seed: u64) -> MotionSegment {
    let mut rng = Rng::new(seed);
    let v = rng.normal_vec(n * 16);
    seg(n, |t, c| v[t * 16 + c])
}

fn naive_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = TAU * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn l2_rot_scalar_oracle() {
    let (r, c) = (random(4, 1), random(4, 2));
    let w = EvalWindow::range(&r, &c, 0, 4, ChannelSelector::rotations()).unwrap();
    let mut expected = 0.0;
    for t in 0..4 {
        let mut s = 0.0;
        for ch in 2..16 {
            s += (r.get(t, ch) - c.get(t, ch)).powi(2);
        }
        expected += s.sqrt() / 4.0;
    }
    assert!((l2_rot(&w).unwrap() - expected).abs() < 1e-12);
    let roots = ChannelSelector::Channels(vec![0, 1]);
    assert!(l2_rot(&EvalWindow::range(&r, &c, 0, 4, roots).unwrap()).is_err());
}

#[test]
fn l2_vel_three_frames_by_hand() {
    let r = seg(3, |t, c| if c == 0 { [0.0, 1.0, 3.0][t] } else { 0.0 });
    let c = seg(3, |t, ch| match ch {
        0 => [0.0, 2.0, 2.0][t],
        1 => [0.0, 0.0, 1.0][t],
        _ => 0.0,
    });
    let w = EvalWindow::new(&r, &c, vec![1, 2], ChannelSelector::All).unwrap();
    // Frame 1: (1, 0) against (2, 0). Frame 2: (2, 0) against (0, 1).
    let expected = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((l2_vel(&w).unwrap() - expected).abs() < 1e-15);
    assert!(l2_vel(&EvalWindow::new(&r, &c, vec![2], ChannelSelector::All).unwrap()).is_err());
    assert!(l2_vel(&EvalWindow::new(&r, &c, vec![0, 1], ChannelSelector::All).unwrap()).is_err());
}

#[test]
fn npss_point_masses_one_bin_apart() {
    let n = 32;
    let r = seg(n, |t, c| if c == 5 { (TAU * 3.0 * t as f64 / n as f64).cos() } else { 0.0 });
    let c = seg(n, |t, ch| if ch == 5 { (TAU * 4.0 * t as f64 / n as f64).cos() } else { 0.0 });
    let w = EvalWindow::range(&r, &c, 0, n, ChannelSelector::Channels(vec![5])).unwrap();
    let v = npss(&w).unwrap();
    assert!((v.value - 1.0).abs() < 1e-9, "{v:?}");
    let flat = seg(n, |_, _| 0.0);
    let z = npss(&EvalWindow::range(&flat, &c, 0, n, ChannelSelector::Channels(vec![5])).unwrap()).unwrap();
    assert!(z.zero_reference && z.value == 0.0);
}

#[test]
fn npss_is_the_power_weighted_channel_mean() {
    let (r, c) = (random(20, 3), random(20, 4));
    let chans = [0usize, 3, 7, 12];
    let (mut num, mut den) = (0.0, 0.0);
    for &ch in &chans {
        let w = EvalWindow::range(&r, &c, 0, 20, ChannelSelector::Channels(vec![ch])).unwrap();
        let col: Vec<f64> = (0..20).map(|t| r.get(t, ch)).collect();
        let weight: f64 = naive_power(&col).iter().sum();
        num += weight * npss(&w).unwrap().value;
        den += weight;
    }
    let all = EvalWindow::range(&r, &c, 0, 20, ChannelSelector::Channels(chans.to_vec())).unwrap();
    assert!((npss(&all).unwrap().value - num / den).abs() < 1e-10);
}

#[test]
fn npss_matches_naive_transport() {
    let (r, c) = (random(13, 5), random(13, 6));
    let col = |m: &MotionSegment| (0..13).map(|t| m.get(t, 9)).collect::<Vec<_>>();
    let (pr, pc) = (naive_power(&col(&r)), naive_power(&col(&c)));
    let (sr, sc): (f64, f64) = (pr.iter().sum(), pc.iter().sum());
    let (mut cr, mut cc, mut d) = (0.0, 0.0, 0.0);
    for (a, b) in pr.iter().zip(&pc) {
        cr += a / sr;
        cc += b / sc;
        d += (cr - cc).abs();
    }
    let w = EvalWindow::range(&r, &c, 0, 13, ChannelSelector::Channels(vec![9])).unwrap();
    assert!((npss(&w).unwrap().value - d).abs() < 1e-10);
}

#[test]
fn jerk_of_a_cubic() {
    let m = seg(10, |t, c| if c == 2 { (t as f64 / 24.0).powi(3) } else { 1.0 + t as f64 });
    // Third difference of (t/fps)^3 is 6/fps^3, times fps^3 gives 6 on one of 16 channels.
    let expected = (36.0 / 16.0f64).sqrt();
    assert!((rms_jerk(&m, &ChannelSelector::All).unwrap() - expected).abs() < 1e-6);
    assert!((rms_jerk(&m, &ChannelSelector::Channels(vec![2])).unwrap() - 6.0).abs() < 1e-6);
    assert!(rms_jerk(&seg(3, |_, _| 0.0), &ChannelSelector::All).is_err());
}

#[test]
fn boundary_gap_separates_smooth_and_hard_seams() {
    let sel = ChannelSelector::All;
    for (i, name) in ["walk", "wave", "squat", "spin", "idle"].iter().enumerate() {
        for seed in 0..4u64 {
            // A repeated action continues as one uninterrupted instance.
            let acts = [(name.to_string(), 40), (name.to_string(), 56)];
            let gt = gen_stream(&acts, 24.0, 12, 0.05, seed).unwrap();
            for b in [40, 17 + 7 * i, 80] {
                let smooth = boundary_gap(&gt, &[b], &sel).unwrap();
                assert!(smooth <= 2.0, "{name} seed {seed} at {b}: {smooth}");
            }
        }
    }
    for seed in 0..6 {
        let x = gen_action(&ActionTemplate::by_name("walk", 0.05).unwrap(), 48, 24.0, seed).unwrap();
        let y = gen_action(&ActionTemplate::by_name("reach", 0.05).unwrap(), 48, 24.0, seed).unwrap();
        let hard = MotionSegment::concat(&[&x, &y.slice(24, 48).unwrap()]).unwrap();
        let gap = boundary_gap(&hard, &[48], &sel).unwrap();
        assert!(gap > 4.0, "seed {seed}: {gap}");
    }
    assert_eq!(boundary_gap(&seg(10, |_, _| 0.5), &[5], &sel).unwrap(), 0.0);
    assert!(boundary_gap(&seg(10, |_, _| 0.5), &[0], &sel).is_err());
}

#[test]
fn report_columns_are_stable() {
    let mut r = EvalReport::default();
    r.push("l2_vel", "umib", 0.5);
    r.push("npss", "umib", 0.25);
    assert_eq!(r.to_tsv(), "metric\tgroup\tvalue\nl2_vel\tumib\t0.5\nnpss\tumib\t0.25\n");
    assert_eq!(r.get("npss", "umib"), Some(0.25));
    assert_eq!(r.summary().lines().count(), 2);
    assert_eq!(EvalReport::from_tsv(&r.to_tsv()).unwrap(), r);
    assert!(EvalReport::from_tsv("metric\tgroup\tvalue\nx\ty\n").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_nonnegative_and_vanish_on_identity(s1 in any::<u64>(), s2 in any::<u64>(), n in 4usize..40, off in -3.0f64..3.0) {
        let (r, c) = (random(n, s1), random(n, s2));
        let all = || EvalWindow::range(&r, &c, 1, n, ChannelSelector::All).unwrap();
        prop_assert!(l2_vel(&all()).unwrap() >= 0.0);
        prop_assert!(l2_rot(&all()).unwrap() >= 0.0);
        prop_assert!(rms_jerk(&c, &ChannelSelector::All).unwrap() >= 0.0);
        let full = EvalWindow::range(&r, &c, 0, n, ChannelSelector::All).unwrap();
        prop_assert!(npss(&full).unwrap().value >= 0.0);

        let same = EvalWindow::range(&r, &r, 1, n, ChannelSelector::All).unwrap();
        prop_assert_eq!(l2_vel(&same).unwrap(), 0.0);
        prop_assert_eq!(l2_rot(&same).unwrap(), 0.0);
        let same_full = EvalWindow::range(&r, &r, 0, n, ChannelSelector::All).unwrap();
        prop_assert_eq!(npss(&same_full).unwrap().value, 0.0);

        let shifted = seg(n, |t, ch| r.get(t, ch) + off);
        let w = EvalWindow::range(&r, &shifted, 1, n, ChannelSelector::All).unwrap();
        prop_assert!(l2_vel(&w).unwrap() < 1e-12);
    }

    #[test]
    fn npss_ignores_a_shared_gain(s1 in any::<u64>(), s2 in any::<u64>(), n in 4usize..40, g in 0.01f64..100.0) {
        let (r, c) = (random(n, s1), random(n, s2));
        let (rg, cg) = (seg(n, |t, ch| g * r.get(t, ch)), seg(n, |t, ch| g * c.get(t, ch)));
        let a = npss(&EvalWindow::range(&r, &c, 0, n, ChannelSelector::All).unwrap()).unwrap().value;
        let b = npss(&EvalWindow::range(&rg, &cg, 0, n, ChannelSelector::All).unwrap()).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
    }

    #[test]
    fn jerk_ignores_affine_trends(s in any::<u64>(), n in 4usize..40, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let m = random(n, s);
        let trended = seg(n, |t, ch| m.get(t, ch) + a + b * (t as f64) * (1.0 + ch as f64));
        let (x, y) = (rms_jerk(&m, &ChannelSelector::All).unwrap(), rms_jerk(&trended, &ChannelSelector::All).unwrap());
        prop_assert!((x - y).abs() < 1e-7 * (1.0 + x), "{} vs {}", x, y);
    }

    #[test]
    fn antipodal_joint_costs_two(s in any::<u64>(), n in 1usize..20, joint in 0usize..6) {
        let r = gen_action(&ActionTemplate::by_name("walk", 0.05).unwrap(), 24 + n, 24.0, s).unwrap();
        let (cc, sc) = (4 + 2 * joint, 5 + 2 * joint);
        let flipped = seg(24 + n, |t, ch| if ch == cc || ch == sc { -r.get(t, ch) } else { r.get(t, ch) });
        let w = EvalWindow::range(&r, &flipped, 0, 24 + n, ChannelSelector::Channels(vec![cc, sc])).unwrap();
        prop_assert!((l2_rot(&w).unwrap() - 2.0).abs() < 1e-9);
    }
}
