use plc_core::synth::{build_dataset, SynthParams};
use plc_core::training::loss::{focal_loss_value, offset_loss};
use plc_core::training::preprocess::NetScale;
use plc_core::training::{correct, resample_lane, train, TrainConfig};
use plc_core::{OffsetField, Point};
use proptest::prelude::*;

fn small_synth(seed: u64) -> SynthParams {
    SynthParams {
        n_regions: 5,
        lanes_per_scene: 2,
        region_height: 128,
        region_width: 64,
        resolution: 0.25,
        seed,
        ..SynthParams::default()
    }
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        net_height: 64,
        net_width: 32,
        m: 8,
        p: 4,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

fn on_line(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    ((p[0] - a[0]) * d[1] - (p[1] - a[1]) * d[0]).abs() / d[0].hypot(d[1])
}

#[test]
fn two_point_segment_resamples_evenly() {
    let out = resample_lane(&[[0.0, 0.0], [3.0, 6.0]], 4).unwrap();
    let expected = [[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
    for (p, q) in out.iter().zip(&expected) {
        assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
    }
}

#[test]
fn focal_loss_examples() {
    assert!(focal_loss_value(&[20.0, -20.0, -20.0], &[1, 0, 0]).unwrap() < 1e-6);
    let single = focal_loss_value(&[0.0], &[0]).unwrap();
    assert!((single - 0.75 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((single - 0.1300).abs() < 5e-5);
}

#[test]
fn offset_loss_examples() {
    let zero = OffsetField::zeros(1);
    assert_eq!(offset_loss(&[zero.clone()], &[zero.clone()]).unwrap(), 0.0);
    let half = OffsetField { offsets: vec![[0.5, 0.0]] };
    assert_eq!(offset_loss(&[half], &[zero.clone()]).unwrap(), 0.125);
    let big = OffsetField { offsets: vec![[3.0, 4.0]] };
    assert_eq!(offset_loss(&[big], &[zero]).unwrap(), 6.5);
}

#[test]
fn survey_to_network_scale_factor() {
    let s = NetScale::new(2800, 1400, 640, 320);
    assert_eq!((1.0 / s.sx, 1.0 / s.sy), (4.375, 4.375));
}

#[test]
fn training_is_deterministic_and_descends() {
    let data = build_dataset(&small_synth(2)).unwrap();
    let config = small_config(12);
    let a = train(&config, &data.train).unwrap();
    let b = train(&config, &data.train).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    let first = a.history.first().unwrap().total(&config);
    let last = a.history.last().unwrap().total(&config);
    assert!(last < first, "{first} -> {last}");
    for r in &a.history {
        assert!(r.seg_loss.is_finite() && r.seg_loss >= 0.0);
        assert!(r.offset_loss.is_finite() && r.offset_loss >= 0.0);
    }
}

#[test]
fn one_trivially_perturbed_sample_is_fitted() {
    let params = SynthParams {
        drift_amplitude: 1.0,
        noise_sigma: 0.0,
        ..small_synth(3)
    };
    let data = build_dataset(&params).unwrap();
    let config = TrainConfig {
        batch_size: 1,
        ..small_config(60)
    };
    let ckpt = train(&config, &data.train[..1]).unwrap();
    let last = ckpt.history.last().unwrap();
    assert!(last.offset_loss < 0.01, "{:?}", ckpt.history);
}

#[test]
fn untrained_model_returns_resampled_initial_lanes() {
    let data = build_dataset(&small_synth(4)).unwrap();
    let config = small_config(0);
    let ckpt = train(&config, &data.train).unwrap();
    assert!(ckpt.history.is_empty());
    let sample = &data.test[0];
    let out = correct(&ckpt, sample).unwrap();
    assert_eq!(out.len(), sample.initial.len());
    for (lane, init) in out.iter().zip(&sample.initial) {
        assert_eq!(lane.track_id, init.track_id);
        assert_eq!(lane.points.len(), 8);
        let expected = resample_lane(&init.points, 8).unwrap();
        for (p, q) in lane.points.iter().zip(&expected) {
            assert!((p[0] - q[0]).abs() < 1e-6 && (p[1] - q[1]).abs() < 1e-6, "{p:?} vs {q:?}");
        }
    }
}

proptest! {
    #[test]
    fn resampling_keeps_count_and_endpoints(
        pts in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64), 2..12),
        m in 2usize..40,
    ) {
        let pts: Vec<Point> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        if let Ok(out) = resample_lane(&pts, m) {
            prop_assert_eq!(out.len(), m);
            prop_assert_eq!(out[0], pts[0]);
            prop_assert_eq!(out[m - 1], *pts.last().unwrap());
            prop_assert!(out.iter().flatten().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn resampling_reproduces_lines(
        a in (0.0..50.0f64, 0.0..50.0f64),
        b in (60.0..100.0f64, 0.0..100.0f64),
        n in 2usize..10,
        m in 2usize..40,
    ) {
        let (a, b) = ([a.0, a.1], [b.0, b.1]);
        let pts: Vec<Point> = (0..n)
            .map(|i| {
                let t = (i as f64 / (n - 1) as f64).powf(1.3);
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            })
            .collect();
        for p in resample_lane(&pts, m).unwrap() {
            prop_assert!(on_line(p, a, b) < 1e-6);
        }
    }

    #[test]
    fn focal_loss_is_non_negative(
        cells in prop::collection::vec((-30.0..30.0f64, 0u8..2), 1..50),
    ) {
        let (logits, labels): (Vec<f64>, Vec<u8>) = cells.into_iter().unzip();
        let v = focal_loss_value(&logits, &labels).unwrap();
        prop_assert!(v >= 0.0 && v.is_finite());
    }

    #[test]
    fn net_scaling_round_trips(
        orig in (16usize..3000, 16usize..3000),
        net in (1usize..40, 1usize..40),
        p in (-10.0..3000.0f64, -10.0..3000.0f64),
    ) {
        let s = NetScale::new(orig.0, orig.1, net.0 * 16, net.1 * 16);
        let q = s.to_orig(s.to_net([p.0, p.1]));
        prop_assert!((q[0] - p.0).abs() < 1e-6 && (q[1] - p.1).abs() < 1e-6);
    }
}
