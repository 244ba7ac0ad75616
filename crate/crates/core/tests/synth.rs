use std::collections::BTreeSet;
use std::path::Path;

use plc_core::raster::{containing_pixel, lanes_mask, pixel_set, rasterize_polyline};
use plc_core::synth::{
    build_dataset, build_world, perturb_lanes, rasterize_label, render_region, sample_regions, write_dataset,
    Perturbation, SynthParams,
};
use plc_core::{LaneInstance, LaneRole};
use proptest::prelude::*;

fn small(seed: u64) -> SynthParams {
    SynthParams {
        n_regions: 10,
        lanes_per_scene: 3,
        region_height: 128,
        region_width: 64,
        resolution: 0.25,
        seed,
        ..SynthParams::default()
    }
}

fn straight(track_id: u32, n: usize) -> LaneInstance {
    LaneInstance::new(track_id, LaneRole::GroundTruth, (0..n).map(|i| [50.0, i as f64 * 0.5]).collect())
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn noise_has_requested_sigma() {
    let gt = vec![straight(1, 1500)];
    let p = Perturbation {
        amplitude: 0.0,
        wavelength: 100.0,
        noise_sigma: 2.0,
    };
    let init = perturb_lanes(&gt, &p, 11);
    for axis in 0..2 {
        let d: Vec<f64> = init[0].points.iter().zip(&gt[0].points).map(|(a, b)| a[axis] - b[axis]).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((sd - 2.0).abs() < 0.3, "axis {axis}: sd {sd}");
    }
}

#[test]
fn horizontal_segment_and_empty_masks() {
    let map = lanes_mask([&[[2.0, 5.0], [10.0, 5.0]][..]], 20, 20, 1);
    let expected: BTreeSet<(usize, usize)> = (1..=11).flat_map(|x| (4..=6).map(move |y| (x, y))).collect();
    assert_eq!(pixel_set(&map), expected);
    assert_eq!(rasterize_label(&[], 20, 20).count(), 0);
}

#[test]
fn label_lies_between_centerline_and_its_dilation() {
    let data = build_dataset(&small(7)).unwrap();
    for s in data.train.iter().chain(&data.test) {
        let (h, w) = (s.height(), s.width());
        let label = pixel_set(&s.label);
        let mut center = BTreeSet::new();
        for lane in &s.gt {
            center.extend(pixel_set(&rasterize_polyline(&lane.points, h, w)));
            for p in &lane.points {
                let (x, y) = containing_pixel(*p);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    assert!(label.contains(&(x as usize, y as usize)), "{} misses {p:?}", s.image_id);
                }
            }
        }
        assert!(center.is_subset(&label));
        let dilated = lanes_mask(s.gt.iter().map(|l| l.points.as_slice()), h, w, 1);
        assert!(label.is_subset(&pixel_set(&dilated)));
    }
}

#[test]
fn rendering_is_pure_and_independent_of_region_count() {
    let params = small(8);
    let world = build_world(&params);
    let anchors = sample_regions(
        &world.trajectory,
        params.region_spacing,
        params.region_height,
        params.region_width,
        params.resolution,
    )
    .unwrap();
    let a = render_region(&world, &anchors[3], &params);
    assert_eq!(a, render_region(&world, &anchors[3], &params));

    let more = build_dataset(&SynthParams { n_regions: 15, ..params.clone() }).unwrap();
    let fewer = build_dataset(&params).unwrap();
    assert_eq!(fewer.train[..], more.train[..fewer.train.len()]);
}

#[test]
fn split_pairs_and_track_ids() {
    let data = build_dataset(&small(9)).unwrap();
    assert_eq!((data.train.len(), data.test.len()), (6, 4));
    for s in data.train.iter().chain(&data.test) {
        let ids: Vec<u32> = s.initial.iter().map(|l| l.track_id).collect();
        assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), ids.len(), "{}", s.image_id);
        for init in &s.initial {
            assert_eq!(init.role, LaneRole::Initial);
            let gt = s.gt_for(init.track_id).expect("GT partner");
            assert_eq!(gt.points.len(), init.points.len());
        }
    }
}

#[test]
fn written_datasets_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let params = small(10);
    let ma = write_dataset(&params, a.path()).unwrap();
    let mb = write_dataset(&params, b.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!((ma.train, ma.test), (6, 4));
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), 31);
    assert_eq!(ta, tb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn drift_stays_within_amplitude(amp in 0.0..10.0f64, wavelength in 20.0..500.0f64, seed: u64) {
        let gt = vec![straight(1, 200)];
        let p = Perturbation { amplitude: amp, wavelength, noise_sigma: 0.0 };
        let init = perturb_lanes(&gt, &p, seed);
        prop_assert_eq!(&init, &perturb_lanes(&gt, &p, seed));
        for (a, b) in init[0].points.iter().zip(&gt[0].points) {
            prop_assert!((a[0] - b[0]).hypot(a[1] - b[1]) <= amp + 1e-9);
        }
    }
}
