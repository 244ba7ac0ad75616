use plc_autodiff::{Graph, Tensor};
use plc_core::model::network::{self, ConvBackbone};
use plc_core::model::{apply_offsets, checkpoint, forward, BoundLayer, ModelConfig, ModelParams};
use plc_core::{LaneInstance, LaneRole, OffsetField, Point};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![3, h, w], (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Initialized parameters with a non-zero offset head.
fn live_params(seed: u64, patch: usize) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(&ModelConfig::with_patch_size(patch), &mut rng).cast::<f64>();
    for v in p.layers.mlp[4].weight.data_mut() {
        *v = rng.random_range(-0.2..0.2);
    }
    p
}

fn lane(track: u32, pts: &[Point]) -> LaneInstance {
    LaneInstance::new(track, LaneRole::Initial, pts.to_vec())
}

fn layer(g: &mut Graph<f64>, w_shape: &[usize], w: &[f64], b: &[f64]) -> BoundLayer {
    BoundLayer {
        weight: g.param(Tensor::new(w_shape.to_vec(), w.to_vec()).unwrap()),
        bias: g.param(Tensor::new(vec![b.len()], b.to_vec()).unwrap()),
    }
}

#[test]
fn features_have_four_channels_at_input_size() {
    let params = live_params(1, 4);
    let mut g = Graph::new();
    let layers = params.bind(&mut g);
    let image = g.constant(random_image(2, 32, 48));
    let (features, logits) =
        network::extract_multiscale_features(&mut g, &ConvBackbone { stages: &layers.backbone }, &layers.seg_head, image)
            .unwrap();
    assert_eq!(g.shape(features), &[4, 32, 48]);
    assert_eq!(g.shape(logits), &[1, 32, 48]);
}

#[test]
fn zero_network_emits_the_seg_bias() {
    let mut params = live_params(1, 4);
    for (name, t) in params.named_tensors_mut() {
        if name.starts_with("backbone") || name == "seg_head.weight" {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    params.layers.seg_head.bias.data_mut()[0] = -0.75;
    let out = forward(&random_image(3, 32, 32), &[], &params).unwrap();
    assert!(out.seg_logits.data().iter().all(|&v| v == -0.75));
}

#[test]
fn features_match_a_hand_composed_pipeline() {
    let params = live_params(4, 4);
    let image = random_image(5, 32, 32);
    let mut g = Graph::new();
    let layers = params.bind(&mut g);
    let img = g.constant(image.clone());
    let (features, logits) =
        network::extract_multiscale_features(&mut g, &ConvBackbone { stages: &layers.backbone }, &layers.seg_head, img)
            .unwrap();

    let mut h = Graph::new();
    let img = h.constant(image);
    let mut x = img;
    let mut ups = Vec::new();
    for (s, stage) in params.layers.backbone.iter().enumerate() {
        for (i, conv) in stage.iter().enumerate() {
            let w = h.constant(conv.weight.clone());
            let b = h.constant(conv.bias.clone());
            x = h.conv2d(x, w, if i == 0 { 2 } else { 1 }, 1).unwrap();
            x = h.add_channel_bias(x, b).unwrap();
            x = h.relu(x);
        }
        if s > 0 {
            ups.push(h.upsample_bilinear(x, 2 << s).unwrap());
        }
    }
    let stacked = h.concat(&ups).unwrap();
    let w = h.constant(params.layers.seg_head.weight.clone());
    let b = h.constant(params.layers.seg_head.bias.clone());
    let seg = h.conv2d(stacked, w, 1, 0).unwrap();
    let seg = h.add_channel_bias(seg, b).unwrap();
    let prob = h.sigmoid(seg);
    let feats = h.concat(&[img, prob]).unwrap();

    for (a, b) in g.value(logits).data().iter().zip(h.value(seg).data()) {
        assert!((a - b).abs() < 1e-6);
    }
    for (a, b) in g.value(features).data().iter().zip(h.value(feats).data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

fn crop(map: Tensor<f64>, points: &[Point], p: usize) -> Tensor<f64> {
    let mut g = Graph::new();
    let f = g.constant(map);
    let t = network::crop_patch_features(&mut g, f, points, p).unwrap();
    g.value(t).clone()
}

#[test]
fn constant_map_gives_constant_patches() {
    let map = Tensor::full(vec![4, 10, 12], 0.3);
    let t = crop(map, &[[2.2, 3.7], [11.0, 9.0], [-1.0, 4.0]], 6);
    assert_eq!(t.shape(), &[144, 3]);
    assert!(t.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
}

#[test]
fn on_grid_patches_read_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let map = random_tensor(&mut rng, &[4, 12, 12]);
    let (x0, y0) = (6usize, 5usize);
    let t = crop(map.clone(), &[[x0 as f64, y0 as f64]], 4);
    let mut k = 0;
    for gy in 0..4 {
        for gx in 0..4 {
            for c in 0..4 {
                let (x, y) = (x0 + gx - 2, y0 + gy - 2);
                assert_eq!(t.data()[k], map.data()[(c * 12 + y) * 12 + x]);
                k += 1;
            }
        }
    }
}

#[test]
fn corner_patches_clamp_into_the_map() {
    let map = Tensor::new(vec![4, 4, 4], (0..64).map(f64::from).collect()).unwrap();
    let t = crop(map, &[[0.0, 0.0]], 4);
    // offsets -2, -1, 0, 1 clamp to 0, 0, 0, 1 on both axes
    let grid = [0usize, 0, 0, 1];
    let mut k = 0;
    for &y in &grid {
        for &x in &grid {
            for c in 0..4 {
                assert_eq!(t.data()[k], (c * 16 + y * 4 + x) as f64);
                k += 1;
            }
        }
    }
}

#[test]
fn patch_features_follow_translated_content() {
    let (h, w) = (24, 24);
    let content = |c: usize, x: f64, y: f64| (0.3 * x + c as f64).sin() * (0.2 * y).cos();
    let make = |dx: f64, dy: f64| {
        let data = (0..4)
            .flat_map(|c| (0..h).flat_map(move |y| (0..w).map(move |x| content(c, x as f64 - dx, y as f64 - dy))))
            .collect();
        Tensor::new(vec![4, h, w], data).unwrap()
    };
    let pts = [[7.3, 8.6], [9.1, 10.25]];
    let moved: Vec<Point> = pts.iter().map(|p| [p[0] + 5.0, p[1] + 3.0]).collect();
    let a = crop(make(0.0, 0.0), &pts, 6);
    let b = crop(make(5.0, 3.0), &moved, 6);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn attention(t: Tensor<f64>, w: &[f64], b: f64) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::new();
    let layer = layer(&mut g, &[1, 2, 3], w, &[b]);
    let tv = g.constant(t.clone());
    let a = network::lane_attention(&mut g, tv, &layer).unwrap();
    (t, g.value(a).clone())
}

#[test]
fn zero_attention_halves_the_descriptors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (t, a) = attention(random_tensor(&mut rng, &[16, 5]), &[0.0; 6], 0.0);
    for (x, y) in t.data().iter().zip(a.data()) {
        assert_eq!(*y, 0.5 * x);
    }
}

#[test]
fn attention_matches_a_hand_trace() {
    let t = Tensor::new(vec![4, 2], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0, -2.0, 0.5]).unwrap();
    let w_max = [0.1, 0.2, -0.1];
    let w_mean = [0.3, 0.0, 0.5];
    let mut w = w_max.to_vec();
    w.extend(w_mean);
    let (_, a) = attention(t, &w, 0.05);
    // pooled over M: max = [2, 3, 4, 0.5], mean = [1.5, 1, 2, -0.75]
    let logits: [f64; 4] = [
        0.05 + 0.2 * 2.0 - 0.1 * 3.0 + 0.0 * 1.5 + 0.5 * 1.0,
        0.05 + 0.1 * 2.0 + 0.2 * 3.0 - 0.1 * 4.0 + 0.3 * 1.5 + 0.5 * 2.0,
        0.05 + 0.1 * 3.0 + 0.2 * 4.0 - 0.1 * 0.5 + 0.3 * 1.0 + 0.5 * -0.75,
        0.05 + 0.1 * 4.0 + 0.2 * 0.5 + 0.3 * 2.0,
    ];
    let rows = [[1.0, 2.0], [3.0, -1.0], [0.0, 4.0], [-2.0, 0.5]];
    for k in 0..4 {
        let s = 1.0 / (1.0 + (-logits[k]).exp());
        for m in 0..2 {
            assert!((a.data()[k * 2 + m] - s * rows[k][m]).abs() < 1e-6);
        }
    }
}

#[test]
fn mlp_matches_hand_matrix_arithmetic() {
    let a_rows = [[1.0, -0.5], [0.25, 2.0], [-1.0, 0.0], [0.5, 1.5]];
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![4, 2], a_rows.iter().flatten().copied().collect()).unwrap());
    let w0: Vec<f64> = (0..12).map(|i| (i as f64 - 5.0) * 0.1).collect();
    let wh: Vec<f64> = (0..9).map(|i| ((i * 7) % 5) as f64 * 0.2 - 0.3).collect();
    let w4: Vec<f64> = (0..6).map(|i| 0.5 - i as f64 * 0.15).collect();
    let b = [0.1, -0.2, 0.05];
    let mlp = [
        layer(&mut g, &[3, 4, 1], &w0, &b),
        layer(&mut g, &[3, 3, 1], &wh, &b),
        layer(&mut g, &[3, 3, 1], &wh, &b),
        layer(&mut g, &[3, 3, 1], &wh, &b),
        layer(&mut g, &[2, 3, 1], &w4, &[0.3, -0.4]),
    ];
    let out = network::correction_mlp(&mut g, a, &mlp).unwrap();
    assert_eq!(g.shape(out), &[2, 2]);

    let dense = |w: &[f64], b: &[f64], x: &[Vec<f64>], relu: bool| -> Vec<Vec<f64>> {
        let (rows, cols) = (b.len(), x.len());
        (0..rows)
            .map(|r| {
                (0..2)
                    .map(|m| {
                        let v = b[r] + (0..cols).map(|c| w[r * cols + c] * x[c][m]).sum::<f64>();
                        if relu { v.max(0.0) } else { v }
                    })
                    .collect()
            })
            .collect()
    };
    let mut x: Vec<Vec<f64>> = a_rows.iter().map(|r| r.to_vec()).collect();
    x = dense(&w0, &b, &x, true);
    for _ in 0..3 {
        x = dense(&wh, &b, &x, true);
    }
    x = dense(&w4, &[0.3, -0.4], &x, false);
    for r in 0..2 {
        for m in 0..2 {
            assert!((g.value(out).data()[r * 2 + m] - x[r][m]).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_head_leaves_lanes_in_place() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = ModelParams::init(&ModelConfig::with_patch_size(4), &mut rng).cast::<f64>();
    let lanes = [lane(7, &[[3.5, 4.0], [10.0, 20.0], [12.25, 30.0]])];
    let out = forward(&random_image(9, 32, 32), &lanes, &params).unwrap();
    assert_eq!(out.corrected.len(), 1);
    assert_eq!(out.corrected[0].track_id, 7);
    assert_eq!(out.corrected[0].role, LaneRole::Corrected);
    assert_eq!(out.corrected[0].points, lanes[0].points);
    assert_eq!(out.offsets[0], OffsetField::zeros(3));
}

#[test]
fn stubbed_head_shifts_every_point() {
    let mut params = live_params(10, 4);
    params.layers.mlp[4].weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    params.layers.mlp[4].bias.data_mut().copy_from_slice(&[1.0, -2.0]);
    let lanes = [lane(1, &[[3.0, 4.0], [8.5, 9.5]]), lane(2, &[[20.0, 1.0], [21.0, 30.0]])];
    let out = forward(&random_image(11, 32, 32), &lanes, &params).unwrap();
    for (inp, cor) in lanes.iter().zip(&out.corrected) {
        for (p, q) in inp.points.iter().zip(&cor.points) {
            assert_eq!(*q, [p[0] + 1.0, p[1] - 2.0]);
        }
    }
    let manual = apply_offsets(&lanes[0], &OffsetField { offsets: vec![[1.0, -2.0]; 2] });
    assert_eq!(manual, out.corrected[0]);
}

#[test]
fn attention_zero_init_equals_halving_variant() {
    let mut params = live_params(12, 4);
    params.layers.attention.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    params.layers.attention.bias.data_mut()[0] = 0.0;
    let image = random_image(13, 32, 32);
    let pts = [[4.2, 5.1], [9.0, 12.7], [15.5, 20.0], [22.0, 28.4]];
    let full = forward(&image, &[lane(1, &pts)], &params).unwrap();

    let mut g = Graph::new();
    let layers = params.bind(&mut g);
    let img = g.constant(image);
    let (features, _) =
        network::extract_multiscale_features(&mut g, &ConvBackbone { stages: &layers.backbone }, &layers.seg_head, img)
            .unwrap();
    let t = network::crop_patch_features(&mut g, features, &pts, 4).unwrap();
    let halved = g.scale(t, 0.5);
    let offsets = network::correction_mlp(&mut g, halved, &layers.mlp).unwrap();
    let rows = g.value(offsets).data().to_vec();
    assert_eq!(OffsetField::from_rows(&rows), full.offsets[0]);
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let params = ModelParams::init(&ModelConfig::default(), &mut rng);
    let bytes = checkpoint::encode(&params, "{\"note\":1}");
    assert_eq!(&bytes[..7], b"PLCNET1");
    let (meta, back) = checkpoint::decode(&bytes).unwrap();
    assert_eq!(meta, "{\"note\":1}");
    assert_eq!(back, params);
    assert!(checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode(&bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn lanes_do_not_interact(seed in 0u64..1000, order in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let params = live_params(seed, 4);
        let image = random_image(seed + 1, 32, 32);
        let lanes = [
            lane(1, &[[2.0, 3.0], [5.5, 12.0], [6.0, 30.0]]),
            lane(2, &[[12.0, 1.0], [14.0, 16.0], [15.0, 31.0]]),
            lane(3, &[[25.0, 0.0], [27.5, 15.0], [29.0, 29.0]]),
        ];
        let permuted: Vec<LaneInstance> = order.iter().map(|&i| lanes[i].clone()).collect();
        let a = forward(&image, &lanes, &params).unwrap();
        let b = forward(&image, &permuted, &params).unwrap();
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(&a.corrected[i], &b.corrected[j]);
        }
    }

    #[test]
    fn attention_never_amplifies(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (t, a) = attention(random_tensor(&mut rng, &[12, 4]), &w, rng.random_range(-1.0..1.0));
        for (x, y) in t.data().iter().zip(a.data()) {
            prop_assert!(y.abs() <= x.abs());
        }
    }
}
