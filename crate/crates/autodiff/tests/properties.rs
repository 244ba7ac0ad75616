use plc_autodiff::{Graph, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn upsample_of_constant_is_constant(c in 1usize..3, h in 1usize..5, w in 1usize..5, f in 1usize..5, v in -10.0f64..10.0) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![c, h, w], v));
        let y = g.upsample_bilinear(x, f).unwrap();
        prop_assert_eq!(g.shape(y), &[c, f * h, f * w][..]);
        prop_assert!(g.value(y).data().iter().all(|&u| (u - v).abs() < 1e-12));
    }

    #[test]
    fn activations_respect_bounds(xs in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![xs.len()], xs.clone()).unwrap());
        let s = g.sigmoid(x);
        let r = g.relu(x);
        for ((&v, &sv), &rv) in xs.iter().zip(g.value(s).data()).zip(g.value(r).data()) {
            prop_assert!(sv > 0.0 && sv < 1.0);
            prop_assert!(rv >= 0.0);
            if v >= 0.0 { prop_assert_eq!(rv, v); }
        }
    }

    #[test]
    fn forward_values_stay_finite(xs in proptest::collection::vec(-1e3f64..1e3, 16)) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::<f64>::new(vec![1, 4, 4], xs).unwrap().cast());
        let k = g.constant(Tensor::full(vec![2, 1, 3, 3], 0.5f32));
        let y = g.conv2d(x, k, 1, 1).unwrap();
        let s = g.sigmoid(y);
        let u = g.upsample_bilinear(s, 2).unwrap();
        prop_assert!(g.value(u).is_finite());
    }
}
