mod common;

use interval_attack::nn::{cross_entropy_loss, Loss};
use interval_attack::Network;
use ndarray::{Array1, ArrayView1};
use proptest::prelude::*;
use rand::Rng;

/// Worst relative coordinate error of the analytic gradient against central
/// differences. Coordinates whose true derivative is below `floor` in
/// magnitude are compared on an absolute scale of `floor`.
fn fd_relative_error(net: &Network, x: ArrayView1<f64>, label: usize, loss: Loss, h: f64) -> f64 {
    let (_, g) = net.loss_and_input_gradient(x, label, loss).unwrap();
    let floor = 1e-6;
    (0..x.len())
        .map(|i| {
            let mut plus = x.to_owned();
            let mut minus = x.to_owned();
            plus[i] += h;
            minus[i] -= h;
            let lp = net
                .loss_and_input_gradient(plus.view(), label, loss)
                .unwrap()
                .0;
            let lm = net
                .loss_and_input_gradient(minus.view(), label, loss)
                .unwrap()
                .0;
            let fd = (lp - lm) / (2.0 * h);
            (g[i] - fd).abs() / fd.abs().max(g[i].abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = common::rng(11);
    let mut checked = 0;
    while checked < 100 {
        let classes = rng.gen_range(2..=10);
        let net = common::random_net(&mut rng, 12, 3, 32, classes);
        let x = common::random_point(&mut rng, net.input_dim());
        if common::kink_distance(&net, &x) < 1e-2 {
            continue;
        }
        let label = rng.gen_range(0..net.num_classes());
        let err = fd_relative_error(&net, x.view(), label, Loss::CrossEntropy, 1e-4);
        assert!(err <= 1e-3, "relative error {err}");
        checked += 1;
    }
}

#[test]
fn margin_gradient_matches_finite_differences() {
    let mut rng = common::rng(12);
    let mut checked = 0;
    while checked < 50 {
        let classes = rng.gen_range(2..=6);
        let net = common::random_net(&mut rng, 8, 2, 16, classes);
        let x = common::random_point(&mut rng, net.input_dim());
        if common::kink_distance(&net, &x) < 1e-2 {
            continue;
        }
        // Skip points near a change of the best other class.
        let z = net.forward(x.view()).unwrap();
        let label = rng.gen_range(0..net.num_classes());
        let mut others: Vec<f64> = (0..z.len()).filter(|&j| j != label).map(|j| z[j]).collect();
        others.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if others.len() > 1 && others[0] - others[1] < 1e-2 {
            continue;
        }
        let err = fd_relative_error(&net, x.view(), label, Loss::CwMargin, 1e-4);
        assert!(err <= 1e-3, "relative error {err}");
        checked += 1;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cross_entropy_is_nonnegative(
        logits in prop::collection::vec(-1e3f64..1e3, 2..12),
        pick in 0usize..12,
    ) {
        let label = pick % logits.len();
        let l = cross_entropy_loss(Array1::from(logits).view(), label);
        prop_assert!(l >= 0.0 && l.is_finite());
    }

    #[test]
    fn forward_is_deterministic_and_pure(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let net = common::random_net(&mut rng, 10, 3, 20, 4);
        let before = net.clone();
        let x = common::random_point(&mut rng, net.input_dim());
        let a = net.forward(x.view()).unwrap();
        let b = net.forward(x.view()).unwrap();
        prop_assert_eq!(a.to_vec(), b.to_vec());
        prop_assert_eq!(&net, &before);
    }

    #[test]
    fn batch_forward_matches_rows(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let net = common::random_net(&mut rng, 10, 3, 20, 4);
        let xs = ndarray::Array2::from_shape_fn((5, net.input_dim()), |_| rng.gen::<f64>());
        let batch = net.forward_batch(xs.view()).unwrap();
        for (row, x) in xs.outer_iter().enumerate() {
            let single = net.forward(x).unwrap();
            for j in 0..single.len() {
                prop_assert!((batch[[row, j]] - single[j]).abs() <= 1e-12);
            }
        }
    }
}
