//! Generators and brute-force oracles shared by the integration suites.
//!
//! Nothing here calls into the symbolic analysis; the oracles are plain
//! enumeration and sampling.

#![allow(dead_code)]

use interval_attack::nn::AffineLayer;
use interval_attack::Network;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random ReLU net with 1..=max_hidden_layers hidden layers.
pub fn random_net(
    rng: &mut ChaCha8Rng,
    max_dim: usize,
    max_hidden_layers: usize,
    max_width: usize,
    classes: usize,
) -> Network {
    let d = rng.gen_range(1..=max_dim);
    let hidden = rng.gen_range(1..=max_hidden_layers);
    let mut arch = vec![d];
    for _ in 0..hidden {
        arch.push(rng.gen_range(1..=max_width));
    }
    arch.push(classes);
    Network::random(&arch, rng.gen()).unwrap()
}

/// Purely affine network (a single layer, so no ReLU anywhere).
pub fn random_affine_net(rng: &mut ChaCha8Rng, d: usize, classes: usize) -> Network {
    Network::random(&[d, classes], rng.gen()).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| rng.gen::<f64>())
}

pub fn uniform_in_box(rng: &mut ChaCha8Rng, lo: &Array1<f64>, hi: &Array1<f64>) -> Array1<f64> {
    Array1::from_shape_fn(lo.len(), |i| {
        if hi[i] > lo[i] {
            rng.gen_range(lo[i]..=hi[i])
        } else {
            lo[i]
        }
    })
}

/// All 2^d corners of the box.
pub fn corners(lo: &Array1<f64>, hi: &Array1<f64>) -> Vec<Array1<f64>> {
    let d = lo.len();
    (0..1usize << d)
        .map(|mask| Array1::from_shape_fn(d, |i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }))
        .collect()
}

/// Exact range of each logit of an affine net by corner enumeration.
pub fn affine_range_by_corners(
    net: &Network,
    lo: &Array1<f64>,
    hi: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let c = net.num_classes();
    let mut min = Array1::from_elem(c, f64::INFINITY);
    let mut max = Array1::from_elem(c, f64::NEG_INFINITY);
    for x in corners(lo, hi) {
        let y = net.forward(x.view()).unwrap();
        for j in 0..c {
            min[j] = min[j].min(y[j]);
            max[j] = max[j].max(y[j]);
        }
    }
    (min, max)
}

/// Smallest distance of any hidden pre-activation from zero at `x`.
pub fn kink_distance(net: &Network, x: &Array1<f64>) -> f64 {
    let mut act = x.clone();
    let mut closest = f64::INFINITY;
    let n = net.layers().len();
    for (k, l) in net.layers().iter().enumerate() {
        let z = l.weights.dot(&act) + &l.bias;
        if k + 1 < n {
            closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
            act = z.mapv(|v| v.max(0.0));
        }
    }
    closest
}

/// Points `lo, lo + step, ..., hi` of a 1-D grid.
pub fn grid_1d(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / step).floor() as usize;
    (0..=n)
        .map(move |k| lo + k as f64 * step)
        .chain(std::iter::once(hi))
}

/// First grid point in `[lo, hi]` that the net does not classify as `label`.
pub fn grid_violation(net: &Network, lo: f64, hi: f64, step: f64, label: usize) -> Option<f64> {
    grid_1d(lo, hi, step).find(|&x| net.predict(array![x].view()).unwrap() != label)
}

/// A one-input, two-class net whose margin `z1 - z0` is a baseline of -1
/// plus two triangular bumps. The centre sits on a flat stretch of the
/// baseline, so the input gradient there is zero and signed-gradient ascent
/// never leaves it. A small bump behind the centre never crosses zero; a
/// taller one ahead of it, inside the budget, does.
#[derive(Debug, Clone)]
pub struct PlateauInstance {
    pub net: Network,
    pub center: f64,
    pub label: usize,
}

fn bump_units(center: f64, half_width: f64, height: f64) -> [(f64, f64); 3] {
    // (threshold, output weight) for h/w · (r(x-a) - 2 r(x-c) + r(x-b)).
    let slope = height / half_width;
    [
        (center - half_width, slope),
        (center, -2.0 * slope),
        (center + half_width, slope),
    ]
}

pub fn plateau_instance(rng: &mut ChaCha8Rng) -> PlateauInstance {
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let x0 = rng.gen_range(0.4..0.6);
    let base = -1.0;

    // Decoy bump behind the centre, peaking below zero.
    let decoy_gap = rng.gen_range(0.01..0.03);
    let decoy_half = rng.gen_range(0.02..0.05);
    let decoy_peak = rng.gen_range(-0.5..-0.1);
    let decoy = bump_units(
        x0 - dir * (decoy_gap + decoy_half),
        decoy_half,
        decoy_peak - base,
    );

    // Violating bump ahead of it.
    let gap = rng.gen_range(0.01..0.06);
    let target_half = rng.gen_range(0.05..0.08);
    let target_peak = rng.gen_range(0.5..1.5);
    let target = bump_units(
        x0 + dir * (gap + target_half),
        target_half,
        target_peak - base,
    );

    let units: Vec<(f64, f64)> = decoy.into_iter().chain(target).collect();
    let hidden_w = Array2::from_shape_fn((units.len(), 1), |_| 1.0);
    let hidden_b = Array1::from_iter(units.iter().map(|(t, _)| -t));
    let mut out_w = Array2::zeros((2, units.len()));
    for (k, (_, v)) in units.iter().enumerate() {
        out_w[[1, k]] = *v;
    }
    let net = Network::new(vec![
        AffineLayer::new(hidden_w, hidden_b).unwrap(),
        AffineLayer::new(out_w, array![0.0, base]).unwrap(),
    ])
    .unwrap();
    PlateauInstance {
        net,
        center: x0,
        label: 0,
    }
}
