use std::time::Instant;

use interval_attack::symbolic::{
    analyze, propagate_affine, propagate_relu, InputRegion, SymbolicBounds,
};
use interval_attack::Network;
use ndarray::{s, Array1, Array2};

fn time<T>(label: &str, n: usize, mut f: impl FnMut() -> T) {
    let t = Instant::now();
    for _ in 0..n {
        std::hint::black_box(f());
    }
    println!(
        "{label}: {:.3} ms",
        t.elapsed().as_secs_f64() * 1e3 / n as f64
    );
}

fn main() {
    let net = Network::random(&[784, 100, 100, 10], 1).unwrap();
    let x = Array1::from_elem(784, 0.5);
    let region = InputRegion::new(x.view(), 0.05).unwrap();
    let l0 = &net.layers()[0];
    let mut eq = Array2::zeros((100, 785));
    eq.slice_mut(s![.., ..784]).assign(&l0.weights);
    eq.column_mut(784).assign(&l0.bias);
    let b0 = SymbolicBounds::from_equations(eq.clone(), eq.clone(), &region).unwrap();
    let r1 = propagate_relu(&b0, &region);
    let l1 = &net.layers()[1];
    time("analyze", 100, || analyze(&net, &region).unwrap());
    time("from_equations", 100, || {
        SymbolicBounds::from_equations(eq.clone(), eq.clone(), &region).unwrap()
    });
    time("relu", 100, || propagate_relu(&b0, &region));
    time("affine", 100, || {
        propagate_affine(&r1, l1.weights.view(), l1.bias.view(), &region).unwrap()
    });
    time("matmul 100x100x785", 100, || l1.weights.dot(&r1.eq_low));
    time("gradient", 1000, || {
        net.loss_and_input_gradient(x.view(), 3, Default::default())
            .unwrap()
    });
}
