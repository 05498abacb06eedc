//! Symbolic interval analysis over L∞ input boxes.
//!
//! Every neuron carries a lower and an upper linear equation in the input
//! variables. Equations are stored row-wise in an `n × (d + 1)` matrix whose
//! last column is the constant term. Affine layers are propagated exactly;
//! unstable ReLUs are replaced by a linear relaxation so both bounds stay
//! linear and the region-level gradient (`interval_gradient`) is well defined.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{AffineLayer, Network};

/// Axis-aligned input box.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRegion {
    center: Array1<f64>,
    radius: f64,
    lo: Array1<f64>,
    hi: Array1<f64>,
}

impl InputRegion {
    /// `B_radius(center) ∩ [0,1]^d`.
    pub fn new(center: ArrayView1<f64>, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "region radius must be finite and non-negative, got {radius}"
            )));
        }
        if center.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig(
                "region center must lie in [0,1]^d".into(),
            ));
        }
        let lo = center.mapv(|c| (c - radius).clamp(0.0, 1.0));
        let hi = center.mapv(|c| (c + radius).clamp(0.0, 1.0));
        Ok(Self {
            center: center.to_owned(),
            radius,
            lo,
            hi,
        })
    }

    /// Arbitrary box `[lo, hi]`, not restricted to the pixel domain.
    pub fn from_box(lo: Array1<f64>, hi: Array1<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Shape {
                context: "region bounds",
                expected: lo.len(),
                actual: hi.len(),
            });
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h)
        {
            return Err(Error::InvalidConfig(
                "region requires finite lo <= hi".into(),
            ));
        }
        let center = (&lo + &hi) * 0.5;
        let radius = (&hi - &lo).fold(0.0f64, |m, &w| m.max(w * 0.5));
        Ok(Self {
            center,
            radius,
            lo,
            hi,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> ArrayView1<'_, f64> {
        self.center.view()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn lo(&self) -> ArrayView1<'_, f64> {
        self.lo.view()
    }

    pub fn hi(&self) -> ArrayView1<'_, f64> {
        self.hi.view()
    }

    pub fn contains(&self, x: ArrayView1<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l <= v && v <= h)
    }
}

/// Lower/upper linear equations for a layer of neurons, plus their
/// concretization over the region they were computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicBounds {
    pub eq_low: Array2<f64>,
    pub eq_up: Array2<f64>,
    pub concrete_lo: Array1<f64>,
    pub concrete_hi: Array1<f64>,
}

impl SymbolicBounds {
    /// `eq_low = eq_up = x_i` for every input coordinate.
    pub fn identity(region: &InputRegion) -> Self {
        let d = region.dim();
        let mut eq = Array2::zeros((d, d + 1));
        eq.slice_mut(s![.., ..d]).assign(&Array2::eye(d));
        Self {
            eq_low: eq.clone(),
            eq_up: eq,
            concrete_lo: region.lo.clone(),
            concrete_hi: region.hi.clone(),
        }
    }

    /// Builds bounds from equations, concretizing them over `region`.
    pub fn from_equations(
        eq_low: Array2<f64>,
        eq_up: Array2<f64>,
        region: &InputRegion,
    ) -> Result<Self> {
        if eq_low.dim() != eq_up.dim() {
            return Err(Error::Shape {
                context: "equation rows",
                expected: eq_low.nrows(),
                actual: eq_up.nrows(),
            });
        }
        if eq_low.ncols() != region.dim() + 1 {
            return Err(Error::Shape {
                context: "equation columns",
                expected: region.dim() + 1,
                actual: eq_low.ncols(),
            });
        }
        let concrete_lo = concretize_rows(eq_low.view(), region).0;
        let concrete_hi = concretize_rows(eq_up.view(), region).1;
        Ok(Self {
            eq_low,
            eq_up,
            concrete_lo,
            concrete_hi,
        })
    }

    pub fn len(&self) -> usize {
        self.eq_low.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of input variables the equations range over.
    pub fn input_dim(&self) -> usize {
        self.eq_low.ncols() - 1
    }

    /// Lower equations evaluated at `x`.
    pub fn eval_low(&self, x: ArrayView1<f64>) -> Array1<f64> {
        eval_rows(self.eq_low.view(), x)
    }

    /// Upper equations evaluated at `x`.
    pub fn eval_up(&self, x: ArrayView1<f64>) -> Array1<f64> {
        eval_rows(self.eq_up.view(), x)
    }
}

fn eval_rows(eq: ArrayView2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    let d = eq.ncols() - 1;
    eq.slice(s![.., ..d]).dot(&x) + eq.column(d)
}

/// Exact `(min, max)` of the linear function `eq` over the region box.
pub fn concretize(eq: ArrayView1<f64>, region: &InputRegion) -> (f64, f64) {
    let d = region.dim();
    debug_assert_eq!(eq.len(), d + 1);
    let mut min = eq[d];
    let mut max = eq[d];
    for ((&w, &l), &h) in eq.iter().zip(&region.lo).zip(&region.hi) {
        if w > 0.0 {
            min += w * l;
            max += w * h;
        } else if w < 0.0 {
            min += w * h;
            max += w * l;
        }
    }
    (min, max)
}

/// Row-wise [`concretize`] as `c + w·mid ∓ |w|·rad` over the box's
/// midpoint and half-widths.
fn concretize_rows(eq: ArrayView2<f64>, region: &InputRegion) -> (Array1<f64>, Array1<f64>) {
    let d = region.dim();
    let mid = (&region.lo + &region.hi) * 0.5;
    let rad = (&region.hi - &region.lo) * 0.5;
    let coeffs = eq.slice(s![.., ..d]);
    let center = coeffs.dot(&mid) + eq.column(d);
    let spread =
        Array1::from_iter(
            coeffs
                .outer_iter()
                .map(|row| match (row.as_slice(), rad.as_slice()) {
                    (Some(w), Some(r)) => abs_dot(w, r),
                    _ => row.iter().zip(&rad).map(|(w, r)| w.abs() * r).sum(),
                }),
        );
    (&center - &spread, center + spread)
}

/// `Σ |w_i|·r_i` with independent accumulators so the loop vectorizes.
fn abs_dot(w: &[f64], r: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (wc, rc) = (w.chunks_exact(4), r.chunks_exact(4));
    let tail: f64 = wc
        .remainder()
        .iter()
        .zip(rc.remainder())
        .map(|(a, b)| a.abs() * b)
        .sum();
    for (a, b) in wc.zip(rc) {
        for k in 0..4 {
            acc[k] += a[k].abs() * b[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn add_bias(eq: &mut Array2<f64>, bias: ArrayView1<f64>) {
    let d = eq.ncols() - 1;
    let mut col = eq.column_mut(d);
    col += &bias;
}

/// Pushes bounds through `x -> W x + bias`. Exact for affine maps.
pub fn propagate_affine(
    bounds: &SymbolicBounds,
    weights: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    region: &InputRegion,
) -> Result<SymbolicBounds> {
    if weights.ncols() != bounds.len() {
        return Err(Error::Shape {
            context: "affine propagation input",
            expected: bounds.len(),
            actual: weights.ncols(),
        });
    }
    if weights.nrows() != bias.len() {
        return Err(Error::Shape {
            context: "affine propagation bias",
            expected: weights.nrows(),
            actual: bias.len(),
        });
    }
    if bounds.input_dim() != region.dim() {
        return Err(Error::Shape {
            context: "affine propagation region",
            expected: bounds.input_dim(),
            actual: region.dim(),
        });
    }

    let (mut eq_low, mut eq_up) = if bounds.eq_low == bounds.eq_up {
        // W⁺·E + W⁻·E = W·E when the two equations coincide.
        let eq = weights.dot(&bounds.eq_low);
        (eq.clone(), eq)
    } else {
        // W⁺·L + W⁻·U = W·M − |W|·R and W⁺·U + W⁻·L = W·M + |W|·R, with
        // M = (L + U)/2 and R = (U − L)/2: two products instead of four.
        let mid = (&bounds.eq_low + &bounds.eq_up) * 0.5;
        let half = (&bounds.eq_up - &bounds.eq_low) * 0.5;
        let center = weights.dot(&mid);
        let spread = weights.mapv(f64::abs).dot(&half);
        (&center - &spread, center + spread)
    };
    add_bias(&mut eq_low, bias);
    add_bias(&mut eq_up, bias);
    SymbolicBounds::from_equations(eq_low, eq_up, region)
}

/// Applies the ReLU relaxation neuron by neuron.
///
/// With `(l, u)` the concretization of the equation being relaxed:
/// * upper: zero if `u <= 0`, unchanged if `l >= 0`, else the chord
///   `u / (u - l) · (eq_up - l)`;
/// * lower: zero if `u <= 0`, unchanged if `l >= 0`, else `u / (u - l) · eq_low`.
pub fn propagate_relu(bounds: &SymbolicBounds, region: &InputRegion) -> SymbolicBounds {
    let d = bounds.input_dim();
    let (low_min, low_max) = concretize_rows(bounds.eq_low.view(), region);
    let (up_min, up_max) = concretize_rows(bounds.eq_up.view(), region);

    let mut eq_low = bounds.eq_low.clone();
    let mut eq_up = bounds.eq_up.clone();

    for (i, mut row) in eq_up.axis_iter_mut(Axis(0)).enumerate() {
        let (l, u) = (up_min[i], up_max[i]);
        if u <= 0.0 {
            row.fill(0.0);
        } else if l < 0.0 {
            let slope = u / (u - l);
            row[d] -= l;
            row *= slope;
        }
    }
    for (i, mut row) in eq_low.axis_iter_mut(Axis(0)).enumerate() {
        let (l, u) = (low_min[i], low_max[i]);
        if u <= 0.0 {
            row.fill(0.0);
        } else if l < 0.0 {
            row *= u / (u - l);
        }
    }

    let concrete_lo = concretize_rows(eq_low.view(), region).0;
    let concrete_hi = concretize_rows(eq_up.view(), region).1;
    SymbolicBounds {
        eq_low,
        eq_up,
        concrete_lo,
        concrete_hi,
    }
}

/// Bounds on the first layer's pre-activations: both equations are `[W | b]`.
fn first_layer(layer: &AffineLayer, region: &InputRegion) -> Result<SymbolicBounds> {
    let d = region.dim();
    if layer.n_in() != d {
        return Err(Error::Shape {
            context: "analysis region",
            expected: layer.n_in(),
            actual: d,
        });
    }
    let mut eq = Array2::zeros((layer.n_out(), d + 1));
    eq.slice_mut(s![.., ..d]).assign(&layer.weights);
    eq.column_mut(d).assign(&layer.bias);
    SymbolicBounds::from_equations(eq.clone(), eq, region)
}

/// Symbolic bounds on the logits of `net` over `region`.
///
/// Equivalent to propagating [`SymbolicBounds::identity`] through every
/// layer; the first affine layer is applied in closed form.
pub fn analyze(net: &Network, region: &InputRegion) -> Result<SymbolicBounds> {
    let layers = net.layers();
    let mut bounds = first_layer(&layers[0], region)?;
    for layer in &layers[1..] {
        bounds = propagate_relu(&bounds, region);
        bounds = propagate_affine(&bounds, layer.weights.view(), layer.bias.view(), region)?;
    }
    Ok(bounds)
}

/// True iff no other class can reach the true class's lower bound anywhere
/// in the relaxed output set.
pub fn is_safe(bounds: &SymbolicBounds, label: usize) -> bool {
    let floor = bounds.concrete_lo[label];
    bounds
        .concrete_hi
        .iter()
        .enumerate()
        .all(|(j, &hi)| j == label || hi < floor)
}

/// How [`interval_gradient`] reduces the output equations to one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Slope of `eq_up[j*] - eq_low[label]` for the most threatening class.
    #[default]
    WorstClass,
    /// Average slope of both margin equations over every class.
    Averaged,
}

/// Region-level ascent direction for the adversarial margin.
///
/// The margin of class `j` over the true class is bounded above by
/// `eq_up[j] - eq_low[label]` and below by `eq_low[j] - eq_up[label]`.
pub fn interval_gradient(bounds: &SymbolicBounds, label: usize, mode: GradientMode) -> Array1<f64> {
    let d = bounds.input_dim();
    let classes = bounds.len();
    let slope = |eq: &Array2<f64>, j: usize| eq.slice(s![j, ..d]).to_owned();

    match mode {
        GradientMode::WorstClass => {
            let mut worst: Option<usize> = None;
            for j in (0..classes).filter(|&j| j != label) {
                if worst.is_none_or(|w| bounds.concrete_hi[j] > bounds.concrete_hi[w]) {
                    worst = Some(j);
                }
            }
            match worst {
                Some(j) => slope(&bounds.eq_up, j) - slope(&bounds.eq_low, label),
                None => Array1::zeros(d),
            }
        }
        GradientMode::Averaged => {
            // The true class's margin against itself is identically zero, so
            // only j != label contributes to the sum over all classes.
            let mut g = Array1::zeros(d);
            for j in (0..classes).filter(|&j| j != label) {
                g += &slope(&bounds.eq_up, j);
                g += &slope(&bounds.eq_low, j);
                g -= &slope(&bounds.eq_low, label);
                g -= &slope(&bounds.eq_up, label);
            }
            g / (2.0 * classes as f64)
        }
    }
}
