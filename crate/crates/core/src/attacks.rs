//! First-order L∞ attacks: PGD, CW-margin PGD and the interval attack.
//!
//! All attacks work in normalized pixel space and keep every iterate inside
//! `B_ε(x) ∩ [0,1]^d`. Outcomes are a pure function of the network, the
//! input and the configuration (including its seed).

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::{Array1, ArrayView1, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{argmax, cross_entropy_loss, Loss, Network};
use crate::symbolic::{analyze, interval_gradient, is_safe, GradientMode, InputRegion};

/// How the interval phase turns `g_I` into a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// `x' + α·sign(g_I)`.
    #[default]
    Signed,
    /// `x' + α·g_I`.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// L∞ budget in normalized pixels.
    pub epsilon: f64,
    pub pgd_steps: usize,
    pub pgd_step_size: f64,
    /// Number of interval-gradient iterations `t`.
    pub interval_iters: usize,
    pub interval_step_size: f64,
    /// Initial analysis radius `ε₀`.
    pub eps0_init: f64,
    /// Geometric growth factor `p` for the analysis radius.
    pub region_growth: f64,
    /// Uniform random start for PGD and CW.
    pub random_start: bool,
    /// Uniform random start for the interval attack (off: start at `x`).
    pub interval_random_start: bool,
    pub seed: u64,
    /// Objective ascended by PGD steps (including the interval hand-off).
    pub loss: Loss,
    pub g_mode: GradientMode,
    pub step_rule: StepRule,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            pgd_steps: 40,
            pgd_step_size: 0.01,
            interval_iters: 20,
            interval_step_size: 0.05,
            eps0_init: 0.01,
            region_growth: 2.0,
            random_start: true,
            interval_random_start: false,
            seed: 0,
            loss: Loss::CrossEntropy,
            g_mode: GradientMode::WorstClass,
            step_rule: StepRule::Signed,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, kind: AttackKind) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !self.pgd_step_size.is_finite() || self.pgd_step_size <= 0.0 {
            return bad(format!(
                "pgd step size must be > 0, got {}",
                self.pgd_step_size
            ));
        }
        if kind == AttackKind::Interval {
            if !(self.eps0_init > 0.0 && self.eps0_init < self.epsilon) {
                return bad(format!(
                    "need 0 < eps0 < epsilon, got eps0={} epsilon={}",
                    self.eps0_init, self.epsilon
                ));
            }
            if !self.region_growth.is_finite() || self.region_growth <= 1.0 {
                return bad(format!(
                    "region growth must be > 1, got {}",
                    self.region_growth
                ));
            }
            if !self.interval_step_size.is_finite() || self.interval_step_size <= 0.0 {
                return bad(format!(
                    "interval step size must be > 0, got {}",
                    self.interval_step_size
                ));
            }
        }
        Ok(())
    }

    /// Configuration of restart `index` in a campaign: a derived seed and
    /// random starts for every attack.
    pub fn for_restart(&self, index: u64) -> Self {
        Self {
            seed: derive_seed(self.seed, index),
            random_start: true,
            interval_random_start: true,
            ..self.clone()
        }
    }

    /// Step count a baseline needs to match the interval attack's
    /// per-image iteration budget (`t` interval steps plus the PGD phase).
    pub fn matched_baseline_steps(&self) -> usize {
        self.pgd_steps + self.interval_iters
    }

    /// Upper bound on `analyze` calls in one interval iteration.
    pub fn max_analyze_calls_per_iter(&self) -> usize {
        let ratio = (self.epsilon / 2.0) / self.eps0_init;
        if ratio <= 1.0 {
            return 1;
        }
        (ratio.ln() / self.region_growth.ln()).ceil() as usize + 1
    }
}

/// SplitMix64 finalizer over `(seed, stream)`; stable across platforms.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackKind {
    Pgd,
    Cw,
    Interval,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Pgd, AttackKind::Cw, AttackKind::Interval];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Pgd => "pgd",
            AttackKind::Cw => "cw",
            AttackKind::Interval => "interval",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pgd" => Ok(AttackKind::Pgd),
            "cw" => Ok(AttackKind::Cw),
            "interval" => Ok(AttackKind::Interval),
            other => Err(Error::InvalidConfig(format!("unknown attack '{other}'"))),
        }
    }
}

/// Result of one attack run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub x_adv: Array1<f64>,
    /// `argmax(f(x_adv)) != label`, recomputed from the final point.
    pub success: bool,
    /// Cross-entropy loss at `x_adv`, whatever objective the attack ascended.
    pub final_loss: f64,
    pub interval_steps_used: usize,
    pub pgd_steps_used: usize,
    /// Accepted analysis radius of each interval iteration.
    pub eps0_trace: Vec<f64>,
    /// Cross-entropy loss at every visited iterate.
    pub loss_trace: Vec<f64>,
    pub analyze_calls: usize,
}

impl AttackOutcome {
    /// Total gradient-style iterations spent (interval steps plus PGD steps).
    pub fn steps(&self) -> usize {
        self.interval_steps_used + self.pgd_steps_used
    }
}

/// Feasible set `B_ε(x) ∩ [0,1]^d` as per-coordinate bounds.
struct Feasible {
    lo: Array1<f64>,
    hi: Array1<f64>,
}

impl Feasible {
    fn new(x: ArrayView1<f64>, epsilon: f64) -> Self {
        Self {
            lo: x.mapv(|v| (v - epsilon).max(0.0)),
            hi: x.mapv(|v| (v + epsilon).min(1.0)),
        }
    }

    fn project(&self, x: &mut Array1<f64>) {
        Zip::from(x)
            .and(&self.lo)
            .and(&self.hi)
            .for_each(|v, &l, &h| *v = v.clamp(l, h));
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        Zip::from(&self.lo)
            .and(&self.hi)
            .map_collect(|&l, &h| if h > l { rng.gen_range(l..=h) } else { l })
    }
}

fn check_inputs(net: &Network, x: ArrayView1<f64>, label: usize) -> Result<()> {
    if x.len() != net.input_dim() {
        return Err(Error::Shape {
            context: "attack input",
            expected: net.input_dim(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidConfig(
            "attack input must lie in [0,1]^d".into(),
        ));
    }
    net.check_label(label)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    net: &Network,
    x_adv: Array1<f64>,
    label: usize,
    interval_steps_used: usize,
    pgd_steps_used: usize,
    eps0_trace: Vec<f64>,
    loss_trace: Vec<f64>,
    analyze_calls: usize,
) -> Result<AttackOutcome> {
    let logits = net.forward(x_adv.view())?;
    Ok(AttackOutcome {
        success: argmax(logits.view()) != label,
        final_loss: cross_entropy_loss(logits.view(), label),
        x_adv,
        interval_steps_used,
        pgd_steps_used,
        eps0_trace,
        loss_trace,
        analyze_calls,
    })
}

/// Signed-gradient ascent from `start`, projected onto the feasible set,
/// stopping at the first misclassified iterate.
fn pgd_from(
    net: &Network,
    label: usize,
    start: Array1<f64>,
    feasible: &Feasible,
    steps: usize,
    step_size: f64,
    loss: Loss,
) -> Result<(Array1<f64>, usize, Vec<f64>)> {
    let mut x_adv = start;
    feasible.project(&mut x_adv);
    let mut trace = Vec::with_capacity(steps + 1);
    let mut used = 0;
    loop {
        let (logits, grad) = net.logits_and_input_gradient(x_adv.view(), label, loss)?;
        trace.push(cross_entropy_loss(logits.view(), label));
        if argmax(logits.view()) != label || used == steps {
            break;
        }
        Zip::from(&mut x_adv)
            .and(&grad)
            .for_each(|v, &g| *v += step_size * sign(g));
        feasible.project(&mut x_adv);
        used += 1;
    }
    Ok((x_adv, used, trace))
}

fn gradient_attack(
    net: &Network,
    x: ArrayView1<f64>,
    label: usize,
    cfg: &AttackConfig,
    loss: Loss,
    kind: AttackKind,
) -> Result<AttackOutcome> {
    check_inputs(net, x, label)?;
    cfg.validate(kind)?;
    let feasible = Feasible::new(x, cfg.epsilon);
    let start = if cfg.random_start {
        feasible.sample(&mut ChaCha8Rng::seed_from_u64(cfg.seed))
    } else {
        x.to_owned()
    };
    let (x_adv, used, trace) = pgd_from(
        net,
        label,
        start,
        &feasible,
        cfg.pgd_steps,
        cfg.pgd_step_size,
        loss,
    )?;
    finish(net, x_adv, label, 0, used, Vec::new(), trace, 0)
}

/// L∞ PGD ascending `cfg.loss` (cross-entropy by default).
pub fn pgd_attack(
    net: &Network,
    x: ArrayView1<f64>,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    gradient_attack(net, x, label, cfg, cfg.loss, AttackKind::Pgd)
}

/// PGD on the CW margin `max_{j≠y} z_j − z_y`.
pub fn cw_pgd_attack(
    net: &Network,
    x: ArrayView1<f64>,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    gradient_attack(net, x, label, cfg, Loss::CwMargin, AttackKind::Cw)
}

/// Interval attack: interval-gradient steps over adaptively sized regions,
/// then PGD from the reached point.
///
/// Each iteration grows the analysis radius geometrically from `eps0_init`
/// until the symbolic bounds admit a potential violation, or the radius
/// reaches `epsilon / 2`. The step then follows the interval gradient of
/// the last analyzed region.
pub fn interval_attack(
    net: &Network,
    x: ArrayView1<f64>,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    check_inputs(net, x, label)?;
    cfg.validate(AttackKind::Interval)?;
    let feasible = Feasible::new(x, cfg.epsilon);
    let mut x_adv = if cfg.interval_random_start {
        feasible.sample(&mut ChaCha8Rng::seed_from_u64(cfg.seed))
    } else {
        x.to_owned()
    };

    let cap = cfg.epsilon / 2.0;
    let mut eps0_trace = Vec::with_capacity(cfg.interval_iters);
    let mut loss_trace = Vec::with_capacity(cfg.interval_iters + cfg.pgd_steps + 2);
    let mut analyze_calls = 0;

    let logits = net.forward(x_adv.view())?;
    loss_trace.push(cross_entropy_loss(logits.view(), label));
    if argmax(logits.view()) != label {
        return finish(net, x_adv, label, 0, 0, eps0_trace, loss_trace, 0);
    }

    for step in 1..=cfg.interval_iters {
        let mut radius = cfg.eps0_init;
        let mut bounds;
        loop {
            bounds = analyze(net, &InputRegion::new(x_adv.view(), radius)?)?;
            analyze_calls += 1;
            if !is_safe(&bounds, label) {
                break;
            }
            radius *= cfg.region_growth;
            if radius >= cap {
                break;
            }
        }
        eps0_trace.push(radius);

        let g = interval_gradient(&bounds, label, cfg.g_mode);
        let alpha = cfg.interval_step_size;
        match cfg.step_rule {
            StepRule::Signed => Zip::from(&mut x_adv)
                .and(&g)
                .for_each(|v, &gi| *v += alpha * sign(gi)),
            StepRule::Raw => Zip::from(&mut x_adv)
                .and(&g)
                .for_each(|v, &gi| *v += alpha * gi),
        }
        feasible.project(&mut x_adv);

        let logits = net.forward(x_adv.view())?;
        loss_trace.push(cross_entropy_loss(logits.view(), label));
        if argmax(logits.view()) != label {
            return finish(
                net,
                x_adv,
                label,
                step,
                0,
                eps0_trace,
                loss_trace,
                analyze_calls,
            );
        }
    }

    let (x_adv, used, pgd_trace) = pgd_from(
        net,
        label,
        x_adv,
        &feasible,
        cfg.pgd_steps,
        cfg.pgd_step_size,
        cfg.loss,
    )?;
    // The hand-off's first entry re-evaluates the last interval iterate.
    loss_trace.extend(pgd_trace.into_iter().skip(1));
    finish(
        net,
        x_adv,
        label,
        cfg.interval_iters,
        used,
        eps0_trace,
        loss_trace,
        analyze_calls,
    )
}

/// Runs one attack of the given kind.
pub fn run_attack(
    kind: AttackKind,
    net: &Network,
    x: ArrayView1<f64>,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    match kind {
        AttackKind::Pgd => pgd_attack(net, x, label, cfg),
        AttackKind::Cw => cw_pgd_attack(net, x, label, cfg),
        AttackKind::Interval => interval_attack(net, x, label, cfg),
    }
}

/// `n_restarts` independent randomly started attacks, in restart order.
pub fn restart_campaign(
    net: &Network,
    x: ArrayView1<f64>,
    label: usize,
    cfg: &AttackConfig,
    n_restarts: usize,
    kind: AttackKind,
) -> Result<Vec<AttackOutcome>> {
    if n_restarts == 0 {
        return Err(Error::InvalidConfig("n_restarts must be >= 1".into()));
    }
    (0..n_restarts as u64)
        .into_par_iter()
        .map(|r| run_attack(kind, net, x, label, &cfg.for_restart(r)))
        .collect()
}

/// Repeats randomly restarted attacks until `budget` wall-clock time is
/// spent (at least once), keeping the first success or the highest loss.
///
/// Not reproducible across machines; intended for time-parity comparisons.
pub fn run_with_time_budget(
    kind: AttackKind,
    net: &Network,
    x: ArrayView1<f64>,
    label: usize,
    cfg: &AttackConfig,
    budget: Duration,
) -> Result<(AttackOutcome, usize)> {
    let started = Instant::now();
    let mut best: Option<AttackOutcome> = None;
    let mut restarts = 0u64;
    loop {
        let outcome = run_attack(kind, net, x, label, &cfg.for_restart(restarts))?;
        restarts += 1;
        let better = best
            .as_ref()
            .is_none_or(|b| outcome.final_loss > b.final_loss);
        let done = outcome.success;
        if done || better {
            best = Some(outcome);
        }
        if done || started.elapsed() >= budget {
            break;
        }
    }
    Ok((best.expect("at least one restart ran"), restarts as usize))
}
