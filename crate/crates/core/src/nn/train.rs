//! Minibatch SGD training, optionally on adversarially perturbed batches.

use std::time::Instant;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabeledExample, Loss, Network};
use crate::attacks::{derive_seed, interval_attack, AttackConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    #[default]
    Clean,
    /// Each batch is replaced by its PGD perturbations.
    PgdAdv,
    /// Each batch is replaced by interval-attack perturbations.
    IntervalAdv,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mode: TrainMode,
    /// Perturbation settings for the adversarial modes.
    pub attack: AttackConfig,
    /// Warm-up epochs: epoch `e <= eps_ramp_epochs` trains at budget
    /// `epsilon * (e - 1) / eps_ramp_epochs`, so the first epoch is clean.
    /// 0 trains at the full budget from the start.
    pub eps_ramp_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 50,
            learning_rate: 0.05,
            mode: TrainMode::Clean,
            attack: AttackConfig::default(),
            eps_ramp_epochs: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the (possibly perturbed) examples.
    pub mean_loss: f64,
    /// Budget the perturbations used this epoch.
    pub epsilon: f64,
    pub seconds: f64,
}

/// Trains a copy of `net` and returns it.
pub fn train(net: &Network, data: &[LabeledExample], cfg: &TrainConfig) -> Result<Network> {
    train_with_callback(net, data, cfg, |_, _| Ok(()))
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with_callback<F>(
    net: &Network,
    data: &[LabeledExample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Network>
where
    F: FnMut(&EpochStats, &Network) -> Result<()>,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || !cfg.learning_rate.is_finite() || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidConfig(
            "batch size and learning rate must be positive".into(),
        ));
    }
    let d = net.input_dim();
    for ex in data {
        if ex.pixels.len() != d {
            return Err(Error::Shape {
                context: "training example",
                expected: d,
                actual: ex.pixels.len(),
            });
        }
        net.check_label(ex.label)?;
    }

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let epsilon = if cfg.eps_ramp_epochs > 0 && epoch <= cfg.eps_ramp_epochs {
            cfg.attack.epsilon * (epoch - 1) as f64 / cfg.eps_ramp_epochs as f64
        } else {
            cfg.attack.epsilon
        };
        let attack = AttackConfig {
            epsilon,
            eps0_init: cfg.attack.eps0_init.min(epsilon / 4.0),
            ..cfg.attack.clone()
        };

        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut xs = Array2::zeros((chunk.len(), d));
            let labels: Vec<usize> = chunk.iter().map(|&i| data[i].label).collect();
            for (row, &i) in chunk.iter().enumerate() {
                xs.row_mut(row).assign(&data[i].pixels);
            }
            match cfg.mode {
                _ if epsilon <= 0.0 => {}
                TrainMode::Clean => {}
                TrainMode::PgdAdv => perturb_pgd(&net, &mut xs, &labels, &attack, &mut rng)?,
                TrainMode::IntervalAdv => {
                    let batch_seed = derive_seed(cfg.seed, ((epoch as u64) << 32) | b as u64);
                    for (row, &label) in labels.iter().enumerate() {
                        let row_cfg = AttackConfig {
                            seed: derive_seed(batch_seed, row as u64),
                            ..attack.clone()
                        };
                        let x = xs.row(row).to_owned();
                        let out = interval_attack(&net, x.view(), label, &row_cfg)?;
                        xs.row_mut(row).assign(&out.x_adv);
                    }
                }
            }

            let grads = net.backward_batch(xs.view(), &labels, Loss::CrossEntropy, true)?;
            loss_sum += grads.losses.iter().sum::<f64>();
            let scale = cfg.learning_rate / chunk.len() as f64;
            for (layer, (dw, db)) in net.layers_mut().iter_mut().zip(grads.param_grads) {
                layer.weights.scaled_add(-scale, &dw);
                layer.bias.scaled_add(-scale, &db);
            }
        }

        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            epsilon,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats, &net)?;
    }
    Ok(net)
}

/// Batched PGD with a uniform random start and a fixed number of steps.
fn perturb_pgd(
    net: &Network,
    xs: &mut Array2<f64>,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if cfg.epsilon <= 0.0 {
        return Ok(());
    }
    let lo = xs.mapv(|v| (v - cfg.epsilon).max(0.0));
    let hi = xs.mapv(|v| (v + cfg.epsilon).min(1.0));
    if cfg.random_start {
        Zip::from(&mut *xs)
            .and(&lo)
            .and(&hi)
            .for_each(|v, &l, &h| *v = if h > l { rng.gen_range(l..=h) } else { l });
    }
    for _ in 0..cfg.pgd_steps {
        let g = net
            .backward_batch(xs.view(), labels, cfg.loss, false)?
            .input_grads;
        Zip::from(&mut *xs)
            .and(&g)
            .and(&lo)
            .and(&hi)
            .for_each(|v, &gi, &l, &h| {
                let step = if gi > 0.0 {
                    cfg.pgd_step_size
                } else if gi < 0.0 {
                    -cfg.pgd_step_size
                } else {
                    0.0
                };
                *v = (*v + step).clamp(l, h);
            });
    }
    Ok(())
}

/// Fraction of examples the network classifies correctly.
pub fn evaluate_accuracy(net: &Network, data: &[LabeledExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for chunk in data.chunks(256) {
        let mut xs = Array2::zeros((chunk.len(), net.input_dim()));
        for (row, ex) in chunk.iter().enumerate() {
            xs.row_mut(row).assign(&ex.pixels);
        }
        let logits = net.forward_batch(xs.view())?;
        correct += logits
            .outer_iter()
            .zip(chunk)
            .filter(|(z, ex)| super::argmax(z.view()) == ex.label)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::pgd_attack;
    use ndarray::array;

    /// Linearly separable only through x1 (gap 0.04); x0 separates the
    /// classes with a wide gap except on an overlap band around 0.5. A clean
    /// model leans on the narrow x1 gap and is fragile at ε = 0.1.
    fn toy_set(n: usize, seed: u64) -> Vec<LabeledExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let (x0, x1) = if label == 0 {
                    (rng.gen_range(0.0..0.55), rng.gen_range(0.40..0.48))
                } else {
                    (rng.gen_range(0.45..1.0), rng.gen_range(0.52..0.60))
                };
                LabeledExample {
                    pixels: array![x0, x1],
                    label,
                }
            })
            .collect()
    }

    fn robust_accuracy(net: &Network, data: &[LabeledExample], eps: f64) -> f64 {
        let cfg = AttackConfig {
            epsilon: eps,
            random_start: false,
            ..Default::default()
        };
        let held = data
            .iter()
            .filter(|ex| {
                !pgd_attack(net, ex.pixels.view(), ex.label, &cfg)
                    .unwrap()
                    .success
            })
            .count();
        held as f64 / data.len() as f64
    }

    #[test]
    fn clean_training_separates_toy_set() {
        let data = toy_set(400, 1);
        let net = Network::random(&[2, 16, 2], 7).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 20,
            learning_rate: 0.2,
            ..Default::default()
        };
        let trained = train(&net, &data, &cfg).unwrap();
        assert!(evaluate_accuracy(&trained, &data).unwrap() >= 0.99);
    }

    #[test]
    fn pgd_training_is_more_robust() {
        let data = toy_set(400, 2);
        let net = Network::random(&[2, 16, 2], 8).unwrap();
        let base = TrainConfig {
            epochs: 50,
            batch_size: 20,
            learning_rate: 0.2,
            ..Default::default()
        };
        let clean = train(&net, &data, &base).unwrap();
        let adv_cfg = TrainConfig {
            mode: TrainMode::PgdAdv,
            attack: AttackConfig {
                epsilon: 0.1,
                pgd_steps: 10,
                pgd_step_size: 0.02,
                ..Default::default()
            },
            ..base
        };
        let adv = train(&net, &data, &adv_cfg).unwrap();
        let clean_ra = robust_accuracy(&clean, &data, 0.1);
        let adv_ra = robust_accuracy(&adv, &data, 0.1);
        assert!(adv_ra > clean_ra, "adv {adv_ra} vs clean {clean_ra}");
    }

    #[test]
    fn interval_training_runs() {
        let data = toy_set(60, 3);
        let net = Network::random(&[2, 8, 2], 9).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 10,
            mode: TrainMode::IntervalAdv,
            attack: AttackConfig {
                epsilon: 0.1,
                interval_iters: 3,
                pgd_steps: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut epochs = 0;
        let trained = train_with_callback(&net, &data, &cfg, |_, _| {
            epochs += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(epochs, 2);
        assert_ne!(trained, net);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = toy_set(10, 4);
        let net = Network::random(&[2, 4, 2], 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert_eq!(train(&net, &data, &cfg).unwrap(), net);
    }

    #[test]
    fn empty_dataset_rejected() {
        let net = Network::random(&[2, 4, 2], 1).unwrap();
        assert!(matches!(
            train(&net, &[], &TrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }
}
