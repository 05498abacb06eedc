//! Experiment harness behind the `iattack` binary.
//!
//! Every command is a pure function of its inputs and seed; per-image and
//! per-restart jobs fan out over rayon and are collected in a fixed order,
//! so reports are byte-identical for any worker count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use interval_attack::attacks::{derive_seed, restart_campaign, run_attack, run_with_time_budget};
use interval_attack::data::report::{AttackRecord, RestartRecord};
use interval_attack::nn::{evaluate_accuracy, train_with_callback, EpochStats, TrainConfig};
use interval_attack::{AttackConfig, AttackKind, LabeledExample, Network};
use rayon::prelude::*;
use serde::Serialize;

/// Parses `784x100x100x10` into layer widths.
pub fn parse_arch(spec: &str) -> Result<Vec<usize>> {
    let widths = spec
        .split(['x', 'X'])
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .with_context(|| format!("invalid layer width '{w}' in architecture '{spec}'"))
        })
        .collect::<Result<Vec<_>>>()?;
    ensure!(
        widths.len() >= 2,
        "architecture '{spec}' needs at least an input and an output width"
    );
    Ok(widths)
}

pub fn parse_attacks(list: &str) -> Result<Vec<AttackKind>> {
    let mut kinds = Vec::new();
    for name in list.split(',').filter(|s| !s.trim().is_empty()) {
        let kind: AttackKind = name.parse()?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    ensure!(!kinds.is_empty(), "no attacks given");
    Ok(kinds)
}

/// Baselines get the interval attack's full iteration budget
/// (`t` interval steps plus its PGD phase).
pub fn config_for(kind: AttackKind, cfg: &AttackConfig, budget_parity: bool) -> AttackConfig {
    match kind {
        AttackKind::Interval => cfg.clone(),
        _ if budget_parity => AttackConfig {
            pgd_steps: cfg.matched_baseline_steps(),
            ..cfg.clone()
        },
        _ => cfg.clone(),
    }
}

/// One row per (image, attack), sorted by image id then attack name.
pub fn attack_rows(
    net: &Network,
    images: &[LabeledExample],
    kinds: &[AttackKind],
    cfg: &AttackConfig,
    budget_parity: bool,
    time_budget: Option<Duration>,
) -> Result<Vec<AttackRecord>> {
    let jobs: Vec<(usize, AttackKind)> = (0..images.len())
        .flat_map(|i| kinds.iter().map(move |&k| (i, k)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(id, kind)| {
            let ex = &images[id];
            let cfg = AttackConfig {
                seed: derive_seed(cfg.seed, id as u64),
                ..config_for(kind, cfg, budget_parity)
            };
            let out = match time_budget {
                Some(budget) => {
                    run_with_time_budget(kind, net, ex.pixels.view(), ex.label, &cfg, budget)?.0
                }
                None => run_attack(kind, net, ex.pixels.view(), ex.label, &cfg)?,
            };
            Ok(AttackRecord {
                image_id: id,
                attack: kind.name().to_string(),
                success: out.success,
                final_loss: out.final_loss,
                steps: out.steps(),
            })
        })
        .collect::<interval_attack::Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (a.image_id, &a.attack).cmp(&(b.image_id, &b.attack)));
    Ok(rows)
}

/// Per-restart outcomes on a single image, grouped by attack in the order given.
pub fn restart_rows(
    net: &Network,
    image_id: usize,
    example: &LabeledExample,
    kinds: &[AttackKind],
    cfg: &AttackConfig,
    n_restarts: usize,
    budget_parity: bool,
) -> Result<Vec<RestartRecord>> {
    let mut rows = Vec::with_capacity(kinds.len() * n_restarts);
    for &kind in kinds {
        let cfg = config_for(kind, cfg, budget_parity);
        let outcomes = restart_campaign(
            net,
            example.pixels.view(),
            example.label,
            &cfg,
            n_restarts,
            kind,
        )?;
        rows.extend(
            outcomes
                .into_iter()
                .enumerate()
                .map(|(r, out)| RestartRecord {
                    image_id,
                    attack: kind.name().to_string(),
                    restart: r,
                    success: out.success,
                    final_loss: out.final_loss,
                }),
        );
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub attack: String,
    pub restarts: usize,
    pub successes: usize,
    pub max_loss: f64,
    pub mean_loss: f64,
}

pub fn summarize_restarts(rows: &[RestartRecord]) -> Vec<RestartSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.attack.as_str()) {
            names.push(&r.attack);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<&RestartRecord> = rows.iter().filter(|r| r.attack == name).collect();
            RestartSummary {
                attack: name.to_string(),
                restarts: mine.len(),
                successes: mine.iter().filter(|r| r.success).count(),
                max_loss: mine
                    .iter()
                    .map(|r| r.final_loss)
                    .fold(f64::NEG_INFINITY, f64::max),
                mean_loss: mine.iter().map(|r| r.final_loss).sum::<f64>() / mine.len() as f64,
            }
        })
        .collect()
}

/// Fraction of `images` on which PGD fails (estimated robust accuracy).
pub fn pgd_robust_accuracy(
    net: &Network,
    images: &[LabeledExample],
    cfg: &AttackConfig,
) -> Result<f64> {
    ensure!(!images.is_empty(), "no images to evaluate");
    let held = images
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let cfg = AttackConfig {
                seed: derive_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            run_attack(AttackKind::Pgd, net, ex.pixels.view(), ex.label, &cfg).map(|o| !o.success)
        })
        .collect::<interval_attack::Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&held| held)
        .count();
    Ok(held as f64 / images.len() as f64)
}

pub struct TrainRun {
    pub model: Network,
    /// `epoch,mean_loss,epsilon,clean_accuracy,pgd_era` lines, header first.
    pub log: String,
    /// `epoch,seconds` lines, header first.
    pub timing: String,
}

/// Trains from a seeded initialization, evaluating clean accuracy and PGD
/// robust accuracy on `eval` after each epoch.
pub fn train_model(
    arch: &[usize],
    data: &[LabeledExample],
    eval: &[LabeledExample],
    cfg: &TrainConfig,
    era_cfg: &AttackConfig,
    init_seed: u64,
) -> Result<TrainRun> {
    let d = data
        .first()
        .map(|ex| ex.pixels.len())
        .context("training set is empty")?;
    if arch[0] != d {
        bail!(
            "architecture input width {} does not match data dimension {d}",
            arch[0]
        );
    }
    let init = Network::random(arch, init_seed)?;
    let mut log = String::from("epoch,mean_loss,epsilon,clean_accuracy,pgd_era\n");
    let mut timing = String::from("epoch,seconds\n");
    let model = train_with_callback(&init, data, cfg, |stats: &EpochStats, net: &Network| {
        let clean = evaluate_accuracy(net, eval)?;
        let era = pgd_robust_accuracy(net, eval, era_cfg)
            .map_err(|e| interval_attack::Error::Report(e.to_string()))?;
        let _ = writeln!(
            log,
            "{},{},{},{},{}",
            stats.epoch, stats.mean_loss, stats.epsilon, clean, era
        );
        let _ = writeln!(timing, "{},{:.3}", stats.epoch, stats.seconds);
        Ok(())
    })?;
    Ok(TrainRun { model, log, timing })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
