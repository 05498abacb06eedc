//! Experiment reports: per-row CSV files and a JSON success-rate summary.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

/// One attack on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub image_id: usize,
    pub attack: String,
    pub success: bool,
    pub final_loss: f64,
    pub steps: usize,
}

/// One restart of a restart-distribution study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub image_id: usize,
    pub attack: String,
    pub restart: usize,
    pub success: bool,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: String,
    pub images: usize,
    pub successes: usize,
    /// Percentage of images on which the attack succeeded.
    pub success_rate: f64,
}

/// Interval attack's improvement over PGD, in the Table-style layout
/// `+<points> (<relative>%)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    /// Percentage points gained over the PGD success rate.
    pub absolute: f64,
    /// Relative improvement in percent; absent when PGD never succeeded.
    pub relative_percent: Option<f64>,
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub attacks: Vec<AttackSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub interval_gain: Option<Gain>,
}

/// Gain of the interval attack over PGD, both as success-rate percentages.
pub fn interval_gain(pgd_rate: f64, interval_rate: f64) -> Gain {
    let absolute = interval_rate - pgd_rate;
    let relative_percent = (pgd_rate > 0.0).then(|| absolute / pgd_rate * 100.0);
    let mut points = format!("{absolute:+.1}");
    if let Some(stripped) = points.strip_suffix(".0") {
        points = stripped.to_string();
    }
    let display = match relative_percent {
        Some(rel) => format!("{points} ({rel:.0}%)"),
        None => format!("{points} (n/a)"),
    };
    Gain {
        absolute,
        relative_percent,
        display,
    }
}

/// Success rates per attack (sorted by attack name), computed as the mean
/// of the row flags. The gain appears only when both `pgd` and `interval`
/// rows are present.
pub fn summarize(rows: &[AttackRecord]) -> Summary {
    let mut names: Vec<&str> = rows.iter().map(|r| r.attack.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let attacks: Vec<AttackSummary> = names
        .into_iter()
        .map(|name| {
            let mine: Vec<&AttackRecord> = rows.iter().filter(|r| r.attack == name).collect();
            let successes = mine.iter().filter(|r| r.success).count();
            AttackSummary {
                attack: name.to_string(),
                images: mine.len(),
                successes,
                success_rate: 100.0 * successes as f64 / mine.len() as f64,
            }
        })
        .collect();
    let rate = |name: &str| {
        attacks
            .iter()
            .find(|a| a.attack == name)
            .map(|a| a.success_rate)
    };
    let interval_gain = match (rate("pgd"), rate("interval")) {
        (Some(p), Some(i)) => Some(interval_gain(p, i)),
        _ => None,
    };
    Summary {
        attacks,
        interval_gain,
    }
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(Error::from)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(image_id: usize, attack: &str, success: bool) -> AttackRecord {
        AttackRecord {
            image_id,
            attack: attack.into(),
            success,
            final_loss: 0.5,
            steps: 3,
        }
    }

    #[test]
    fn gain_matches_table_layout() {
        assert_eq!(interval_gain(39.2, 56.2).display, "+17 (43%)");
        assert_eq!(interval_gain(34.4, 44.4).display, "+10 (29%)");
        assert_eq!(interval_gain(7.2, 11.6).display, "+4.4 (61%)");
        assert_eq!(interval_gain(0.0, 5.0).display, "+5 (n/a)");
        assert_eq!(interval_gain(50.0, 45.0).display, "-5 (-10%)");
    }

    #[test]
    fn summary_rates_are_row_means() {
        let rows = vec![
            row(0, "pgd", true),
            row(1, "pgd", false),
            row(0, "interval", true),
            row(1, "interval", true),
        ];
        let s = summarize(&rows);
        assert_eq!(s.attacks[0].attack, "interval");
        assert_eq!(s.attacks[0].success_rate, 100.0);
        assert_eq!(s.attacks[1].success_rate, 50.0);
        assert_eq!(s.interval_gain.unwrap().display, "+50 (100%)");
    }

    #[test]
    fn single_attack_has_no_gain() {
        let s = summarize(&[row(0, "pgd", true)]);
        assert!(s.interval_gain.is_none());
        let json = serde_json::to_string(&s).unwrap();
        assert!(!json.contains("gain"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = vec![row(0, "cw", false), row(4, "pgd", true)];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image_id,attack,success,final_loss,steps\n"));
        assert_eq!(read_csv::<AttackRecord>(&path).unwrap(), rows);
    }
}
