//! Episode outcomes, aggregate scores and the on-disk metrics schema.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use traffic_sim::StepEvents;

use crate::error::{Error, Result};

/// Exact header of the per-episode metrics CSV.
pub const METRICS_HEADER: [&str; 7] = [
    "episode",
    "seed",
    "outcome",
    "steps",
    "progress_frac",
    "mean_abs_jerk",
    "mean_abs_angacc",
];

/// Keys of `summary.json`.
pub const SUMMARY_KEYS: [&str; 5] = ["succ_pct", "coll_pct", "stag_pct", "humanness_error", "overall_score"];

/// Header of the combined ablation table.
pub const ABLATION_HEADER: [&str; 9] = [
    "scenario",
    "variant",
    "state_dim",
    "succ_pct",
    "coll_pct",
    "stag_pct",
    "humanness_error",
    "overall_score",
    "attention_calls",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Offroad,
    /// The episode hit the scenario's step limit.
    Stagnation,
    /// The episode was cut short by the training step budget.
    Timeout,
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [
        Outcome::Success,
        Outcome::Collision,
        Outcome::Offroad,
        Outcome::Stagnation,
        Outcome::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Offroad => "offroad",
            Outcome::Stagnation => "stagnation",
            Outcome::Timeout => "timeout",
        }
    }

    /// Outcome of an episode whose last step produced `events`. A crash wins
    /// over leaving the road, which wins over reaching the goal.
    pub fn classify(events: &StepEvents, terminated: bool) -> Option<Outcome> {
        if events.crash {
            Some(Outcome::Collision)
        } else if events.offroad {
            Some(Outcome::Offroad)
        } else if events.reached_goal {
            Some(Outcome::Success)
        } else if terminated {
            None
        } else {
            Some(Outcome::Stagnation)
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown outcome {s:?}")))
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub progress_frac: f64,
    pub mean_abs_jerk: f64,
    pub mean_abs_angacc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub row: MetricsRow,
    /// Any offroute, wrong-way or offroad event during the episode.
    pub violation: bool,
    /// Undiscounted reward sum.
    pub episode_return: f64,
}

/// Running per-episode statistics.
#[derive(Clone, Debug, Default)]
pub struct EpisodeStats {
    pub steps: usize,
    pub abs_jerk: f64,
    pub abs_angacc: f64,
    pub violation: bool,
    pub episode_return: f64,
}

impl EpisodeStats {
    pub fn observe(&mut self, events: &StepEvents, jerk: f64, yaw_acc: f64, reward: f64) {
        self.steps += 1;
        self.abs_jerk += jerk.abs();
        self.abs_angacc += yaw_acc.abs();
        self.violation |= events.offroute || events.wrong_way || events.offroad;
        self.episode_return += reward;
    }

    pub fn finish(&self, episode: usize, seed: u64, outcome: Outcome, progress_frac: f64) -> EpisodeRecord {
        let n = self.steps.max(1) as f64;
        EpisodeRecord {
            row: MetricsRow {
                episode,
                seed,
                outcome,
                steps: self.steps,
                progress_frac,
                mean_abs_jerk: self.abs_jerk / n,
                mean_abs_angacc: self.abs_angacc / n,
            },
            violation: self.violation,
            episode_return: self.episode_return,
        }
    }
}

/// Overall-score weights and comfort bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub w_progress: f64,
    pub w_rules: f64,
    pub w_comfort: f64,
    /// Jerk bound (m/s^3).
    pub j_max: f64,
    /// Angular acceleration bound (rad/s^2).
    pub alpha_max: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            w_progress: 0.5,
            w_rules: 0.3,
            w_comfort: 0.2,
            j_max: 4.0,
            alpha_max: 2.0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_progress, self.w_rules, self.w_comfort];
        if w.iter().any(|x| !(*x >= 0.0)) || !(self.j_max > 0.0) || !(self.alpha_max > 0.0) {
            return Err(Error::Config(format!("invalid score config {self:?}")));
        }
        Ok(())
    }

    /// Per-episode humanness error `(mean|j| / j_max + mean|a| / alpha_max) / 2`.
    pub fn humanness(&self, row: &MetricsRow) -> f64 {
        (row.mean_abs_jerk / self.j_max + row.mean_abs_angacc / self.alpha_max) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub succ_pct: f64,
    pub coll_pct: f64,
    pub stag_pct: f64,
    pub humanness_error: f64,
    pub overall_score: f64,
}

fn pct(records: &[EpisodeRecord], o: Outcome) -> f64 {
    100.0 * records.iter().filter(|r| r.row.outcome == o).count() as f64 / records.len() as f64
}

/// Percentage of episodes ending with `outcome`.
pub fn outcome_pct(records: &[EpisodeRecord], outcome: Outcome) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    pct(records, outcome)
}

/// Mean per-episode humanness error.
pub fn humanness_error(records: &[EpisodeRecord], cfg: &ScoreConfig) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| cfg.humanness(&r.row)).sum::<f64>() / records.len() as f64
}

/// `w_p * mean(progress) + w_r * (1 - violation rate) + w_c * (1 - clamp(humanness, 0, 1))`.
pub fn overall_score(records: &[EpisodeRecord], cfg: &ScoreConfig) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let n = records.len() as f64;
    let progress = records.iter().map(|r| r.row.progress_frac).sum::<f64>() / n;
    let violations = records.iter().filter(|r| r.violation).count() as f64 / n;
    let comfort = humanness_error(records, cfg).clamp(0.0, 1.0);
    cfg.w_progress * progress + cfg.w_rules * (1.0 - violations) + cfg.w_comfort * (1.0 - comfort)
}

pub fn summarize(records: &[EpisodeRecord], cfg: &ScoreConfig) -> Summary {
    Summary {
        succ_pct: outcome_pct(records, Outcome::Success),
        coll_pct: outcome_pct(records, Outcome::Collision),
        stag_pct: outcome_pct(records, Outcome::Stagnation),
        humanness_error: humanness_error(records, cfg),
        overall_score: overall_score(records, cfg),
    }
}

pub fn write_metrics_csv(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(METRICS_HEADER)?;
    }
    for r in records {
        w.serialize(&r.row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(path: &Path, summary: &Summary) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(())
}

/// Checks a metrics CSV against the frozen schema and returns its rows.
pub fn validate_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_HEADER {
        return Err(Error::Schema(format!("metrics header {header:?} differs from {METRICS_HEADER:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<MetricsRow>().enumerate() {
        let row = rec.map_err(|e| Error::Schema(format!("row {}: {e}", i + 1)))?;
        let finite = [row.progress_frac, row.mean_abs_jerk, row.mean_abs_angacc];
        if finite.iter().any(|v| !v.is_finite()) || !(0.0..=1.0).contains(&row.progress_frac) {
            return Err(Error::Schema(format!("row {}: value out of range", i + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Checks a `summary.json` text: an object holding every summary key as a
/// finite number.
pub fn validate_summary_json(text: &str) -> Result<Summary> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Schema("summary is not a JSON object".into()))?;
    for key in SUMMARY_KEYS {
        match obj.get(key).and_then(|x| x.as_f64()) {
            Some(x) if x.is_finite() => {}
            _ => return Err(Error::Schema(format!("summary key {key:?} missing or not a number"))),
        }
    }
    Ok(serde_json::from_value(v)?)
}

/// One line of the combined ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scenario: String,
    pub variant: String,
    pub state_dim: usize,
    pub succ_pct: f64,
    pub coll_pct: f64,
    pub stag_pct: f64,
    pub humanness_error: f64,
    pub overall_score: f64,
    pub attention_calls: u64,
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn validate_ablation_csv(text: &str) -> Result<Vec<AblationRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != ABLATION_HEADER {
        return Err(Error::Schema(format!("ablation header {header:?} differs from {ABLATION_HEADER:?}")));
    }
    r.deserialize::<AblationRow>()
        .map(|row| row.map_err(|e| Error::Schema(e.to_string())))
        .collect()
}

/// Validates every `<scenario>__<variant>__metrics.csv` and
/// `<scenario>__<variant>__summary.json` pair in `dir`, returning the
/// `(scenario, variant)` labels found.
pub fn validate_run_dir(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut labels = Vec::new();
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .collect();
    names.sort();
    for name in &names {
        let Some(stem) = name.strip_suffix("__summary.json") else { continue };
        let (scenario, variant) = stem
            .split_once("__")
            .ok_or_else(|| Error::Schema(format!("file {name} does not follow <scenario>__<variant>__summary.json")))?;
        validate_summary_json(&std::fs::read_to_string(dir.join(name))?)?;
        let metrics = dir.join(format!("{stem}__metrics.csv"));
        if !metrics.exists() {
            return Err(Error::Schema(format!("{name} has no matching metrics CSV")));
        }
        validate_metrics_csv(&std::fs::read_to_string(metrics)?)?;
        labels.push((scenario.to_string(), variant.to_string()));
    }
    Ok(labels)
}
