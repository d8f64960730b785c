//! JSON result documents and the run manifest.
//!
//! Result documents carry no timestamps, so identical runs serialise to
//! identical bytes. Timing lives in the manifest only.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use eigsal::jordan::{DecisionReason, JordanAnalysis, JordanConfig, RotationModel};
use eigsal::portrait::{PortraitAnalysis, PortraitConfig, PortraitStatus, SamplingAction};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeEntry {
    pub i: usize,
    pub j: usize,
    pub level: f64,
    pub level_index: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub members: Vec<usize>,
    pub level: f64,
    pub level_index: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinements {
    pub expansions: usize,
    pub subsamples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub round: usize,
    pub action: String,
    pub samples_added: usize,
    pub samples_total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortraitResult {
    pub status: PortraitStatus,
    pub eigenvalues: Vec<[f64; 2]>,
    /// Eigenvalue clusters; merge indices refer to these.
    pub leaves: Vec<[f64; 2]>,
    pub leaf_members: Vec<Vec<usize>>,
    pub levels: Vec<f64>,
    pub merges: Vec<MergeEntry>,
    pub nodes: Vec<NodeEntry>,
    pub unresolved: Vec<[usize; 2]>,
    pub confidence: f64,
    pub refinements: Refinements,
    pub initial_samples: usize,
    pub samples_used: usize,
    pub bounds: [f64; 4],
    pub base_spacing: f64,
    pub audit: Vec<AuditRow>,
}

impl PortraitResult {
    pub fn new(run: &PortraitAnalysis, config: &PortraitConfig) -> Self {
        let xy = |p: &eigsal::geometry::Point2| [p.x, p.y];
        Self {
            status: run.status,
            eigenvalues: run.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
            leaves: run.tree.leaves.iter().map(xy).collect(),
            leaf_members: run.leaf_members.clone(),
            levels: config.levels.clone(),
            merges: run
                .tree
                .pairs()
                .into_iter()
                .map(|p| MergeEntry {
                    i: p.i,
                    j: p.j,
                    level: p.level,
                    level_index: p.level_index,
                    confidence: p.confidence,
                })
                .collect(),
            nodes: run
                .tree
                .nodes
                .iter()
                .map(|n| NodeEntry {
                    members: n.members.clone(),
                    level: n.level,
                    level_index: n.level_index,
                    confidence: n.confidence,
                })
                .collect(),
            unresolved: run.report.unresolved.iter().map(|&(i, j)| [i, j]).collect(),
            confidence: run.tree.confidence(),
            refinements: Refinements {
                expansions: run.expansions,
                subsamples: run.subsamples,
            },
            initial_samples: run.initial_samples,
            samples_used: run.samples_used,
            bounds: [run.bounds.x_min, run.bounds.x_max, run.bounds.y_min, run.bounds.y_max],
            base_spacing: run.base_spacing,
            audit: run
                .audit
                .iter()
                .map(|a| AuditRow {
                    round: a.round,
                    action: match a.action {
                        SamplingAction::ExpandGrid { .. } => "expand_grid",
                        SamplingAction::Subsample { .. } => "subsample",
                        SamplingAction::Done => "done",
                    }
                    .to_string(),
                    samples_added: a.samples_added,
                    samples_total: a.samples_total,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub d: f64,
    pub r: f64,
    pub support: usize,
    pub confidence: f64,
}

impl ModelEntry {
    fn new(m: &RotationModel, confidence: f64) -> Self {
        Self {
            x: m.x,
            y: m.y,
            theta: m.theta,
            d: m.d,
            r: m.r,
            support: m.support,
            confidence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub level_index: usize,
    pub delta_exponent: u32,
    pub points: usize,
    pub models: usize,
    pub best: Option<ModelEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub level_index: usize,
    pub delta_exponent: u32,
    pub trials: usize,
    pub failed_trials: usize,
    pub points_added: usize,
    pub cloud_size: usize,
    pub models_posited: usize,
    pub entropy_bits: Option<f64>,
    pub next_level_index: Option<usize>,
    pub reason: Option<DecisionReason>,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JordanResult {
    pub lambda: [f64; 2],
    pub rho: usize,
    pub confidence: f64,
    /// Product of the per-level confidences behind `confidence`.
    pub joint: f64,
    pub rounds_used: usize,
    pub support: usize,
    pub entropy_bits: f64,
    pub high_entropy: bool,
    pub low_confidence: bool,
    pub best_model: ModelEntry,
    pub per_level_models: Vec<LevelEntry>,
    pub audit: Vec<RoundRow>,
}

impl JordanResult {
    pub fn new(run: &JordanAnalysis, config: &JordanConfig) -> Self {
        let e = &run.estimate;
        let best_conf = run
            .models
            .iter()
            .find(|m| m.model == run.best_model)
            .map_or(0.0, |m| m.confidence);
        let per_level_models = run
            .clouds
            .iter()
            .map(|c| {
                let here: Vec<_> = run.models.iter().filter(|m| m.level == c.delta_index).collect();
                LevelEntry {
                    level_index: c.delta_index,
                    delta_exponent: config.delta_exponents[c.delta_index],
                    points: c.points.len(),
                    models: here.len(),
                    best: here
                        .iter()
                        .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
                        .map(|m| ModelEntry::new(&m.model, m.confidence)),
                }
            })
            .collect();
        Self {
            lambda: [e.lambda.x, e.lambda.y],
            rho: e.rho,
            confidence: e.confidence,
            joint: e.joint,
            rounds_used: e.rounds_used,
            support: e.support,
            entropy_bits: e.entropy_bits,
            high_entropy: e.high_entropy,
            low_confidence: e.low_confidence,
            best_model: ModelEntry::new(&run.best_model, best_conf),
            per_level_models,
            audit: run
                .audit
                .iter()
                .map(|r| RoundRow {
                    round: r.round,
                    level_index: r.delta_index,
                    delta_exponent: r.delta_exponent,
                    trials: r.trials,
                    failed_trials: r.failed_trials,
                    points_added: r.points_added,
                    cloud_size: r.cloud_size,
                    models_posited: r.models_posited,
                    entropy_bits: r.entropy_bits,
                    next_level_index: r.decision.as_ref().map(|d| d.next_level),
                    reason: r.decision.as_ref().map(|d| d.reason),
                    flagged: r.decision.as_ref().is_some_and(|d| d.flagged),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub seed: u64,
    pub result: JordanResult,
}

/// Output of `jordan --repeat N`: one run per seed `seed, seed+1, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JordanStudy {
    pub runs: Vec<StudyRun>,
    pub mean_rounds: f64,
    pub low_confidence_runs: usize,
}

impl JordanStudy {
    pub fn new(runs: Vec<StudyRun>) -> Self {
        let mean_rounds = runs.iter().map(|r| r.result.rounds_used as f64).sum::<f64>() / runs.len().max(1) as f64;
        let low_confidence_runs = runs.iter().filter(|r| r.result.low_confidence).count();
        Self { runs, mean_rounds, low_confidence_runs }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Portrait,
    Jordan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub json: Option<String>,
    pub svg: Option<String>,
}

/// Everything needed to repeat a run, plus when it happened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub input: String,
    pub format: String,
    /// The analyzer configuration actually used, after defaults.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub repeat: usize,
    pub tool_version: String,
    pub outputs: Outputs,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

impl RunManifest {
    /// Same run, ignoring when it happened.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        let strip = |m: &RunManifest| RunManifest {
            started_unix_ms: 0,
            finished_unix_ms: 0,
            ..m.clone()
        };
        strip(self) == strip(other)
    }
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result types serialise");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    std::fs::write(path, text)
}
