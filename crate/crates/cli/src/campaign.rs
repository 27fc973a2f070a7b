//! Batch runs over object families, sizes, perturbations and seeds, with
//! vanilla and reflex variants sharing each scenario.

use std::collections::HashSet;

use rayon::prelude::*;
use reflexgrasp::controller::ControllerParams;
use reflexgrasp::kinematics::RobotModel;
use reflexgrasp::sim::{
    run_scenario, ObjectKind, Outcome, RunResult, ScenarioConfig, SimParams, Variant, SCENARIO_SCHEMA,
};
use reflexgrasp::stability::Method;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CAMPAIGN_SCHEMA: u32 = 1;

/// Final mean angle below which a stable run counts as a success, degrees.
pub const SUCCESS_ANGLE_DEG: f64 = 10.0;

/// Largest number of scenarios per seed; keeps derived run seeds distinct.
const MAX_SCENARIOS: usize = 1_000_003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub object: ObjectKind,
    /// Defaults to the family's built-in sizes.
    #[serde(default)]
    pub sizes: Option<Vec<f64>>,
    /// Defaults to the family's built-in perturbation magnitudes.
    #[serde(default)]
    pub magnitudes: Option<Vec<f64>>,
}

impl FamilySpec {
    pub fn defaults(object: ObjectKind) -> Self {
        Self {
            object,
            sizes: None,
            magnitudes: None,
        }
    }

    fn sizes(&self) -> Vec<f64> {
        self.sizes.clone().unwrap_or_else(|| self.object.default_sizes().to_vec())
    }

    fn magnitudes(&self) -> Vec<f64> {
        self.magnitudes.clone().unwrap_or_else(|| self.object.default_magnitudes().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub schema: u32,
    pub name: String,
    pub families: Vec<FamilySpec>,
    pub seeds: Vec<u64>,
    /// Reflex methods to run next to the vanilla baseline.
    pub methods: Vec<Method>,
    pub controller: ControllerParams,
    pub sim: SimParams,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            schema: CAMPAIGN_SCHEMA,
            name: "default".into(),
            families: ObjectKind::ALL.iter().map(|k| FamilySpec::defaults(*k)).collect(),
            seeds: vec![0],
            methods: vec![Method::Pgd, Method::Cfgd],
            controller: ControllerParams::default(),
            sim: SimParams::default(),
        }
    }
}

/// One object placement shared by all variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub index: usize,
    pub object: ObjectKind,
    pub size: f64,
    pub magnitude: f64,
    pub seed: u64,
}

/// Variant label used in outputs: `vanilla`, `pgd` or `cfgd`.
fn variant_label(variant: Variant, method: Method) -> &'static str {
    match variant {
        Variant::Vanilla => "vanilla",
        Variant::Reflex => method.as_str(),
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema != CAMPAIGN_SCHEMA {
            return bad(format!("schema: unsupported version {}", self.schema));
        }
        if self.families.is_empty() {
            return bad("families: must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds: must not be empty".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds: must be distinct".into());
        }
        let mut methods = self.methods.clone();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return bad("methods: must not repeat".into());
        }
        for (i, f) in self.families.iter().enumerate() {
            let sizes = f.sizes();
            if sizes.is_empty() || sizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad(format!("families[{i}].sizes: need at least one positive size"));
            }
            let mags = f.magnitudes();
            if mags.is_empty() || mags.iter().any(|m| !(m.is_finite() && *m >= 0.0 && *m <= f.object.max_magnitude())) {
                return bad(format!(
                    "families[{i}].magnitudes: need at least one value in [0, {}]",
                    f.object.max_magnitude()
                ));
            }
        }
        if self.scenarios().len() / self.seeds.len() >= MAX_SCENARIOS {
            return bad("families: too many scenarios".into());
        }
        self.controller.validate().map_err(|e| CliError::Config(format!("controller.{e}")))?;
        self.sim
            .validate(&self.controller)
            .map_err(|e| CliError::Config(format!("sim: {e}")))
    }

    /// Scenario list: family × size × magnitude × seed.
    pub fn scenarios(&self) -> Vec<ScenarioSpec> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            let mut k = 0u64;
            for f in &self.families {
                for size in f.sizes() {
                    for magnitude in f.magnitudes() {
                        out.push(ScenarioSpec {
                            index: out.len(),
                            object: f.object,
                            size,
                            magnitude,
                            seed: seed.wrapping_mul(MAX_SCENARIOS as u64).wrapping_add(k),
                        });
                        k += 1;
                    }
                }
            }
        }
        out
    }

    /// Runs to perform: vanilla first, then each reflex method.
    fn variants(&self) -> Vec<(Variant, Method)> {
        let mut v = vec![(Variant::Vanilla, Method::Cfgd)];
        v.extend(self.methods.iter().map(|m| (Variant::Reflex, *m)));
        v
    }

    pub fn scenario_config(&self, spec: &ScenarioSpec, variant: Variant, method: Method) -> ScenarioConfig {
        let mut controller = self.controller.clone();
        controller.method = method;
        ScenarioConfig {
            schema: SCENARIO_SCHEMA,
            object: spec.object,
            size: spec.size,
            magnitude: spec.magnitude,
            seed: spec.seed,
            variant,
            controller,
            sim: self.sim.clone(),
        }
    }
}

/// Per-run result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub scenario: usize,
    pub object: ObjectKind,
    pub size: f64,
    pub magnitude: f64,
    pub seed: u64,
    pub variant: String,
    pub outcome: Outcome,
    pub final_angle_deg: Option<f64>,
    /// Control ticks after reaching until the stop, for stable runs.
    pub ticks_to_stable: Option<u64>,
    pub transitions: usize,
    pub reach_time_s: f64,
    pub grasp_time_s: f64,
    pub max_penetration: f64,
    pub error: Option<String>,
}

impl CampaignRow {
    fn new(spec: &ScenarioSpec, label: &str, r: &RunResult) -> Self {
        Self {
            scenario: spec.index,
            object: spec.object,
            size: spec.size,
            magnitude: spec.magnitude,
            seed: spec.seed,
            variant: label.to_string(),
            outcome: r.outcome,
            final_angle_deg: r.final_eval.map(|e| e.mean_angle_deg),
            ticks_to_stable: (r.outcome == Outcome::Stable).then_some(r.grasp_ticks),
            transitions: r.transitions,
            reach_time_s: r.reach_time,
            grasp_time_s: r.grasp_time,
            max_penetration: r.max_penetration,
            error: r.error.clone(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Stable && self.final_angle_deg.is_some_and(|a| a < SUCCESS_ANGLE_DEG)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleStats {
    pub count: usize,
    pub mean: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl AngleStats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p10: percentile(&sorted, 0.1),
            p50: percentile(&sorted, 0.5),
            p90: percentile(&sorted, 0.9),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub stable: usize,
    pub stable_rate: f64,
    /// Stable with final mean angle under the success threshold.
    pub success: usize,
    pub success_rate: f64,
    pub timeouts: usize,
    pub errors: usize,
    pub final_angle_deg: Option<AngleStats>,
    /// Scenarios where this variant ends at or below the vanilla angle;
    /// absent for vanilla itself.
    pub at_or_below_vanilla: Option<usize>,
    pub at_or_below_vanilla_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub schema: u32,
    pub name: String,
    pub scenarios: usize,
    pub variants: Vec<VariantSummary>,
}

impl CampaignSummary {
    /// Aggregates computed from rows alone.
    pub fn from_rows(name: &str, rows: &[CampaignRow]) -> Self {
        let mut labels: Vec<&str> = Vec::new();
        for r in rows {
            if !labels.contains(&r.variant.as_str()) {
                labels.push(&r.variant);
            }
        }
        let scenarios = rows.iter().map(|r| r.scenario).collect::<HashSet<_>>().len();
        let vanilla = |scenario: usize| {
            rows.iter()
                .find(|r| r.scenario == scenario && r.variant == "vanilla")
                .and_then(|r| r.final_angle_deg)
        };
        let variants = labels
            .iter()
            .map(|label| {
                let of: Vec<&CampaignRow> = rows.iter().filter(|r| r.variant == *label).collect();
                let count = |o: Outcome| of.iter().filter(|r| r.outcome == o).count();
                let angles: Vec<f64> = of.iter().filter_map(|r| r.final_angle_deg).collect();
                let runs = of.len();
                let stable = count(Outcome::Stable);
                let success = of.iter().filter(|r| r.is_success()).count();
                let paired = (*label != "vanilla").then(|| {
                    of.iter()
                        .filter(|r| match (r.final_angle_deg, vanilla(r.scenario)) {
                            (Some(a), Some(v)) => a <= v,
                            _ => false,
                        })
                        .count()
                });
                VariantSummary {
                    variant: label.to_string(),
                    runs,
                    stable,
                    stable_rate: stable as f64 / runs as f64,
                    success,
                    success_rate: success as f64 / runs as f64,
                    timeouts: count(Outcome::Timeout),
                    errors: count(Outcome::Error),
                    final_angle_deg: AngleStats::of(&angles),
                    at_or_below_vanilla: paired,
                    at_or_below_vanilla_rate: paired.map(|p| p as f64 / runs as f64),
                }
            })
            .collect();
        Self {
            schema: CAMPAIGN_SCHEMA,
            name: name.to_string(),
            scenarios,
            variants,
        }
    }

    pub fn variant(&self, label: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == label)
    }
}

/// A finished run with its trace.
pub struct CampaignRun {
    pub row: CampaignRow,
    pub result: RunResult,
}

pub struct CampaignOutput {
    pub runs: Vec<CampaignRun>,
    pub summary: CampaignSummary,
    /// First run that could not be executed, if any; `runs` then holds the
    /// ones that could.
    pub failure: Option<String>,
}

/// Runs every scenario and variant on the current rayon pool. Results are
/// ordered by scenario, then variant, regardless of the pool size.
pub fn run_campaign(config: &CampaignConfig, model: &RobotModel) -> Result<CampaignOutput, CliError> {
    config.validate()?;
    let jobs: Vec<(ScenarioSpec, Variant, Method)> = config
        .scenarios()
        .into_iter()
        .flat_map(|s| config.variants().into_iter().map(move |(v, m)| (s, v, m)))
        .collect();
    let results: Vec<Result<CampaignRun, String>> = jobs
        .par_iter()
        .map(|(spec, variant, method)| {
            let sc = config.scenario_config(spec, *variant, *method);
            let result = run_scenario(&sc, model).map_err(|e| format!("scenario {}: {e}", spec.index))?;
            Ok(CampaignRun {
                row: CampaignRow::new(spec, variant_label(*variant, *method), &result),
                result,
            })
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    let mut failure = None;
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    let rows: Vec<CampaignRow> = runs.iter().map(|r| r.row.clone()).collect();
    Ok(CampaignOutput {
        summary: CampaignSummary::from_rows(&config.name, &rows),
        runs,
        failure,
    })
}

pub fn write_rows<W: std::io::Write>(rows: &[CampaignRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(input: R) -> Result<Vec<CampaignRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
