//! Machine-readable outputs: run manifests, JSON run records, CSV profiles
//! and sweep tables.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, RunRecord};
use crate::experiments::{ExponentFit, RightmostReport, SweepPlan, SweepResult, VarianceReport};
use crate::lattice::Site;
use crate::observables::{height_and_base, returns_total, support_radius, PairTrajectory};
use crate::scaling::{RadialProfile, ScalingProfile};
use crate::stacks::{Step, PRF_ID};

/// Longest `P_t` series written into a JSON record.
pub const JSON_SERIES_CAP: usize = 10_000;

/// JSON schema of the run record, shipped with the crate.
pub const RUN_RECORD_SCHEMA: &str = include_str!("../schema/run_record.schema.json");

/// Everything needed to re-execute a command bit-identically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub prf: String,
    /// Seconds since the Unix epoch; taken from `SOURCE_DATE_EPOCH` when set.
    pub created: u64,
    /// True when `SOURCE_DATE_EPOCH` fixed the timestamp; wall-clock timings
    /// are then left out so outputs are byte-identical across reruns.
    pub reproducible: bool,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, seed: Option<u64>) -> Self {
        let epoch = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok());
        let created = epoch.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        RunManifest {
            tool: "oilwater".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            seed,
            prf: PRF_ID.into(),
            created,
            reproducible: epoch.is_some(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("manifest serializes")
    }

    /// `# manifest: {...}` comment line for CSV and pixmap headers.
    pub fn comment(&self) -> String {
        format!("# manifest: {}", self.to_json_line())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseCount {
    pub site: Vec<i64>,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub site: Vec<i64>,
    pub oil: u64,
    pub water: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub site: Vec<i64>,
    pub axis: usize,
    /// +1 or −1 along `axis`.
    pub direction: i8,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxJson {
    pub entries: Vec<SparseCount>,
    pub crossings: Vec<Crossing>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryJson {
    pub policy: String,
    pub p_initial: u64,
    pub p_final: u64,
    pub sum_z: i64,
    /// Firings per class `ξ₁..ξ₄`.
    pub class_counts: [u64; 4],
    pub returns_total: u64,
    pub returns_by_site: Vec<(i64, u64)>,
    pub drift_quarters: i64,
    pub series_stride: u64,
    pub series: Vec<u64>,
}

impl TrajectoryJson {
    fn of(t: &PairTrajectory) -> Self {
        let full = t.series();
        let thin = full.len().div_ceil(JSON_SERIES_CAP).max(1);
        TrajectoryJson {
            policy: t.policy.clone(),
            p_initial: t.p_initial(),
            p_final: t.p_final(),
            sum_z: t.sum_dp,
            class_counts: t.counts,
            returns_total: returns_total(t),
            returns_by_site: t.returns_by_site.nonzero().into_iter().collect(),
            drift_quarters: t.drift_quarters,
            series_stride: t.stride() * thin as u64,
            series: full.iter().step_by(thin).copied().collect(),
        }
    }
}

/// On-disk form of a [`RunRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecordJson {
    pub manifest: RunManifest,
    pub n: u64,
    pub dim: usize,
    pub seed: u64,
    pub policy: String,
    pub engine: String,
    pub stack_mode: String,
    pub prf: String,
    pub tau: u64,
    pub visits: u64,
    pub height: u64,
    pub support_radius: f64,
    pub odometer: Vec<SparseCount>,
    pub final_config: Vec<Occupancy>,
    pub flux: FluxJson,
    pub trajectory: Option<TrajectoryJson>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
}

fn coords(site: &Site, dim: usize) -> Vec<i64> {
    site.coords()[..dim].to_vec()
}

impl RunRecordJson {
    pub fn of(run: &RunRecord, manifest: RunManifest) -> Self {
        let dim = run.dim;
        let window = run.flux.window();
        let mut entries = Vec::new();
        let mut crossings = Vec::new();
        for site in window.sites() {
            let e = run.flux.entries(&site);
            if e > 0 {
                entries.push(SparseCount { site: coords(&site, dim), count: e });
            }
            for code in 0..2 * dim {
                let step = Step::from_code(code);
                let c = run.flux.crossings(&site, step);
                if c > 0 {
                    crossings.push(Crossing {
                        site: coords(&site, dim),
                        axis: step.axis(),
                        direction: step.sign() as i8,
                        count: c,
                    });
                }
            }
        }
        RunRecordJson {
            wall_time: (!manifest.reproducible).then_some(run.wall_time),
            manifest,
            n: run.n,
            dim,
            seed: run.seed,
            policy: run.policy.clone(),
            engine: run.engine.name().into(),
            stack_mode: format!("{:?}", run.mode).to_lowercase(),
            prf: run.prf.into(),
            tau: run.tau,
            visits: run.visits,
            height: height_and_base(run).height,
            support_radius: support_radius(run),
            odometer: run
                .odometer
                .nonzero()
                .map(|(s, c)| SparseCount { site: coords(&s, dim), count: c })
                .collect(),
            final_config: run
                .final_config
                .occupied()
                .map(|(s, oil, water)| Occupancy { site: coords(&s, dim), oil, water })
                .collect(),
            flux: FluxJson { entries, crossings },
            trajectory: run.trajectory.as_ref().map(TrajectoryJson::of),
        }
    }
}

pub fn run_record_json(run: &RunRecord, manifest: RunManifest) -> String {
    serde_json::to_string_pretty(&RunRecordJson::of(run, manifest)).expect("record serializes") + "\n"
}

/// JSON error object for engine anomalies.
pub fn error_json(err: &EngineError, manifest: &RunManifest) -> String {
    let kind = match err {
        EngineError::IllegalFiring { .. } => "illegal-firing",
        EngineError::InsufficientPairs { .. } => "insufficient-pairs",
        EngineError::WindowCapExceeded { .. } => "window-cap-exceeded",
        EngineError::BudgetExceeded { .. } => "budget-exceeded",
        EngineError::Stack(_) => "stack",
        EngineError::Observable(_) => "observable",
        EngineError::Unsupported(_) => "unsupported",
    };
    let mut obj = serde_json::json!({
        "manifest": manifest,
        "error": { "kind": kind, "message": err.to_string() },
    });
    if let EngineError::BudgetExceeded { n, seed, fired, budget } = err {
        obj["error"]["n"] = (*n).into();
        obj["error"]["seed"] = (*seed).into();
        obj["error"]["fired"] = (*fired).into();
        obj["error"]["budget"] = (*budget).into();
    }
    serde_json::to_string_pretty(&obj).expect("error serializes") + "\n"
}

/// Line profile: columns `x,u,oil,water` over the odometer/particle span
/// widened by one site. Empty runs produce the header only.
pub fn profile_csv(run: &RunRecord, manifest: &RunManifest) -> String {
    let mut out = format!("{}\nx,u,oil,water\n", manifest.comment());
    let spans = [run.odometer.support_range(0), run.final_config.oil.support_range(0), run.final_config.water.support_range(0)];
    let (lo, hi) = spans.iter().flatten().fold((i64::MAX, i64::MIN), |(lo, hi), &(a, b)| (lo.min(a), hi.max(b)));
    if lo <= hi {
        for x in lo - 1..=hi + 1 {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                x,
                run.odometer.at(x),
                run.final_config.oil.at(x),
                run.final_config.water.at(x)
            );
        }
    }
    out
}

pub fn scaling_profile_csv(profile: &ScalingProfile, manifest: &RunManifest) -> String {
    let mut out = format!("{}\nxi,w,dw\n", manifest.comment());
    for (x, w, d) in profile.symmetric_rows() {
        let _ = writeln!(out, "{x:.10e},{w:.16e},{d:.16e}");
    }
    out
}

pub fn radial_profile_csv(profile: &RadialProfile, manifest: &RunManifest) -> String {
    let mut out = format!("{}\nr,w,dw\n", manifest.comment());
    for ((r, w), d) in profile.r.iter().zip(&profile.values).zip(&profile.derivs) {
        let _ = writeln!(out, "{r:.10e},{w:.16e},{d:.16e}");
    }
    if profile.r.last().is_none_or(|&r| r < profile.support_radius) {
        let _ = writeln!(out, "{:.10e},{:.16e},{:.16e}", profile.support_radius, 0.0, 0.0);
    }
    out
}

/// One row per run.
pub fn sweep_csv(result: &SweepResult, manifest: &RunManifest) -> String {
    let mut out = format!(
        "{}\nn,replicate,seed,tau,visits,height,support_radius,rightmost,f_outside,u_center,u_edge\n",
        manifest.comment()
    );
    for s in &result.summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.n,
            s.replicate,
            s.seed,
            s.tau,
            s.visits,
            s.height,
            s.support_radius,
            s.rightmost.map(|r| r.to_string()).unwrap_or_default(),
            s.f_outside,
            s.u_center,
            s.u_edge
        );
    }
    out
}

#[derive(Serialize)]
struct PlanJson<'a> {
    n_grid: &'a [u64],
    seeds: u64,
    base_seed: u64,
    dim: usize,
    policy: &'a str,
    engine: &'a str,
}

#[derive(Serialize)]
pub struct SweepFits {
    pub height: Option<ExponentFit>,
    pub support_radius: Option<ExponentFit>,
}

pub fn sweep_summary_json(
    plan: &SweepPlan,
    result: &SweepResult,
    fits: Option<&SweepFits>,
    variance: Option<&VarianceReport>,
    rightmost: Option<&RightmostReport>,
    manifest: &RunManifest,
) -> String {
    let obj = serde_json::json!({
        "manifest": manifest,
        "plan": PlanJson {
            n_grid: &plan.n_grid,
            seeds: plan.seeds,
            base_seed: plan.base_seed,
            dim: plan.dim,
            policy: plan.policy.name(),
            engine: plan.engine.name(),
        },
        "aggregates": result.aggregates,
        "fits": fits,
        "variance": variance,
        "rightmost": rightmost,
    });
    serde_json::to_string_pretty(&obj).expect("summary serializes") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_to_fixation, RunConfig};

    fn manifest() -> RunManifest {
        RunManifest {
            tool: "oilwater".into(),
            version: "0".into(),
            command: "run".into(),
            args: vec![],
            seed: Some(1),
            prf: PRF_ID.into(),
            created: 0,
            reproducible: true,
        }
    }

    #[test]
    fn record_roundtrip() {
        let run = run_to_fixation(&RunConfig::new(7, 1)).unwrap();
        let text = run_record_json(&run, manifest());
        let back: RunRecordJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.tau, run.tau);
        assert_eq!(back.odometer.iter().map(|e| e.count).sum::<u64>(), run.tau);
        assert_eq!(back.wall_time, None);
        let crossings: u64 = back.flux.crossings.iter().map(|c| c.count).sum();
        assert_eq!(crossings, 2 * run.tau);
    }

    #[test]
    fn empty_profile_is_header_only() {
        let run = run_to_fixation(&RunConfig::new(0, 1)).unwrap();
        let csv = profile_csv(&run, &manifest());
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1), Some("x,u,oil,water"));
    }

    #[test]
    fn profile_rows_cover_particles() {
        let run = run_to_fixation(&RunConfig::new(20, 4)).unwrap();
        let csv = profile_csv(&run, &manifest());
        let (oil, water): (u64, u64) = csv
            .lines()
            .skip(2)
            .map(|l| {
                let f: Vec<u64> = l.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
                (f[0], f[1])
            })
            .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        assert_eq!((oil, water), (20, 20));
    }

    #[test]
    fn long_series_are_thinned() {
        let run = run_to_fixation(&RunConfig::new(300, 4)).unwrap();
        let json = RunRecordJson::of(&run, manifest());
        let t = json.trajectory.unwrap();
        assert!(t.series.len() <= JSON_SERIES_CAP);
        assert_eq!(t.series[0], 300);
    }
}
