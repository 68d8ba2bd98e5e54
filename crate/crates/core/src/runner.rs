//! Run orchestration and file outputs shared by the command-line tool.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{
    observer_attack, origin_detection, AttackOptions, AttackReport, DerivativeMode, KnowledgeSet, OriginRanking,
};
use crate::equilibrium::{solve_kkt, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::scenario::{from_json_str, ScenarioFile};
use crate::schemes::{check_design_condition, max_feasible_beta, DesignCheck, SchemeKind};
use crate::sim::{marginal_costs, simulate, steady_state_metrics, Scenario, SteadyStateMetrics, Trajectory};
use crate::trajectory_io::{load_trajectory, write_trajectory};

/// Length of the trailing window used for end-of-run metrics, in seconds.
pub const METRIC_WINDOW: f64 = 5.0;

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, file: &ScenarioFile) -> ScenarioFile {
        let mut f = file.clone();
        if let Some(s) = self.seed {
            f.sim.seed = s;
        }
        if let Some(dt) = self.dt {
            f.sim.dt = dt;
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scheme: SchemeKind,
    /// Multiplier of the final dispatch problem.
    pub lambda: f64,
    pub total_cost: f64,
    #[serde(flatten)]
    pub steady: SteadyStateMetrics,
    /// `marginal_cost_spread_end / |λ|`.
    pub marginal_cost_spread_rel: f64,
    pub metric_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// Equilibrium of the loads at the start of the run.
    pub initial: EquilibriumSolution,
    /// Equilibrium once every disturbance has been applied.
    #[serde(rename = "final")]
    pub after_disturbances: EquilibriumSolution,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub metrics: RunMetrics,
    pub equilibrium: EquilibriumReport,
}

/// Simulates a scenario and computes its summary.
pub fn execute(sc: &Scenario) -> Result<RunOutput> {
    let trajectory = simulate(sc)?;
    let final_devices = sc.final_devices()?;
    let kkt = solve_kkt(&final_devices);
    let window = METRIC_WINDOW.min(trajectory.span());
    let steady = steady_state_metrics(&trajectory, &final_devices, window)?;
    let marginal_cost_spread_rel = if kkt.lambda != 0.0 {
        steady.marginal_cost_spread_end / kkt.lambda.abs()
    } else {
        steady.marginal_cost_spread_end
    };
    let equilibrium = EquilibriumReport {
        initial: sc.equilibrium(&sc.devices)?,
        after_disturbances: sc.equilibrium(&final_devices)?,
    };
    Ok(RunOutput {
        trajectory,
        metrics: RunMetrics {
            scheme: sc.scheme.kind,
            lambda: kkt.lambda,
            total_cost: kkt.total_cost,
            steady,
            marginal_cost_spread_rel,
            metric_window: window,
        },
        equilibrium,
    })
}

/// Runs one scenario file and writes `trajectory.csv`, `metrics.json` and
/// `equilibrium.json` into `out_dir`.
pub fn run(scenario_path: &Path, out_dir: &Path, overrides: Overrides) -> Result<RunMetrics> {
    let file = overrides.apply(&ScenarioFile::load(scenario_path)?);
    let sc = file.build(None)?;
    let out = execute(&sc)?;
    fs::create_dir_all(out_dir)?;
    let mut csv = Vec::new();
    write_trajectory(&out.trajectory, &mut csv)?;
    write_atomic(&out_dir.join("trajectory.csv"), &csv)?;
    write_json(&out_dir.join("metrics.json"), &out.metrics)?;
    write_json(&out_dir.join("equilibrium.json"), &out.equilibrium)?;
    Ok(out.metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub runs: Vec<RunMetrics>,
    /// Whether settling times are ordered primal-dual ≤ extended ≤ privacy-preserving.
    /// Informational only.
    pub settle_order_as_expected: Option<bool>,
}

/// Runs one scenario under several schemes with a shared seed and writes a
/// combined `metrics.json` plus `frequency.csv`, `marginal_costs.csv`,
/// `commands.csv` and `inferred_demand.csv`.
pub fn compare(
    scenario_path: &Path,
    schemes: &[SchemeKind],
    out_dir: &Path,
    overrides: Overrides,
) -> Result<CompareSummary> {
    if schemes.is_empty() {
        return Err(Error::config("at least one scheme is required"));
    }
    let file = overrides.apply(&ScenarioFile::load(scenario_path)?);
    let scenarios = schemes
        .iter()
        .map(|&k| file.build(Some(k)))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Result<RunOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = scenarios.iter().map(|sc| s.spawn(move || execute(sc))).collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Invariant("scheme run panicked".into())))
            })
            .collect()
    });
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let settle = |k: SchemeKind| {
        outputs
            .iter()
            .find(|o| o.metrics.scheme == k)
            .map(|o| o.metrics.steady.settle_time_0_01_hz.unwrap_or(f64::INFINITY))
    };
    let settle_order_as_expected = match (
        settle(SchemeKind::PrimalDual),
        settle(SchemeKind::ExtendedPrimalDual),
        settle(SchemeKind::PrivacyPreserving),
    ) {
        (Some(a), Some(b), Some(c)) => Some(a <= b && b <= c),
        _ => None,
    };
    if settle_order_as_expected == Some(false) {
        log::warn!("settling times are not ordered primal-dual <= extended <= privacy-preserving");
    }
    let summary = CompareSummary {
        runs: outputs.iter().map(|o| o.metrics.clone()).collect(),
        settle_order_as_expected,
    };

    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("metrics.json"), &summary)?;
    write_figure(&out_dir.join("frequency.csv"), &scenarios, &outputs, "omega", |_, s| {
        s.omega.clone()
    })?;
    write_figure(
        &out_dir.join("marginal_costs.csv"),
        &scenarios,
        &outputs,
        "mc",
        marginal_costs,
    )?;
    write_figure(&out_dir.join("commands.csv"), &scenarios, &outputs, "pc", |_, s| {
        s.p_c.clone()
    })?;
    write_inferred_demand(&out_dir.join("inferred_demand.csv"), &scenarios, &outputs)?;
    Ok(summary)
}

struct Column<'a> {
    name: String,
    values: Box<dyn Fn(usize) -> f64 + 'a>,
}

fn write_columns(path: &Path, times: &[f64], cols: Vec<Column<'_>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(cols.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for (k, t) in times.iter().enumerate() {
        let mut row = vec![format!("{t}")];
        row.extend(cols.iter().map(|c| format!("{}", (c.values)(k))));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn common_times(outputs: &[RunOutput]) -> Result<Vec<f64>> {
    let times: Vec<f64> = outputs[0].trajectory.times().collect();
    if outputs.iter().any(|o| o.trajectory.samples.len() != times.len()) {
        return Err(Error::Invariant("scheme runs recorded different sample grids".into()));
    }
    Ok(times)
}

fn write_figure(
    path: &Path,
    scenarios: &[Scenario],
    outputs: &[RunOutput],
    label: &str,
    extract: impl Fn(&crate::devices::DeviceSet, &crate::sim::Sample) -> Vec<f64>,
) -> Result<()> {
    let times = common_times(outputs)?;
    // materialise per-scheme tables; the closures below index into them
    let tables: Vec<(SchemeKind, Vec<Vec<f64>>)> = scenarios
        .iter()
        .zip(outputs)
        .map(|(sc, o)| {
            (
                sc.scheme.kind,
                o.trajectory.samples.iter().map(|s| extract(&sc.devices, s)).collect(),
            )
        })
        .collect();
    let mut cols = Vec::new();
    for (kind, rows) in &tables {
        for i in 0..rows[0].len() {
            cols.push(Column {
                name: format!("{}_{label}_{i}", kind.name()),
                values: Box::new(move |k| rows[k][i]),
            });
        }
    }
    write_columns(path, &times, cols)
}

/// Full-knowledge central-difference attack on every per-unit consensus run.
fn write_inferred_demand(path: &Path, scenarios: &[Scenario], outputs: &[RunOutput]) -> Result<()> {
    let times = common_times(outputs)?;
    let mut tables = Vec::new();
    for (sc, o) in scenarios.iter().zip(outputs) {
        if !matches!(
            sc.scheme.kind,
            SchemeKind::ExtendedPrimalDual | SchemeKind::PrivacyPreserving
        ) {
            continue;
        }
        let report = attack_with_full_knowledge(sc, &o.trajectory, DerivativeMode::Central)?;
        let truth: Vec<Vec<f64>> = o.trajectory.samples.iter().map(|s| s.s_tilde.clone()).collect();
        tables.push((sc.scheme.kind, truth, report.s_hat));
    }
    let mut cols = Vec::new();
    for (kind, truth, est) in &tables {
        for i in 0..truth[0].len() {
            cols.push(Column {
                name: format!("{}_true_{i}", kind.name()),
                values: Box::new(move |k| truth[k][i]),
            });
            cols.push(Column {
                name: format!("{}_inferred_{i}", kind.name()),
                values: Box::new(move |k| est[k][i]),
            });
        }
    }
    write_columns(path, &times, cols)
}

/// Observer attack with the true controller parameters and the true ψ(0).
pub fn attack_with_full_knowledge(
    sc: &Scenario,
    traj: &Trajectory,
    derivative: DerivativeMode,
) -> Result<AttackReport> {
    let knowledge = KnowledgeSet::full(
        sc.scheme.gamma.clone(),
        sc.scheme.gamma_psi.clone(),
        sc.comm.edges().to_vec(),
    );
    let opts = AttackOptions {
        derivative,
        psi0_guess: Some(traj.samples[0].psi.clone()),
        transient_window: (traj.samples[0].t, traj.last().t),
    };
    observer_attack(traj, &knowledge, &opts)
}

/// Contents of an attack configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub knowledge: KnowledgeSet,
    #[serde(default)]
    pub derivative: DerivativeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi0_guess: Option<Vec<f64>>,
    /// Scoring window in seconds; the whole trace when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_window: Option<(f64, f64)>,
    /// Enables origin detection starting at this time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance_time: Option<f64>,
    #[serde(default = "default_origin_window")]
    pub origin_window: f64,
}

fn default_origin_window() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub path: PathBuf,
    pub rmse_transient: f64,
    pub success_ratio: f64,
    /// This trace's rmse divided by the baseline's.
    pub rmse_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFileReport {
    #[serde(flatten)]
    pub attack: AttackReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<OriginRanking>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineComparison>,
}

fn attack_trace(traj: &Trajectory, cfg: &AttackConfig) -> Result<AttackReport> {
    let opts = AttackOptions {
        derivative: cfg.derivative,
        psi0_guess: cfg.psi0_guess.clone(),
        transient_window: cfg.transient_window.unwrap_or((traj.samples[0].t, traj.last().t)),
    };
    observer_attack(traj, &cfg.knowledge, &opts)
}

/// Attacks a recorded trajectory and writes the report as JSON.
pub fn attack(
    trajectory_path: &Path,
    config_path: &Path,
    out_path: &Path,
    baseline: Option<&Path>,
) -> Result<AttackFileReport> {
    let cfg: AttackConfig = from_json_str(&fs::read_to_string(config_path)?)?;
    let traj = load_trajectory(trajectory_path)?;
    let report = attack_trace(&traj, &cfg)?;
    let origin = cfg
        .disturbance_time
        .map(|t| origin_detection(&traj, t, cfg.origin_window))
        .transpose()?;
    let baseline = match baseline {
        Some(p) => {
            let base = attack_trace(&load_trajectory(p)?, &cfg)?;
            Some(BaselineComparison {
                path: p.to_path_buf(),
                rmse_transient: base.rmse_transient,
                success_ratio: base.success_ratio,
                rmse_ratio: report.rmse_transient / base.rmse_transient.max(f64::MIN_POSITIVE),
            })
        }
        None => None,
    };
    let out = AttackFileReport {
        attack: report,
        origin,
        baseline,
    };
    if let Some(dir) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(out_path, &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDesign {
    pub unit: usize,
    pub beta: f64,
    pub beta_hat: f64,
    /// Largest β admitted with this unit's β̂, if any.
    pub max_feasible_beta: Option<f64>,
    #[serde(flatten)]
    pub check: DesignCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub all_feasible: bool,
    pub units: Vec<UnitDesign>,
}

/// Evaluates the privacy design condition for every unit of a scenario file.
pub fn check_design(file: &ScenarioFile) -> Result<DesignReport> {
    let p = file.scheme.privacy.as_ref().ok_or_else(|| Error::Schema {
        path: "scheme.privacy".into(),
        message: "missing privacy section".into(),
    })?;
    let model = file.network_model()?;
    let devices = file.device_set()?;
    let checks = check_design_condition(&devices, model.damping(), &p.beta, &p.beta_hat)?;
    let per_bus = devices.units_per_bus();
    let units: Vec<UnitDesign> = checks
        .into_iter()
        .enumerate()
        .map(|(i, check)| {
            let u = devices.unit(i);
            let d_over_n = model.damping()[u.bus] / per_bus[u.bus] as f64;
            UnitDesign {
                unit: i,
                beta: p.beta[i],
                beta_hat: p.beta_hat[i],
                max_feasible_beta: max_feasible_beta(u.damping_h, d_over_n, p.beta_hat[i]).ok(),
                check,
            }
        })
        .collect();
    Ok(DesignReport {
        all_feasible: units.iter().all(|u| u.check.feasible),
        units,
    })
}
