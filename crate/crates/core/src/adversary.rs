//! Eavesdropper models and prosumption-reconstruction attacks on recorded traces.
//!
//! The adversary sees some power-command channels and may know the controller
//! dynamics. With that knowledge it integrates the consensus states from the
//! observed commands and inverts the command dynamics,
//! `ŝ = Γ ṗᶜ + H ψ̂`. The true prosumption stored in the trajectory is used
//! only to score the estimate.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graph::CommGraph;
use crate::schemes::SchemeKind;
use crate::sim::Trajectory;

/// Which power-command channels the eavesdropper can read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedChannels {
    All,
    /// The unit's own channel and those of its communication neighbours.
    NeighborsOf(usize),
    Subset(Vec<usize>),
}

/// Controller parameters the adversary believes; they may differ from the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub gamma: Vec<f64>,
    pub gamma_psi: Vec<f64>,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeSet {
    pub observed: ObservedChannels,
    pub knows_dynamics: bool,
    /// Whether the adversary knows that the noise vanishes at steady state.
    #[serde(default)]
    pub knows_noise_steady_state: bool,
    pub model: ModelParams,
    /// Units whose prosumption is estimated; all controllers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<usize>>,
}

impl KnowledgeSet {
    /// Full knowledge of the given controller.
    pub fn full(gamma: Vec<f64>, gamma_psi: Vec<f64>, edges: Vec<(usize, usize)>) -> Self {
        Self {
            observed: ObservedChannels::All,
            knows_dynamics: true,
            knows_noise_steady_state: true,
            model: ModelParams {
                gamma,
                gamma_psi,
                edges,
            },
            targets: None,
        }
    }

    /// Observation mask over the `n` channels.
    pub fn observation_mask(&self, graph: &CommGraph) -> Result<Vec<bool>> {
        let n = graph.node_count();
        let mut mask = vec![false; n];
        match &self.observed {
            ObservedChannels::All => mask.iter_mut().for_each(|m| *m = true),
            ObservedChannels::NeighborsOf(u) => {
                if *u >= n {
                    return Err(Error::config(format!("observed neighbourhood of unknown unit {u}")));
                }
                graph.closed_neighbourhood(*u).into_iter().for_each(|v| mask[v] = true);
            }
            ObservedChannels::Subset(list) => {
                if list.is_empty() {
                    return Err(Error::config("observed channel subset must not be empty"));
                }
                for &v in list {
                    if v >= n {
                        return Err(Error::config(format!("observed channel {v} does not exist")));
                    }
                    mask[v] = true;
                }
            }
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    Forward,
    #[default]
    Central,
    /// Use the command derivatives and per-interval command integrals stored
    /// in the trajectory.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOptions {
    pub derivative: DerivativeMode,
    /// ψ̂ at the first sample; zero when absent.
    pub psi0_guess: Option<Vec<f64>>,
    /// Scoring window for `rmse_transient`, in seconds.
    pub transient_window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub targets: Vec<usize>,
    /// Estimated prosumption, one row per sample, one column per target.
    pub s_hat: Vec<Vec<f64>>,
    pub rmse_transient: f64,
    /// RMS error over targets at the last sample.
    pub rmse_steady: f64,
    /// RMS of the true prosumption over the transient window divided by
    /// `rmse_transient`; large values mean the attack recovers the signal.
    pub success_ratio: f64,
    pub warnings: Vec<String>,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Finite-difference or stored command derivatives, with unobserved channels zeroed.
fn command_derivatives(traj: &Trajectory, mode: DerivativeMode, mask: &[bool]) -> Result<Vec<Vec<f64>>> {
    let s = &traj.samples;
    let n = mask.len();
    let k = s.len();
    let diff = |a: usize, b: usize| -> Vec<f64> {
        let h = s[b].t - s[a].t;
        (0..n)
            .map(|i| if mask[i] { (s[b].p_c[i] - s[a].p_c[i]) / h } else { 0.0 })
            .collect()
    };
    if mode == DerivativeMode::Exact {
        return s
            .iter()
            .map(|smp| {
                check_len("stored command derivatives", smp.p_c_dot.len(), n)?;
                Ok((0..n).map(|i| if mask[i] { smp.p_c_dot[i] } else { 0.0 }).collect())
            })
            .collect();
    }
    if k < 2 {
        return Err(Error::config("finite differences need at least two samples"));
    }
    Ok((0..k)
        .map(|j| match mode {
            DerivativeMode::Forward if j + 1 < k => diff(j, j + 1),
            DerivativeMode::Central if j > 0 && j + 1 < k => diff(j - 1, j + 1),
            _ if j == 0 => diff(0, 1),
            _ => diff(j - 1, j),
        })
        .collect())
}

/// Reconstructs prosumption from the observed power commands.
pub fn observer_attack(traj: &Trajectory, knowledge: &KnowledgeSet, opts: &AttackOptions) -> Result<AttackReport> {
    if !knowledge.knows_dynamics {
        return Err(Error::config(
            "the observer attack needs knowledge of the controller dynamics",
        ));
    }
    let samples = &traj.samples;
    let n = samples.first().map(|s| s.p_c.len()).unwrap_or(0);
    if n == 0 {
        return Err(Error::Schema {
            path: "pc_0".into(),
            message: "trajectory has no power-command columns".into(),
        });
    }
    let m = &knowledge.model;
    check_len("adversary gamma", m.gamma.len(), n)?;
    let graph = CommGraph::new(n, m.edges.clone())?;
    check_len("adversary gamma_psi", m.gamma_psi.len(), graph.edge_count())?;
    if m.gamma.iter().chain(&m.gamma_psi).any(|g| !(*g > 0.0)) {
        return Err(Error::config("adversary time constants must be positive"));
    }
    let mask = knowledge.observation_mask(&graph)?;
    let targets = knowledge.targets.clone().unwrap_or_else(|| (0..n).collect());
    if targets.is_empty() || targets.iter().any(|&u| u >= n) {
        return Err(Error::config(
            "attack targets must be non-empty valid controller indices",
        ));
    }
    for smp in samples {
        check_len("recorded prosumption", smp.s_tilde.len(), n)?;
        check_len("recorded power commands", smp.p_c.len(), n)?;
    }

    let mut warnings = Vec::new();
    for &u in &targets {
        let own = mask[u];
        let edges_ok = graph.incident_edges(u).all(|e| {
            let (a, b) = graph.edges()[e];
            mask[a] && mask[b]
        });
        if !own || !edges_ok {
            warnings.push(format!(
                "partial knowledge: unit {u} has unobserved channels in its row of the estimator; they are zero-filled"
            ));
        }
    }
    if traj.kind == SchemeKind::PrivacyPreserving && !knowledge.knows_noise_steady_state {
        log::info!("adversary does not assume vanishing noise at steady state");
    }

    let p_dot = command_derivatives(traj, opts.derivative, &mask)?;
    let observed = |k: usize| -> Vec<f64> { (0..n).map(|i| if mask[i] { samples[k].p_c[i] } else { 0.0 }).collect() };

    let mut psi = match &opts.psi0_guess {
        Some(g) => {
            check_len("psi0_guess", g.len(), graph.edge_count())?;
            g.clone()
        }
        None => vec![0.0; graph.edge_count()],
    };
    let exact = opts.derivative == DerivativeMode::Exact;
    if exact {
        for smp in samples {
            check_len("stored command integrals", smp.p_c_int.len(), n)?;
        }
    }
    let mut s_hat = Vec::with_capacity(samples.len());
    let mut prev = observed(0);
    for k in 0..samples.len() {
        if k > 0 {
            let cur = observed(k);
            // trapezoid on the samples, or the integrator's own command integral
            let integral: Vec<f64> = if exact {
                (0..n)
                    .map(|i| if mask[i] { samples[k].p_c_int[i] } else { 0.0 })
                    .collect()
            } else {
                let h = samples[k].t - samples[k - 1].t;
                prev.iter().zip(&cur).map(|(a, b)| 0.5 * h * (a + b)).collect()
            };
            let inc = graph.apply_transpose(&integral);
            for e in 0..psi.len() {
                psi[e] += inc[e] / m.gamma_psi[e];
            }
            prev = cur;
        }
        let h_psi = graph.apply(&psi);
        s_hat.push(
            targets
                .iter()
                .map(|&u| m.gamma[u] * p_dot[k][u] + h_psi[u])
                .collect::<Vec<f64>>(),
        );
    }

    let (w0, w1) = opts.transient_window;
    let in_window: Vec<usize> = (0..samples.len())
        .filter(|&k| samples[k].t >= w0 - 1e-9 && samples[k].t <= w1 + 1e-9)
        .collect();
    if in_window.is_empty() {
        return Err(Error::config(format!(
            "transient window [{w0}, {w1}] contains no samples"
        )));
    }
    let err = |k: usize| {
        let est: &Vec<f64> = &s_hat[k];
        targets
            .iter()
            .enumerate()
            .map(move |(j, &u)| est[j] - samples[k].s_tilde[u])
    };
    let rmse_transient = rms(in_window.iter().flat_map(|&k| err(k)));
    let rmse_steady = rms(err(samples.len() - 1));
    let signal = rms(in_window
        .iter()
        .flat_map(|&k| targets.iter().map(move |&u| samples[k].s_tilde[u])));
    Ok(AttackReport {
        targets,
        s_hat,
        rmse_transient,
        rmse_steady,
        success_ratio: signal / rmse_transient.max(f64::MIN_POSITIVE),
        warnings,
    })
}

/// What a passive listener reads directly off the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Per-sample prosumption of every unit, as transmitted to bus controllers.
    Leaked(Vec<Vec<f64>>),
    /// Only power commands are transmitted.
    None,
}

pub fn naive_readout(traj: &Trajectory, kind: SchemeKind) -> Readout {
    match kind {
        SchemeKind::PrimalDual => Readout::Leaked(traj.samples.iter().map(|s| s.s_tilde.clone()).collect()),
        _ => Readout::None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginRanking {
    /// Σ|Δpᶜ| per controller over the window.
    pub energies: Vec<f64>,
    /// Controllers by decreasing energy.
    pub ranking: Vec<usize>,
    /// Units whose load changed at the disturbance, from the recorded loads.
    pub disturbed: Vec<usize>,
    /// 1-based rank of each disturbed unit.
    pub disturbed_ranks: Vec<usize>,
}

/// Ranks controllers by command activity in `[disturbance_time, disturbance_time + window]`.
pub fn origin_detection(traj: &Trajectory, disturbance_time: f64, window: f64) -> Result<OriginRanking> {
    let s = &traj.samples;
    let (first, last) = (s[0].t, s[s.len() - 1].t);
    if !(window > 0.0) || disturbance_time < first || disturbance_time + window > last + 1e-9 {
        return Err(Error::config(format!(
            "window [{disturbance_time}, {}] is not inside the trajectory [{first}, {last}]",
            disturbance_time + window
        )));
    }
    let n = s[0].p_c.len();
    let idx: Vec<usize> = (0..s.len())
        .filter(|&k| s[k].t >= disturbance_time - 1e-9 && s[k].t <= disturbance_time + window + 1e-9)
        .collect();
    let mut energies = vec![0.0; n];
    for w in idx.windows(2) {
        for (i, e) in energies.iter_mut().enumerate() {
            *e += (s[w[1]].p_c[i] - s[w[0]].p_c[i]).abs();
        }
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| energies[b].total_cmp(&energies[a]).then(a.cmp(&b)));

    // loads before and at the disturbance sample
    let at = idx[0];
    let before = at.saturating_sub(1);
    let disturbed: Vec<usize> = if s[at].p_l.len() == n {
        (0..n).filter(|&u| s[at].p_l[u] != s[before].p_l[u]).collect()
    } else {
        Vec::new()
    };
    let disturbed_ranks = disturbed
        .iter()
        .map(|u| ranking.iter().position(|r| r == u).map_or(n, |p| p + 1))
        .collect();
    Ok(OriginRanking {
        energies,
        ranking,
        disturbed,
        disturbed_ranks,
    })
}
