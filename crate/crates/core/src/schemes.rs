//! Secondary frequency controllers and the privacy-enhancing signal.
//!
//! Four schemes share one state layout ([`SchemeState`]):
//!
//! | kind                 | controllers | ψ edges         | input u            |
//! |----------------------|-------------|-----------------|--------------------|
//! | `Integral`           | units       | none            | own command        |
//! | `PrimalDual`         | buses       | bus graph       | command of its bus |
//! | `ExtendedPrimalDual` | units       | unit graph      | own command        |
//! | `PrivacyPreserving`  | units       | unit graph      | own command        |
//!
//! The privacy-preserving controller solves `(Γ + Ξ) ṗᶜ = s̃ − Hψ + n^f`, which
//! is the exact resolution of the algebraic loop created by the derivative
//! term `n^d = −ξ ṗᶜ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::graph::CommGraph;

use crate::devices::DeviceSet;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Integral,
    PrimalDual,
    ExtendedPrimalDual,
    PrivacyPreserving,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::Integral,
        SchemeKind::PrimalDual,
        SchemeKind::ExtendedPrimalDual,
        SchemeKind::PrivacyPreserving,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Integral => "integral",
            SchemeKind::PrimalDual => "primal_dual",
            SchemeKind::ExtendedPrimalDual => "extended_primal_dual",
            SchemeKind::PrivacyPreserving => "privacy_preserving",
        }
    }

    /// Controllers live at buses rather than at units.
    pub fn is_bus_level(self) -> bool {
        self == SchemeKind::PrimalDual
    }

    pub fn uses_consensus(self) -> bool {
        self != SchemeKind::Integral
    }

    /// Schemes with a Lyapunov certificate.
    pub fn has_lyapunov(self) -> bool {
        matches!(self, SchemeKind::ExtendedPrimalDual | SchemeKind::PrivacyPreserving)
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scheme `{s}`")))
    }
}

pub const DEFAULT_SAFETY: f64 = 0.999;

/// Bounds of the privacy-enhancing signal, one entry per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    /// Noise-to-frequency ratio bound β.
    pub beta: Vec<f64>,
    /// Gain-rate bound β̂.
    pub beta_hat: Vec<f64>,
    /// Cap on ξ.
    pub xi_max: Vec<f64>,
    /// Factor in (0, 1) that turns the strict bounds into closed sampling intervals.
    pub safety: f64,
    pub seed: u64,
}

impl PrivacyParams {
    /// Builds parameters with `xi_max` defaulting to ten times the largest Γ entry.
    pub fn new(
        beta: Vec<f64>,
        beta_hat: Vec<f64>,
        xi_max: Option<f64>,
        safety: Option<f64>,
        gamma: &[f64],
        seed: u64,
    ) -> Result<Self> {
        let cap = xi_max.unwrap_or_else(|| 10.0 * gamma.iter().cloned().fold(0.0, f64::max));
        let p = Self {
            xi_max: vec![cap; beta.len()],
            beta,
            beta_hat,
            safety: safety.unwrap_or(DEFAULT_SAFETY),
            seed,
        };
        p.validate(gamma.len())?;
        Ok(p)
    }

    pub fn validate(&self, units: usize) -> Result<()> {
        check_len("beta", self.beta.len(), units)?;
        check_len("beta_hat", self.beta_hat.len(), units)?;
        check_len("xi_max", self.xi_max.len(), units)?;
        let bad = |v: &f64| !(*v >= 0.0 && v.is_finite());
        if self.beta.iter().any(bad) || self.beta_hat.iter().any(bad) || self.xi_max.iter().any(bad) {
            return Err(Error::config(
                "beta, beta_hat and xi_max must be finite and non-negative",
            ));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(Error::config(format!(
                "safety factor must lie in (0, 1), got {}",
                self.safety
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    /// Controller time constants (Γ, or Γ̄ for the bus-level scheme).
    pub gamma: Vec<f64>,
    /// Edge time constants (Γ̃, or Γ̂ for the bus-level scheme).
    pub gamma_psi: Vec<f64>,
    /// K in the integral baseline.
    pub integral_gain: f64,
    pub privacy: Option<PrivacyParams>,
}

impl SchemeConfig {
    /// Number of power-command controllers for this scheme.
    pub fn controller_count(&self, devices: &DeviceSet) -> usize {
        if self.kind.is_bus_level() {
            devices.bus_count()
        } else {
            devices.unit_count()
        }
    }

    pub fn validate(&self, graph: &CommGraph, devices: &DeviceSet) -> Result<()> {
        let n = self.controller_count(devices);
        check_len("gamma", self.gamma.len(), n)?;
        let pos = |v: &f64| *v > 0.0 && v.is_finite();
        if !self.gamma.iter().all(pos) {
            return Err(Error::config("controller time constants must be positive"));
        }
        if self.kind.uses_consensus() {
            check_len("communication graph nodes", graph.node_count(), n)?;
            check_len("gamma_psi", self.gamma_psi.len(), graph.edge_count())?;
            if !self.gamma_psi.iter().all(pos) {
                return Err(Error::config("edge time constants must be positive"));
            }
        }
        if self.kind == SchemeKind::Integral && !pos(&self.integral_gain) {
            return Err(Error::config("integral gain must be positive"));
        }
        match (&self.privacy, self.kind) {
            (Some(p), SchemeKind::PrivacyPreserving) => p.validate(n)?,
            (None, SchemeKind::PrivacyPreserving) => {
                return Err(Error::config("privacy-preserving scheme needs privacy parameters"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of consensus states ψ.
    pub fn psi_len(&self, graph: &CommGraph) -> usize {
        if self.kind.uses_consensus() {
            graph.edge_count()
        } else {
            0
        }
    }
}

/// Controller state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SchemeState {
    pub p_c: Vec<f64>,
    pub psi: Vec<f64>,
    /// Privacy gains ξ, one per unit (all zero outside the privacy scheme).
    pub xi: Vec<f64>,
    /// n^f sample held over the current step.
    pub n_f_held: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRhs {
    pub psi_dot: Vec<f64>,
    pub p_c_dot: Vec<f64>,
    /// Per-unit device input.
    pub u: Vec<f64>,
    /// Realized n^d = −ξ ṗᶜ per unit.
    pub n_d: Vec<f64>,
}

/// ζ_j: summed prosumption of the units at each bus.
pub fn bus_zeta(devices: &DeviceSet, s_tilde: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; devices.bus_count()];
    for (u, s) in devices.units().iter().zip(s_tilde) {
        z[u.bus] += s;
    }
    z
}

/// Device input implied by the controller commands.
pub fn device_inputs(kind: SchemeKind, devices: &DeviceSet, p_c: &[f64]) -> Vec<f64> {
    if kind.is_bus_level() {
        devices.units().iter().map(|u| p_c[u.bus]).collect()
    } else {
        p_c.to_vec()
    }
}

/// Controller right-hand side.
///
/// `s_tilde` is per unit and `omega` per bus; for the bus-level scheme ζ is
/// aggregated from `s_tilde` internally.
pub fn scheme_rhs(
    cfg: &SchemeConfig,
    graph: &CommGraph,
    devices: &DeviceSet,
    state: &SchemeState,
    s_tilde: &[f64],
    omega: &[f64],
) -> Result<SchemeRhs> {
    let n = cfg.controller_count(devices);
    check_len("power commands", state.p_c.len(), n)?;
    check_len("consensus states", state.psi.len(), cfg.psi_len(graph))?;
    check_len("prosumption", s_tilde.len(), devices.unit_count())?;
    check_len("bus frequencies", omega.len(), devices.bus_count())?;
    let units = devices.unit_count();

    if cfg.kind == SchemeKind::Integral {
        let p_c_dot = devices
            .units()
            .iter()
            .map(|u| -(cfg.integral_gain / u.cost_q) * omega[u.bus])
            .collect();
        return Ok(SchemeRhs {
            psi_dot: Vec::new(),
            p_c_dot,
            u: state.p_c.clone(),
            n_d: vec![0.0; units],
        });
    }

    check_len("communication graph nodes", graph.node_count(), n)?;
    let psi_dot: Vec<f64> = graph
        .apply_transpose(&state.p_c)
        .into_iter()
        .zip(&cfg.gamma_psi)
        .map(|(v, g)| v / g)
        .collect();
    let h_psi = graph.apply(&state.psi);

    let (p_c_dot, n_d) = match cfg.kind {
        SchemeKind::PrimalDual => {
            let zeta = bus_zeta(devices, s_tilde);
            let p_c_dot = (0..n).map(|j| (zeta[j] - h_psi[j]) / cfg.gamma[j]).collect();
            (p_c_dot, vec![0.0; units])
        }
        _ => {
            let private = cfg.kind == SchemeKind::PrivacyPreserving;
            if private {
                check_len("privacy gains", state.xi.len(), units)?;
                check_len("held noise", state.n_f_held.len(), units)?;
            }
            let mut p_c_dot = vec![0.0; n];
            let mut n_d = vec![0.0; n];
            for i in 0..n {
                let (xi, n_f) = if private {
                    (state.xi[i], state.n_f_held[i])
                } else {
                    (0.0, 0.0)
                };
                let lhs = cfg.gamma[i] + xi;
                if !(lhs > 0.0) {
                    return Err(Error::Invariant(format!("Γ + Ξ entry {i} is {lhs}")));
                }
                p_c_dot[i] = (s_tilde[i] - h_psi[i] + n_f) / lhs;
                if xi != 0.0 {
                    n_d[i] = -xi * p_c_dot[i];
                }
            }
            (p_c_dot, n_d)
        }
    };

    Ok(SchemeRhs {
        psi_dot,
        p_c_dot,
        u: device_inputs(cfg.kind, devices, &state.p_c),
        n_d,
    })
}

/// Seeded random stream driving ξ and n^f.
#[derive(Debug, Clone)]
pub struct PrivacyRng(ChaCha8Rng);

impl PrivacyRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform sample on [−1, 1).
    fn symmetric(&mut self) -> f64 {
        2.0 * self.0.gen::<f64>() - 1.0
    }

    fn unit(&mut self) -> f64 {
        self.0.gen::<f64>()
    }
}

/// Initial privacy gains: uniform on [0, xi_max/10] for units whose gain may
/// move (β̂ > 0), zero otherwise.
pub fn initial_xi(params: &PrivacyParams, rng: &mut PrivacyRng) -> Vec<f64> {
    params
        .beta_hat
        .iter()
        .zip(&params.xi_max)
        .map(|(&bh, &cap)| {
            let r = rng.unit();
            if bh > 0.0 {
                0.1 * cap * r
            } else {
                0.0
            }
        })
        .collect()
}

/// Draws the ξ increment and the held noise sample for the next step.
///
/// Both signals are drawn for every unit on every call, so the random stream
/// stays aligned regardless of the bounds.
pub fn refresh_privacy_signals(
    params: &PrivacyParams,
    state: &mut SchemeState,
    omega: &[f64],
    unit_bus: &[usize],
    dt: f64,
    rng: &mut PrivacyRng,
) {
    for i in 0..state.xi.len() {
        let step = params.safety * params.beta_hat[i] * dt * rng.symmetric();
        state.xi[i] = (state.xi[i] + step).clamp(0.0, params.xi_max[i]);
        let bound = params.safety * params.beta[i] * omega[unit_bus[i]].abs();
        let r = rng.symmetric();
        state.n_f_held[i] = if bound > 0.0 { bound * r } else { 0.0 };
    }
}

/// Outcome of the per-unit 2×2 negative-semidefiniteness test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignCheck {
    pub feasible: bool,
    /// Eigenvalues in ascending order.
    pub eigenvalues: [f64; 2],
    pub determinant: f64,
}

/// `[[−h − D/n, h + β/2], [h + β/2, −h + β̂/2]]`
pub fn design_matrix(h: f64, d_over_n: f64, beta: f64, beta_hat: f64) -> [[f64; 2]; 2] {
    let off = h + beta / 2.0;
    [[-h - d_over_n, off], [off, -h + beta_hat / 2.0]]
}

/// Closed-form NSD test of one unit's design matrix.
pub fn design_condition(h: f64, d_over_n: f64, beta: f64, beta_hat: f64) -> DesignCheck {
    let [[a, b], [_, c]] = design_matrix(h, d_over_n, beta, beta_hat);
    let det = a * c - b * b;
    // relative slack so the exact boundary returned by `max_feasible_beta` passes
    let scale = a.abs().max(b.abs()).max(c.abs()).powi(2);
    let feasible = a <= 0.0 && c <= 0.0 && det >= -1e-12 * scale;
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    DesignCheck {
        feasible,
        eigenvalues: [mid - rad, mid + rad],
        determinant: det,
    }
}

/// Checks every unit against the design condition.
///
/// `damping` is per bus; each bus's damping is shared equally by its units.
pub fn check_design_condition(
    devices: &DeviceSet,
    damping: &[f64],
    beta: &[f64],
    beta_hat: &[f64],
) -> Result<Vec<DesignCheck>> {
    check_len("damping", damping.len(), devices.bus_count())?;
    check_len("beta", beta.len(), devices.unit_count())?;
    check_len("beta_hat", beta_hat.len(), devices.unit_count())?;
    let per_bus = devices.units_per_bus();
    Ok(devices
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            design_condition(
                u.damping_h,
                damping[u.bus] / per_bus[u.bus] as f64,
                beta[i],
                beta_hat[i],
            )
        })
        .collect())
}

/// Largest β for which the design matrix stays NSD: the root of `det = 0`,
/// `β = 2(√((h + D/n)(h − β̂/2)) − h)`.
pub fn max_feasible_beta(h: f64, d_over_n: f64, beta_hat: f64) -> Result<f64> {
    if !(h > 0.0) || d_over_n < 0.0 || beta_hat < 0.0 {
        return Err(Error::config("h must be positive and D/n, β̂ non-negative"));
    }
    if beta_hat >= 2.0 * h {
        return Err(Error::Infeasible(format!(
            "β̂ = {beta_hat} >= 2h = {}: no noise bound satisfies the design condition",
            2.0 * h
        )));
    }
    let beta = 2.0 * (((h + d_over_n) * (h - beta_hat / 2.0)).sqrt() - h);
    if beta < 0.0 {
        return Err(Error::Infeasible(format!(
            "β̂ = {beta_hat} leaves no non-negative β (boundary at {beta})"
        )));
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{Unit, UnitKind};

    fn units(n: usize) -> DeviceSet {
        DeviceSet::new(
            1,
            (0..n)
                .map(|_| Unit {
                    bus: 0,
                    kind: UnitKind::ControllableLoad,
                    tau: 0.0,
                    droop_m: 0.0,
                    damping_h: 1.0,
                    cost_q: 1.0,
                    uncontrollable_load: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn cfg(kind: SchemeKind, gamma: Vec<f64>, gamma_psi: Vec<f64>, beta: f64) -> SchemeConfig {
        let n = gamma.len();
        SchemeConfig {
            kind,
            privacy: Some(PrivacyParams::new(vec![beta; n], vec![0.0; n], Some(100.0), None, &gamma, 3).unwrap()),
            gamma,
            gamma_psi,
            integral_gain: 1.0,
        }
    }

    #[test]
    fn equilibrium_is_stationary() {
        let ds = units(3);
        let g = CommGraph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let c = cfg(SchemeKind::ExtendedPrimalDual, vec![1.0, 2.0, 3.0], vec![0.5, 0.5], 0.0);
        let s = [0.4, -0.1, -0.3];
        let psi = g.min_norm_preimage(&s).unwrap();
        let st = SchemeState {
            p_c: vec![0.7; 3],
            psi,
            xi: vec![],
            n_f_held: vec![],
        };
        let r = scheme_rhs(&c, &g, &ds, &st, &s, &[0.0]).unwrap();
        assert!(r.psi_dot.iter().chain(&r.p_c_dot).all(|v| v.abs() < 1e-15));
        assert_eq!(r.u, vec![0.7; 3]);
    }

    #[test]
    fn zero_privacy_signal_reduces_to_extended() {
        let ds = units(3);
        let g = CommGraph::new(3, vec![(0, 1), (2, 1), (0, 2)]).unwrap();
        let ext = cfg(
            SchemeKind::ExtendedPrimalDual,
            vec![1.0, 2.0, 3.0],
            vec![0.5, 0.2, 0.1],
            0.0,
        );
        let pp = SchemeConfig {
            kind: SchemeKind::PrivacyPreserving,
            ..ext.clone()
        };
        let st = SchemeState {
            p_c: vec![0.1, -0.2, 0.3],
            psi: vec![0.3, -0.1, 0.05],
            xi: vec![0.0; 3],
            n_f_held: vec![0.0; 3],
        };
        let s = [0.2, 0.1, -0.7];
        let a = scheme_rhs(&ext, &g, &ds, &st, &s, &[0.01]).unwrap();
        let b = scheme_rhs(&pp, &g, &ds, &st, &s, &[0.01]).unwrap();
        assert_eq!(a.p_c_dot, b.p_c_dot);
        assert_eq!(a.psi_dot, b.psi_dot);
    }

    #[test]
    fn gain_folds_into_time_constant() {
        let ds = units(1);
        let g = CommGraph::new(1, vec![]).unwrap();
        let c = cfg(SchemeKind::PrivacyPreserving, vec![2.0], vec![], 0.0);
        let st = SchemeState {
            p_c: vec![0.0],
            psi: vec![],
            xi: vec![3.0],
            n_f_held: vec![0.1],
        };
        let r = scheme_rhs(&c, &g, &ds, &st, &[0.4], &[0.0]).unwrap();
        assert!((r.p_c_dot[0] - 0.1).abs() < 1e-15);
        assert!((r.n_d[0] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn integral_scheme_integrates_frequency() {
        let ds = DeviceSet::new(
            2,
            vec![
                Unit {
                    bus: 0,
                    kind: UnitKind::ControllableLoad,
                    tau: 0.0,
                    droop_m: 0.0,
                    damping_h: 0.5,
                    cost_q: 2.0,
                    uncontrollable_load: 0.0,
                },
                Unit {
                    bus: 1,
                    kind: UnitKind::ControllableLoad,
                    tau: 0.0,
                    droop_m: 0.0,
                    damping_h: 0.25,
                    cost_q: 4.0,
                    uncontrollable_load: 0.0,
                },
            ],
        )
        .unwrap();
        let g = CommGraph::new(2, vec![(0, 1)]).unwrap();
        let c = SchemeConfig {
            kind: SchemeKind::Integral,
            gamma: vec![1.0; 2],
            gamma_psi: vec![],
            integral_gain: 2.0,
            privacy: None,
        };
        let st = SchemeState {
            p_c: vec![0.0; 2],
            ..Default::default()
        };
        let r = scheme_rhs(&c, &g, &ds, &st, &[0.0; 2], &[0.1, -0.2]).unwrap();
        assert!((r.p_c_dot[0] + 0.1).abs() < 1e-15);
        assert!((r.p_c_dot[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn primal_dual_uses_bus_totals() {
        let mut ds = units(2);
        ds = DeviceSet::new(
            2,
            vec![
                Unit {
                    bus: 1,
                    ..ds.unit(0).clone()
                },
                ds.unit(1).clone(),
            ],
        )
        .unwrap();
        let g = CommGraph::new(2, vec![(0, 1)]).unwrap();
        let c = SchemeConfig {
            kind: SchemeKind::PrimalDual,
            gamma: vec![1.0, 2.0],
            gamma_psi: vec![1.0],
            integral_gain: 1.0,
            privacy: None,
        };
        let st = SchemeState {
            p_c: vec![0.2, 0.4],
            psi: vec![0.1],
            ..Default::default()
        };
        let r = scheme_rhs(&c, &g, &ds, &st, &[0.3, 0.5], &[0.0; 2]).unwrap();
        // unit 0 at bus 1, unit 1 at bus 0
        assert_eq!(r.u, vec![0.4, 0.2]);
        assert!((r.p_c_dot[0] - (0.5 - 0.1)).abs() < 1e-15);
        assert!((r.p_c_dot[1] - (0.3 + 0.1) / 2.0).abs() < 1e-15);
        assert!((r.psi_dot[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let ds = units(2);
        let g = CommGraph::new(2, vec![(0, 1)]).unwrap();
        let c = cfg(SchemeKind::ExtendedPrimalDual, vec![1.0; 2], vec![1.0], 0.0);
        let st = SchemeState {
            p_c: vec![0.0; 3],
            psi: vec![0.0],
            ..Default::default()
        };
        assert!(matches!(
            scheme_rhs(&c, &g, &ds, &st, &[0.0; 2], &[0.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn noise_vanishes_at_nominal_frequency() {
        let gamma = vec![1.0; 4];
        let p = PrivacyParams::new(vec![0.5; 4], vec![0.1; 4], None, None, &gamma, 9).unwrap();
        let mut rng = PrivacyRng::new(9);
        let mut st = SchemeState {
            xi: initial_xi(&p, &mut rng),
            n_f_held: vec![1.0; 4],
            ..Default::default()
        };
        refresh_privacy_signals(&p, &mut st, &[0.0, 0.2], &[0, 0, 0, 0], 0.01, &mut rng);
        assert!(st.n_f_held.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_bounds_freeze_the_signal() {
        let gamma = vec![1.0; 3];
        let p = PrivacyParams::new(vec![0.0; 3], vec![0.0; 3], None, None, &gamma, 1).unwrap();
        let mut rng = PrivacyRng::new(1);
        let mut st = SchemeState {
            xi: initial_xi(&p, &mut rng),
            n_f_held: vec![0.0; 3],
            ..Default::default()
        };
        assert_eq!(st.xi, vec![0.0; 3]);
        for _ in 0..100 {
            refresh_privacy_signals(&p, &mut st, &[0.3], &[0, 0, 0], 0.01, &mut rng);
            assert_eq!(st.xi, vec![0.0; 3]);
            assert!(st.n_f_held.iter().all(|v| *v == 0.0 && v.is_sign_positive()));
        }
    }

    #[test]
    fn gain_steps_respect_rate_bound() {
        let gamma = vec![1.0; 5];
        let p = PrivacyParams::new(vec![0.2; 5], vec![0.1; 5], None, Some(0.999), &gamma, 4).unwrap();
        let mut rng = PrivacyRng::new(4);
        let mut st = SchemeState {
            xi: initial_xi(&p, &mut rng),
            n_f_held: vec![0.0; 5],
            ..Default::default()
        };
        for _ in 0..1000 {
            let before = st.xi.clone();
            refresh_privacy_signals(&p, &mut st, &[0.05], &[0; 5], 0.01, &mut rng);
            for (a, b) in before.iter().zip(&st.xi) {
                assert!((a - b).abs() <= 9.99e-4 + 1e-18);
                assert!(*b >= 0.0 && *b <= 10.0);
            }
            assert!(st.n_f_held.iter().all(|v| v.abs() < 0.2 * 0.05));
        }
    }

    #[test]
    fn design_condition_examples() {
        // β = β̂ = 0: det = h D/n
        let c = design_condition(0.7, 0.3, 0.0, 0.0);
        assert!(c.feasible);
        assert!((c.determinant - 0.7 * 0.3).abs() < 1e-15);

        let c = design_condition(1.0, 1.0, 0.5, 0.1);
        assert!(c.feasible);
        assert!((c.determinant - 0.3375).abs() < 1e-12);

        let c = design_condition(1.0, 1.0, 0.8, 0.1);
        assert!(!c.feasible);
        assert!((c.determinant + 0.06).abs() < 1e-12);
    }

    #[test]
    fn boundary_beta_examples() {
        let b = max_feasible_beta(1.0, 1.0, 0.1).unwrap();
        assert!((b - 2.0 * ((2.0f64 * 0.95).sqrt() - 1.0)).abs() < 1e-15);
        assert!((b - 0.7568).abs() < 1e-4);
        assert!(design_condition(1.0, 1.0, b - 1e-6, 0.1).feasible);
        assert!(!design_condition(1.0, 1.0, b + 1e-6, 0.1).feasible);

        assert!(max_feasible_beta(1.0, 1e-12, 0.0).unwrap() < 1e-11);
        assert!(matches!(max_feasible_beta(1.0, 1.0, 2.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn scheme_names_round_trip() {
        for k in SchemeKind::ALL {
            assert_eq!(k.name().parse::<SchemeKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
    }
}
