//! Shared helpers and independent oracles for the integration tests.
#![allow(dead_code)]

use gridpriv::devices::{DeviceSet, Unit, UnitKind};
use gridpriv::scenario::{gen_scenario, RandomScenarioSpec, ScenarioFile};
use gridpriv::schemes::SchemeKind;
use gridpriv::sim::{Scenario, Trajectory};
use nalgebra::Matrix2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 10 buses with 4 units each and a 0.2 pu step at `disturbance_time`.
pub fn ten_bus_spec(seed: u64) -> RandomScenarioSpec {
    RandomScenarioSpec {
        bus_count: 10,
        units_per_bus: (4, 4),
        seed,
        ..Default::default()
    }
}

pub fn ten_bus(seed: u64, t_end: f64, record_stride: usize, disturbance_time: f64) -> ScenarioFile {
    let spec = RandomScenarioSpec {
        t_end,
        record_stride,
        disturbance_time,
        ..ten_bus_spec(seed)
    };
    gen_scenario(&spec).expect("generated scenario")
}

pub fn small(seed: u64, t_end: f64) -> ScenarioFile {
    let spec = RandomScenarioSpec {
        bus_count: 3,
        units_per_bus: (2, 3),
        seed,
        t_end,
        record_stride: 1,
        ..Default::default()
    };
    gen_scenario(&spec).expect("generated scenario")
}

pub fn build(file: &ScenarioFile, kind: SchemeKind) -> Scenario {
    file.build(Some(kind)).expect("scenario builds")
}

/// Random device set with q uniform in [50, 250] and random loads.
pub fn random_devices(rng: &mut ChaCha8Rng) -> DeviceSet {
    let buses = rng.gen_range(1..6);
    let n = rng.gen_range(1..40);
    let units = (0..n)
        .map(|_| {
            let q: f64 = rng.gen_range(50.0..250.0);
            let p_l = rng.gen_range(-0.1..0.3);
            let bus = rng.gen_range(0..buses);
            if rng.gen_bool(0.5) {
                Unit {
                    bus,
                    kind: UnitKind::Generator,
                    tau: 1.0,
                    droop_m: 0.5 / q,
                    damping_h: 0.5 / q,
                    cost_q: q,
                    uncontrollable_load: p_l,
                }
            } else {
                Unit {
                    bus,
                    kind: UnitKind::ControllableLoad,
                    tau: 0.0,
                    droop_m: 0.0,
                    damping_h: 1.0 / q,
                    cost_q: q,
                    uncontrollable_load: p_l,
                }
            }
        })
        .collect();
    DeviceSet::new(buses, units).unwrap()
}

pub struct QpSolution {
    pub p_m: Vec<f64>,
    pub d_c: Vec<f64>,
    pub lambda: f64,
}

/// Projected gradient on `min Σ ½ q z²` subject to `Σ_gen z − Σ_load z = Σ p^L`.
///
/// The feasible set is a hyperplane, so the projection is exact. The
/// multiplier is recovered from stationarity by least squares.
pub fn qp_oracle(devices: &DeviceSet) -> QpSolution {
    let units = devices.units();
    let a: Vec<f64> = units
        .iter()
        .map(|u| if u.kind == UnitKind::Generator { 1.0 } else { -1.0 })
        .collect();
    let q: Vec<f64> = units.iter().map(|u| u.cost_q).collect();
    let target: f64 = units.iter().map(|u| u.uncontrollable_load).sum();
    let n = units.len() as f64;
    let project = |z: &mut Vec<f64>| {
        let viol: f64 = z.iter().zip(&a).map(|(z, a)| z * a).sum::<f64>() - target;
        z.iter_mut().zip(&a).for_each(|(z, a)| *z -= a * viol / n);
    };
    let step = 1.0 / (2.0 * q.iter().cloned().fold(0.0, f64::max));
    let mut z = vec![0.0; units.len()];
    project(&mut z);
    for _ in 0..10_000 {
        let before = z.clone();
        z.iter_mut().zip(&q).for_each(|(z, q)| *z -= step * q * *z);
        project(&mut z);
        let change = z.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change == 0.0 {
            break;
        }
    }
    // stationarity: q z = μ a with μ = −λ
    let mu = z.iter().zip(&q).zip(&a).map(|((z, q), a)| q * z * a).sum::<f64>() / n;
    let pick = |kind: UnitKind| -> Vec<f64> {
        units
            .iter()
            .zip(&z)
            .filter(|(u, _)| u.kind == kind)
            .map(|(_, z)| *z)
            .collect()
    };
    QpSolution {
        p_m: pick(UnitKind::Generator),
        d_c: pick(UnitKind::ControllableLoad),
        lambda: -mu,
    }
}

/// Largest eigenvalue of the symmetric 2×2 design matrix, via a generic eigensolver.
pub fn design_max_eigenvalue(h: f64, d_over_n: f64, beta: f64, beta_hat: f64) -> f64 {
    let off = h + beta / 2.0;
    let m = Matrix2::new(-h - d_over_n, off, off, -h + beta_hat / 2.0);
    m.symmetric_eigen().eigenvalues.max()
}

/// Eigenvalue oracle for negative semidefiniteness, with slack relative to the matrix size.
pub fn design_nsd_oracle(h: f64, d_over_n: f64, beta: f64, beta_hat: f64) -> bool {
    let scale = (h + d_over_n).max(h + beta / 2.0).max((h - beta_hat / 2.0).abs());
    design_max_eigenvalue(h, d_over_n, beta, beta_hat) <= 1e-12 * scale
}

/// Relative infinity-norm distance.
pub fn rel_err(x: &[f64], y: &[f64]) -> f64 {
    let diff = x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Steps where the Lyapunov value grows by more than the allowed slack.
///
/// Steps across a load change are skipped: the reference equilibrium moves there.
pub fn lyapunov_violations(sc: &Scenario, traj: &Trajectory) -> Vec<(f64, f64, f64)> {
    let v0 = traj.samples[0].lyapunov.expect("lyapunov column");
    let private = sc.scheme.kind == SchemeKind::PrivacyPreserving;
    let beta_hat_max = sc
        .scheme
        .privacy
        .as_ref()
        .map(|p| p.beta_hat.iter().cloned().fold(0.0, f64::max))
        .unwrap_or(0.0);
    let safety = sc.scheme.privacy.as_ref().map(|p| p.safety).unwrap_or(0.0);
    let devices = sc.final_devices().unwrap();
    let eq = sc.equilibrium(&devices).unwrap();
    let mut out = Vec::new();
    for w in traj.samples.windows(2) {
        if w[0].p_l != w[1].p_l {
            continue;
        }
        let dt = w[1].t - w[0].t;
        let mut tol = 1e-7 * (1.0 + v0);
        if private {
            let dev = w
                .iter()
                .flat_map(|s| s.p_c.iter().zip(&eq.p_c_star).map(|(p, s)| (p - s) * (p - s)))
                .fold(0.0, f64::max);
            tol += safety * beta_hat_max * dev * dt;
        }
        let inc = w[1].lyapunov.unwrap() - w[0].lyapunov.unwrap();
        if inc > tol {
            out.push((w[1].t, inc, tol));
        }
    }
    out
}

/// Violations of the privacy-signal bounds over every recorded sample.
pub fn privacy_bound_violations(sc: &Scenario, traj: &Trajectory) -> Vec<String> {
    let p = sc.scheme.privacy.as_ref().expect("privacy parameters");
    let bus = sc.devices.unit_buses();
    let mut out = Vec::new();
    for (k, s) in traj.samples.iter().enumerate() {
        for u in 0..bus.len() {
            let bound = p.beta[u] * s.omega[bus[u]].abs();
            let nf = s.n_f[u];
            if !(nf.abs() < bound || (nf == 0.0 && bound == 0.0)) {
                out.push(format!("t={} unit {u}: |n_f|={} bound {}", s.t, nf.abs(), bound));
            }
            if !(s.xi[u] >= 0.0) {
                out.push(format!("t={} unit {u}: xi={}", s.t, s.xi[u]));
            }
            if k > 0 {
                let prev = &traj.samples[k - 1];
                let rate = (s.xi[u] - prev.xi[u]).abs() / (s.t - prev.t);
                if !(rate < p.beta_hat[u] || rate == 0.0) {
                    out.push(format!("t={} unit {u}: |dxi/dt|={} bound {}", s.t, rate, p.beta_hat[u]));
                }
            }
        }
    }
    out
}
