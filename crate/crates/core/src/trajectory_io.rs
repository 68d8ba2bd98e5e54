//! Wide CSV format for trajectories.
//!
//! Leading columns: `t`, `omega_<j>`, `pc_<c>`, `psi_<e>`, `x_<g>`,
//! `s_tilde_<u>`, `xi_<u>`, `nf_<u>` and, for schemes with a Lyapunov
//! certificate, `lyapunov`. Diagnostic columns follow: `eta_<l>`,
//! `omega_dot_<j>`, `pc_dot_<c>`, `pc_int_<c>`, `nd_<u>`, `pm_<g>`, `dc_<l>`, `u_<u>`,
//! `pl_<u>`. Numbers use the shortest representation that round-trips.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::schemes::SchemeKind;
use crate::sim::{Sample, Trajectory};

type Getter = fn(&Sample) -> &Vec<f64>;

const LEADING: [(&str, Getter); 7] = [
    ("omega", |s| &s.omega),
    ("pc", |s| &s.p_c),
    ("psi", |s| &s.psi),
    ("x", |s| &s.x),
    ("s_tilde", |s| &s.s_tilde),
    ("xi", |s| &s.xi),
    ("nf", |s| &s.n_f),
];

const TRAILING: [(&str, Getter); 9] = [
    ("eta", |s| &s.eta),
    ("omega_dot", |s| &s.omega_dot),
    ("pc_dot", |s| &s.p_c_dot),
    ("pc_int", |s| &s.p_c_int),
    ("nd", |s| &s.n_d),
    ("pm", |s| &s.p_m),
    ("dc", |s| &s.d_c),
    ("u", |s| &s.u),
    ("pl", |s| &s.p_l),
];

pub fn header(traj: &Trajectory) -> Vec<String> {
    let first = &traj.samples[0];
    let mut cols = vec!["t".to_string()];
    let group = |cols: &mut Vec<String>, name: &str, len: usize| cols.extend((0..len).map(|i| format!("{name}_{i}")));
    for (name, get) in LEADING {
        group(&mut cols, name, get(first).len());
    }
    if first.lyapunov.is_some() {
        cols.push("lyapunov".into());
    }
    for (name, get) in TRAILING {
        group(&mut cols, name, get(first).len());
    }
    cols
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    if traj.samples.is_empty() {
        return Err(Error::config("cannot write an empty trajectory"));
    }
    let mut w = csv::Writer::from_writer(out);
    let header = header(traj);
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for s in &traj.samples {
        row.clear();
        row.push(format!("{}", s.t));
        for (_, get) in LEADING {
            row.extend(get(s).iter().map(|v| format!("{v}")));
        }
        if let Some(v) = s.lyapunov {
            row.push(format!("{v}"));
        }
        for (_, get) in TRAILING {
            row.extend(get(s).iter().map(|v| format!("{v}")));
        }
        if row.len() != header.len() {
            return Err(Error::Invariant(format!("sample at t = {} has ragged columns", s.t)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectory(traj, &mut buf)?;
    crate::runner::write_atomic(path, &buf)
}

/// Column positions grouped by prefix.
struct Columns {
    groups: BTreeMap<String, Vec<usize>>,
    lyapunov: Option<usize>,
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn parse_header(header: &csv::StringRecord) -> Result<Columns> {
    if header.get(0) != Some("t") {
        return Err(schema("t", "first column must be `t`"));
    }
    let mut raw: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    let mut lyapunov = None;
    for (pos, name) in header.iter().enumerate().skip(1) {
        if name == "lyapunov" {
            lyapunov = Some(pos);
            continue;
        }
        let (prefix, idx) = name
            .rsplit_once('_')
            .and_then(|(p, i)| i.parse::<usize>().ok().map(|i| (p, i)))
            .ok_or_else(|| schema(name, "unrecognised column"))?;
        if !LEADING.iter().chain(TRAILING.iter()).any(|(n, _)| *n == prefix) {
            return Err(schema(name, "unrecognised column"));
        }
        raw.entry(prefix.to_string()).or_default().push((idx, pos));
    }
    let mut groups = BTreeMap::new();
    for (prefix, mut cols) in raw {
        cols.sort_unstable();
        if cols.iter().enumerate().any(|(k, &(i, _))| k != i) {
            return Err(schema(&prefix, "column indices must run 0, 1, 2, ... without gaps"));
        }
        groups.insert(prefix, cols.into_iter().map(|(_, p)| p).collect());
    }
    Ok(Columns { groups, lyapunov })
}

/// Reads a trajectory written by [`write_trajectory`].
///
/// The scheme is inferred from the columns: no `psi_*` columns means the
/// integral baseline, no `lyapunov` column the bus-level primal-dual scheme,
/// and non-zero privacy signals the privacy-preserving scheme.
pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(input);
    let cols = parse_header(rd.headers()?)?;
    let width = rd.headers()?.len();
    let mut samples = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(schema(
                &format!("row {}", row + 1),
                format!("expected {width} fields, got {}", rec.len()),
            ));
        }
        let values = rec
            .iter()
            .enumerate()
            .map(|(c, f)| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(schema(
                    &format!("row {}, column {}", row + 1, c),
                    format!("`{f}` is not a finite number"),
                )),
            })
            .collect::<Result<Vec<f64>>>()?;
        let pick = |name: &str| -> Vec<f64> {
            cols.groups
                .get(name)
                .map(|ps| ps.iter().map(|&p| values[p]).collect())
                .unwrap_or_default()
        };
        samples.push(Sample {
            t: values[0],
            omega: pick("omega"),
            omega_dot: pick("omega_dot"),
            eta: pick("eta"),
            x: pick("x"),
            p_c: pick("pc"),
            p_c_dot: pick("pc_dot"),
            p_c_int: pick("pc_int"),
            psi: pick("psi"),
            xi: pick("xi"),
            n_f: pick("nf"),
            n_d: pick("nd"),
            s_tilde: pick("s_tilde"),
            p_m: pick("pm"),
            d_c: pick("dc"),
            u: pick("u"),
            p_l: pick("pl"),
            lyapunov: cols.lyapunov.map(|p| values[p]),
        });
    }
    if samples.is_empty() {
        return Err(schema("row 1", "trajectory has no samples"));
    }
    let private = samples.iter().any(|s| s.xi.iter().chain(&s.n_f).any(|v| *v != 0.0));
    let kind = match (cols.groups.contains_key("psi"), cols.lyapunov.is_some()) {
        (false, _) => SchemeKind::Integral,
        (true, false) => SchemeKind::PrimalDual,
        (true, true) if private => SchemeKind::PrivacyPreserving,
        (true, true) => SchemeKind::ExtendedPrimalDual,
    };
    let dt = if samples.len() > 1 {
        samples[1].t - samples[0].t
    } else {
        0.0
    };
    Ok(Trajectory { kind, dt, samples })
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    read_trajectory(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64) -> Sample {
        Sample {
            t,
            omega: vec![0.1 * t, -0.2],
            omega_dot: vec![0.0, 1e-300],
            eta: vec![1.0 / 3.0],
            x: vec![2.5],
            p_c: vec![1.0, 2.0, 3.0],
            p_c_dot: vec![0.0; 3],
            p_c_int: vec![0.0; 3],
            psi: vec![0.5, -0.5],
            xi: vec![0.0, 0.0, 0.0],
            n_f: vec![0.0; 3],
            n_d: vec![0.0; 3],
            s_tilde: vec![0.1, 0.2, -0.3],
            p_m: vec![0.7],
            d_c: vec![0.1, 0.2],
            u: vec![1.0, 2.0, 3.0],
            p_l: vec![0.0, 0.5, 0.0],
            lyapunov: Some(0.25),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let traj = Trajectory {
            kind: SchemeKind::ExtendedPrimalDual,
            dt: 0.1,
            samples: vec![sample(0.0), sample(0.1)],
        };
        let mut buf = Vec::new();
        write_trajectory(&traj, &mut buf).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back.samples, traj.samples);
        assert_eq!(back.kind, SchemeKind::ExtendedPrimalDual);
    }

    #[test]
    fn header_order_and_width() {
        let traj = Trajectory {
            kind: SchemeKind::ExtendedPrimalDual,
            dt: 0.1,
            samples: vec![sample(0.0)],
        };
        let h = header(&traj);
        assert_eq!(&h[..4], &["t", "omega_0", "omega_1", "pc_0"]);
        let ly = h.iter().position(|c| c == "lyapunov").unwrap();
        assert_eq!(h[ly - 1], "nf_2");
        assert_eq!(h[ly + 1], "eta_0");
    }

    #[test]
    fn rejects_non_finite_and_unknown_columns() {
        assert!(matches!(
            read_trajectory("t,omega_0\n0,NaN\n".as_bytes()),
            Err(Error::Schema { .. })
        ));
        assert!(matches!(
            read_trajectory("t,bogus_0\n0,1\n".as_bytes()),
            Err(Error::Schema { .. })
        ));
        assert!(matches!(
            read_trajectory("t,pc_1\n0,1\n".as_bytes()),
            Err(Error::Schema { .. })
        ));
    }
}
