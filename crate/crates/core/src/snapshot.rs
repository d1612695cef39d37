//! Plain-text snapshots of a [`StateVector`].
//!
//! ```text
//! U1EVOLVE 1 n=<n> L=<L> t=<t> fields=<comma-list>
//! ```
//! followed, per field, by `n` rows of `n` floats (row-major, `y` outer).
//! Floats are written in shortest round-trip form, so a reload is bit-exact.
//! The log coefficients and the lapse offset are stored as constant fields.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::elliptic::{chi_cutoff, LogDecomposedScalar};
use crate::geometry::StateVector;
use crate::grid::{GridError, GridSpec, ScalarField, SymTensorField, VectorField};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub const FIELDS: [&str; 16] = [
    "phi",
    "p_phi",
    "omega",
    "p_omega",
    "gamma_tilde",
    "gamma_log",
    "p_gamma",
    "h_xx",
    "h_xy",
    "h_yy",
    "lapse_tilde",
    "lapse_log",
    "lapse_offset",
    "beta_x",
    "beta_y",
    "tau",
];

fn state_fields(s: &StateVector) -> Vec<ScalarField> {
    let g = *s.grid();
    let c = |v: f64| ScalarField::constant(g, v);
    vec![
        s.phi.clone(),
        s.p_phi.clone(),
        s.omega.clone(),
        s.p_omega.clone(),
        s.gamma.tilde.clone(),
        c(s.gamma.log_coeff),
        s.p_gamma.clone(),
        s.h.xx.clone(),
        s.h.xy.clone(),
        s.h.yy.clone(),
        s.lapse.tilde.clone(),
        c(s.lapse.log_coeff),
        c(s.lapse.offset),
        s.shift.x.clone(),
        s.shift.y.clone(),
        s.tau.clone(),
    ]
}

pub fn write_snapshot<W: Write>(state: &StateVector, mut w: W) -> Result<(), SnapshotError> {
    let g = state.grid();
    let n = g.n();
    writeln!(w, "U1EVOLVE 1 n={} L={:e} t={:e} fields={}", n, g.half_width(), state.t, FIELDS.join(","))?;
    let mut line = String::new();
    for f in state_fields(state) {
        for row in f.values().chunks(n) {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{v:e}"));
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_snapshot(state: &StateVector, path: &Path) -> Result<(), SnapshotError> {
    write_snapshot(state, BufWriter::new(File::create(path)?))
}

pub fn load_snapshot(path: &Path) -> Result<StateVector, SnapshotError> {
    read_snapshot(BufReader::new(File::open(path)?))
}

struct Header {
    n: usize,
    half_width: f64,
    t: f64,
    fields: Vec<String>,
}

fn parse_header(line: &str) -> Result<Header, SnapshotError> {
    let err = |message: String| SnapshotError::Parse { line: 1, message };
    let mut parts = line.split_whitespace();
    if parts.next() != Some("U1EVOLVE") || parts.next() != Some("1") {
        return Err(err("expected `U1EVOLVE 1` header".into()));
    }
    let (mut n, mut l, mut t, mut fields) = (None, None, None, None);
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("malformed entry `{kv}`")))?;
        let bad = |_| err(format!("bad value for `{k}`"));
        match k {
            "n" => n = Some(v.parse::<usize>().map_err(|_| err("bad value for `n`".into()))?),
            "L" => l = Some(v.parse::<f64>().map_err(bad)?),
            "t" => t = Some(v.parse::<f64>().map_err(bad)?),
            "fields" => fields = Some(v.split(',').map(str::to_owned).collect()),
            _ => return Err(err(format!("unknown header key `{k}`"))),
        }
    }
    Ok(Header {
        n: n.ok_or_else(|| err("missing n".into()))?,
        half_width: l.ok_or_else(|| err("missing L".into()))?,
        t: t.ok_or_else(|| err("missing t".into()))?,
        fields: fields.ok_or_else(|| err("missing fields".into()))?,
    })
}

pub fn read_snapshot<R: BufRead>(r: R) -> Result<StateVector, SnapshotError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(SnapshotError::Parse { line: 1, message: "empty file".into() })??;
    let h = parse_header(&first)?;
    let grid = GridSpec::new(h.half_width, h.n)?;
    let mut data: Vec<(String, ScalarField)> = Vec::with_capacity(h.fields.len());
    let mut lineno = 1;
    for name in &h.fields {
        let mut vals = Vec::with_capacity(grid.len());
        for _ in 0..h.n {
            lineno += 1;
            let line = lines.next().ok_or_else(|| SnapshotError::Parse {
                line: lineno,
                message: format!("truncated in field `{name}`"),
            })??;
            let before = vals.len();
            for tok in line.split_whitespace() {
                vals.push(tok.parse::<f64>().map_err(|_| SnapshotError::Parse {
                    line: lineno,
                    message: format!("bad float `{tok}`"),
                })?);
            }
            if vals.len() - before != h.n {
                return Err(SnapshotError::Parse { line: lineno, message: format!("expected {} values", h.n) });
            }
        }
        data.push((name.clone(), ScalarField::from_vec(grid, vals)?));
    }
    let mut take = |name: &str| -> Result<ScalarField, SnapshotError> {
        let i = data.iter().position(|(n, _)| n == name).ok_or_else(|| SnapshotError::MissingField(name.into()))?;
        Ok(data.swap_remove(i).1)
    };
    let scalar = |f: ScalarField| f.values()[0];
    let chi_ln = chi_cutoff(grid);
    let phi = take("phi")?;
    let p_phi = take("p_phi")?;
    let omega = take("omega")?;
    let p_omega = take("p_omega")?;
    let gamma = LogDecomposedScalar::new(scalar(take("gamma_log")?), take("gamma_tilde")?, 0.0, chi_ln.clone());
    let p_gamma = take("p_gamma")?;
    let hm = SymTensorField { xx: take("h_xx")?, xy: take("h_xy")?, yy: take("h_yy")? };
    let lapse_log = scalar(take("lapse_log")?);
    let lapse_offset = scalar(take("lapse_offset")?);
    let lapse = LogDecomposedScalar::new(lapse_log, take("lapse_tilde")?, lapse_offset, chi_ln);
    let shift = VectorField { x: take("beta_x")?, y: take("beta_y")? };
    let tau = take("tau")?;
    Ok(StateVector { t: h.t, phi, p_phi, omega, p_omega, gamma, p_gamma, h: hm, lapse, shift, tau })
}
