//! Run configuration: a sectioned `key = value` text file.
//!
//! ```text
//! [grid]
//! L = 16
//! n = 257
//! [elliptic]
//! delta = -0.5
//! [scheme]
//! scheme = FREE
//! [data]
//! family = radial
//! eps = 0.01
//! [output]
//! directory = run
//! ```
//!
//! Every key is optional; `#` and `;` start comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;
use u1evolve_core::elliptic::{EllipticConfig, PoissonBackend};
use u1evolve_core::evolution::{Scheme, SchemeConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Zero,
    Radial,
    Asymmetric,
    /// Seeded superposition of small off-centre bumps.
    Random,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Zero => "zero",
            Family::Radial => "radial",
            Family::Asymmetric => "asymmetric",
            Family::Random => "random",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(Family::Zero),
            "radial" => Some(Family::Radial),
            "asymmetric" => Some(Family::Asymmetric),
            "random" => Some(Family::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub half_width: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub family: Family,
    pub eps: f64,
    pub radius: f64,
    pub phi: bool,
    pub omega: bool,
    pub phi_dot: bool,
    pub omega_dot: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSection,
    pub elliptic: EllipticConfig,
    pub scheme: SchemeConfig,
    pub data: DataSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSection { half_width: 16.0, n: 257 },
            elliptic: EllipticConfig::default(),
            scheme: SchemeConfig::default(),
            data: DataSection {
                family: Family::Radial,
                eps: 0.01,
                radius: 1.0,
                phi: true,
                omega: true,
                phi_dot: true,
                omega_dot: true,
                seed: 0,
            },
            output: OutputSection { directory: PathBuf::from("run"), prefix: String::new() },
        }
    }
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Free => "FREE",
        Scheme::Constrained => "CONSTRAINED",
        Scheme::FrozenFlat => "FROZEN_FLAT",
    }
}

fn backend_name(b: PoissonBackend) -> &'static str {
    match b {
        PoissonBackend::SineTransform => "sine",
        PoissonBackend::ConjugateGradient => "cg",
    }
}

fn parse_value<T: std::str::FromStr>(v: &str, key: &str, line: usize) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::Parse { line, message: format!("bad value `{v}` for `{key}`") })
}

fn parse_bool(v: &str, key: &str, line: usize) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::Parse { line, message: format!("bad boolean `{v}` for `{key}`") }),
    }
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split(['#', ';']).next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(name) = s.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Parse { line, message: format!("malformed section `{s}`") })?
                    .trim();
                if !["grid", "elliptic", "scheme", "data", "output"].contains(&name) {
                    return Err(ConfigError::Parse { line, message: format!("unknown section `[{name}]`") });
                }
                section = Some(name.to_owned());
                continue;
            }
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse { line, message: format!("expected `key = value`, got `{s}`") })?;
            let (k, v) = (k.trim(), v.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| ConfigError::Parse { line, message: format!("key `{k}` outside any section") })?;
            match (sec, k) {
                ("grid", "L") => c.grid.half_width = parse_value(v, k, line)?,
                ("grid", "n") => c.grid.n = parse_value(v, k, line)?,
                ("elliptic", "delta") => c.elliptic.delta = parse_value(v, k, line)?,
                ("elliptic", "tol") => c.elliptic.tol = parse_value(v, k, line)?,
                ("elliptic", "max_iter") => c.elliptic.max_iter = parse_value(v, k, line)?,
                ("elliptic", "mean_tol") => c.elliptic.mean_tol = parse_value(v, k, line)?,
                ("elliptic", "backend") => {
                    c.elliptic.backend = match v {
                        "sine" => PoissonBackend::SineTransform,
                        "cg" => PoissonBackend::ConjugateGradient,
                        _ => return Err(ConfigError::Parse { line, message: format!("unknown backend `{v}`") }),
                    }
                }
                ("scheme", "scheme") => {
                    c.scheme.scheme = match v.to_ascii_uppercase().as_str() {
                        "FREE" => Scheme::Free,
                        "CONSTRAINED" => Scheme::Constrained,
                        "FROZEN_FLAT" => Scheme::FrozenFlat,
                        _ => return Err(ConfigError::Parse { line, message: format!("unknown scheme `{v}`") }),
                    }
                }
                ("scheme", "cfl") => c.scheme.cfl = parse_value(v, k, line)?,
                ("scheme", "t_end") => c.scheme.t_end = parse_value(v, k, line)?,
                ("scheme", "step_tol") => c.scheme.step_tol = parse_value(v, k, line)?,
                ("scheme", "step_max_iter") => c.scheme.step_max_iter = parse_value(v, k, line)?,
                ("scheme", "snapshot_every") => c.scheme.snapshot_every = parse_value(v, k, line)?,
                ("data", "family") => {
                    c.data.family = Family::parse(v)
                        .ok_or_else(|| ConfigError::Parse { line, message: format!("unknown family `{v}`") })?
                }
                ("data", "eps") => c.data.eps = parse_value(v, k, line)?,
                ("data", "R") => c.data.radius = parse_value(v, k, line)?,
                ("data", "phi") => c.data.phi = parse_bool(v, k, line)?,
                ("data", "omega") => c.data.omega = parse_bool(v, k, line)?,
                ("data", "phi_dot") => c.data.phi_dot = parse_bool(v, k, line)?,
                ("data", "omega_dot") => c.data.omega_dot = parse_bool(v, k, line)?,
                ("data", "seed") => c.data.seed = parse_value(v, k, line)?,
                ("output", "directory") => c.output.directory = PathBuf::from(v),
                ("output", "prefix") => c.output.prefix = v.to_owned(),
                _ => return Err(ConfigError::Parse { line, message: format!("unknown key `{k}` in [{sec}]") }),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Validation(m));
        let l = self.grid.half_width;
        if !(l > 0.0 && l.is_finite()) {
            return bad(format!("L={l} must be positive"));
        }
        if self.grid.n % 2 == 0 || self.grid.n < 33 {
            return bad(format!("n={} must be odd and at least 33", self.grid.n));
        }
        if let Err(e) = self.elliptic.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.scheme.validate() {
            return bad(e.to_string());
        }
        if !(self.data.eps >= 0.0 && self.data.eps.is_finite()) {
            return bad(format!("eps={} must be non-negative", self.data.eps));
        }
        if !(self.data.radius > 0.0 && self.data.radius < l / 4.0) {
            return bad(format!("R={} must lie in (0, L/4) with L={l}", self.data.radius));
        }
        if self.output.prefix.contains(['/', '\\']) {
            return bad("prefix must not contain path separators".into());
        }
        Ok(())
    }

    /// The fully expanded configuration; reparses to an equal value.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let e = &self.elliptic;
        let sc = &self.scheme;
        let d = &self.data;
        let _ = writeln!(s, "[grid]\nL = {:?}\nn = {}", self.grid.half_width, self.grid.n);
        let _ = writeln!(
            s,
            "\n[elliptic]\ndelta = {:?}\ntol = {:?}\nmax_iter = {}\nmean_tol = {:?}\nbackend = {}",
            e.delta,
            e.tol,
            e.max_iter,
            e.mean_tol,
            backend_name(e.backend)
        );
        let _ = writeln!(
            s,
            "\n[scheme]\nscheme = {}\ncfl = {:?}\nt_end = {:?}\nstep_tol = {:?}\nstep_max_iter = {}\nsnapshot_every = {}",
            scheme_name(sc.scheme),
            sc.cfl,
            sc.t_end,
            sc.step_tol,
            sc.step_max_iter,
            sc.snapshot_every
        );
        let _ = writeln!(
            s,
            "\n[data]\nfamily = {}\neps = {:?}\nR = {:?}\nphi = {}\nomega = {}\nphi_dot = {}\nomega_dot = {}\nseed = {}",
            d.family.name(),
            d.eps,
            d.radius,
            d.phi,
            d.omega,
            d.phi_dot,
            d.omega_dot,
            d.seed
        );
        let _ = writeln!(
            s,
            "\n[output]\ndirectory = {}\nprefix = {}",
            self.output.directory.display(),
            self.output.prefix
        );
        s
    }

    /// Path of an output artifact, honouring the prefix.
    pub fn artifact(&self, name: &str) -> PathBuf {
        self.output.directory.join(format!("{}{}", self.output.prefix, name))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    RunConfig::parse_str(&text)
}
