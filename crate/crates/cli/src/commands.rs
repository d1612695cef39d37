use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use u1evolve_core::constraints::{assemble_initial_state, bump_field, FieldMask, FreeData, InitialDataSet};
use u1evolve_core::diagnostics::{sobolev_report, DiagnosticsRecord, NormConfig};
use u1evolve_core::evolution::{run, RunSink, RunSummary};
use u1evolve_core::geometry::StateVector;
use u1evolve_core::grid::{GridSpec, ScalarField};
use u1evolve_core::snapshot::{load_snapshot, save_snapshot};

use crate::config::{Family, RunConfig};
use crate::error::{io_err, CliError, Result};

pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const CONSTRAINTS_CSV: &str = "constraints_report.csv";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const SUMMARY: &str = "summary.txt";
pub const RESOLVED_CONFIG: &str = "config.resolved.ini";
pub const INITIAL_SNAPSHOT: &str = "initial.u1s";
pub const SNAPSHOT_EXT: &str = "u1s";

/// Reads `U1EVOLVE_THREADS`. The solver runs on one thread, so the cap is
/// validated and recorded but cannot lower parallelism further.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("U1EVOLVE_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Environment(format!("U1EVOLVE_THREADS={v} must be a positive integer"))),
        },
    }
}

pub fn grid_of(cfg: &RunConfig) -> Result<GridSpec> {
    GridSpec::new(cfg.grid.half_width, cfg.grid.n)
        .map_err(|e| CliError::Config(crate::config::ConfigError::Validation(e.to_string())))
}

pub fn norm_config(cfg: &RunConfig) -> NormConfig {
    NormConfig { delta: cfg.elliptic.delta, eps: cfg.data.eps }
}

fn random_data(grid: GridSpec, cfg: &RunConfig, mask: FieldMask) -> FreeData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data.seed);
    let r = cfg.data.radius;
    let eps = cfg.data.eps;
    let mut field = |on: bool| {
        let mut f = ScalarField::zeros(grid);
        for _ in 0..3 {
            let (rho, th): (f64, f64) = (rng.gen_range(0.0..0.4), rng.gen_range(0.0..std::f64::consts::TAU));
            let w: f64 = rng.gen_range(0.3..0.5);
            let a: f64 = rng.gen_range(-1.0..1.0);
            if on {
                f = f.add(&bump_field(grid, eps * a, (rho * r * th.cos(), rho * r * th.sin()), w * r));
            }
        }
        f
    };
    let mut data = FreeData {
        phi: field(mask.phi),
        phi_dot: field(mask.phi_dot),
        omega: field(mask.omega),
        omega_dot: field(mask.omega_dot),
        support_radius: r,
    };
    data.orthogonalize();
    data
}

pub fn make_free_data(cfg: &RunConfig) -> Result<FreeData> {
    let grid = grid_of(cfg)?;
    let d = &cfg.data;
    let mask = FieldMask { phi: d.phi, phi_dot: d.phi_dot, omega: d.omega, omega_dot: d.omega_dot };
    Ok(match d.family {
        Family::Zero => FreeData::zero(grid, d.radius),
        Family::Radial => FreeData::radial(grid, d.eps, d.radius, mask),
        Family::Asymmetric => FreeData::asymmetric(grid, d.eps, d.radius, mask),
        Family::Random => random_data(grid, cfg, mask),
    })
}

fn prepare_dir(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.output.directory;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = cfg.artifact(RESOLVED_CONFIG);
    fs::write(&path, cfg.serialize()).map_err(io_err(path))
}

fn csv_float(v: f64) -> String {
    format!("{v:e}")
}

pub fn constraints_header() -> String {
    let mut s = String::from(
        "alpha,N_a,momentum_residual,hamiltonian_residual,shift_residual,cl1_x,cl1_y,cl2_res,orth_x,orth_y,gamma_iterations,lapse_iterations",
    );
    for name in u1evolve_core::diagnostics::NORM_NAMES {
        s.push(',');
        s.push_str(name);
    }
    s
}

pub fn constraints_row(data: &InitialDataSet, state: &StateVector, norms: &NormConfig) -> Result<String> {
    let r = &data.report;
    let mut cols: Vec<String> = [
        r.alpha,
        r.lapse_log_coeff,
        r.momentum_residual,
        r.hamiltonian_residual,
        r.shift_residual,
        r.cl1.0,
        r.cl1.1,
        r.cl2_residual,
        r.orthogonality.0,
        r.orthogonality.1,
    ]
    .iter()
    .map(|v| csv_float(*v))
    .collect();
    cols.push(r.gamma_iterations.to_string());
    cols.push(r.lapse_iterations.to_string());
    for (_, v) in sobolev_report(state, norms)? {
        cols.push(csv_float(v));
    }
    Ok(cols.join(","))
}

/// Builds the free data and solves the constraints, writing the initial
/// snapshot and `constraints_report.csv`.
pub fn cmd_solve_constraints(cfg: &RunConfig) -> Result<InitialDataSet> {
    prepare_dir(cfg)?;
    let free = make_free_data(cfg)?;
    let data = assemble_initial_state(&free, &cfg.elliptic)?;
    let state = data.state();
    let snap = cfg.artifact(INITIAL_SNAPSHOT);
    save_snapshot(&state, &snap)?;
    let row = constraints_row(&data, &state, &norm_config(cfg))?;
    let path = cfg.artifact(CONSTRAINTS_CSV);
    fs::write(&path, format!("{}\n{}\n", constraints_header(), row)).map_err(io_err(path))?;
    Ok(data)
}

struct DiagnosticsSink {
    out: BufWriter<File>,
    path: PathBuf,
    cfg: RunConfig,
    norms: NormConfig,
    last: Option<DiagnosticsRecord>,
    sup_tau: f64,
}

impl DiagnosticsSink {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let path = cfg.artifact(DIAGNOSTICS_CSV);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "step,{}", DiagnosticsRecord::csv_header()).map_err(io_err(&path))?;
        Ok(Self { out, path, cfg: cfg.clone(), norms: norm_config(cfg), last: None, sup_tau: 0.0 })
    }
}

impl RunSink for DiagnosticsSink {
    fn record(&mut self, step: usize, state: &StateVector) -> std::result::Result<(), String> {
        let rec = DiagnosticsRecord::compute(state, &self.norms).map_err(|e| e.to_string())?;
        writeln!(self.out, "{step},{}", rec.csv_row()).map_err(|e| format!("{}: {e}", self.path.display()))?;
        self.sup_tau = self.sup_tau.max(rec.tau_sup);
        self.last = Some(rec);
        if step == 0 && self.cfg.scheme.snapshot_every > 0 {
            self.snapshot(0, state)?;
        }
        Ok(())
    }

    fn snapshot(&mut self, step: usize, state: &StateVector) -> std::result::Result<(), String> {
        let path = self.cfg.artifact(&format!("snapshot_{step:06}.{SNAPSHOT_EXT}"));
        save_snapshot(state, &path).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Outcome of [`cmd_evolve`].
#[derive(Debug, Clone)]
pub struct EvolveReport {
    pub summary: RunSummary,
    pub last: DiagnosticsRecord,
    pub sup_tau: f64,
}

fn write_summary(cfg: &RunConfig, body: &str) -> Result<()> {
    let path = cfg.artifact(SUMMARY);
    fs::write(&path, body).map_err(io_err(path))
}

/// Evolves the solved initial data (or `from`, a snapshot) to `t_end`,
/// writing `diagnostics.csv`, periodic snapshots and `summary.txt`.
pub fn cmd_evolve(cfg: &RunConfig, from: Option<&Path>) -> Result<EvolveReport> {
    prepare_dir(cfg)?;
    let init = match from {
        Some(p) => load_snapshot(p)?,
        None => {
            let free = make_free_data(cfg)?;
            assemble_initial_state(&free, &cfg.elliptic)?.state()
        }
    };
    let mut sink = DiagnosticsSink::new(cfg)?;
    let result = run(&init, cfg.scheme, cfg.elliptic, &mut sink);
    sink.out.flush().map_err(io_err(&sink.path))?;
    match result {
        Ok(summary) => {
            let last = sink.last.clone().expect("at least one record");
            let body = format!(
                "status = ok\nexit_code = 0\nsteps = {}\nt_final = {:e}\nsup_t_tau = {:e}\ncl1_x = {:e}\ncl1_y = {:e}\ncl2_res = {:e}\ntau_sup = {:e}\nA_l2 = {:e}\nB_l2 = {:e}\ne0tau_l2 = {:e}\nminN = {:e}\n",
                summary.steps,
                summary.t_final,
                sink.sup_tau,
                last.cl1.0,
                last.cl1.1,
                last.cl2_residual,
                last.tau_sup,
                last.a_norm,
                last.b_norm,
                last.e0tau_norm,
                last.min_n
            );
            write_summary(cfg, &body)?;
            Ok(EvolveReport { summary, last, sup_tau: sink.sup_tau })
        }
        Err(failure) => {
            let err = CliError::Run(failure.clone());
            let body = format!(
                "status = failed\nexit_code = {}\nsteps = {}\nt_final = {:e}\nerror = {}\n",
                err.exit_code(),
                failure.step,
                failure.t,
                failure.error
            );
            write_summary(cfg, &body)?;
            Err(err)
        }
    }
}

/// Diagnostics of a stored slice as a header line and one CSV row.
pub fn cmd_diagnose(snapshot: &Path, cfg: &RunConfig) -> Result<String> {
    let state = load_snapshot(snapshot)?;
    let rec = DiagnosticsRecord::compute(&state, &norm_config(cfg))?;
    Ok(format!("{}\n{}\n", DiagnosticsRecord::csv_header(), rec.csv_row()))
}

/// Monitored residuals of one resolution level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub n: usize,
    pub values: Vec<(&'static str, f64)>,
}

pub const MONITORED: [&str; 9] = [
    "momentum_residual_t0",
    "hamiltonian_residual_t0",
    "shift_residual_t0",
    "sup_t_tau",
    "A_l2_final",
    "e0tau_l2_final",
    "cl1_drift",
    "cl2_res_final",
    "B_l2_final",
];

/// `log2(e_coarse / e_fine)`.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Runs the problem of `cfg` at `n, 2n-1, 4n-3, ...`, each level in its own
/// directory `level_<k>`, and writes `convergence.csv`.
pub fn cmd_convergence(cfg: &RunConfig, levels: usize) -> Result<Vec<LevelResult>> {
    if levels < 2 {
        return Err(CliError::Config(crate::config::ConfigError::Validation(
            "a convergence study needs at least two levels".into(),
        )));
    }
    prepare_dir(cfg)?;
    let mut results = Vec::with_capacity(levels);
    let mut n = cfg.grid.n;
    for k in 0..levels {
        let mut c = cfg.clone();
        c.grid.n = n;
        c.output.directory = cfg.output.directory.join(format!("level_{k}"));
        c.validate()?;
        let data = cmd_solve_constraints(&c)?;
        let r0 = data.report.clone();
        let report = cmd_evolve(&c, None)?;
        let first = first_record(&c)?;
        let l = &report.last;
        let drift = (l.cl1.0 - first.0).hypot(l.cl1.1 - first.1);
        results.push(LevelResult {
            n,
            values: MONITORED
                .iter()
                .copied()
                .zip([
                    r0.momentum_residual,
                    r0.hamiltonian_residual,
                    r0.shift_residual,
                    report.sup_tau,
                    l.a_norm,
                    l.e0tau_norm,
                    drift,
                    l.cl2_residual.abs(),
                    l.b_norm,
                ])
                .collect(),
        });
        n = 2 * n - 1;
    }
    let path = cfg.artifact(CONVERGENCE_CSV);
    fs::write(&path, convergence_table(&results)).map_err(io_err(path))?;
    Ok(results)
}

fn first_record(cfg: &RunConfig) -> Result<(f64, f64)> {
    let path = cfg.artifact(DIAGNOSTICS_CSV);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let row = text.lines().nth(1).ok_or_else(|| CliError::MissingInput(format!("{} has no rows", path.display())))?;
    let cols: Vec<&str> = row.split(',').collect();
    let parse = |i: usize| cols.get(i).and_then(|v| v.parse::<f64>().ok());
    match (parse(2), parse(3)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(CliError::MissingInput(format!("{} is malformed", path.display()))),
    }
}

pub fn convergence_table(results: &[LevelResult]) -> String {
    let mut s = String::from("quantity");
    for r in results {
        s.push_str(&format!(",n{}", r.n));
    }
    for w in results.windows(2) {
        s.push_str(&format!(",order_{}_{}", w[0].n, w[1].n));
    }
    s.push('\n');
    for (q, name) in MONITORED.iter().enumerate() {
        s.push_str(name);
        for r in results {
            s.push_str(&format!(",{:e}", r.values[q].1));
        }
        for w in results.windows(2) {
            s.push_str(&format!(",{:.4}", observed_order(w[0].values[q].1, w[1].values[q].1)));
        }
        s.push('\n');
    }
    s
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.file_name().and_then(|f| f.to_str()).is_some_and(|f| f.ends_with(suffix)) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

fn series_script(csv: &Path) -> Result<String> {
    let text = fs::read_to_string(csv).map_err(io_err(csv))?;
    let header = text.lines().next().ok_or_else(|| CliError::MissingInput(format!("{} is empty", csv.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    let t_col = cols
        .iter()
        .position(|c| *c == "t")
        .ok_or_else(|| CliError::MissingInput(format!("{} has no `t` column", csv.display())))?
        + 1;
    let name = file_name(csv);
    let stem = name.trim_end_matches(".csv");
    let mut s = format!("set datafile separator ','\nset terminal pngcairo size 900,600\nset xlabel 't'\nset key off\n");
    for (i, c) in cols.iter().enumerate() {
        let col = i + 1;
        if col == t_col || *c == "step" {
            continue;
        }
        s.push_str(&format!(
            "set output '{stem}_{c}.png'\nset title '{c}'\nplot '{name}' using {t_col}:{col} every ::1 with lines\n"
        ));
    }
    Ok(s)
}

fn snapshot_header(path: &Path) -> Result<(usize, f64, Vec<String>)> {
    use std::io::BufRead;
    let f = File::open(path).map_err(io_err(path))?;
    let mut first = String::new();
    std::io::BufReader::new(f).read_line(&mut first).map_err(io_err(path))?;
    let mut n = None;
    let mut l = None;
    let mut fields = Vec::new();
    for kv in first.split_whitespace() {
        match kv.split_once('=') {
            Some(("n", v)) => n = v.parse().ok(),
            Some(("L", v)) => l = v.parse().ok(),
            Some(("fields", v)) => fields = v.split(',').map(str::to_owned).collect(),
            _ => {}
        }
    }
    match (n, l) {
        (Some(n), Some(l)) => Ok((n, l, fields)),
        _ => Err(CliError::MissingInput(format!("{} is not a snapshot", path.display()))),
    }
}

fn heatmap_script(snap: &Path) -> Result<String> {
    let (n, l, fields) = snapshot_header(snap)?;
    let name = file_name(snap);
    let stem = name.trim_end_matches(&format!(".{SNAPSHOT_EXT}")).to_owned();
    let h = 2.0 * l / (n as f64 - 1.0);
    let mut s = format!(
        "set terminal pngcairo size 800,700\nset view map\nset size ratio -1\nset xrange [{a}:{b}]\nset yrange [{a}:{b}]\n",
        a = -l,
        b = l
    );
    for (k, f) in fields.iter().enumerate() {
        let (r0, r1) = (k * n, (k + 1) * n - 1);
        s.push_str(&format!(
            "set output '{stem}_{f}.png'\nset title '{f}'\nplot '{name}' skip 1 matrix every ::0:{r0}:{last}:{r1} using ({neg}+$1*{h:e}):({neg}+($2-{r0})*{h:e}):3 with image\n",
            last = n - 1,
            neg = -l
        ));
    }
    Ok(s)
}

/// Writes gnuplot scripts next to the CSVs and snapshots in `dir`; returns
/// the script paths.
pub fn cmd_plot(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::MissingInput(format!("{} is not a directory", dir.display())));
    }
    let diags = files_with_suffix(dir, DIAGNOSTICS_CSV)?;
    if diags.is_empty() {
        return Err(CliError::MissingInput(format!("no {DIAGNOSTICS_CSV} in {}", dir.display())));
    }
    let mut written = Vec::new();
    for csv in &diags {
        let script = dir.join(format!("{}.gp", file_name(csv).trim_end_matches(".csv")));
        fs::write(&script, series_script(csv)?).map_err(io_err(&script))?;
        written.push(script);
    }
    for csv in files_with_suffix(dir, CONVERGENCE_CSV)? {
        let stem = file_name(&csv).trim_end_matches(".csv").to_owned();
        let script = dir.join(format!("{stem}.gp"));
        let body = format!(
            "set datafile separator ','\nset terminal pngcairo size 900,600\nset output '{stem}.png'\nset logscale y\nset style data histograms\nset xtics rotate\nplot for [c=2:*] '{name}' using c:xtic(1) title columnheader\n",
            name = file_name(&csv)
        );
        fs::write(&script, body).map_err(io_err(&script))?;
        written.push(script);
    }
    for snap in files_with_suffix(dir, &format!(".{SNAPSHOT_EXT}"))? {
        let script = dir.join(format!("{}.gp", file_name(&snap).trim_end_matches(&format!(".{SNAPSHOT_EXT}"))));
        fs::write(&script, heatmap_script(&snap)?).map_err(io_err(&script))?;
        written.push(script);
    }
    Ok(written)
}
