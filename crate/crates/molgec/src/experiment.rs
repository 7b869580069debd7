//! Configuration-driven experiment runner: sweeps (GTol, N₀) cells of a
//! benchmark, emits machine-readable CSV reports plus a plain-text summary
//! table, and compares reports against golden files.
//!
//! The config format is flat `key = value` text; repeated keys form lists.
//! Sweep cells are independent and run on a bounded worker pool sized by the
//! `MOLGEC_WORKERS` environment variable (default: available parallelism).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::controller::{
    control_adaptive, control_uniform, ControlConstants, ControlReport, RefinementMode, ReportRow,
};
use crate::error::{Error, Result};
use crate::problem::{make_benchmark, BenchmarkId};

/// Parsed experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub problem: BenchmarkId,
    pub mode: RefinementMode,
    pub gtols: Vec<f64>,
    pub n0s: Vec<usize>,
    pub consts: ControlConstants,
    pub out_dir: PathBuf,
    /// Reserved; the pipeline is deterministic.
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parses the flat key=value format. Unknown keys and malformed values
    /// are reported with their line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut problem: Option<String> = None;
        let mut mode = RefinementMode::Uniform;
        let mut gtols = Vec::new();
        let mut n0s = Vec::new();
        let mut consts = ControlConstants::default();
        let mut out_dir = PathBuf::from("reports");
        let mut seed = 0u64;
        let mut eps: Option<f64> = None;
        let mut diffusion: Option<f64> = None;
        let mut reaction: Option<f64> = None;
        let mut lambda: Option<f64> = None;
        let mut alpha: Option<f64> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| Error::ConfigParse {
                line,
                msg: format!("expected key = value, got '{stripped}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |msg: String| Error::ConfigParse { line, msg };
            let parse_f64 = |v: &str| {
                v.parse::<f64>().map_err(|e| bad(format!("bad number '{v}': {e}")))
            };
            match key {
                "problem" => problem = Some(value.to_string()),
                "mode" => {
                    mode = match value {
                        "uniform" => RefinementMode::Uniform,
                        "adaptive" => RefinementMode::Adaptive,
                        other => return Err(bad(format!("unknown mode '{other}'"))),
                    }
                }
                "gtol" => {
                    let g = parse_f64(value)?;
                    if !(0.0 < g && g < 1.0) {
                        return Err(bad(format!("gtol {g} outside (0, 1)")));
                    }
                    gtols.push(g);
                }
                "n0" => n0s.push(
                    value.parse::<usize>().map_err(|e| bad(format!("bad count '{value}': {e}")))?,
                ),
                "tau0" => consts.tau0 = parse_f64(value)?,
                "c_t" => consts.c_t = parse_f64(value)?,
                "c_control" => consts.c_control = parse_f64(value)?,
                "c_alpha" => consts.c_alpha = parse_f64(value)?,
                "max_reruns" => {
                    consts.max_reruns = value
                        .parse::<usize>()
                        .map_err(|e| bad(format!("bad count '{value}': {e}")))?
                }
                "out" => out_dir = PathBuf::from(value),
                "seed" => {
                    seed = value
                        .parse::<u64>()
                        .map_err(|e| bad(format!("bad seed '{value}': {e}")))?
                }
                "eps" => eps = Some(parse_f64(value)?),
                "diffusion" => diffusion = Some(parse_f64(value)?),
                "reaction" => reaction = Some(parse_f64(value)?),
                "lambda" => lambda = Some(parse_f64(value)?),
                "alpha" => alpha = Some(parse_f64(value)?),
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }

        let name = problem
            .ok_or_else(|| Error::ConfigParse { line: 0, msg: "missing 'problem' key".into() })?;
        let mut id = BenchmarkId::from_name(&name)
            .map_err(|e| Error::ConfigParse { line: 0, msg: e.to_string() })?;
        match &mut id {
            BenchmarkId::Burgers { eps: e } => {
                if let Some(v) = eps {
                    *e = v;
                }
            }
            BenchmarkId::AllenCahn { diffusion: d, reaction: r, lambda: l, alpha: a } => {
                if let Some(v) = diffusion {
                    *d = v;
                }
                if let Some(v) = reaction {
                    *r = v;
                }
                if let Some(v) = lambda {
                    *l = v;
                }
                if let Some(v) = alpha {
                    *a = v;
                }
            }
            BenchmarkId::HeatNeumann => {}
        }

        Ok(ExperimentConfig { problem: id, mode, gtols, n0s, consts, out_dir, seed })
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

/// One (GTol, N₀) cell outcome.
pub struct CellResult {
    pub gtol: f64,
    pub n0: usize,
    pub report: Result<ControlReport>,
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MOLGEC_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                builder = builder.num_threads(n);
            }
        }
    }
    builder
        .build()
        .map_err(|e| Error::ConfigParse { line: 0, msg: format!("worker pool: {e}") })
}

/// Runs every (GTol, N₀) cell of the config. Cells execute in parallel;
/// results come back in deterministic cell order.
pub fn run_cells(config: &ExperimentConfig) -> Result<Vec<CellResult>> {
    let cells: Vec<(f64, usize)> = config
        .gtols
        .iter()
        .flat_map(|&g| config.n0s.iter().map(move |&n| (g, n)))
        .collect();
    let pool = worker_pool()?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(gtol, n0)| {
                let spec = make_benchmark(&config.problem);
                let report = match config.mode {
                    RefinementMode::Uniform => {
                        control_uniform(&spec, gtol, gtol, n0, &config.consts)
                    }
                    RefinementMode::Adaptive => {
                        control_adaptive(&spec, gtol, gtol, n0, &config.consts)
                    }
                };
                CellResult { gtol, n0, report }
            })
            .collect()
    });
    Ok(results)
}

/// Runs the sweep and writes one CSV per cell plus a combined summary table.
/// Returns the paths written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let results = run_cells(config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let mut written = Vec::new();
    let mut summary = String::new();
    let problem = config.problem.name();
    let mode = match config.mode {
        RefinementMode::Uniform => "uniform",
        RefinementMode::Adaptive => "adaptive",
    };
    for cell in &results {
        let stem = format!("{problem}_{mode}_g{:.0e}_n{}", cell.gtol, cell.n0);
        match &cell.report {
            Ok(report) => {
                let path = config.out_dir.join(format!("{stem}.csv"));
                std::fs::write(&path, emit_csv(report))?;
                written.push(path);
                let _ = writeln!(summary, "{}", render_table(report));
            }
            Err(e) => {
                let _ = writeln!(
                    summary,
                    "# cell gtol={:.0e} n0={} failed: {e}\n",
                    cell.gtol, cell.n0
                );
            }
        }
    }
    let summary_path = config.out_dir.join(format!("{problem}_{mode}_summary.txt"));
    std::fs::write(&summary_path, summary)?;
    written.push(summary_path);
    Ok(written)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.5e}")).unwrap_or_default()
}

/// Serializes a report with six significant digits per number. Adaptive
/// reports carry the extra `Tolalpha` column.
pub fn emit_csv(report: &ControlReport) -> String {
    let adaptive = report.mode == RefinementMode::Adaptive;
    let mut out = String::new();
    let alpha_col = if adaptive { "Tolalpha," } else { "" };
    let _ = writeln!(
        out,
        "Tol,{alpha_col}N,TolM,normEtilde,normetilde,normetatilde,ThetaEst,ThetaCtr,qnum,check_run"
    );
    for row in &report.rows {
        let alpha = if adaptive { format!("{},", fmt_opt(row.tol_alpha)) } else { String::new() };
        let _ = writeln!(
            out,
            "{:.5e},{alpha}{},{:.5e},{:.5e},{:.5e},{:.5e},{},{},{},{}",
            row.tol,
            row.n,
            row.tol_m,
            row.norm_e_total,
            row.norm_e_time,
            row.norm_eta_space,
            fmt_opt(row.theta_est),
            fmt_opt(row.theta_ctr),
            fmt_opt(row.q_num),
            row.check_run,
        );
    }
    out
}

/// Parses a CSV produced by [`emit_csv`] (or a golden transcription with
/// `#` comment lines). Returns the mode implied by the header and the rows.
pub fn parse_csv(text: &str) -> Result<(RefinementMode, Vec<ReportRow>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::ColumnMismatch("empty csv".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let uniform_cols =
        ["Tol", "N", "TolM", "normEtilde", "normetilde", "normetatilde", "ThetaEst", "ThetaCtr", "qnum", "check_run"];
    let adaptive_cols = [
        "Tol", "Tolalpha", "N", "TolM", "normEtilde", "normetilde", "normetatilde", "ThetaEst",
        "ThetaCtr", "qnum", "check_run",
    ];
    let mode = if cols == uniform_cols {
        RefinementMode::Uniform
    } else if cols == adaptive_cols {
        RefinementMode::Adaptive
    } else {
        return Err(Error::ColumnMismatch(format!("unexpected header '{header}'")));
    };
    let adaptive = mode == RefinementMode::Adaptive;
    let n_cols = cols.len();

    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_cols {
            return Err(Error::ColumnMismatch(format!(
                "row {} has {} fields, expected {n_cols}",
                idx + 1,
                fields.len()
            )));
        }
        let bad = |what: &str, v: &str| {
            Error::ColumnMismatch(format!("row {}: bad {what} '{v}'", idx + 1))
        };
        let f = |v: &str, what: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|_| bad(what, v))
        };
        let opt = |v: &str, what: &str| -> Result<Option<f64>> {
            if v.is_empty() {
                Ok(None)
            } else {
                f(v, what).map(Some)
            }
        };
        let mut it = fields.iter();
        let tol = f(it.next().unwrap(), "Tol")?;
        let tol_alpha =
            if adaptive { opt(it.next().unwrap(), "Tolalpha")? } else { None };
        let n = it
            .next()
            .unwrap()
            .parse::<usize>()
            .map_err(|_| bad("N", fields[if adaptive { 2 } else { 1 }]))?;
        let tol_m = f(it.next().unwrap(), "TolM")?;
        let norm_e_total = f(it.next().unwrap(), "normEtilde")?;
        let norm_e_time = f(it.next().unwrap(), "normetilde")?;
        let norm_eta_space = f(it.next().unwrap(), "normetatilde")?;
        let theta_est = opt(it.next().unwrap(), "ThetaEst")?;
        let theta_ctr = opt(it.next().unwrap(), "ThetaCtr")?;
        let q_num = opt(it.next().unwrap(), "qnum")?;
        let check_run = match *it.next().unwrap() {
            "true" => true,
            "false" => false,
            v => return Err(bad("check_run", v)),
        };
        rows.push(ReportRow {
            tol,
            tol_alpha,
            n,
            tol_m,
            norm_e_total,
            norm_e_time,
            norm_eta_space,
            theta_est,
            theta_ctr,
            q_num,
            check_run,
            accepted_steps: 0,
            rejected_steps: 0,
        });
    }
    Ok((mode, rows))
}

/// Plain-text table in the layout of the result tables: one row per attempt,
/// check runs marked by a leading dash.
pub fn render_table(report: &ControlReport) -> String {
    let adaptive = report.mode == RefinementMode::Adaptive;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} ({}), GTol = {:.2e}, verdict: {:?}",
        report.problem,
        if adaptive { "adaptive" } else { "uniform" },
        report.gtol,
        report.verdict
    );
    let alpha_hdr = if adaptive { "  Tol_alpha" } else { "" };
    let n_hdr = if adaptive { "N_M" } else { "N" };
    let _ = writeln!(
        out,
        "   Tol     {alpha_hdr}  {n_hdr:>6}   Tol_M     ||Etilde||  ||etilde||  ||etatilde||  Th_est  Th_ctr  q_num"
    );
    for row in &report.rows {
        let mark = if row.check_run { "-" } else { " " };
        let alpha = if adaptive {
            format!("  {:.2e} ", row.tol_alpha.map(|v| v).unwrap_or(f64::NAN))
        } else {
            String::new()
        };
        let fmt2 = |v: Option<f64>| v.map(|x| format!("{x:6.2}")).unwrap_or_else(|| "      ".into());
        let _ = writeln!(
            out,
            "{mark} {:.2e}{alpha}  {:>6}   {:.2e}  {:.2e}    {:.2e}    {:.2e}      {}  {}  {}",
            row.tol,
            row.n,
            row.tol_m,
            row.norm_e_total,
            row.norm_e_time,
            row.norm_eta_space,
            fmt2(row.theta_est),
            fmt2(row.theta_ctr),
            row.q_num.map(|q| format!("{q:5.2}")).unwrap_or_default(),
        );
    }
    out
}

/// Column tolerances for golden comparisons: counts and tolerances within
/// 5% relative, error norms within 10%, Θ_est within ±0.05 absolute,
/// Θ_ctr within 15% relative, q_num within ±0.1 absolute.
pub struct CompareTolerances {
    pub tol_rel: f64,
    pub n_rel: f64,
    pub norm_rel: f64,
    pub theta_est_abs: f64,
    pub theta_ctr_rel: f64,
    pub q_abs: f64,
}

impl Default for CompareTolerances {
    fn default() -> Self {
        CompareTolerances {
            tol_rel: 0.05,
            n_rel: 0.05,
            norm_rel: 0.10,
            theta_est_abs: 0.05,
            theta_ctr_rel: 0.15,
            q_abs: 0.10,
        }
    }
}

/// Outcome of comparing one report against a golden transcription.
pub struct CompareOutcome {
    pub failures: Vec<String>,
}

impl CompareOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_ok(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

fn opt_abs_ok(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

/// Row-by-row comparison with per-column tolerances.
pub fn compare_to_golden(
    report: &str,
    golden: &str,
    tols: &CompareTolerances,
) -> Result<CompareOutcome> {
    let (mode_r, rows_r) = parse_csv(report)?;
    let (mode_g, rows_g) = parse_csv(golden)?;
    if mode_r != mode_g {
        return Err(Error::ColumnMismatch("report and golden have different schemas".into()));
    }
    let mut failures = Vec::new();
    if rows_r.len() != rows_g.len() {
        failures.push(format!(
            "row count: report has {}, golden has {}",
            rows_r.len(),
            rows_g.len()
        ));
        return Ok(CompareOutcome { failures });
    }
    for (i, (r, g)) in rows_r.iter().zip(&rows_g).enumerate() {
        let row = i + 1;
        let mut check = |name: &str, ok: bool, got: String, want: String| {
            if !ok {
                failures.push(format!("row {row} {name}: {got} vs golden {want}"));
            }
        };
        check("Tol", rel_ok(r.tol, g.tol, tols.tol_rel), format!("{:.3e}", r.tol), format!("{:.3e}", g.tol));
        match (r.tol_alpha, g.tol_alpha) {
            (None, None) => {}
            (Some(a), Some(b)) => check(
                "Tolalpha",
                rel_ok(a, b, tols.tol_rel),
                format!("{a:.3e}"),
                format!("{b:.3e}"),
            ),
            _ => check("Tolalpha", false, format!("{:?}", r.tol_alpha), format!("{:?}", g.tol_alpha)),
        }
        check(
            "N",
            rel_ok(r.n as f64, g.n as f64, tols.n_rel),
            r.n.to_string(),
            g.n.to_string(),
        );
        check(
            "TolM",
            rel_ok(r.tol_m, g.tol_m, tols.tol_rel),
            format!("{:.3e}", r.tol_m),
            format!("{:.3e}", g.tol_m),
        );
        check(
            "normEtilde",
            rel_ok(r.norm_e_total, g.norm_e_total, tols.norm_rel),
            format!("{:.3e}", r.norm_e_total),
            format!("{:.3e}", g.norm_e_total),
        );
        check(
            "normetilde",
            rel_ok(r.norm_e_time, g.norm_e_time, tols.norm_rel),
            format!("{:.3e}", r.norm_e_time),
            format!("{:.3e}", g.norm_e_time),
        );
        check(
            "normetatilde",
            rel_ok(r.norm_eta_space, g.norm_eta_space, tols.norm_rel),
            format!("{:.3e}", r.norm_eta_space),
            format!("{:.3e}", g.norm_eta_space),
        );
        check(
            "ThetaEst",
            opt_abs_ok(r.theta_est, g.theta_est, tols.theta_est_abs),
            format!("{:?}", r.theta_est),
            format!("{:?}", g.theta_est),
        );
        let ctr_ok = match (r.theta_ctr, g.theta_ctr) {
            (None, None) => true,
            (Some(a), Some(b)) => rel_ok(a, b, tols.theta_ctr_rel),
            _ => false,
        };
        check("ThetaCtr", ctr_ok, format!("{:?}", r.theta_ctr), format!("{:?}", g.theta_ctr));
        check(
            "qnum",
            opt_abs_ok(r.q_num, g.q_num, tols.q_abs),
            format!("{:?}", r.q_num),
            format!("{:?}", g.q_num),
        );
        check("check_run", r.check_run == g.check_run, r.check_run.to_string(), g.check_run.to_string());
    }
    Ok(CompareOutcome { failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::Verdict;

    #[test]
    fn config_roundtrip_of_all_keys() {
        let text = "\
# demo sweep
problem = burgers
mode = uniform
gtol = 1e-3
gtol = 1e-4
n0 = 51
tau0 = 1e-5
c_t = 0.333333333333333
c_control = 1.2
c_alpha = 10
eps = 0.02
out = /tmp/reports
seed = 7
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.gtols, vec![1e-3, 1e-4]);
        assert_eq!(cfg.n0s, vec![51]);
        assert_eq!(cfg.seed, 7);
        match cfg.problem {
            BenchmarkId::Burgers { eps } => assert_eq!(eps, 0.02),
            _ => panic!("wrong problem"),
        }
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let text = "problem = heat_neumann\ngtol = nonsense\n";
        match ExperimentConfig::parse(text) {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "problem = heat_neumann\nbogus_key = 3\n";
        match ExperimentConfig::parse(text) {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_gtol_list_gives_empty_sweep() {
        let cfg = ExperimentConfig::parse("problem = heat_neumann\nn0 = 25\n").unwrap();
        let cells = run_cells(&cfg).unwrap();
        assert!(cells.is_empty());
    }

    fn sample_report() -> ControlReport {
        ControlReport {
            problem: "heat_neumann".into(),
            mode: RefinementMode::Uniform,
            gtol: 1e-3,
            rows: vec![
                ReportRow {
                    tol: 1e-3,
                    tol_alpha: None,
                    n: 51,
                    tol_m: 1.0982e-3,
                    norm_e_total: 1.66e-4,
                    norm_e_time: 1.91e-5,
                    norm_eta_space: 1.83e-4,
                    theta_est: Some(0.9983),
                    theta_ctr: Some(6.62),
                    q_num: None,
                    check_run: false,
                    accepted_steps: 30,
                    rejected_steps: 0,
                },
                ReportRow {
                    tol: 1e-3,
                    tol_alpha: None,
                    n: 25,
                    tol_m: 1.0982e-3,
                    norm_e_total: 7.77e-4,
                    norm_e_time: 1.92e-5,
                    norm_eta_space: 7.94e-4,
                    theta_est: Some(1.0),
                    theta_ctr: Some(1.41),
                    q_num: Some(2.0),
                    check_run: true,
                    accepted_steps: 30,
                    rejected_steps: 0,
                },
            ],
            verdict: Verdict::Converged,
            reruns: 0,
        }
    }

    #[test]
    fn csv_roundtrip_preserves_rows() {
        let report = sample_report();
        let text = emit_csv(&report);
        let (mode, rows) = parse_csv(&text).unwrap();
        assert_eq!(mode, RefinementMode::Uniform);
        assert_eq!(rows.len(), 2);
        for (a, b) in rows.iter().zip(&report.rows) {
            assert_eq!(a.n, b.n);
            assert_eq!(a.check_run, b.check_run);
            assert!((a.tol - b.tol).abs() <= 1e-8 * b.tol);
            assert!((a.norm_eta_space - b.norm_eta_space).abs() <= 1e-6 * b.norm_eta_space);
            assert_eq!(a.q_num.is_some(), b.q_num.is_some());
        }
        // emitting the parsed rows again is bit-identical
        let report2 = ControlReport { rows, ..report.clone() };
        assert_eq!(emit_csv(&report2), text);
    }

    #[test]
    fn compare_accepts_identical_and_tolerant_rows() {
        let report = sample_report();
        let text = emit_csv(&report);
        let out = compare_to_golden(&text, &text, &CompareTolerances::default()).unwrap();
        assert!(out.passed());

        // golden with 3-digit transcriptions still matches
        let golden = "\
# provenance: published results table
Tol,N,TolM,normEtilde,normetilde,normetatilde,ThetaEst,ThetaCtr,qnum,check_run
1.00e-3,51,1.10e-3,1.68e-4,1.97e-5,1.86e-4,1.00,6.51,,false
1.00e-3,25,1.10e-3,8.04e-4,2.03e-5,8.22e-4,1.00,1.36,2.02,true
";
        let out = compare_to_golden(&text, golden, &CompareTolerances::default()).unwrap();
        assert!(out.passed(), "{:?}", out.failures);
    }

    #[test]
    fn compare_flags_out_of_tolerance_cells() {
        let report = sample_report();
        let mut other = report.clone();
        other.rows[0].n = 103; // way outside 5%
        other.rows[0].theta_est = Some(1.2);
        let out = compare_to_golden(
            &emit_csv(&other),
            &emit_csv(&report),
            &CompareTolerances::default(),
        )
        .unwrap();
        assert_eq!(out.failures.len(), 2, "{:?}", out.failures);
    }

    #[test]
    fn compare_rejects_schema_mismatch() {
        let uniform = emit_csv(&sample_report());
        let adaptive_hdr = "Tol,Tolalpha,N,TolM,normEtilde,normetilde,normetatilde,ThetaEst,ThetaCtr,qnum,check_run\n";
        assert!(matches!(
            compare_to_golden(&uniform, adaptive_hdr, &CompareTolerances::default()),
            Err(Error::ColumnMismatch(_))
        ));
    }
}
