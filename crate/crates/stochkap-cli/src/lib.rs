//! Command dispatch for the `stochkap` binary: configuration loading,
//! output-directory resolution, artifact emission, and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use stochkap::config::{parse_config, RunConfig};
use stochkap::driver::{
    cross_compare, eta_measure_for, mc_draw, run_monte_carlo, run_pc_solver,
    variance_decomposition, McStore, PcRunResult,
};
use stochkap::error::Error;
use stochkap::export::{
    format_f64, write_convergence_csv, write_csv, write_embedded_rules_csv,
    write_eta_histogram_csv, write_family_csv, write_json, write_kl_eigenfunctions_csv,
    write_kl_eigenvalues_csv, write_mc_summary_csv, write_sensitivity_csv, write_solution_csv,
    write_spectrum_history_csv, write_temperature_stems_csv, write_flux_stems_csv,
    write_reduced_tables,
};
use stochkap::field::kl_decompose;
use stochkap::reactor::{h1_gram, solve_coupled};

/// Exit codes per the interface contract.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

const PCE_STATE_FILE: &str = "pce_state.json";
const MC_STORE_FILE: &str = "mc_store.json";

#[derive(Debug, Parser)]
#[command(
    name = "stochkap",
    about = "Reduced-dimensional stochastic solvers for a coupled \
             neutronics / heat conduction rod model",
    version
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration document (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (falls back to the config file, then the
    /// STOCHKAP_OUT environment variable, then "./out").
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Reduction tolerance override.
    #[arg(long, global = true)]
    pub eps1: Option<f64>,
    /// Flux truncation tolerance override.
    #[arg(long, global = true)]
    pub eps2: Option<f64>,
    /// Temperature chaos degree override.
    #[arg(long = "degree-p", global = true)]
    pub degree_p: Option<usize>,
    /// Monte Carlo sample count override.
    #[arg(long = "mc-samples", global = true)]
    pub mc_samples: Option<usize>,
    /// Disable the warm cap on the flux degree search (the search then
    /// always restarts unbounded, as the reference algorithm states it).
    #[arg(long = "strict-paper", global = true)]
    pub strict_paper: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write eigenvalue and eigenfunction tables of both random fields.
    Kl,
    /// Solve one coupled sample and write its nodal fields.
    Sample(SampleArgs),
    /// Run the Monte Carlo reference and write the store and summary.
    Mc,
    /// Run the spectral solver and write every expansion artifact.
    Pce,
    /// Decompose the variances of a finished spectral run.
    Sensitivity,
    /// Re-emit the convergence tables of a finished spectral run.
    Convergence,
    /// Compare a Monte Carlo store against a spectral run at shared draws.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Comma-separated ξ coordinates in [-1, 1]; drawn from the seed when
    /// omitted.
    #[arg(long)]
    pub xi: Option<String>,
    /// Comma-separated ζ coordinates in [-1, 1]; drawn from the seed when
    /// omitted.
    #[arg(long)]
    pub zeta: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Number of shared draws entering the distance (defaults to the whole
    /// store).
    #[arg(long)]
    pub n_common: Option<usize>,
}

/// Maps an error to the exit code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Json(_) | Error::Parse(_) => EXIT_IO,
        _ => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    config_sha256: String,
    outputs: Vec<String>,
    versions: Versions,
}

#[derive(Debug, Serialize)]
struct Versions {
    stochkap: &'static str,
    cli: &'static str,
}

struct RunContext {
    cfg: RunConfig,
    out_dir: PathBuf,
    config_hash: String,
    outputs: Vec<String>,
}

impl RunContext {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn record(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    fn record_path(&mut self, p: &Path) {
        let rel = p.strip_prefix(&self.out_dir).unwrap_or(p);
        self.outputs.push(rel.to_string_lossy().into_owned());
    }

    fn finish(mut self, command: &str) -> stochkap::error::Result<()> {
        self.outputs.sort();
        let manifest = Manifest {
            command: command.to_string(),
            config_sha256: self.config_hash.clone(),
            outputs: self.outputs.clone(),
            versions: Versions {
                stochkap: env!("CARGO_PKG_VERSION"),
                cli: env!("CARGO_PKG_VERSION"),
            },
        };
        write_json(&self.path("manifest.json"), &manifest)
    }
}

fn resolve_out_dir(common: &CommonArgs, cfg: &RunConfig) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    if let Some(out) = &cfg.out_dir {
        return PathBuf::from(out);
    }
    if let Ok(out) = std::env::var("STOCHKAP_OUT") {
        if !out.trim().is_empty() {
            return PathBuf::from(out);
        }
    }
    PathBuf::from("out")
}

fn load_config(common: &CommonArgs) -> stochkap::error::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.solver.rng_seed = seed;
    }
    if let Some(e) = common.eps1 {
        cfg.solver.eps1 = e;
    }
    if let Some(e) = common.eps2 {
        cfg.solver.eps2 = e;
    }
    if let Some(p) = common.degree_p {
        cfg.solver.p = p;
    }
    if let Some(s) = common.mc_samples {
        cfg.solver.mc_samples = s;
    }
    if common.strict_paper {
        cfg.solver.warm_cap = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_context(common: &CommonArgs) -> stochkap::error::Result<RunContext> {
    let cfg = load_config(common)?;
    let out_dir = resolve_out_dir(common, &cfg);
    fs::create_dir_all(&out_dir)?;
    let canonical = cfg.to_json()?;
    let config_hash = format!("{:x}", Sha256::digest(canonical.as_bytes()));
    // The effective configuration is itself an artifact: reruns can verify
    // the hash and reuse the exact document.
    let cfg_path = out_dir.join("config.effective.json");
    fs::write(&cfg_path, canonical + "\n")?;
    Ok(RunContext {
        cfg,
        out_dir,
        config_hash,
        outputs: vec!["config.effective.json".into()],
    })
}

/// Runs a parsed command line to completion.
pub fn run(cli: &Cli) -> stochkap::error::Result<()> {
    if let Some(n) = cli.common.threads {
        // A second invocation (e.g. in tests) leaves the first pool in
        // place; results do not depend on the pool size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut ctx = init_context(&cli.common)?;
    match &cli.command {
        Command::Kl => cmd_kl(&mut ctx)?,
        Command::Sample(args) => cmd_sample(&mut ctx, args)?,
        Command::Mc => cmd_mc(&mut ctx)?,
        Command::Pce => cmd_pce(&mut ctx)?,
        Command::Sensitivity => cmd_sensitivity(&mut ctx)?,
        Command::Convergence => cmd_convergence(&mut ctx)?,
        Command::Compare(args) => cmd_compare(&mut ctx, args)?,
    }
    ctx.finish(command_name(&cli.command))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Kl => "kl",
        Command::Sample(_) => "sample",
        Command::Mc => "mc",
        Command::Pce => "pce",
        Command::Sensitivity => "sensitivity",
        Command::Convergence => "convergence",
        Command::Compare(_) => "compare",
    }
}

fn cmd_kl(ctx: &mut RunContext) -> stochkap::error::Result<()> {
    let mesh = ctx.cfg.reactor.mesh()?;
    let specs =
        [("h", ctx.cfg.reactor.h_spec.clone()), ("sigma", ctx.cfg.reactor.sigma_spec.clone())];
    for (stem, spec) in &specs {
        let kl = kl_decompose(spec, &mesh)?;
        let ev = format!("{stem}_eigenvalues.csv");
        let ef = format!("{stem}_eigenfunctions.csv");
        write_kl_eigenvalues_csv(&ctx.path(&ev), &kl)?;
        write_kl_eigenfunctions_csv(&ctx.path(&ef), &kl)?;
        ctx.record(&ev);
        ctx.record(&ef);
    }
    Ok(())
}

fn parse_point(text: &str, dim: usize, what: &str) -> stochkap::error::Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals
        .map_err(|e| Error::InvalidArgument(format!("cannot parse {what} '{text}': {e}")))?;
    if vals.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "{what} needs {dim} coordinates, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn cmd_sample(ctx: &mut RunContext, args: &SampleArgs) -> stochkap::error::Result<()> {
    let reactor = &ctx.cfg.reactor;
    let m = reactor.h_spec.n_terms;
    let n = reactor.sigma_spec.n_terms;
    let (xi_drawn, zeta_drawn) = mc_draw(ctx.cfg.solver.rng_seed, 0, m, n);
    let xi = match &args.xi {
        Some(t) => parse_point(t, m, "xi")?,
        None => xi_drawn,
    };
    let zeta = match &args.zeta {
        Some(t) => parse_point(t, n, "zeta")?,
        None => zeta_drawn,
    };
    let mesh = reactor.mesh()?;
    let w = h1_gram(&mesh)?;
    let kl_h = kl_decompose(&reactor.h_spec, &mesh)?;
    let kl_s = kl_decompose(&reactor.sigma_spec, &mesh)?;
    let sol = solve_coupled(
        reactor,
        &mesh,
        &kl_h,
        &kl_s,
        &xi,
        &zeta,
        ctx.cfg.solver.max_outer_iters,
        &w,
    )?;
    write_solution_csv(&ctx.path("sample.csv"), mesh.nodes(), &sol.temperature, &sol.flux)?;
    ctx.record("sample.csv");
    let header = vec!["iteration".into(), "t_update_rel".into(), "phi_update_rel".into()];
    let rows: Vec<Vec<String>> = sol
        .t_updates
        .iter()
        .zip(&sol.phi_updates)
        .enumerate()
        .map(|(i, (&t, &p))| vec![(i + 1).to_string(), format_f64(t), format_f64(p)])
        .collect();
    write_csv(&ctx.path("sample_convergence.csv"), None, &header, &rows)?;
    ctx.record("sample_convergence.csv");
    Ok(())
}

fn cmd_mc(ctx: &mut RunContext) -> stochkap::error::Result<()> {
    let solver = &ctx.cfg.solver;
    let store = run_monte_carlo(
        &ctx.cfg.reactor,
        solver.mc_samples,
        solver.max_outer_iters,
        solver.rng_seed,
    )?;
    write_json(&ctx.path(MC_STORE_FILE), &store)?;
    ctx.record(MC_STORE_FILE);
    let summary = store.summary()?;
    let mesh = ctx.cfg.reactor.mesh()?;
    write_mc_summary_csv(&ctx.path("mc_summary.csv"), mesh.nodes(), &summary)?;
    ctx.record("mc_summary.csv");
    if !store.failures.is_empty() {
        eprintln!(
            "warning: {} of {} samples failed; failure records are in {}",
            store.failures.len(),
            store.n_requested,
            MC_STORE_FILE
        );
    }
    Ok(())
}

fn cmd_pce(ctx: &mut RunContext) -> stochkap::error::Result<()> {
    let result = run_pc_solver(&ctx.cfg.reactor, &ctx.cfg.solver)?;
    write_json(&ctx.path(PCE_STATE_FILE), &result)?;
    ctx.record(PCE_STATE_FILE);
    write_json(&ctx.path("iteration_records.json"), &result.records)?;
    ctx.record("iteration_records.json");
    write_convergence_csv(&ctx.path("convergence.csv"), &result.records)?;
    ctx.record("convergence.csv");
    write_spectrum_history_csv(&ctx.path("spectrum_history.csv"), &result.records)?;
    ctx.record("spectrum_history.csv");
    let mesh = ctx.cfg.reactor.mesh()?;
    let w = h1_gram(&mesh)?;
    write_temperature_stems_csv(&ctx.path("t_stems.csv"), &result.temperature, &w)?;
    ctx.record("t_stems.csv");
    write_flux_stems_csv(&ctx.path("phi_stems.csv"), &result.flux, &w)?;
    ctx.record("phi_stems.csv");
    for p in write_reduced_tables(&ctx.out_dir, "t_reduced", &result.reduced)? {
        ctx.record_path(&p);
    }
    if result.reduced.d() > 0 {
        write_eta_histogram_csv(
            &ctx.path("eta_histogram.csv"),
            &result.reduced,
            64,
            ctx.cfg.solver.rng_seed,
        )?;
        ctx.record("eta_histogram.csv");
        if let Some(family) = result.flux.family() {
            write_family_csv(&ctx.path("gamma_family.csv"), family)?;
            ctx.record("gamma_family.csv");
        }
        let measure = eta_measure_for(&ctx.cfg.reactor, &ctx.cfg.solver, &result.reduced)?;
        let max_level = result.flux.degree() + ctx.cfg.solver.mixed_rule_level_offset;
        write_embedded_rules_csv(&ctx.path("embedded_rules.csv"), &measure, max_level.max(1))?;
        ctx.record("embedded_rules.csv");
    }
    Ok(())
}

fn load_pce_state(ctx: &RunContext) -> stochkap::error::Result<PcRunResult> {
    let path = ctx.path(PCE_STATE_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found in {}: run the `pce` subcommand first",
            PCE_STATE_FILE,
            ctx.out_dir.display()
        )));
    }
    let text = fs::read_to_string(&path)?;
    Ok(serde_json::from_str(&text)?)
}

fn load_mc_store(ctx: &RunContext) -> stochkap::error::Result<McStore> {
    let path = ctx.path(MC_STORE_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found in {}: run the `mc` subcommand first",
            MC_STORE_FILE,
            ctx.out_dir.display()
        )));
    }
    let text = fs::read_to_string(&path)?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_sensitivity(ctx: &mut RunContext) -> stochkap::error::Result<()> {
    let result = load_pce_state(ctx)?;
    let mesh = ctx.cfg.reactor.mesh()?;
    let w = h1_gram(&mesh)?;
    let (t_frac, phi_frac) = variance_decomposition(&result.temperature, &result.flux, &w)?;
    write_sensitivity_csv(&ctx.path("sensitivity.csv"), &t_frac, &phi_frac)?;
    ctx.record("sensitivity.csv");
    Ok(())
}

fn cmd_convergence(ctx: &mut RunContext) -> stochkap::error::Result<()> {
    let result = load_pce_state(ctx)?;
    write_convergence_csv(&ctx.path("convergence.csv"), &result.records)?;
    ctx.record("convergence.csv");
    write_spectrum_history_csv(&ctx.path("spectrum_history.csv"), &result.records)?;
    ctx.record("spectrum_history.csv");
    Ok(())
}

fn cmd_compare(ctx: &mut RunContext, args: &CompareArgs) -> stochkap::error::Result<()> {
    let store = load_mc_store(ctx)?;
    let result = load_pce_state(ctx)?;
    let mesh = ctx.cfg.reactor.mesh()?;
    let w = h1_gram(&mesh)?;
    let n = args.n_common.unwrap_or(store.samples.len());
    let report = cross_compare(&store, &result, &w, n)?;
    let header =
        vec!["t_distance_rel".into(), "phi_distance_rel".into(), "n_used".into()];
    let rows = vec![vec![
        format_f64(report.t_distance),
        format_f64(report.phi_distance),
        report.n_used.to_string(),
    ]];
    write_csv(&ctx.path("compare.csv"), None, &header, &rows)?;
    ctx.record("compare.csv");
    write_json(&ctx.path("compare.json"), &report)?;
    ctx.record("compare.json");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn cli(args: &[&str]) -> Cli {
        Cli::parse_from(args)
    }

    fn write_small_config(dir: &Path) -> PathBuf {
        let path = dir.join("cfg.json");
        fs::write(
            &path,
            r#"{
  "reactor": {
    "n_elements": 10,
    "h_spec": {"mean": 0.17, "cov": 0.1, "corr_length": 15.0, "n_terms": 2},
    "sigma_spec": {"mean": 0.0195, "cov": 0.03, "corr_length": 50.0, "n_terms": 2}
  },
  "solver": {"p": 2, "eps2": 0.05, "q_cap": 5, "max_outer_iters": 6, "mc_samples": 8}
}"#,
        )
        .unwrap();
        path
    }

    #[test]
    fn exit_codes_follow_error_kinds() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Parse("x".into())), EXIT_IO);
        assert_eq!(exit_code(&Error::Singular("x".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::Convergence("x".into())), EXIT_NUMERICAL);
    }

    #[test]
    fn kl_writes_all_four_tables_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_small_config(dir.path());
        let out = dir.path().join("out");
        let c = cli(&[
            "stochkap",
            "kl",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        run(&c).unwrap();
        for f in [
            "h_eigenvalues.csv",
            "h_eigenfunctions.csv",
            "sigma_eigenvalues.csv",
            "sigma_eigenfunctions.csv",
            "manifest.json",
            "config.effective.json",
        ] {
            assert!(out.join(f).exists(), "{f} missing");
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["command"], "kl");
        let outputs = manifest["outputs"].as_array().unwrap();
        assert!(outputs.iter().any(|v| v == "h_eigenvalues.csv"));
        assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn sample_accepts_explicit_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_small_config(dir.path());
        let out = dir.path().join("out");
        let c = cli(&[
            "stochkap",
            "sample",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--xi",
            "0.0,0.0",
            "--zeta",
            "0.0,0.0",
        ]);
        run(&c).unwrap();
        let text = fs::read_to_string(out.join("sample.csv")).unwrap();
        assert!(text.starts_with("x_cm,temperature_K,"));
        assert_eq!(text.lines().count(), 12);
        // Central draw: the solution sits near the deterministic fixed
        // point.
        let mid: Vec<&str> = text.lines().nth(6).unwrap().split(',').collect();
        let t: f64 = mid[1].parse().unwrap();
        assert!((t - 610.588).abs() < 30.0, "central temperature {t}");
    }

    #[test]
    fn pce_then_sensitivity_and_convergence_chain() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_small_config(dir.path());
        let out = dir.path().join("out");
        let base = [
            "--config".to_string(),
            cfg.to_str().unwrap().to_string(),
            "--out".to_string(),
            out.to_str().unwrap().to_string(),
        ];
        let mut args = vec!["stochkap".to_string(), "pce".to_string()];
        args.extend(base.iter().cloned());
        run(&cli(&args.iter().map(String::as_str).collect::<Vec<_>>())).unwrap();
        for f in [
            "pce_state.json",
            "convergence.csv",
            "spectrum_history.csv",
            "t_stems.csv",
            "phi_stems.csv",
            "t_reduced_eigenvalues.csv",
            "eta_histogram.csv",
            "gamma_family.csv",
            "embedded_rules.csv",
        ] {
            assert!(out.join(f).exists(), "{f} missing");
        }
        let mut args = vec!["stochkap".to_string(), "sensitivity".to_string()];
        args.extend(base.iter().cloned());
        run(&cli(&args.iter().map(String::as_str).collect::<Vec<_>>())).unwrap();
        let sens = fs::read_to_string(out.join("sensitivity.csv")).unwrap();
        assert!(sens.starts_with("field,var_xi_pct,"));
        assert_eq!(sens.lines().count(), 3);

        let mut args = vec!["stochkap".to_string(), "convergence".to_string()];
        args.extend(base.iter().cloned());
        run(&cli(&args.iter().map(String::as_str).collect::<Vec<_>>())).unwrap();
    }

    #[test]
    fn compare_requires_both_stores() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_small_config(dir.path());
        let out = dir.path().join("out");
        let c = cli(&[
            "stochkap",
            "compare",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        let err = run(&c).unwrap_err();
        assert!(err.to_string().contains("mc"), "{err}");
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn mc_then_compare_chain() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_small_config(dir.path());
        let out = dir.path().join("out");
        let base = [
            "--config".to_string(),
            cfg.to_str().unwrap().to_string(),
            "--out".to_string(),
            out.to_str().unwrap().to_string(),
        ];
        for sub in ["mc", "pce", "compare"] {
            let mut args = vec!["stochkap".to_string(), sub.to_string()];
            args.extend(base.iter().cloned());
            run(&cli(&args.iter().map(String::as_str).collect::<Vec<_>>())).unwrap();
        }
        let text = fs::read_to_string(out.join("compare.csv")).unwrap();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        let t_dist: f64 = row[0].parse().unwrap();
        assert!(t_dist < 0.2, "distance {t_dist}");
        assert_eq!(row[2], "8");
    }

    #[test]
    fn config_errors_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"{"solver": {"eps1": -1}}"#).unwrap();
        let c = cli(&[
            "stochkap",
            "kl",
            "--config",
            path.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]);
        let err = run(&c).unwrap_err();
        assert!(err.to_string().contains("eps1"), "{err}");
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }
}
