//! Command-line front end: presets, config files, experiment commands and
//! output manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis;
use crate::config::{sha256_hex, EngineConfig, PAPER_DURATIONS};
use crate::cycle::{self, CycleOptions};
use crate::error::{Error, Result};
use crate::model::{self, DephasingBathParams};
use crate::optimizer::{self, OptimizationSpec, SweepRow, Target};
use crate::propagate::Engine;
use crate::tedopa;

pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "qotto", version, about = "Two-level Otto engine with thermal and dephasing baths")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Built-in parameter set.
    #[arg(long)]
    pub preset: Option<String>,
    /// Config file with dotted keys (engine.omega = 1.0, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set dephasing.Gamma=64. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Check the manifest in --out against the files and config instead of running.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run to the steady cycle and write the cycle report and trajectory.
    RunCycle {
        #[command(flatten)]
        common: Common,
        /// Record Ansatz diagnostics for the converged cycle.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Maximize power over the stroke durations.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Optimize at each coupling strength.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        /// Couplings Gamma, comma separated.
        #[arg(long = "Gamma", value_delimiter = ',', required = true)]
        couplings: Vec<f64>,
    },
    /// Compare chain and damped-mode bath energies.
    ValidateTedopa {
        #[command(flatten)]
        common: Common,
        /// Support half-widths a, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
        supports: Vec<f64>,
    },
    /// Constant-efficiency lambda scan and constant-power width sweep.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        /// Widths gamma along the constant-rate family, comma separated.
        #[arg(long = "gamma", value_delimiter = ',')]
        widths: Vec<f64>,
    },
    /// Closed-form quantities as JSON.
    Bounds(BoundsArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    #[arg(long, default_value = "tot")]
    pub target: String,
    #[arg(long, default_value_t = 400)]
    pub max_evals: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// First pattern step in units of the 1/32 grid.
    #[arg(long, default_value_t = 8)]
    pub initial_step: i64,
    /// Continuous simplex refinement after the grid search.
    #[arg(long)]
    pub refine: bool,
}

#[derive(Args, Debug, Clone)]
pub struct BoundsArgs {
    #[arg(long = "Gamma", default_value_t = 256.0)]
    pub coupling: f64,
    #[arg(long = "gamma", default_value_t = 128.0)]
    pub width: f64,
    #[arg(long, default_value_t = 1024.0)]
    pub omega0: f64,
    #[arg(long, default_value_t = f64::INFINITY)]
    pub beta: f64,
    /// Family through (family-gamma, family-omega0) used for gamma_0 and omega0_of_gamma.
    #[arg(long, default_value_t = 128.0)]
    pub family_gamma: f64,
    #[arg(long, default_value_t = 1024.0)]
    pub family_omega0: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma_th: f64,
    #[arg(long, default_value_t = PAPER_DURATIONS[1])]
    pub tau_th: f64,
    #[arg(long, default_value_t = 0.4857)]
    pub n_h: f64,
    #[arg(long, default_value_t = 0.0524)]
    pub n_c: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputEntry>,
    pub details: Value,
}

/// Preset, then config file, then --set overrides; every violation is reported.
pub fn load_config(c: &Common) -> Result<EngineConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), preset) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
            EngineConfig::from_toml_str_with_preset(&text, preset.as_deref())?
        }
        (None, Some(p)) => EngineConfig::preset(p)?,
        (None, None) => EngineConfig::preset("paper-4.1")?,
    };
    cfg.apply_overrides(&c.set)?;
    cfg.validate()?;
    Ok(cfg)
}

struct Outputs {
    dir: PathBuf,
    files: Vec<OutputEntry>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        fs::write(self.dir.join(name), &buf)?;
        self.files.push(OutputEntry { file: name.into(), sha256: sha256_hex(&buf) });
        Ok(())
    }

    fn finish(self, command: &str, cfg: Option<&EngineConfig>, start: Instant, details: Value) -> Result<()> {
        let m = RunManifest {
            tool: "qotto".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: cfg.map(|c| c.to_flat()).unwrap_or_default(),
            config_hash: cfg.map(|c| c.hash()).unwrap_or_default(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs: self.files,
            details,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Numerics(e.to_string()))?;
        fs::write(self.dir.join(MANIFEST), text + "\n")?;
        Ok(())
    }
}

/// Recompute output hashes and the config hash recorded in `dir/manifest.json`.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Numerics(format!("bad manifest: {e}")))?;
    let mut problems = Vec::new();
    for o in &m.outputs {
        match fs::read(dir.join(&o.file)) {
            Ok(bytes) if sha256_hex(&bytes) == o.sha256 => {}
            Ok(_) => problems.push(format!("{}: hash mismatch", o.file)),
            Err(e) => problems.push(format!("{}: {e}", o.file)),
        }
    }
    if !m.config.is_empty() {
        let flat: BTreeMap<String, toml::Value> =
            m.config.iter().map(|(k, v)| (k.clone(), crate::config::parse_scalar(v))).collect();
        match EngineConfig::from_flat(&flat) {
            Ok(c) if c.hash() == m.config_hash => {}
            Ok(_) => problems.push("config hash mismatch".into()),
            Err(e) => problems.push(format!("config does not parse: {e}")),
        }
    }
    Ok(problems)
}

fn sweep_row_for(o: &optimizer::Optimum, coupling: f64, cfg: &EngineConfig) -> SweepRow {
    let r = &o.record;
    SweepRow {
        coupling,
        gamma_eff: analysis::effective_rate(&cfg.dephasing),
        p_sys: r.sys.power,
        p_tot: r.tot.power,
        eta_sys: r.sys.eta,
        eta_tot: r.tot.eta,
        tau_cycle: o.durations.cycle(),
        w_ext_sys: r.sys.w_ext,
        w_ext_tot: r.tot.w_ext,
        durations: o.durations.as_array(),
        evaluations: o.trace.len(),
        verified: o.verified_local_max,
        status: if o.budget_exhausted { "budget".into() } else { "ok".into() },
    }
}

fn spec_from(s: &SearchArgs, cfg: &EngineConfig) -> Result<OptimizationSpec> {
    let mut spec = OptimizationSpec::new(s.target.parse::<Target>()?, cfg.strokes);
    spec.max_evals = s.max_evals;
    spec.seed = s.seed;
    spec.initial_step = s.initial_step;
    spec.refine = s.refine;
    spec.validate()?;
    Ok(spec)
}

/// Closed-form quantities for one parameter point.
pub fn bounds_json(b: &BoundsArgs) -> Result<Value> {
    let p = DephasingBathParams { coupling: b.coupling, width: b.width, omega0: b.omega0, beta: b.beta };
    let mut errs = Vec::new();
    if !(b.width > 0.0) {
        errs.push(format!("--gamma must be > 0 (got {})", b.width));
    }
    if !(b.omega0 >= 0.0) {
        errs.push(format!("--omega0 must be >= 0 (got {})", b.omega0));
    }
    if !(b.beta > 0.0) {
        errs.push(format!("--beta must be > 0 (got {})", b.beta));
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let alpha = analysis::steady_displacement(b.coupling, b.width, b.omega0);
    let (omega0_of_gamma, gamma0) = analysis::scaling_constant_power(b.family_gamma, b.family_omega0, b.width)
        .map(|(w, g)| (Some(w), g))
        .unwrap_or((None, b.family_gamma + 4.0 * b.family_omega0 * b.family_omega0 / b.family_gamma));
    let sd = |w| model::lorentzian_sd(w, &p);
    let recoupling = if b.coupling == 0.0 {
        Some(0.0)
    } else {
        analysis::recoupling_bound(&sd, b.omega0, b.width, b.tau_th).ok().map(|e| e.value)
    };
    let hb =
        analysis::dissipated_heat_bounds(b.coupling, b.width, b.omega0, b.beta, b.gamma_th, b.tau_th, b.n_h, b.n_c);
    let base = EngineConfig::paper_baseline();
    let d = base.drive();
    let (xc, xh) = (analysis::polarization_argument(b.n_c), analysis::polarization_argument(b.n_h));
    let qs = analysis::quasistatic(d.epsilon_cold(), d.epsilon_hot(), xc, xh);
    let mut cfg = base;
    cfg.hot.n = b.n_h;
    cfg.cold.n = b.n_c;
    let ratio = analysis::implied_temperature_ratio(&cfg);
    Ok(json!({
        "Gamma": b.coupling,
        "gamma": b.width,
        "omega0": b.omega0,
        "beta": if b.beta.is_infinite() { Value::String("inf".into()) } else { json!(b.beta) },
        "gamma_eff": analysis::effective_dephasing_rate(b.coupling, b.width, b.omega0, f64::INFINITY),
        "gamma_eff_beta": analysis::effective_rate(&p),
        "alpha": { "re": alpha.re, "im": alpha.im },
        "delta_e_dec": analysis::decoupling_energy_lorentzian(b.coupling, b.width, b.omega0),
        "recoupling_bound": recoupling,
        "heat_bounds": { "lower": hb.lower, "upper": hb.upper },
        "gamma0": gamma0,
        "omega0_of_gamma": omega0_of_gamma,
        "quasistatic": {
            "w_com": qs.w_com, "w_exp": qs.w_exp, "q_h": qs.q_h, "q_c": qs.q_c,
            "w_ext": qs.w_ext, "eta": qs.eta,
            "eta_carnot": analysis::carnot_efficiency(ratio),
            "eta_curzon_ahlborn": analysis::curzon_ahlborn_efficiency(ratio),
        },
    }))
}

fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::Bounds(b) => {
            let v = bounds_json(&b)?;
            let text = serde_json::to_string_pretty(&v).map_err(|e| Error::Numerics(e.to_string()))?;
            println!("{text}");
            if let Some(dir) = &b.out {
                let mut out = Outputs::new(dir)?;
                out.write("bounds.json", |w| {
                    w.extend_from_slice(text.as_bytes());
                    w.push(b'\n');
                    Ok(())
                })?;
                out.finish("bounds", None, start, v)?;
            }
            Ok(())
        }
        Command::RunCycle { common, diagnostics } => with_common(&common, "run-cycle", start, |cfg, out| {
            let mut engine = Engine::new(cfg)?;
            let opts = CycleOptions { diagnostics, keep_states: false };
            let sc = cycle::run_to_steady_cycle(&mut engine, None, opts)?;
            out.write("cycle_report.csv", |w| cycle::write_cycle_report(&sc.history, sc.cycles, w))?;
            out.write("trajectory.csv", |w| sc.ledger.write_csv(w))?;
            let r = &sc.record;
            if diagnostics {
                out.write("diagnostics.json", |w| {
                    serde_json::to_writer_pretty(w, &r.diagnostics).map_err(|e| Error::Numerics(e.to_string()))
                })?;
            }
            println!(
                "steady after {} cycles: W_ext sys {:.6e} tot {:.6e}, eta sys {:.6} tot {:.6}",
                sc.cycles, r.sys.w_ext, r.tot.w_ext, r.sys.eta, r.tot.eta
            );
            Ok(
                json!({ "cycles_to_steady": sc.cycles, "distances": sc.distances, "max_residual": sc.ledger.max_residual }),
            )
        }),
        Command::Optimize { common, search } => with_common(&common, "optimize", start, |cfg, out| {
            let spec = spec_from(&search, cfg)?;
            let o = optimizer::maximize_power(&spec, cfg)?;
            let row = sweep_row_for(&o, cfg.dephasing.coupling, cfg);
            out.write("optimum.csv", |w| optimizer::write_sweep_csv(std::slice::from_ref(&row), w))?;
            out.write("trace.csv", |w| optimizer::write_trace_csv(&o.trace, w))?;
            println!(
                "P_{} = {:.6e} at {:?} ({} evaluations)",
                search.target,
                o.power,
                o.durations.as_array(),
                o.trace.len()
            );
            Ok(
                json!({ "spec": spec, "budget_exhausted": o.budget_exhausted, "verified_local_max": o.verified_local_max }),
            )
        }),
        Command::Sweep { common, search, couplings } => with_common(&common, "sweep", start, |cfg, out| {
            let spec = spec_from(&search, cfg)?;
            let rows = optimizer::sweep_dephasing(cfg, &couplings, &spec);
            out.write("sweep.csv", |w| optimizer::write_sweep_csv(&rows, w))?;
            Ok(json!({ "spec": spec, "Gamma": couplings }))
        }),
        Command::ValidateTedopa { common, supports } => with_common(&common, "validate-tedopa", start, |cfg, out| {
            let cmp = tedopa::compare_dampf_tedopa(cfg, &supports)?;
            out.write("comparison.csv", |w| tedopa::write_comparison_csv(&cmp.rows, w))?;
            out.write("dampf.csv", |w| tedopa::write_trajectory_csv(&cmp.dampf, w))?;
            for run in &cmp.chains {
                let tag = crate::config::fmt_exact(run.coefficients.a);
                out.write(&format!("chain_a{tag}.csv"), |w| run.coefficients.write_csv(w))?;
                out.write(&format!("tedopa_a{tag}.csv"), |w| tedopa::write_trajectory_csv(&run.samples, w))?;
            }
            for r in &cmp.rows {
                println!("a = {}: max |dH_int| {:.3e}, max |dH_B| {:.3e}", r.a, r.max_dh_int, r.max_dh_bath);
            }
            Ok(json!({ "supports": supports, "dampf_plateau": cmp.dampf_plateau }))
        }),
        Command::Scaling { common, lambda, widths } => with_common(&common, "scaling", start, |cfg, out| {
            if lambda.is_empty() && widths.is_empty() {
                return Err(Error::config("scaling needs --lambda and/or --gamma values"));
            }
            if !lambda.is_empty() {
                let rows = optimizer::lambda_scan(cfg, &lambda);
                out.write("lambda.csv", |w| optimizer::write_lambda_csv(&rows, w))?;
            }
            if !widths.is_empty() {
                let rows = optimizer::sweep_gamma_to_gamma0(cfg, &widths);
                out.write("gamma.csv", |w| optimizer::write_gamma_csv(&rows, w))?;
            }
            Ok(json!({ "lambda": lambda, "gamma": widths }))
        }),
    }
}

fn with_common(
    common: &Common,
    name: &str,
    start: Instant,
    body: impl FnOnce(&EngineConfig, &mut Outputs) -> Result<Value>,
) -> Result<()> {
    if common.verify {
        let problems = verify_manifest(&common.out)?;
        if problems.is_empty() {
            println!("manifest verified: {}", common.out.join(MANIFEST).display());
            return Ok(());
        }
        return Err(Error::Numerics(format!("manifest verification failed: {}", problems.join("; "))));
    }
    let cfg = load_config(common)?;
    let mut out = Outputs::new(&common.out)?;
    let details = body(&cfg, &mut out)?;
    out.finish(name, Some(&cfg), start, details)
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
