//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when a checked property fails, 2 on configuration,
//! data, or usage errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::counterexample::{ce_run, ce_verify_assumptions};
use crate::distribution::certify_sensitivity;
use crate::harness::{load_dataset, run_experiment, ExperimentConfig, GridSpec};
use crate::predictor::{gradcheck, Predictor, PredictorParams};
use crate::rng::{derive_seed, rng_from, SeedStreams};
use crate::training::{prepare_base, rrm_from, tabular_rrm, TabularPredictor};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "performa",
    version,
    about = "Repeated risk minimization under Resample-if-Rejected distribution shift"
)]
pub struct Cli {
    /// Worker threads for sweeps and certification [default: available parallelism]
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration, TOML (or JSON with a .json extension). Built-in defaults apply
    /// when omitted
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override one config value, e.g. `--set rrm.inner_tol=1e-12`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output root; artifacts go to <OUT>/<config name>/
    #[arg(long, env = "PERFORMA_OUT", default_value = "out", value_name = "DIR")]
    pub out: PathBuf,

    /// Root seed for every random stream (overrides the config)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run RRM for a single (delta, hidden size) cell
    Run {
        #[command(flatten)]
        common: Common,
        /// Rejection offset delta in (0, 1)
        #[arg(long)]
        delta: Option<f64>,
        /// Hidden-layer width
        #[arg(long)]
        hidden_size: Option<usize>,
        /// Retrain on resampled draws instead of exact induced weights
        #[arg(long)]
        monte_carlo: bool,
        /// Re-initialize the predictor at every RRM iteration
        #[arg(long)]
        cold_start: bool,
        /// Also certify the sensitivity constants and add them to report.json
        #[arg(long)]
        certify: bool,
    },
    /// Run the configured grid of deltas, hidden sizes and seeds
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Retrain on resampled draws instead of exact induced weights
        #[arg(long)]
        monte_carlo: bool,
        /// Re-initialize the predictor at every RRM iteration
        #[arg(long)]
        cold_start: bool,
        /// Also certify the sensitivity constants and add them to report.json
        #[arg(long)]
        certify: bool,
    },
    /// Certify chi-square sensitivity and norm-ratio bounds of the RIR map
    Certify {
        #[command(flatten)]
        common: Common,
        /// Certify a single delta instead of the grid deltas
        #[arg(long)]
        delta: Option<f64>,
        /// Random predictor pairs per delta
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Iterate the W1-sensitive counterexample and check its assumptions
    Counterexample {
        #[command(flatten)]
        common: Common,
        /// Number of RRM steps
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare analytic gradients with central finite differences
    Gradcheck {
        /// Seed for the random cases
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random (parameters, batch) cases
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
    /// Report distances to the stable oracle E[Y | X = x] for tabular and MLP RRM
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Rejection offset delta in (0, 1)
        #[arg(long)]
        delta: Option<f64>,
        /// Hidden-layer width
        #[arg(long)]
        hidden_size: Option<usize>,
    },
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let switches_kind = matches!(
                (b.get("kind"), o.get("kind")),
                (Some(x), Some(y)) if x != y
            );
            if switches_kind {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_override(raw: &str) -> Result<(Vec<String>, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not KEY=VALUE")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((path, parsed))
}

fn set_path(root: &mut Value, path: &[String], value: Value) {
    let mut over = value;
    for key in path.iter().rev() {
        let mut m = serde_json::Map::new();
        m.insert(key.clone(), over);
        over = Value::Object(m);
    }
    merge(root, over);
}

/// Defaults, then the config file, then `--set` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let file: Value = if p.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        };
        merge(&mut value, file);
    }
    for raw in overrides {
        let (path, v) = parse_override(raw)?;
        set_path(&mut value, &path, v);
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_config(common.config.as_deref(), &common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.out.join(&cfg.name)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3e}"))
}

fn experiment(common: &Common, cfg: ExperimentConfig, certify: bool) -> Result<i32> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let dir = out_dir(common, &cfg);
    let result = run_experiment(&data, &cfg, &dir, certify)?;
    println!(
        "{:>6} {:>4} {:>6} {:>7} {:>5} {:>10} {:>10} {:>10} {:>10}  status",
        "delta", "h", "seed", "atoms", "iters", "final_pr", "|dPR|", "ratio>=3", "bound"
    );
    for c in &result.report.cells {
        println!(
            "{:>6} {:>4} {:>6} {:>7} {:>5} {:>10} {:>10} {:>10} {:>10.4}  {}{}",
            c.delta,
            c.hidden_size,
            c.seed,
            c.n_atoms,
            c.iterations,
            opt(c.final_performative_risk),
            opt(c.final_delta_pr),
            opt(c.max_ratio_from_3),
            c.rate_bound,
            c.status,
            c.error
                .as_ref()
                .map(|e| format!(": {e}"))
                .unwrap_or_default()
        );
    }
    if let Some(reports) = &result.report.certification {
        for r in reports {
            println!(
                "certify delta={} pairs={} max_chi2_ratio={:.6} (<= {:.6}) pass={}",
                r.delta, r.n_pairs, r.max_chi2_ratio, r.epsilon_bound, r.all_pass
            );
        }
    }
    println!("artifacts in {}", dir.display());
    Ok(i32::from(result.failures() > 0))
}

fn certify(common: &Common, delta: Option<f64>, pairs: Option<usize>) -> Result<i32> {
    let cfg = load(common)?;
    let pairs = pairs.unwrap_or(cfg.certify_pairs);
    if pairs == 0 {
        return Err(Error::Config("--pairs must be at least 1".into()));
    }
    let deltas = delta.map_or_else(|| cfg.grid.deltas.clone(), |d| vec![d]);
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let seed = SeedStreams::new(cfg.seed).certification();
    let mode = cfg.rrm.mode;
    println!(
        "{:>6} {:>9} {:>6} {:>7} {:>12} {:>10} {:>12} {:>10} {:>12} {:>10}  pass",
        "delta",
        "mode",
        "pairs",
        "atoms",
        "max_chi2/d2",
        "eps=1/d",
        "min_ratio",
        "c",
        "max_ratio",
        "C"
    );
    let mut reports = Vec::new();
    for (i, &d) in deltas.iter().enumerate() {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {d}")));
        }
        let base = prepare_base(&data.base, d, mode)?;
        let r = certify_sensitivity(
            &base,
            d,
            pairs,
            mode,
            crate::rng::derive_indexed(seed, i as u64),
        )?;
        println!(
            "{:>6} {:>9} {:>6} {:>7} {:>12.6} {:>10.6} {:>12.6} {:>10.6} {:>12.6} {:>10.6}  {}",
            d,
            r.mode.to_string(),
            r.n_pairs,
            r.n_atoms,
            r.max_chi2_ratio,
            r.epsilon_bound,
            r.min_norm_ratio,
            r.c_bound,
            r.max_norm_ratio,
            r.upper_c_bound,
            if r.all_pass { "PASS" } else { "FAIL" }
        );
        reports.push(r);
    }
    let dir = out_dir(common, &cfg);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("certify.json");
    fs::write(&path, serde_json::to_string_pretty(&reports)? + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(i32::from(reports.iter().any(|r| !r.all_pass)))
}

fn counterexample(common: &Common, steps: Option<usize>) -> Result<i32> {
    let cfg = load(common)?;
    let mut ce = cfg.counterexample.clone();
    if let Some(s) = steps {
        ce.n_steps = s;
    }
    let run = ce_run(&ce)?;
    let report = ce_verify_assumptions(&ce, 100, SeedStreams::new(cfg.seed).certification())?;
    println!(
        "{:>5} {:>22} {:>22} {:>12}",
        "step", "theta", "tanh(theta)", "||df||"
    );
    for (t, theta) in run.thetas.iter().enumerate() {
        let d = t
            .checked_sub(1)
            .map(|k| format!("{:.9}", run.step_distances[k]))
            .unwrap_or_default();
        println!("{t:>5} {theta:>22.15} {:>22.15} {d:>12}", theta.tanh());
    }
    let orbit_error = run.max_orbit_error();
    let min_step = run.min_step_distance().unwrap_or(0.0);
    println!("max |tanh(theta_t) - (-1)^(t+1)/2| = {orbit_error:.3e}");
    println!(
        "min step distance = {min_step:.12} (sqrt 3 = {:.12})",
        3f64.sqrt()
    );
    println!(
        "W1 sensitivity: max W1/(eps ||df||) = {:.6}, violations {}",
        report.max_w1_ratio, report.w1_violations
    );
    println!(
        "norm ratio: max = {:.6} <= C = {}, violations {}",
        report.max_norm_ratio, report.norm_ratio_c, report.norm_ratio_violations
    );
    println!(
        "curvature: max |l'' - gamma| = {:.3e}",
        report.max_curvature_error
    );
    println!(
        "sqrt(C eps) M / gamma = {:.6} with M = {} (eps = {}, C = {}, gamma = {})",
        report.rate_constant, report.m_bound, ce.epsilon, ce.norm_ratio_c, ce.gamma
    );
    let dir = out_dir(common, &cfg);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("counterexample.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    run.write_csv(std::io::BufWriter::new(file))?;
    let path = dir.join("counterexample.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .map_err(|e| Error::io(&path, e))?;
    // The orbit checks only apply to the documented start atanh(-1/2).
    let oscillates = (ce.theta0.tanh() + 0.5).abs() < 1e-12;
    let orbit_ok = !oscillates || (orbit_error < 1e-9 && min_step >= 3f64.sqrt() - 1e-6);
    Ok(i32::from(!(orbit_ok && report.all_pass)))
}

fn oracle(common: &Common, delta: Option<f64>, hidden_size: Option<usize>) -> Result<i32> {
    let cfg = load(common)?;
    let mut rrm_cfg = cfg.cell_config(
        delta.unwrap_or(cfg.rrm.delta),
        hidden_size.unwrap_or(cfg.rrm.hidden_size),
        0,
    );
    rrm_cfg.validate()?;
    rrm_cfg.rng_seed = derive_seed(cfg.seed, "oracle");
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let base = prepare_base(&data.base, rrm_cfg.delta, rrm_cfg.mode)?;
    let mut rng = rng_from(derive_seed(rrm_cfg.rng_seed, "init"));
    let init = PredictorParams::init(base.dim(), rrm_cfg.hidden_size, rrm_cfg.delta, &mut rng)?;
    let table = TabularPredictor::from_fn(&base, &init as &dyn Predictor);
    let tab = tabular_rrm(
        &base,
        table,
        rrm_cfg.delta,
        rrm_cfg.mode,
        rrm_cfg.max_rrm_iters,
    )?;
    let mlp = rrm_from(&base, &rrm_cfg, init)?;
    println!("{:>5} {:>14} {:>14}", "iter", "tabular", "mlp");
    for t in 0..tab.oracle_distances.len().max(mlp.records.len()) {
        let a = tab.oracle_distances.get(t).copied();
        let b = mlp.records.get(t).and_then(|r| r.dist_to_oracle);
        println!("{:>5} {:>14} {:>14}", t + 1, opt(a), opt(b));
    }
    let last = tab
        .oracle_distances
        .last()
        .copied()
        .unwrap_or(f64::INFINITY);
    println!("tabular final oracle distance {last:.3e} (target < 1e-6)");
    Ok(i32::from(!(last < 1e-6)))
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run {
            common,
            delta,
            hidden_size,
            monte_carlo,
            cold_start,
            certify,
        } => {
            let mut cfg = load(&common)?;
            let d = delta.unwrap_or(cfg.rrm.delta);
            let h = hidden_size.unwrap_or(cfg.rrm.hidden_size);
            cfg.grid = GridSpec {
                deltas: vec![d],
                hidden_sizes: vec![h],
                seeds: vec![cfg.grid.seeds.first().copied().unwrap_or(0)],
            };
            cfg.rrm.monte_carlo |= monte_carlo;
            cfg.rrm.warm_start &= !cold_start;
            experiment(&common, cfg, certify)
        }
        Command::Sweep {
            common,
            monte_carlo,
            cold_start,
            certify,
        } => {
            let mut cfg = load(&common)?;
            cfg.rrm.monte_carlo |= monte_carlo;
            cfg.rrm.warm_start &= !cold_start;
            experiment(&common, cfg, certify)
        }
        Command::Certify {
            common,
            delta,
            pairs,
        } => certify(&common, delta, pairs),
        Command::Counterexample { common, steps } => counterexample(&common, steps),
        Command::Gradcheck { seed, cases } => {
            let r = gradcheck(cases, seed);
            println!(
                "cases {} coordinates {} failures {} max_rel_error {:.3e} max_abs_error {:.3e}",
                r.cases, r.coordinates, r.failures, r.max_rel_error, r.max_abs_error
            );
            Ok(i32::from(r.failures > 0))
        }
        Command::Oracle {
            common,
            delta,
            hidden_size,
        } => oracle(&common, delta, hidden_size),
    }
}

/// Parse arguments, run, and return the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.jobs {
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli)),
            Err(e) => Err(Error::Config(format!("thread pool: {e}"))),
        },
        None => dispatch(cli),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}
