//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each, and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use performa::counterexample::{ce_run, ce_verify_assumptions, CEConfig};
use performa::distribution::{
    certification_triple, check_pair, chi2_weights, rir_density_from_predictions, w1_1d,
    EmpiricalBase, RirSampler, ShiftMode,
};
use performa::harness::{load_dataset, DataSource, DatasetSpec, SyntheticSpec};
use performa::predictor::{gradcheck, PredictorParams, GRADCHECK_ABS_TOL, GRADCHECK_REL_TOL};
use performa::rng::{derive_indexed, derive_seed, rng_from, Rng};
use performa::training::{
    prepare_base, rrm, stable_oracle, tabular_rrm, RRMConfig, RRMTrace, TabularPredictor,
};
use rand::Rng as _;
use rayon::prelude::*;

const REL_TOL: f64 = 1e-9;
const DELTAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const MODES: [ShiftMode; 2] = [ShiftMode::Full, ShiftMode::Strategic];
/// Inner tolerance used on the contraction benchmarks. Ratios of successive step
/// distances are only meaningful when the inner solve error sits well below the
/// distances themselves.
const BENCH_INNER_TOL: f64 = 1e-14;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// Random base with 8..=256 atoms. Strategic bases are product-form with one
/// strategic coordinate taking a few levels.
fn random_base(rng: &mut Rng, mode: ShiftMode) -> EmpiricalBase {
    let dim = rng.random_range(2..=4);
    match mode {
        ShiftMode::Full => {
            let n = rng.random_range(8..=256);
            let xs: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            EmpiricalBase::from_rows(&xs, dim, &ys, vec![]).unwrap()
        }
        ShiftMode::Strategic => {
            let levels = rng.random_range(2..=8);
            let rows = rng.random_range(4..=256 / levels);
            let mut xs = Vec::with_capacity(rows * dim);
            for r in 0..rows {
                for _ in 0..dim - 1 {
                    xs.push(rng.random_range(-3.0..3.0));
                }
                // Every level appears at least once.
                let level = if r < levels {
                    r
                } else {
                    rng.random_range(0..levels)
                };
                xs.push(level as f64 - 0.5 * levels as f64);
            }
            let ys: Vec<f64> = (0..rows).map(|_| rng.random_range(0.0..1.0)).collect();
            EmpiricalBase::from_rows(&xs, dim, &ys, vec![dim - 1])
                .unwrap()
                .strategic_product()
                .unwrap()
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = CEConfig::default();
    let run = match ce_run(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("ce_run failed: {e}")),
    };
    let worst = run
        .tanhs()
        .enumerate()
        .map(|(t, v)| (v - if t % 2 == 0 { -0.5 } else { 0.5 }).abs())
        .fold(0.0, f64::max);
    let rate = cfg.rate_constant();
    let oracle_rate = (3.01f64 * 1e-4).sqrt() * 21.0 / 4.0;
    let report = ce_verify_assumptions(&cfg, 100, 7).unwrap();
    let elapsed = start.elapsed();
    let pass = run.thetas.len() == 101
        && worst < 1e-9
        && (rate - oracle_rate).abs() < 1e-12
        && rate < 1.0
        && report.all_pass
        && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "100 steps, max |tanh - (-1)^(t+1)/2| = {worst:.2e}, sqrt(C eps) M / gamma = {rate:.6}, \
             assumptions {}, {}",
            if report.all_pass { "hold" } else { "VIOLATED" },
            secs(elapsed)
        ),
    )
}

/// Criteria 2 and 3 share one sweep.
fn criteria_2_3() -> (Outcome, Outcome) {
    const PAIRS: usize = 1000;
    let start = Instant::now();
    let mut checks = 0usize;
    let mut chi2_viol = 0usize;
    let mut ratio_viol = 0usize;
    let mut degenerate = 0usize;
    let mut max_chi2_slack = 0.0f64;
    let (mut min_ratio_slack, mut max_ratio_slack) = (f64::INFINITY, 0.0f64);
    let (mut min_atoms, mut max_atoms) = (usize::MAX, 0usize);
    for (di, &delta) in DELTAS.iter().enumerate() {
        for (mi, &mode) in MODES.iter().enumerate() {
            let seed = derive_indexed(derive_seed(2024, "chi2-sweep"), (di * 2 + mi) as u64);
            for k in 0..PAIRS {
                let mut rng = rng_from(derive_indexed(seed, k as u64));
                let base = random_base(&mut rng, mode);
                min_atoms = min_atoms.min(base.len());
                max_atoms = max_atoms.max(base.len());
                let [f, g, pivot] = certification_triple(base.dim(), delta, seed, k).unwrap();
                let c = match check_pair(&base, &f, &g, &pivot, delta, mode) {
                    Ok(c) => c,
                    Err(_) => {
                        degenerate += 1;
                        continue;
                    }
                };
                checks += 1;
                // Normalized against the bounds so that every cell is comparable.
                let chi2_slack = c.chi2 * delta / c.norm_sq;
                max_chi2_slack = max_chi2_slack.max(chi2_slack);
                if chi2_slack > 1.0 + REL_TOL {
                    chi2_viol += 1;
                }
                let lo = 1.0 / (2.0 - delta);
                let hi = 1.0 / delta;
                min_ratio_slack = min_ratio_slack.min(c.norm_ratio / lo);
                max_ratio_slack = max_ratio_slack.max(c.norm_ratio / hi);
                if c.norm_ratio < lo * (1.0 - REL_TOL) || c.norm_ratio > hi * (1.0 + REL_TOL) {
                    ratio_viol += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(30);
    let sized = min_atoms >= 8 && max_atoms <= 256;
    let c2 = outcome(
        chi2_viol == 0 && degenerate == 0 && fast && sized,
        format!(
            "{checks} pairs ({PAIRS} per delta x mode), {min_atoms}..{max_atoms} atoms, \
             {chi2_viol} violations, {degenerate} degenerate, max chi2 delta / ||f-f'||^2 = \
             {max_chi2_slack:.4}, {}",
            secs(elapsed)
        ),
    );
    let c3 = outcome(
        ratio_viol == 0 && degenerate == 0 && sized,
        format!(
            "{checks} pairs, {ratio_viol} violations, min ratio (2-delta) = {min_ratio_slack:.4}, \
             max ratio delta = {max_ratio_slack:.4}"
        ),
    );
    (c2, c3)
}

fn fixture_spec() -> DatasetSpec {
    DatasetSpec {
        source: DataSource::Csv {
            path: Path::new(env!("CARGO_MANIFEST_DIR")).join("data/credit_fixture_200.csv"),
        },
        ..DatasetSpec::default()
    }
}

fn synthetic_spec() -> DatasetSpec {
    DatasetSpec {
        source: DataSource::Synthetic(SyntheticSpec {
            n_rows: 2000,
            ..SyntheticSpec::default()
        }),
        ..DatasetSpec::default()
    }
}

fn bench_cell(
    spec: &DatasetSpec,
    delta: f64,
    init_seed: u64,
) -> (performa::Result<RRMTrace>, Duration) {
    let start = Instant::now();
    let cfg = RRMConfig {
        delta,
        hidden_size: 6,
        inner_tol: BENCH_INNER_TOL,
        rng_seed: init_seed,
        ..RRMConfig::default()
    };
    let run = load_dataset(spec, 0)
        .and_then(|data| prepare_base(&data.base, delta, cfg.mode))
        .and_then(|base| rrm(&base, &cfg));
    (run, start.elapsed())
}

fn ratio_list(t: &RRMTrace) -> String {
    let r: Vec<String> = t
        .records
        .iter()
        .filter_map(|r| r.contraction_ratio.map(|v| format!("t{}={v:.4}", r.iter)))
        .collect();
    if r.is_empty() {
        "none".into()
    } else {
        r.join(" ")
    }
}

/// Criterion 4, plus the synthetic delta = 0.9 trace reused by criterion 7.
fn criterion_4() -> (Outcome, Option<RRMTrace>) {
    let mut pass = true;
    let mut lines = Vec::new();
    let mut synthetic_09 = None;
    for (name, spec) in [("fixture", fixture_spec()), ("synthetic", synthetic_spec())] {
        for delta in [0.9, 0.7, 0.4, 0.1] {
            let (run, elapsed) = bench_cell(&spec, delta, 0);
            let asserted = delta > 0.5;
            let trace = match run {
                Ok(t) => t,
                Err(e) => {
                    pass = false;
                    lines.push(format!("{name} delta={delta}: error {e}"));
                    continue;
                }
            };
            let bound = (1.0 - delta) / delta + 0.05;
            let max_ratio = trace.max_ratio_from(3);
            let dpr = trace.final_delta_pr();
            let cell_pass = max_ratio.is_none_or(|r| r <= bound)
                && trace.converged
                && trace.records.len() <= 30
                && dpr.is_some_and(|d| d.abs() < 1e-6)
                && elapsed < Duration::from_secs(120);
            if asserted {
                pass &= cell_pass;
            }
            lines.push(format!(
                "{name} delta={delta} [{}] iters={} converged={} |dPR|={} ratios: {} (bound {bound:.4}) {}",
                if !asserted {
                    "report only"
                } else if cell_pass {
                    "ok"
                } else {
                    "FAIL"
                },
                trace.records.len(),
                trace.converged,
                dpr.map_or("n/a".into(), |d| format!("{:.2e}", d.abs())),
                ratio_list(&trace),
                secs(elapsed)
            ));
            if name == "synthetic" && delta == 0.9 {
                synthetic_09 = Some(trace);
            }
        }
    }
    lines.extend(seed_robustness());
    let detail = format!(
        "inner_tol {BENCH_INNER_TOL:e}, hidden 6, init seed 0\n      {}",
        lines.join("\n      ")
    );
    (outcome(pass, detail), synthetic_09)
}

/// Reruns the asserted cells with other predictor init seeds. Printed, not gated:
/// the ratios move with the init seed because the inner problem has no attained
/// minimizer (labels sit on the ends of the predictor range).
fn seed_robustness() -> Vec<String> {
    let cells: Vec<(&str, DatasetSpec, f64, u64)> =
        [("fixture", fixture_spec()), ("synthetic", synthetic_spec())]
            .into_iter()
            .flat_map(|(name, spec)| {
                [0.9, 0.7].into_iter().flat_map(move |delta| {
                    let spec = spec.clone();
                    (1..10).map(move |seed| (name, spec.clone(), delta, seed))
                })
            })
            .collect();
    let results: Vec<(&str, f64, u64, Option<f64>)> = cells
        .par_iter()
        .map(|(name, spec, delta, seed)| {
            let ratio = bench_cell(spec, *delta, *seed)
                .0
                .ok()
                .and_then(|t| t.max_ratio_from(3));
            (*name, *delta, *seed, ratio)
        })
        .collect();
    let mut lines = vec!["init seeds 1..=9 (report only):".to_string()];
    let mut over = 0;
    for (name, delta) in [
        ("fixture", 0.9),
        ("fixture", 0.7),
        ("synthetic", 0.9),
        ("synthetic", 0.7),
    ] {
        let bound = (1.0 - delta) / delta + 0.05;
        let parts: Vec<String> = results
            .iter()
            .filter(|r| r.0 == name && r.1 == delta)
            .map(|&(_, _, seed, ratio)| match ratio {
                None => format!("s{seed}=-"),
                Some(r) if r > bound => {
                    over += 1;
                    format!("s{seed}={r:.3}!")
                }
                Some(r) => format!("s{seed}={r:.3}"),
            })
            .collect();
        lines.push(format!("  {name} delta={delta}: {}", parts.join(" ")));
    }
    lines.push(format!(
        "  {over}/{} reruns exceed the bound at t>=3",
        results.len()
    ));
    lines
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let r = gradcheck(100, 5);
    let elapsed = start.elapsed();
    outcome(
        r.cases == 100 && r.failures == 0 && elapsed < Duration::from_secs(10),
        format!(
            "{} cases, {} coordinates, {} failures (rel {GRADCHECK_REL_TOL:e}, abs floor \
             {GRADCHECK_ABS_TOL:e}), max rel err {:.2e}, {}",
            r.cases,
            r.coordinates,
            r.failures,
            r.max_rel_error,
            secs(elapsed)
        ),
    )
}

fn criterion_6() -> Outcome {
    const DRAWS: usize = 1_000_000;
    let mut pass = true;
    let mut worst_tv = 0.0f64;
    let mut worst_z = 0.0f64;
    for k in 0..20u64 {
        let seed = derive_indexed(derive_seed(99, "sampler-triples"), k);
        let mut rng = rng_from(seed);
        let mode = MODES[(k % 2) as usize];
        let base = random_base(&mut rng, mode);
        let delta = rng.random_range(0.05..0.95);
        let f = PredictorParams::init_scaled(base.dim(), 6, delta, 2.0, &mut rng).unwrap();
        let preds = base.predictions(&f);
        let d = rir_density_from_predictions(&base, &preds, delta, mode).unwrap();
        let sampler = RirSampler::with_rejection(&base, &preds, |v| v + delta, mode).unwrap();
        let (counts, accepted) = sampler.counts(DRAWS, derive_seed(seed, "draws"));
        let n = DRAWS as f64;
        let tv = 0.5
            * counts
                .iter()
                .zip(d.weights())
                .map(|(&c, &w)| (c as f64 / n - w).abs())
                .sum::<f64>();
        let tv_bound = 4.0 * (base.len() as f64 / n).sqrt();
        let c: f64 = base
            .weights()
            .iter()
            .zip(&preds)
            .map(|(w, p)| w * (p + delta))
            .sum();
        let p = 1.0 - c;
        let sigma = (p * (1.0 - p) / n).sqrt();
        let z = (accepted as f64 / n - p).abs() / sigma;
        worst_tv = worst_tv.max(tv / tv_bound);
        worst_z = worst_z.max(z);
        pass &= tv < tv_bound && z <= 3.0;
    }
    outcome(
        pass,
        format!(
            "20 triples x 10^6 draws, max TV / 4 sqrt(k/n) = {worst_tv:.3}, max acceptance \
             |z| = {worst_z:.2}"
        ),
    )
}

fn duplicated_base(rng: &mut Rng, mode: ShiftMode) -> EmpiricalBase {
    // 6 distinct feature vectors, each repeated with varying labels.
    let distinct: Vec<[f64; 2]> = (0..6).map(|i| [i as f64 * 0.5, (i % 2) as f64]).collect();
    let n = 40;
    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        xs.extend_from_slice(&distinct[i % distinct.len()]);
        ys.push(if rng.random_bool(0.4) { 1.0 } else { 0.0 });
    }
    let raw = EmpiricalBase::from_rows(&xs, 2, &ys, vec![1]).unwrap();
    prepare_base(&raw, 0.9, mode).unwrap()
}

fn criterion_7(mlp: Option<&RRMTrace>) -> Outcome {
    let mut fixed_err = 0.0f64;
    let mut tab_final = 0.0f64;
    for (k, &mode) in MODES.iter().enumerate() {
        let mut rng = rng_from(derive_indexed(31, k as u64));
        let base = duplicated_base(&mut rng, mode);
        let oracle = stable_oracle(&base);
        let one = tabular_rrm(&base, oracle.clone(), 0.9, mode, 1).unwrap();
        fixed_err = fixed_err
            .max(one.step_distances[0])
            .max(one.oracle_distances[0]);
        let init = TabularPredictor::from_fn(&base, &|x: &[f64]| 0.05 * (1.0 + x[0].sin()));
        let run = tabular_rrm(&base, init, 0.9, mode, 30).unwrap();
        tab_final = tab_final.max(*run.oracle_distances.last().unwrap());
    }
    let (mlp_pass, mlp_detail) = match mlp {
        None => (false, "MLP trace unavailable".to_string()),
        Some(t) => {
            let d: Vec<f64> = t.records.iter().filter_map(|r| r.dist_to_oracle).collect();
            let worst_rise = d
                .iter()
                .skip(2)
                .zip(d.iter().skip(3))
                .map(|(a, b)| b - a)
                .fold(f64::NEG_INFINITY, f64::max);
            let ok = d.len() == t.records.len() && (d.len() < 4 || worst_rise <= 1e-3);
            let shown: Vec<String> = d.iter().map(|v| format!("{v:.4e}")).collect();
            (ok, format!("MLP oracle distances [{}]", shown.join(", ")))
        }
    };
    outcome(
        fixed_err < 1e-12 && tab_final < 1e-6 && mlp_pass,
        format!(
            "one tabular step from f*: {fixed_err:.1e}, tabular RRM final: {tab_final:.1e}, {mlp_detail}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for k in 0..500u64 {
        let seed = derive_indexed(derive_seed(8, "w1-pairs"), k);
        let mut rng = rng_from(seed);
        let n = rng.random_range(2..=64);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let delta = rng.random_range(0.05..0.95);
        let base = EmpiricalBase::from_rows(&xs, 1, &vec![0.0; n], vec![]).unwrap();
        let [f, g, _] = certification_triple(1, delta, seed, k as usize).unwrap();
        let pf = base.predictions(&f);
        let pg = base.predictions(&g);
        let df = rir_density_from_predictions(&base, &pf, delta, ShiftMode::Full).unwrap();
        let dg = rir_density_from_predictions(&base, &pg, delta, ShiftMode::Full).unwrap();
        let pos = |i: usize| base.x(i)[0];
        let a: Vec<(f64, f64)> = df
            .weights()
            .iter()
            .enumerate()
            .map(|(i, &w)| (pos(i), w))
            .collect();
        let b: Vec<(f64, f64)> = dg
            .weights()
            .iter()
            .enumerate()
            .map(|(i, &w)| (pos(i), w))
            .collect();
        let w1 = w1_1d(&a, &b).unwrap();
        let chi2 = chi2_weights(dg.weights(), df.weights()).unwrap();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bound = 0.5 * (hi - lo) * chi2.sqrt();
        if w1 > bound * (1.0 + REL_TOL) + 1e-15 {
            violations += 1;
        }
        if bound > 0.0 {
            worst = worst.max(w1 / bound);
        }
    }
    outcome(
        violations == 0,
        format!("500 pairs, {violations} violations, max W1 / bound = {worst:.4}"),
    )
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (PathBuf::from(p.file_name().unwrap()), bytes)
        })
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (k, jobs) in ["1", "4"].iter().enumerate() {
        let out = tmp.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_performa"))
            .args([
                "--jobs",
                jobs,
                "sweep",
                "--certify",
                "--seed",
                "11",
                "--out",
            ])
            .arg(&out)
            .args([
                "--set",
                "name=determinism",
                "--set",
                "dataset.source.n_rows=400",
                "--set",
                "certify_pairs=40",
            ])
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(
                false,
                format!(
                    "sweep exited with {}: {}",
                    status.status,
                    String::from_utf8_lossy(&status.stderr)
                ),
            );
        }
        runs.push(snapshot(&out.join("determinism")));
    }
    let names: Vec<String> = runs[0]
        .iter()
        .map(|(p, _)| p.display().to_string())
        .collect();
    let has_all = names.iter().any(|n| n == "report.json")
        && names.iter().any(|n| n == "summary.csv")
        && names.iter().filter(|n| n.starts_with("trace_")).count() == 4;
    let same = runs[0] == runs[1];
    outcome(
        same && has_all,
        format!(
            "two sweeps (--jobs 1 and 4): {} files {}, {}",
            names.len(),
            if same { "byte-identical" } else { "DIFFER" },
            secs(start.elapsed())
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "counterexample oscillation", criterion_1()));
    let (c2, c3) = criteria_2_3();
    results.push((2, "chi-square sensitivity bound", c2));
    results.push((3, "norm-ratio bounds", c3));
    let (c4, mlp_trace) = criterion_4();
    results.push((4, "contraction and convergence", c4));
    results.push((5, "gradient audit", criterion_5()));
    results.push((6, "sampler matches density", criterion_6()));
    results.push((
        7,
        "stable oracle fixed point",
        criterion_7(mlp_trace.as_ref()),
    ));
    results.push((8, "W1 versus chi-square", criterion_8()));
    results.push((9, "sweep determinism", criterion_9()));

    println!();
    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "criterion {n} {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "\nacceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
