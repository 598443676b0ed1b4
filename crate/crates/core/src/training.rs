//! Repeated risk minimization (RRM) on RIR-shifted distributions.
//!
//! Each outer iteration deploys the current predictor, lets the population react
//! (`d_t = RIR(f_t)`), and retrains on the frozen `d_t`. Expectations are exact finite
//! sums over the base atoms unless Monte Carlo resampling is switched on.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distribution::{
    rir_density_from_predictions, AtomView, EmpiricalBase, RirSampler, ShiftMode,
};
use crate::predictor::{loss, weighted_l2, Predictor, PredictorParams};
use crate::rng::{derive_indexed, derive_seed, rng_from};
use crate::{Error, Result};

/// Successive predictors closer than this (in base-weighted L2) end the RRM loop.
pub const OUTER_TOL: f64 = 1e-7;
/// Functional distances below this are numerical noise; ratios involving them are absent.
pub const RATIO_NOISE_FLOOR: f64 = 1e-10;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerOptimizer {
    /// Full-batch gradient descent, optionally with Armijo backtracking.
    Gd,
    /// Limited-memory BFGS with Armijo backtracking; curvature memory persists across
    /// warm-started RRM iterations.
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RRMConfig {
    pub delta: f64,
    pub hidden_size: usize,
    pub max_rrm_iters: usize,
    /// Inner loop stops once two consecutive risks differ by less than this.
    pub inner_tol: f64,
    pub inner_max_steps: usize,
    pub learning_rate: f64,
    pub warm_start: bool,
    pub rng_seed: u64,
    pub mode: ShiftMode,
    pub optimizer: InnerOptimizer,
    pub backtracking: bool,
    pub lbfgs_memory: usize,
    /// Longest parameter-space step the inner solver may take; larger search
    /// directions are rescaled.
    pub max_step_norm: f64,
    /// Train on resampled draws instead of the exact induced weights.
    pub monte_carlo: bool,
    pub mc_draws: usize,
}

impl Default for RRMConfig {
    fn default() -> Self {
        Self {
            delta: 0.9,
            hidden_size: 6,
            max_rrm_iters: 30,
            inner_tol: 1e-9,
            inner_max_steps: 20_000,
            learning_rate: 0.1,
            warm_start: true,
            rng_seed: 0,
            mode: ShiftMode::Strategic,
            optimizer: InnerOptimizer::Lbfgs,
            backtracking: true,
            lbfgs_memory: 10,
            max_step_norm: 1.0,
            monte_carlo: false,
            mc_draws: 100_000,
        }
    }
}

impl RRMConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.inner_tol > 0.0) {
            return bad(format!(
                "inner_tol must be positive, got {}",
                self.inner_tol
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be at least 1".into());
        }
        if self.max_rrm_iters == 0 || self.inner_max_steps == 0 {
            return bad("iteration limits must be at least 1".into());
        }
        if !(self.max_step_norm > 0.0) {
            return bad(format!(
                "max_step_norm must be positive, got {}",
                self.max_step_norm
            ));
        }
        if self.optimizer == InnerOptimizer::Lbfgs && self.lbfgs_memory == 0 {
            return bad("lbfgs_memory must be at least 1".into());
        }
        if self.monte_carlo && self.mc_draws == 0 {
            return bad("mc_draws must be at least 1".into());
        }
        Ok(())
    }

    /// Contraction rate `sqrt(C eps) M / gamma = (1 - delta) / delta` of the RIR map with
    /// squared error.
    pub fn rate_bound(&self) -> f64 {
        (1.0 - self.delta) / self.delta
    }
}

/// Map raw {0, 1} labels to {0, 1 - delta} and, in strategic mode, build the
/// independent-product base.
pub fn prepare_base(raw: &EmpiricalBase, delta: f64, mode: ShiftMode) -> Result<EmpiricalBase> {
    let scaled = raw.with_labels_scaled(1.0 - delta);
    match mode {
        ShiftMode::Full => Ok(scaled),
        ShiftMode::Strategic => match scaled.layout() {
            Some(_) => Ok(scaled),
            None => scaled.strategic_product(),
        },
    }
}

fn risk_from_predictions(preds: &[f64], labels: &[f64], weights: &[f64]) -> f64 {
    preds
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((f, y), w)| w * loss(*f, *y))
        .sum()
}

fn accuracy_from_predictions(preds: &[f64], labels: &[f64], weights: &[f64], delta: f64) -> f64 {
    let thr = (1.0 - delta) / 2.0;
    let total: f64 = weights.iter().sum();
    let hit: f64 = preds
        .iter()
        .zip(labels)
        .zip(weights)
        .filter(|((f, y), _)| (**f >= thr) == (**y >= thr))
        .map(|(_, w)| w)
        .sum();
    hit / total
}

/// `E_{z ~ d} 0.5 (f(x) - y)^2`, exactly. With `d = RIR(f)` this is the performative
/// risk; with `d = RIR(f_t)` it is the decoupled objective retrained against.
pub fn performative_risk<P: Predictor + ?Sized>(f: &P, d: AtomView<'_>) -> f64 {
    let preds = d.base.predictions(f);
    risk_from_predictions(&preds, d.labels(), d.weights)
}

/// `PR(f) = E_{z ~ RIR(f)} loss(f(x), y)`.
pub fn coupled_performative_risk<P: Predictor + ?Sized>(
    f: &P,
    base: &EmpiricalBase,
    delta: f64,
    mode: ShiftMode,
) -> Result<f64> {
    let preds = base.predictions(f);
    let d = rir_density_from_predictions(base, &preds, delta, mode)?;
    Ok(risk_from_predictions(&preds, base.labels(), d.weights()))
}

/// Weighted fraction of atoms where `f(x) >= (1 - delta) / 2` agrees with the label being
/// `1 - delta`.
pub fn accuracy<P: Predictor + ?Sized>(f: &P, d: AtomView<'_>, delta: f64) -> f64 {
    let preds = d.base.predictions(f);
    accuracy_from_predictions(&preds, d.labels(), d.weights, delta)
}

/// Result of one inner minimization.
#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub params: PredictorParams,
    pub steps: usize,
    pub initial_risk: f64,
    pub final_risk: f64,
    /// Risk after every accepted step, starting with the initial risk.
    pub risk_history: Vec<f64>,
}

/// Inner solver. Holds L-BFGS curvature pairs between calls so warm-started RRM
/// iterations reuse them.
#[derive(Debug, Clone)]
pub struct Minimizer {
    optimizer: InnerOptimizer,
    learning_rate: f64,
    backtracking: bool,
    tol: f64,
    max_steps: usize,
    memory_len: usize,
    max_step_norm: f64,
    memory: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Minimizer {
    pub fn new(cfg: &RRMConfig) -> Self {
        Self {
            optimizer: cfg.optimizer,
            learning_rate: cfg.learning_rate,
            backtracking: cfg.backtracking,
            tol: cfg.inner_tol,
            max_steps: cfg.inner_max_steps,
            memory_len: cfg.lbfgs_memory.max(1),
            max_step_norm: cfg.max_step_norm,
            memory: VecDeque::new(),
        }
    }

    pub fn reset(&mut self) {
        self.memory.clear();
    }

    fn eval(p: &PredictorParams, d: AtomView<'_>) -> Result<(f64, Vec<f64>)> {
        let (r, g) = p.loss_and_gradient(d.features(), d.labels(), d.weights)?;
        Ok((r, g.into_vec()))
    }

    fn risk_only(p: &PredictorParams, d: AtomView<'_>) -> f64 {
        let preds = d.base.predictions(p);
        risk_from_predictions(&preds, d.labels(), d.weights)
    }

    /// Two-loop recursion: `-H g` from the stored curvature pairs.
    fn lbfgs_direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.memory.len());
        for (s, y, rho) in self.memory.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.memory.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in &mut q {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in self.memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// Minimize the risk on the frozen distribution `d`, starting at `init`. Stops when
    /// two consecutive risks differ by less than the tolerance or the step budget runs
    /// out. Returns a divergence error if the risk stops being finite.
    pub fn minimize(&mut self, d: AtomView<'_>, init: &PredictorParams) -> Result<MinimizeOutcome> {
        let mut params = init.clone();
        let (mut risk, mut grad) = Self::eval(&params, d)?;
        if !risk.is_finite() {
            return Err(Error::Divergence { step: 0 });
        }
        let initial_risk = risk;
        let mut history = vec![risk];
        let mut steps = 0;
        while steps < self.max_steps {
            steps += 1;
            let gnorm2 = dot(&grad, &grad);
            if gnorm2 == 0.0 {
                break;
            }
            let (mut dir, lbfgs_step) = match self.optimizer {
                InnerOptimizer::Lbfgs if !self.memory.is_empty() => {
                    (self.lbfgs_direction(&grad), true)
                }
                _ => (
                    grad.iter()
                        .map(|g| -self.learning_rate * g)
                        .collect::<Vec<_>>(),
                    false,
                ),
            };
            let mut slope = dot(&grad, &dir);
            if lbfgs_step && slope >= 0.0 {
                self.memory.clear();
                dir = grad.iter().map(|g| -self.learning_rate * g).collect();
                slope = dot(&grad, &dir);
            }
            let len = dot(&dir, &dir).sqrt();
            if len > self.max_step_norm {
                let k = self.max_step_norm / len;
                dir.iter_mut().for_each(|v| *v *= k);
                slope *= k;
            }
            let backtrack = self.backtracking || self.optimizer == InnerOptimizer::Lbfgs;
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let theta: Vec<f64> = params
                    .theta()
                    .iter()
                    .zip(&dir)
                    .map(|(t, d)| t + step * d)
                    .collect();
                let cand = params.with_theta(theta);
                let r = Self::risk_only(&cand, d);
                if !backtrack {
                    if !r.is_finite() {
                        return Err(Error::Divergence { step: steps });
                    }
                    accepted = Some((cand, r));
                    break;
                }
                if r.is_finite() && r <= risk + ARMIJO_C * step * slope {
                    accepted = Some((cand, r));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, new_risk)) = accepted else {
                if lbfgs_step {
                    // Stale curvature; fall back to a gradient step next round.
                    self.memory.clear();
                    continue;
                }
                break;
            };
            let (r_checked, new_grad) = Self::eval(&cand, d)?;
            debug_assert!(
                (r_checked - new_risk).abs() <= 1e-12 * new_risk.abs().max(1e-300) + 1e-18
            );
            if self.optimizer == InnerOptimizer::Lbfgs {
                let s: Vec<f64> = cand
                    .theta()
                    .iter()
                    .zip(params.theta())
                    .map(|(a, b)| a - b)
                    .collect();
                let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    if self.memory.len() == self.memory_len {
                        self.memory.pop_front();
                    }
                    self.memory.push_back((s, y, 1.0 / sy));
                }
            }
            let prev = risk;
            params = cand;
            risk = r_checked;
            grad = new_grad;
            history.push(risk);
            if (risk - prev).abs() < self.tol {
                break;
            }
        }
        Ok(MinimizeOutcome {
            params,
            steps,
            initial_risk,
            final_risk: risk,
            risk_history: history,
        })
    }
}

/// One-shot inner minimization with a fresh solver.
pub fn minimize_risk(
    d: AtomView<'_>,
    init: &PredictorParams,
    cfg: &RRMConfig,
) -> Result<MinimizeOutcome> {
    Minimizer::new(cfg).minimize(d, init)
}

/// Lookup-table predictor over a finite set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPredictor {
    table: HashMap<Vec<u64>, f64>,
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl TabularPredictor {
    pub fn from_fn<P: Predictor + ?Sized>(base: &EmpiricalBase, f: &P) -> Self {
        let table = (0..base.len())
            .map(|i| (key(base.x(i)), f.predict(base.x(i))))
            .collect();
        Self { table }
    }

    pub fn get(&self, x: &[f64]) -> Option<f64> {
        self.table.get(&key(x)).copied()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Exact risk minimizer over lookup tables on `d`: the `d`-weighted label mean of
    /// every feature vector. Vectors with no mass keep their previous value.
    pub fn minimize(&self, d: AtomView<'_>) -> Self {
        let base = d.base;
        let mut num = vec![0.0; base.n_distinct_x()];
        let mut den = vec![0.0; base.n_distinct_x()];
        for ((&g, &w), &y) in base.x_groups().iter().zip(d.weights).zip(base.labels()) {
            num[g] += w * y;
            den[g] += w;
        }
        let mut table = self.table.clone();
        for (i, &g) in base.x_groups().iter().enumerate() {
            if den[g] > 0.0 {
                table.insert(key(base.x(i)), num[g] / den[g]);
            }
        }
        Self { table }
    }
}

impl Predictor for TabularPredictor {
    /// Unknown feature vectors predict NaN.
    fn predict(&self, x: &[f64]) -> f64 {
        self.get(x).unwrap_or(f64::NAN)
    }
}

/// Bayes predictor `x -> E_base[Y | X = x]`. The RIR map reweights by a function of `x`
/// alone, so this is the stable point of RRM over all functions.
pub fn stable_oracle(base: &EmpiricalBase) -> TabularPredictor {
    TabularPredictor {
        table: HashMap::new(),
    }
    .minimize(base.view())
}

/// `||f - f*||` under the base weights.
pub fn oracle_distance<P: Predictor + ?Sized>(
    f: &P,
    oracle: &TabularPredictor,
    base: &EmpiricalBase,
) -> f64 {
    let a = base.predictions(f);
    let b = base.predictions(oracle);
    weighted_l2(&a, &b, base.weights())
}

/// RRM over lookup tables (a convex function class).
#[derive(Debug, Clone)]
pub struct TabularTrace {
    pub step_distances: Vec<f64>,
    pub oracle_distances: Vec<f64>,
    pub final_predictor: TabularPredictor,
}

pub fn tabular_rrm(
    base: &EmpiricalBase,
    init: TabularPredictor,
    delta: f64,
    mode: ShiftMode,
    iters: usize,
) -> Result<TabularTrace> {
    let oracle = stable_oracle(base);
    let mut current = init;
    let mut step_distances = Vec::with_capacity(iters);
    let mut oracle_distances = Vec::with_capacity(iters);
    for _ in 0..iters {
        let preds = base.predictions(&current);
        let d = rir_density_from_predictions(base, &preds, delta, mode)?;
        let next = current.minimize(d.view());
        let next_preds = base.predictions(&next);
        step_distances.push(weighted_l2(&next_preds, &preds, base.weights()));
        oracle_distances.push(oracle_distance(&next, &oracle, base));
        current = next;
    }
    Ok(TabularTrace {
        step_distances,
        oracle_distances,
        final_predictor: current,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RRMRecord {
    pub iter: usize,
    /// Risk of `f_t` on the distribution it was trained on (the base for `t = 1`).
    pub risk_pre_shift: f64,
    /// Performative risk of the deployed `f_t`, i.e. on `RIR(f_t)`.
    pub risk_post_shift: f64,
    /// Risk of the retrained `f_{t+1}` on the frozen `RIR(f_t)`.
    pub risk_post_retrain: f64,
    pub accuracy_pre: f64,
    pub accuracy_post: f64,
    /// `||f_{t+1} - f_t||` under the base weights.
    pub func_dist_to_prev: f64,
    pub contraction_ratio: Option<f64>,
    pub dist_to_oracle: Option<f64>,
    pub inner_steps: usize,
}

impl RRMRecord {
    /// Risk change of the fixed model caused by the distribution shift.
    pub fn shift_effect(&self) -> f64 {
        self.risk_post_shift - self.risk_pre_shift
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RRMTrace {
    pub delta: f64,
    pub hidden_size: usize,
    pub mode: ShiftMode,
    pub rate_bound: f64,
    pub records: Vec<RRMRecord>,
    pub converged: bool,
    /// Performative risk of the final predictor.
    pub final_performative_risk: f64,
    pub final_params: PredictorParams,
}

pub const TRACE_COLUMNS: [&str; 8] = [
    "iter",
    "risk_post_shift",
    "risk_post_retrain",
    "accuracy_pre",
    "accuracy_post",
    "func_dist",
    "contraction_ratio",
    "oracle_dist",
];

/// Shortest round-trip decimal form, so CSV values parse back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl RRMTrace {
    /// `|PR(f_T) - PR(f_{T-1})|` for the last deployed model and the final one.
    pub fn final_delta_pr(&self) -> Option<f64> {
        self.records
            .last()
            .map(|r| (self.final_performative_risk - r.risk_post_shift).abs())
    }

    /// Largest contraction ratio recorded at or after iteration `from`.
    pub fn max_ratio_from(&self, from: usize) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.iter >= from)
            .filter_map(|r| r.contraction_ratio)
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }

    pub fn csv_rows(&self) -> Vec<[String; 8]> {
        self.records
            .iter()
            .map(|r| {
                [
                    r.iter.to_string(),
                    fmt_f64(r.risk_post_shift),
                    fmt_f64(r.risk_post_retrain),
                    fmt_f64(r.accuracy_pre),
                    fmt_f64(r.accuracy_post),
                    fmt_f64(r.func_dist_to_prev),
                    fmt_opt(r.contraction_ratio),
                    fmt_opt(r.dist_to_oracle),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(TRACE_COLUMNS)?;
        for row in self.csv_rows() {
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn monte_carlo_weights(
    base: &EmpiricalBase,
    preds: &[f64],
    delta: f64,
    mode: ShiftMode,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = RirSampler::with_rejection(base, preds, |f| f + delta, mode)?;
    let (counts, _) = sampler.counts(draws, seed);
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / draws as f64)
        .collect())
}

fn check_labels(base: &EmpiricalBase, delta: f64) -> Result<()> {
    let cap = 1.0 - delta;
    if let Some(y) = base
        .labels()
        .iter()
        .find(|&&y| !(y >= 0.0 && y <= cap + 1e-12))
    {
        return Err(Error::InvalidParameter(format!(
            "label {y} outside [0, {cap}]; map labels with prepare_base first"
        )));
    }
    Ok(())
}

/// Run RRM from a seeded initialization.
pub fn rrm(base: &EmpiricalBase, cfg: &RRMConfig) -> Result<RRMTrace> {
    cfg.validate()?;
    let mut rng = rng_from(derive_seed(cfg.rng_seed, "init"));
    let init = PredictorParams::init(base.dim(), cfg.hidden_size, cfg.delta, &mut rng)?;
    rrm_from(base, cfg, init)
}

/// Run RRM starting from the given parameters.
pub fn rrm_from(base: &EmpiricalBase, cfg: &RRMConfig, init: PredictorParams) -> Result<RRMTrace> {
    cfg.validate()?;
    check_labels(base, cfg.delta)?;
    if init.input_dim() != base.dim() {
        return Err(Error::Shape {
            expected: base.dim(),
            got: init.input_dim(),
        });
    }
    let delta = cfg.delta;
    let mut cold_rng = rng_from(derive_seed(cfg.rng_seed, "cold-start"));
    let sampler_seed = derive_seed(cfg.rng_seed, "sampler");
    let oracle_preds = base.predictions(&stable_oracle(base));

    let mut minimizer = Minimizer::new(cfg);
    let mut params = init;
    let mut preds = base.predictions(&params);
    let mut records: Vec<RRMRecord> = Vec::with_capacity(cfg.max_rrm_iters);
    let mut prev_dist: Option<f64> = None;
    let mut prev_post_retrain = risk_from_predictions(&preds, base.labels(), base.weights());
    let mut converged = false;

    for t in 1..=cfg.max_rrm_iters {
        let induced = rir_density_from_predictions(base, &preds, delta, cfg.mode)?;
        let weights = if cfg.monte_carlo {
            monte_carlo_weights(
                base,
                &preds,
                delta,
                cfg.mode,
                cfg.mc_draws,
                derive_indexed(sampler_seed, t as u64),
            )?
        } else {
            induced.weights().to_vec()
        };
        let view = AtomView {
            base,
            weights: &weights,
        };
        let risk_post_shift = risk_from_predictions(&preds, base.labels(), &weights);
        let accuracy_pre = accuracy_from_predictions(&preds, base.labels(), &weights, delta);

        let start = if cfg.warm_start {
            params.clone()
        } else {
            minimizer.reset();
            PredictorParams::init(base.dim(), cfg.hidden_size, delta, &mut cold_rng)?
        };
        let outcome = minimizer.minimize(view, &start)?;
        let next = outcome.params;
        let next_preds = base.predictions(&next);

        let risk_post_retrain = risk_from_predictions(&next_preds, base.labels(), &weights);
        let accuracy_post = accuracy_from_predictions(&next_preds, base.labels(), &weights, delta);
        let dist = weighted_l2(&next_preds, &preds, base.weights());
        let ratio = match prev_dist {
            Some(p) if p >= RATIO_NOISE_FLOOR && dist >= RATIO_NOISE_FLOOR => Some(dist / p),
            _ => None,
        };
        let oracle = weighted_l2(&next_preds, &oracle_preds, base.weights());
        records.push(RRMRecord {
            iter: t,
            risk_pre_shift: prev_post_retrain,
            risk_post_shift,
            risk_post_retrain,
            accuracy_pre,
            accuracy_post,
            func_dist_to_prev: dist,
            contraction_ratio: ratio,
            dist_to_oracle: oracle.is_finite().then_some(oracle),
            inner_steps: outcome.steps,
        });
        prev_dist = Some(dist);
        prev_post_retrain = risk_post_retrain;
        params = next;
        preds = next_preds;
        if dist < OUTER_TOL {
            converged = true;
            break;
        }
    }
    let final_induced = rir_density_from_predictions(base, &preds, delta, cfg.mode)?;
    let final_performative_risk =
        risk_from_predictions(&preds, base.labels(), final_induced.weights());
    Ok(RRMTrace {
        delta,
        hidden_size: cfg.hidden_size,
        mode: cfg.mode,
        rate_bound: cfg.rate_bound(),
        records,
        converged,
        final_performative_risk,
        final_params: params,
    })
}
