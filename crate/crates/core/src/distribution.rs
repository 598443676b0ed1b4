//! Finite base distributions and the Resample-if-Rejected (RIR) distribution map.
//!
//! A deployed predictor `f` rejects a sampled individual with probability
//! `g(f(x)) = f(x) + delta`; a rejected individual is redrawn once from the base. On a
//! finite base with weights `p_i` the induced weights are
//!
//! ```text
//! p_f(i) = p_i * (1 - g(f(x_i)) + C),    C = sum_j p_j g(f(x_j))
//! ```
//!
//! In strategic mode only the strategic coordinates are redrawn, which requires the base
//! to be a product of a strategic-profile marginal and an individual marginal; `C`
//! then depends on the individual's non-strategic block.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::predictor::{weighted_l2, Predictor, PredictorParams, WeightedPoints};
use crate::rng::{derive_indexed, rng_from, Rng};
use crate::{Error, Result};

/// Tolerance on the predictor output range check.
const RANGE_TOL: f64 = 1e-12;
/// Multiplicative slack used when comparing certified ratios against their bounds.
pub const CERT_REL_TOL: f64 = 1e-9;
/// Hidden size of the random predictors drawn during certification.
pub const CERT_HIDDEN_SIZE: usize = 6;
/// Multiples of the Glorot bound used for the random predictor draws.
pub const CERT_SCALES: [f64; 3] = [0.1, 1.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub x: Vec<f64>,
    pub y: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    /// Rejected individuals are replaced by a fresh draw from the base.
    Full,
    /// Rejected individuals redraw only their strategic coordinates.
    #[default]
    Strategic,
}

impl std::fmt::Display for ShiftMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShiftMode::Full => "full",
            ShiftMode::Strategic => "strategic",
        })
    }
}

impl std::str::FromStr for ShiftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ShiftMode::Full),
            "strategic" => Ok(ShiftMode::Strategic),
            other => Err(Error::Config(format!("unknown shift mode `{other}`"))),
        }
    }
}

/// Product structure of a base built for strategic resampling. Atom `r * n_profiles + s`
/// pairs strategic profile `s` with individual `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductLayout {
    profile_weights: Vec<f64>,
    row_weights: Vec<f64>,
}

impl ProductLayout {
    pub fn n_profiles(&self) -> usize {
        self.profile_weights.len()
    }

    pub fn n_rows(&self) -> usize {
        self.row_weights.len()
    }

    pub fn profile_weights(&self) -> &[f64] {
        &self.profile_weights
    }

    pub fn row_weights(&self) -> &[f64] {
        &self.row_weights
    }
}

/// Neumaier summation; plain summation of many equal weights drifts past 1e-12.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn bits_key(x: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 are the same feature value.
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Weighted finite atom set over (features, label) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalBase {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    weights: Vec<f64>,
    /// Atom -> index of its distinct feature vector.
    x_groups: Vec<usize>,
    n_groups: usize,
    strategic: Vec<usize>,
    nonstrategic: Vec<usize>,
    layout: Option<ProductLayout>,
}

impl EmpiricalBase {
    /// Build a base from weighted samples. Identical (x, y) atoms are merged; weights
    /// must sum to one within 1e-12.
    pub fn new(samples: Vec<WeightedSample>, strategic: Vec<usize>) -> Result<Self> {
        let dim = samples.first().ok_or(Error::Empty("base samples"))?.x.len();
        if dim == 0 {
            return Err(Error::Empty("feature vector"));
        }
        let mut features = Vec::with_capacity(samples.len() * dim);
        let mut labels = Vec::with_capacity(samples.len());
        let mut weights = Vec::with_capacity(samples.len());
        let mut seen: HashMap<(Vec<u64>, u64), usize> = HashMap::new();
        for s in samples {
            if s.x.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: s.x.len(),
                });
            }
            if !(s.w >= 0.0 && s.w.is_finite()) {
                return Err(Error::InvalidParameter(format!("atom weight {}", s.w)));
            }
            if !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite sample".into()));
            }
            let key = (bits_key(&s.x), (s.y + 0.0).to_bits());
            match seen.get(&key) {
                Some(&i) => weights[i] += s.w,
                None => {
                    seen.insert(key, labels.len());
                    features.extend_from_slice(&s.x);
                    labels.push(s.y);
                    weights.push(s.w);
                }
            }
        }
        let total = compensated_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "base weights sum to {total}, expected 1"
            )));
        }
        Self::assemble(dim, features, labels, weights, strategic, None)
    }

    /// Equal-weight atoms from row-major features.
    pub fn from_rows(
        features: &[f64],
        dim: usize,
        labels: &[f64],
        strategic: Vec<usize>,
    ) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Shape {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        let n = labels.len();
        let w = 1.0 / n as f64;
        let samples = features
            .chunks_exact(dim)
            .zip(labels)
            .map(|(x, &y)| WeightedSample {
                x: x.to_vec(),
                y,
                w,
            })
            .collect();
        Self::new(samples, strategic)
    }

    fn assemble(
        dim: usize,
        features: Vec<f64>,
        labels: Vec<f64>,
        weights: Vec<f64>,
        mut strategic: Vec<usize>,
        layout: Option<ProductLayout>,
    ) -> Result<Self> {
        strategic.sort_unstable();
        strategic.dedup();
        if let Some(&bad) = strategic.iter().find(|&&i| i >= dim) {
            return Err(Error::InvalidParameter(format!(
                "strategic index {bad} out of range for dimension {dim}"
            )));
        }
        let nonstrategic = (0..dim).filter(|i| !strategic.contains(i)).collect();
        let mut groups: HashMap<Vec<u64>, usize> = HashMap::new();
        let x_groups = features
            .chunks_exact(dim)
            .map(|x| {
                let next = groups.len();
                *groups.entry(bits_key(x)).or_insert(next)
            })
            .collect();
        Ok(Self {
            dim,
            features,
            labels,
            weights,
            x_groups,
            n_groups: groups.len(),
            strategic,
            nonstrategic,
            layout,
        })
    }

    /// The independent-product base used for strategic resampling: the empirical
    /// marginal of distinct strategic profiles times the empirical marginal of distinct
    /// individuals `(non-strategic block, label)`.
    pub fn strategic_product(&self) -> Result<Self> {
        let mut profiles: Vec<Vec<f64>> = Vec::new();
        let mut profile_w: Vec<f64> = Vec::new();
        let mut profile_ix: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut row_w: Vec<f64> = Vec::new();
        let mut row_ix: HashMap<(Vec<u64>, u64), usize> = HashMap::new();
        for i in 0..self.len() {
            let x = self.x(i);
            let xs: Vec<f64> = self.strategic.iter().map(|&k| x[k]).collect();
            let xf: Vec<f64> = self.nonstrategic.iter().map(|&k| x[k]).collect();
            let w = self.weights[i];
            let key = bits_key(&xs);
            let s = *profile_ix.entry(key).or_insert_with(|| {
                profiles.push(xs);
                profile_w.push(0.0);
                profiles.len() - 1
            });
            profile_w[s] += w;
            let key = (bits_key(&xf), (self.labels[i] + 0.0).to_bits());
            let y = self.labels[i];
            let r = *row_ix.entry(key).or_insert_with(|| {
                rows.push((xf, y));
                row_w.push(0.0);
                rows.len() - 1
            });
            row_w[r] += w;
        }
        let n = rows.len() * profiles.len();
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut x = vec![0.0; self.dim];
        for ((xf, y), wr) in rows.iter().zip(&row_w) {
            for (k, &c) in self.nonstrategic.iter().enumerate() {
                x[c] = xf[k];
            }
            for (xs, ws) in profiles.iter().zip(&profile_w) {
                for (k, &c) in self.strategic.iter().enumerate() {
                    x[c] = xs[k];
                }
                features.extend_from_slice(&x);
                labels.push(*y);
                weights.push(wr * ws);
            }
        }
        Self::assemble(
            self.dim,
            features,
            labels,
            weights,
            self.strategic.clone(),
            Some(ProductLayout {
                profile_weights: profile_w,
                row_weights: row_w,
            }),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn strategic_idx(&self) -> &[usize] {
        &self.strategic
    }

    pub fn nonstrategic_idx(&self) -> &[usize] {
        &self.nonstrategic
    }

    pub fn layout(&self) -> Option<&ProductLayout> {
        self.layout.as_ref()
    }

    /// Distinct-feature-vector index of every atom.
    pub fn x_groups(&self) -> &[usize] {
        &self.x_groups
    }

    pub fn n_distinct_x(&self) -> usize {
        self.n_groups
    }

    pub fn points(&self) -> WeightedPoints<'_> {
        WeightedPoints {
            features: &self.features,
            dim: self.dim,
            weights: &self.weights,
        }
    }

    pub fn view(&self) -> AtomView<'_> {
        AtomView {
            base: self,
            weights: &self.weights,
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = WeightedSample> + '_ {
        (0..self.len()).map(|i| WeightedSample {
            x: self.x(i).to_vec(),
            y: self.labels[i],
            w: self.weights[i],
        })
    }

    /// Same atoms with every label multiplied by `factor` (label 1 becomes `1 - delta`).
    pub fn with_labels_scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for y in &mut out.labels {
            *y *= factor;
        }
        out
    }

    pub fn predictions<P: Predictor + ?Sized>(&self, f: &P) -> Vec<f64> {
        f.predict_rows(&self.features, self.dim)
    }
}

/// A base's atoms under an alternative weighting (an induced or resampled distribution).
#[derive(Debug, Clone, Copy)]
pub struct AtomView<'a> {
    pub base: &'a EmpiricalBase,
    pub weights: &'a [f64],
}

impl<'a> AtomView<'a> {
    pub fn points(&self) -> WeightedPoints<'a> {
        WeightedPoints {
            features: &self.base.features,
            dim: self.base.dim,
            weights: self.weights,
        }
    }

    pub fn labels(&self) -> &'a [f64] {
        &self.base.labels
    }

    pub fn features(&self) -> &'a [f64] {
        &self.base.features
    }
}

/// RIR-shifted reweighting of a base, with its rejection-mass constants.
#[derive(Debug, Clone)]
pub struct InducedDistribution<'a> {
    base: &'a EmpiricalBase,
    weights: Vec<f64>,
    c_theta: Vec<f64>,
    mode: ShiftMode,
}

impl<'a> InducedDistribution<'a> {
    pub fn base(&self) -> &'a EmpiricalBase {
        self.base
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `C_theta` in full mode (one entry), or `C_theta(x_f)` per individual in strategic
    /// mode.
    pub fn c_theta(&self) -> &[f64] {
        &self.c_theta
    }

    pub fn mode(&self) -> ShiftMode {
        self.mode
    }

    pub fn view(&self) -> AtomView<'_> {
        AtomView {
            base: self.base,
            weights: &self.weights,
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = WeightedSample> + '_ {
        (0..self.base.len()).map(|i| WeightedSample {
            x: self.base.x(i).to_vec(),
            y: self.base.labels[i],
            w: self.weights[i],
        })
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    Ok(())
}

fn check_range(preds: &[f64], delta: f64) -> Result<()> {
    let upper = 1.0 - delta;
    for (atom, &value) in preds.iter().enumerate() {
        if !(value >= -RANGE_TOL && value <= upper + RANGE_TOL) {
            return Err(Error::Domain { atom, value, upper });
        }
    }
    Ok(())
}

fn require_layout(base: &EmpiricalBase) -> Result<&ProductLayout> {
    base.layout.as_ref().ok_or_else(|| {
        Error::InvalidParameter(
            "strategic mode needs a product-form base (see EmpiricalBase::strategic_product)"
                .into(),
        )
    })
}

/// Induced distribution for an arbitrary rejection probability `g`, given the
/// predictor's outputs on every atom.
pub fn rir_density_with<'a, G>(
    base: &'a EmpiricalBase,
    preds: &[f64],
    g: G,
    mode: ShiftMode,
) -> Result<InducedDistribution<'a>>
where
    G: Fn(f64) -> f64,
{
    if preds.len() != base.len() {
        return Err(Error::Shape {
            expected: base.len(),
            got: preds.len(),
        });
    }
    let reject: Vec<f64> = preds.iter().map(|&f| g(f).clamp(0.0, 1.0)).collect();
    let (weights, c_theta) = match mode {
        ShiftMode::Full => {
            let c: f64 = base.weights.iter().zip(&reject).map(|(w, r)| w * r).sum();
            let weights = base
                .weights
                .iter()
                .zip(&reject)
                .map(|(w, r)| w * (1.0 - r + c))
                .collect();
            (weights, vec![c])
        }
        ShiftMode::Strategic => {
            let layout = require_layout(base)?;
            let ns = layout.n_profiles();
            let mut weights = Vec::with_capacity(base.len());
            let mut cs = Vec::with_capacity(layout.n_rows());
            for r in 0..layout.n_rows() {
                let block = &reject[r * ns..(r + 1) * ns];
                let c: f64 = layout
                    .profile_weights
                    .iter()
                    .zip(block)
                    .map(|(p, g)| p * g)
                    .sum();
                for (s, g) in block.iter().enumerate() {
                    weights.push(base.weights[r * ns + s] * (1.0 - g + c));
                }
                cs.push(c);
            }
            (weights, cs)
        }
    };
    Ok(InducedDistribution {
        base,
        weights,
        c_theta,
        mode,
    })
}

/// RIR induced distribution with `g(f) = f + delta`, from precomputed predictions.
pub fn rir_density_from_predictions<'a>(
    base: &'a EmpiricalBase,
    preds: &[f64],
    delta: f64,
    mode: ShiftMode,
) -> Result<InducedDistribution<'a>> {
    check_delta(delta)?;
    check_range(preds, delta)?;
    rir_density_with(base, preds, |f| f + delta, mode)
}

/// RIR induced distribution of `f` with rejection probability `f(x) + delta`.
pub fn rir_density<'a, P: Predictor + ?Sized>(
    base: &'a EmpiricalBase,
    f: &P,
    delta: f64,
    mode: ShiftMode,
) -> Result<InducedDistribution<'a>> {
    let preds = base.predictions(f);
    rir_density_from_predictions(base, &preds, delta, mode)
}

/// Outcome of one RIR draw: the emitted atom and whether the first draw was kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub atom: usize,
    pub accepted: bool,
}

/// Simulates the RIR procedure itself: draw, toss a coin with head probability
/// `1 - g(f(x))`, and on tails redraw exactly once.
#[derive(Debug, Clone)]
pub struct RirSampler<'a> {
    base: &'a EmpiricalBase,
    reject: Vec<f64>,
    mode: ShiftMode,
    atoms: Option<WeightedIndex<f64>>,
    profiles: Option<WeightedIndex<f64>>,
    rows: Option<WeightedIndex<f64>>,
}

impl<'a> RirSampler<'a> {
    pub fn new<P: Predictor + ?Sized>(
        base: &'a EmpiricalBase,
        f: &P,
        delta: f64,
        mode: ShiftMode,
    ) -> Result<Self> {
        check_delta(delta)?;
        let preds = base.predictions(f);
        check_range(&preds, delta)?;
        Self::with_rejection(base, &preds, |f| f + delta, mode)
    }

    /// Sampler for an arbitrary rejection probability; outputs of `g` are clamped to
    /// `[0, 1]`.
    pub fn with_rejection<G: Fn(f64) -> f64>(
        base: &'a EmpiricalBase,
        preds: &[f64],
        g: G,
        mode: ShiftMode,
    ) -> Result<Self> {
        if preds.len() != base.len() {
            return Err(Error::Shape {
                expected: base.len(),
                got: preds.len(),
            });
        }
        let reject = preds.iter().map(|&f| g(f).clamp(0.0, 1.0)).collect();
        let weighted = |w: &[f64]| {
            WeightedIndex::new(w.iter().copied())
                .map_err(|e| Error::InvalidParameter(format!("sampling weights: {e}")))
        };
        let (atoms, profiles, rows) = match mode {
            ShiftMode::Full => (Some(weighted(&base.weights)?), None, None),
            ShiftMode::Strategic => {
                let layout = require_layout(base)?;
                (
                    None,
                    Some(weighted(&layout.profile_weights)?),
                    Some(weighted(&layout.row_weights)?),
                )
            }
        };
        Ok(Self {
            base,
            reject,
            mode,
            atoms,
            profiles,
            rows,
        })
    }

    pub fn draw(&self, rng: &mut Rng) -> Draw {
        match self.mode {
            ShiftMode::Full => {
                let atoms = self.atoms.as_ref().expect("full-mode index");
                let i = atoms.sample(rng);
                if rng.random::<f64>() >= self.reject[i] {
                    Draw {
                        atom: i,
                        accepted: true,
                    }
                } else {
                    Draw {
                        atom: atoms.sample(rng),
                        accepted: false,
                    }
                }
            }
            ShiftMode::Strategic => {
                let profiles = self.profiles.as_ref().expect("profile index");
                let rows = self.rows.as_ref().expect("row index");
                let ns = self.base.layout.as_ref().map_or(1, |l| l.n_profiles());
                let r = rows.sample(rng);
                let i = r * ns + profiles.sample(rng);
                if rng.random::<f64>() >= self.reject[i] {
                    Draw {
                        atom: i,
                        accepted: true,
                    }
                } else {
                    Draw {
                        atom: r * ns + profiles.sample(rng),
                        accepted: false,
                    }
                }
            }
        }
    }

    /// Infinite seeded stream of draws.
    pub fn stream(&self, seed: u64) -> impl Iterator<Item = Draw> + '_ {
        let mut rng = rng_from(seed);
        std::iter::repeat_with(move || self.draw(&mut rng))
    }

    /// Per-atom counts and number of accepted first draws over `n` draws.
    pub fn counts(&self, n: usize, seed: u64) -> (Vec<u64>, u64) {
        let mut counts = vec![0u64; self.base.len()];
        let mut accepted = 0;
        for d in self.stream(seed).take(n) {
            counts[d.atom] += 1;
            accepted += u64::from(d.accepted);
        }
        (counts, accepted)
    }
}

/// Seeded stream of RIR draws as weighted samples (weight `1 / n_draws` each is left to
/// the caller; `w` carries the base weight of the emitted atom).
pub fn rir_sample<'a, P: Predictor + ?Sized>(
    base: &'a EmpiricalBase,
    f: &P,
    delta: f64,
    mode: ShiftMode,
    seed: u64,
) -> Result<impl Iterator<Item = (WeightedSample, bool)> + 'a> {
    let sampler = RirSampler::new(base, f, delta, mode)?;
    let mut rng = rng_from(seed);
    Ok(std::iter::repeat_with(move || {
        let d = sampler.draw(&mut rng);
        (
            WeightedSample {
                x: base.x(d.atom).to_vec(),
                y: base.labels[d.atom],
                w: base.weights[d.atom],
            },
            d.accepted,
        )
    }))
}

/// Pearson chi-square `sum (p - q)^2 / q` between two weight vectors.
pub fn chi2_weights(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Support(format!(
            "{} atoms versus {} atoms",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if b > 0.0 {
            total += (a - b) * (a - b) / b;
        } else if a > 0.0 {
            return Err(Error::Support(format!(
                "atom {i} has mass {a} but zero reference mass"
            )));
        }
    }
    Ok(total)
}

fn same_support(a: &EmpiricalBase, b: &EmpiricalBase) -> bool {
    std::ptr::eq(a, b) || (a.features == b.features && a.labels == b.labels)
}

/// `chi2(d1 || d2) = sum_x (p1(x) - p2(x))^2 / p2(x)` over the feature marginal. The
/// RIR map leaves `p(y | x)` unchanged, so this equals the divergence over (x, y).
pub fn chi2(d1: &InducedDistribution<'_>, d2: &InducedDistribution<'_>) -> Result<f64> {
    if !same_support(d1.base, d2.base) {
        return Err(Error::Support("different base atoms".into()));
    }
    let base = d1.base;
    let mut m1 = vec![0.0; base.n_groups];
    let mut m2 = vec![0.0; base.n_groups];
    for ((&g, &a), &b) in base.x_groups.iter().zip(&d1.weights).zip(&d2.weights) {
        m1[g] += a;
        m2[g] += b;
    }
    chi2_weights(&m1, &m2)
}

/// `||f - g||^2_base / ||f - g||^2_pivot`, where the denominator is weighted by the
/// distribution the pivot predictor induces.
pub fn norm_ratio<F, G, Q>(
    f: &F,
    g: &G,
    base: &EmpiricalBase,
    pivot: &Q,
    delta: f64,
    mode: ShiftMode,
) -> Result<f64>
where
    F: Predictor + ?Sized,
    G: Predictor + ?Sized,
    Q: Predictor + ?Sized,
{
    let pf = base.predictions(f);
    let pg = base.predictions(g);
    let induced = rir_density(base, pivot, delta, mode)?;
    norm_ratio_from_predictions(&pf, &pg, base.weights(), induced.weights())
}

fn norm_ratio_from_predictions(
    pf: &[f64],
    pg: &[f64],
    base_w: &[f64],
    pivot_w: &[f64],
) -> Result<f64> {
    let num = weighted_l2(pf, pg, base_w).powi(2);
    let den = weighted_l2(pf, pg, pivot_w).powi(2);
    if den == 0.0 {
        return Err(Error::DegenerateRatio);
    }
    Ok(num / den)
}

/// Exact Wasserstein-1 distance between two weighted point sets on the real line,
/// `integral |F_a(t) - F_b(t)| dt`. Weights are normalized by their totals.
pub fn w1_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("1-D distribution"));
    }
    let total = |s: &[(f64, f64)]| -> Result<f64> {
        let t: f64 = s.iter().map(|p| p.1).sum();
        if !(t > 0.0) || s.iter().any(|p| p.1 < 0.0 || !p.0.is_finite()) {
            return Err(Error::InvalidParameter(
                "1-D atoms need finite positions and nonnegative mass".into(),
            ));
        }
        Ok(t)
    };
    let (ta, tb) = (total(a)?, total(b)?);
    // (position, signed mass) events, swept left to right.
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .map(|&(x, w)| (x, w / ta))
        .chain(b.iter().map(|&(x, w)| (x, -w / tb)))
        .collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut cdf_gap = 0.0;
    let mut dist = 0.0;
    for pair in events.windows(2) {
        cdf_gap += pair[0].1;
        dist += cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(dist)
}

/// Certified sensitivity statistics of the RIR map against its theoretical constants:
/// chi-square sensitivity `1 / delta` and norm-ratio bounds `c = 1 / (2 - delta)`,
/// `C = 1 / delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub delta: f64,
    pub mode: ShiftMode,
    pub n_pairs: usize,
    pub n_atoms: usize,
    pub max_chi2_ratio: f64,
    pub epsilon_bound: f64,
    pub max_norm_ratio: f64,
    pub min_norm_ratio: f64,
    pub c_bound: f64,
    #[serde(rename = "C_bound")]
    pub upper_c_bound: f64,
    pub chi2_violations: usize,
    pub norm_ratio_violations: usize,
    pub all_pass: bool,
}

/// One sampled predictor pair (plus pivot) and its certified quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCheck {
    pub chi2: f64,
    pub norm_sq: f64,
    pub chi2_ratio: f64,
    pub norm_ratio: f64,
}

/// Draw the `index`-th random predictor triple (f, f', pivot) for certification.
pub fn certification_triple(
    dim: usize,
    delta: f64,
    seed: u64,
    index: usize,
) -> Result<[PredictorParams; 3]> {
    let mut rng = rng_from(derive_indexed(seed, index as u64));
    let mut draw = |k: usize| {
        let scale = CERT_SCALES[(index + k) % CERT_SCALES.len()];
        PredictorParams::init_scaled(dim, CERT_HIDDEN_SIZE, delta, scale, &mut rng)
    };
    Ok([draw(0)?, draw(1)?, draw(2)?])
}

/// Chi-square ratio and norm ratio for one triple.
pub fn check_pair<F, G, Q>(
    base: &EmpiricalBase,
    f: &F,
    f_prime: &G,
    pivot: &Q,
    delta: f64,
    mode: ShiftMode,
) -> Result<PairCheck>
where
    F: Predictor + ?Sized,
    G: Predictor + ?Sized,
    Q: Predictor + ?Sized,
{
    let pf = base.predictions(f);
    let pf2 = base.predictions(f_prime);
    let pq = base.predictions(pivot);
    let d = rir_density_from_predictions(base, &pf, delta, mode)?;
    let d2 = rir_density_from_predictions(base, &pf2, delta, mode)?;
    let dq = rir_density_from_predictions(base, &pq, delta, mode)?;
    let chi2 = chi2(&d2, &d)?;
    let norm_sq = weighted_l2(&pf, &pf2, base.weights()).powi(2);
    if norm_sq == 0.0 {
        return Err(Error::DegenerateRatio);
    }
    let norm_ratio = norm_ratio_from_predictions(&pf, &pf2, base.weights(), dq.weights())?;
    Ok(PairCheck {
        chi2,
        norm_sq,
        chi2_ratio: chi2 / norm_sq,
        norm_ratio,
    })
}

/// Sample `n_pairs` seeded predictor pairs and check the chi-square sensitivity and the
/// bounded norm ratio of the RIR map on `base`. Pairs run in parallel on per-pair RNG
/// streams, so the report does not depend on scheduling.
pub fn certify_sensitivity(
    base: &EmpiricalBase,
    delta: f64,
    n_pairs: usize,
    mode: ShiftMode,
    seed: u64,
) -> Result<SensitivityReport> {
    if n_pairs == 0 {
        return Err(Error::InvalidParameter("n_pairs must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "certification needs delta in (0, 1), got {delta}"
        )));
    }
    let checks: Vec<PairCheck> = (0..n_pairs)
        .into_par_iter()
        .map(|k| {
            let [f, f2, pivot] = certification_triple(base.dim(), delta, seed, k)?;
            check_pair(base, &f, &f2, &pivot, delta, mode)
        })
        .collect::<Result<_>>()?;
    Ok(summarize(delta, mode, base.len(), &checks))
}

pub(crate) fn summarize(
    delta: f64,
    mode: ShiftMode,
    n_atoms: usize,
    checks: &[PairCheck],
) -> SensitivityReport {
    let epsilon_bound = 1.0 / delta;
    let c_bound = 1.0 / (2.0 - delta);
    let upper_c_bound = 1.0 / delta;
    let mut max_chi2_ratio = 0.0f64;
    let mut max_norm_ratio = f64::NEG_INFINITY;
    let mut min_norm_ratio = f64::INFINITY;
    let mut chi2_violations = 0;
    let mut norm_ratio_violations = 0;
    for c in checks {
        max_chi2_ratio = max_chi2_ratio.max(c.chi2_ratio);
        max_norm_ratio = max_norm_ratio.max(c.norm_ratio);
        min_norm_ratio = min_norm_ratio.min(c.norm_ratio);
        if c.chi2_ratio > epsilon_bound * (1.0 + CERT_REL_TOL) {
            chi2_violations += 1;
        }
        if c.norm_ratio < c_bound * (1.0 - CERT_REL_TOL)
            || c.norm_ratio > upper_c_bound * (1.0 + CERT_REL_TOL)
        {
            norm_ratio_violations += 1;
        }
    }
    let all_pass = max_chi2_ratio <= epsilon_bound * (1.0 + CERT_REL_TOL)
        && min_norm_ratio >= c_bound * (1.0 - CERT_REL_TOL)
        && max_norm_ratio <= upper_c_bound * (1.0 + CERT_REL_TOL);
    SensitivityReport {
        delta,
        mode,
        n_pairs: checks.len(),
        n_atoms,
        max_chi2_ratio,
        epsilon_bound,
        max_norm_ratio,
        min_norm_ratio,
        c_bound,
        upper_c_bound,
        chi2_violations,
        norm_ratio_violations,
        all_pass,
    }
}
