//! The predictor family: a two-layer perceptron whose scaled-sigmoid head keeps every
//! prediction inside `[0, 1 - delta]`, together with its exact parameter gradient and the
//! weighted L2 distance between prediction functions.
//!
//! Parameters live in one flat vector laid out as `[w1 (hidden x input, row-major) | b1 |
//! w2 | b2]` so optimizers can treat them as a point in R^p.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// Anything that maps a feature vector to a scalar prediction.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> f64;

    /// Predictions for a row-major feature block.
    fn predict_rows(&self, features: &[f64], dim: usize) -> Vec<f64> {
        features
            .chunks_exact(dim)
            .map(|x| self.predict(x))
            .collect()
    }
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64,
{
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// `f(x) = c` for every `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn predict(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

/// A finite set of feature vectors with nonnegative weights.
#[derive(Debug, Clone, Copy)]
pub struct WeightedPoints<'a> {
    pub features: &'a [f64],
    pub dim: usize,
    pub weights: &'a [f64],
}

impl<'a> WeightedPoints<'a> {
    pub fn new(features: &'a [f64], dim: usize, weights: &'a [f64]) -> Result<Self> {
        if dim == 0 || features.len() != dim * weights.len() {
            return Err(Error::Shape {
                expected: dim * weights.len(),
                got: features.len(),
            });
        }
        Ok(Self {
            features,
            dim,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [f64], f64)> + 'a {
        self.features
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }
}

/// Squared-error loss `0.5 * (y_hat - y)^2`.
#[inline]
pub fn loss(y_hat: f64, y: f64) -> f64 {
    0.5 * (y_hat - y) * (y_hat - y)
}

/// Derivative of [`loss`] with respect to the prediction.
#[inline]
pub fn loss_grad(y_hat: f64, y: f64) -> f64 {
    y_hat - y
}

/// `sqrt(sum_i w_i (a_i - b_i)^2)` for two prediction vectors on the same atoms.
pub fn weighted_l2(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), weights.len());
    a.iter()
        .zip(b)
        .zip(weights)
        .map(|((p, q), w)| w * (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Weighted L2 distance between two prediction functions over a finite point set.
pub fn functional_distance<F, G>(f: &F, g: &G, points: WeightedPoints<'_>) -> f64
where
    F: Predictor + ?Sized,
    G: Predictor + ?Sized,
{
    points
        .iter()
        .map(|(x, w)| {
            let d = f.predict(x) - g.predict(x);
            w * d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Parameters of `f(x) = (1 - delta) * sigmoid(w2 . leaky(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsDocument", try_from = "ParamsDocument")]
pub struct PredictorParams {
    input_dim: usize,
    hidden_size: usize,
    theta: Vec<f64>,
    leaky_slope: f64,
    delta: f64,
}

impl PredictorParams {
    /// All-zero weights.
    pub fn zeros(input_dim: usize, hidden_size: usize, delta: f64) -> Result<Self> {
        let p = Self {
            input_dim,
            hidden_size,
            theta: vec![0.0; Self::param_count(input_dim, hidden_size)],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_size: usize,
        delta: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init_scaled(input_dim, hidden_size, delta, 1.0, rng)
    }

    /// Glorot-uniform draw with the bound multiplied by `scale`; biases drawn from the
    /// same range when `scale != 1` so that saturated regimes get probed too.
    pub fn init_scaled<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_size: usize,
        delta: f64,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_size, delta)?;
        let a1 = scale * (6.0 / (input_dim + hidden_size) as f64).sqrt();
        let a2 = scale * (6.0 / (hidden_size + 1) as f64).sqrt();
        let (h, d) = (hidden_size, input_dim);
        for v in &mut p.theta[..h * d] {
            *v = rng.random_range(-a1..=a1);
        }
        for v in &mut p.theta[h * d + h..h * d + 2 * h] {
            *v = rng.random_range(-a2..=a2);
        }
        if scale != 1.0 {
            for v in &mut p.theta[h * d..h * d + h] {
                *v = rng.random_range(-a1..=a1);
            }
            let last = p.theta.len() - 1;
            p.theta[last] = rng.random_range(-a2..=a2);
        }
        Ok(p)
    }

    pub fn from_parts(
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
        leaky_slope: f64,
        delta: f64,
    ) -> Result<Self> {
        let hidden_size = w1.len();
        let input_dim = w1.first().map_or(0, Vec::len);
        if input_dim == 0 || hidden_size == 0 {
            return Err(Error::Empty("first-layer weight matrix"));
        }
        let mut theta = Vec::with_capacity(Self::param_count(input_dim, hidden_size));
        for row in &w1 {
            if row.len() != input_dim {
                return Err(Error::Shape {
                    expected: input_dim,
                    got: row.len(),
                });
            }
            theta.extend_from_slice(row);
        }
        for (v, n) in [(&b1, hidden_size), (&w2, hidden_size)] {
            if v.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    got: v.len(),
                });
            }
            theta.extend_from_slice(v);
        }
        theta.push(b2);
        let p = Self {
            input_dim,
            hidden_size,
            theta,
            leaky_slope,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn param_count(input_dim: usize, hidden_size: usize) -> usize {
        hidden_size * input_dim + 2 * hidden_size + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_size == 0 {
            return Err(Error::InvalidParameter(
                "input_dim and hidden_size must be positive".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "leaky_slope must be positive, got {}",
                self.leaky_slope
            )));
        }
        let n = Self::param_count(self.input_dim, self.hidden_size);
        if self.theta.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: self.theta.len(),
            });
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn with_leaky_slope(mut self, slope: f64) -> Result<Self> {
        self.leaky_slope = slope;
        self.validate()?;
        Ok(self)
    }

    /// Upper end of the output range, `1 - delta`.
    pub fn output_cap(&self) -> f64 {
        1.0 - self.delta
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), self.theta.len(), "parameter vector length");
        Self {
            theta,
            ..self.clone()
        }
    }

    pub fn w1(&self) -> &[f64] {
        &self.theta[..self.hidden_size * self.input_dim]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.hidden_size * self.input_dim;
        &self.theta[o..o + self.hidden_size]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.hidden_size * (self.input_dim + 1);
        &self.theta[o..o + self.hidden_size]
    }

    pub fn b2(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    /// Pre-sigmoid output score; `z` receives the hidden pre-activations.
    #[inline]
    fn score_into(&self, x: &[f64], z: &mut [f64]) -> f64 {
        let d = self.input_dim;
        let w1 = self.w1();
        let b1 = self.b1();
        let w2 = self.w2();
        let mut s = self.b2();
        for j in 0..self.hidden_size {
            let row = &w1[j * d..(j + 1) * d];
            let mut zj = b1[j];
            for (w, xi) in row.iter().zip(x) {
                zj += w * xi;
            }
            z[j] = zj;
            let a = if zj > 0.0 { zj } else { self.leaky_slope * zj };
            s += w2[j] * a;
        }
        s
    }

    /// Checked forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(self.predict(x))
    }

    /// Gradient of `sum_i w_i * loss(f(x_i), y_i)` with respect to the flat parameters,
    /// returned together with the weighted loss itself.
    pub fn loss_and_gradient(
        &self,
        features: &[f64],
        labels: &[f64],
        weights: &[f64],
    ) -> Result<(f64, Gradient)> {
        let d = self.input_dim;
        let h = self.hidden_size;
        if features.len() != d * labels.len() {
            return Err(Error::Shape {
                expected: d * labels.len(),
                got: features.len(),
            });
        }
        if weights.len() != labels.len() {
            return Err(Error::Shape {
                expected: labels.len(),
                got: weights.len(),
            });
        }
        let cap = self.output_cap();
        let mut grad = vec![0.0; self.theta.len()];
        let mut z = vec![0.0; h];
        let mut total = 0.0;
        let (gw1_end, gb1_end, gw2_end) = (h * d, h * d + h, h * d + 2 * h);
        let w2 = self.w2().to_vec();
        for ((x, &y), &w) in features.chunks_exact(d).zip(labels).zip(weights) {
            if w == 0.0 {
                continue;
            }
            let s = self.score_into(x, &mut z);
            let sig = sigmoid(s);
            let f = cap * sig;
            total += w * loss(f, y);
            // d f / d s = cap * sig * (1 - sig)
            let gs = w * loss_grad(f, y) * cap * sig * (1.0 - sig);
            if gs == 0.0 {
                continue;
            }
            grad[gw2_end] += gs;
            for j in 0..h {
                let zj = z[j];
                let (a, da) = if zj > 0.0 {
                    (zj, 1.0)
                } else {
                    (self.leaky_slope * zj, self.leaky_slope)
                };
                grad[gb1_end + j] += gs * a;
                let gz = gs * w2[j] * da;
                grad[gw1_end + j] += gz;
                let row = &mut grad[j * d..(j + 1) * d];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += gz * xi;
                }
            }
        }
        Ok((
            total,
            Gradient {
                input_dim: d,
                hidden_size: h,
                theta: grad,
            },
        ))
    }

    /// `grad_theta sum_i w_i * loss(f(x_i), y_i)`.
    pub fn param_gradient(
        &self,
        features: &[f64],
        labels: &[f64],
        weights: &[f64],
    ) -> Result<Gradient> {
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidParameter("negative sample weight".into()));
        }
        self.loss_and_gradient(features, labels, weights)
            .map(|(_, g)| g)
    }
}

impl Predictor for PredictorParams {
    #[inline]
    fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim);
        // Stack buffer for the common small hidden sizes.
        let mut buf = [0.0f64; 64];
        let s = if self.hidden_size <= buf.len() {
            self.score_into(x, &mut buf[..self.hidden_size])
        } else {
            let mut z = vec![0.0; self.hidden_size];
            self.score_into(x, &mut z)
        };
        self.output_cap() * sigmoid(s)
    }
}

/// Gradient with the same flat layout as [`PredictorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    input_dim: usize,
    hidden_size: usize,
    theta: Vec<f64>,
}

impl Gradient {
    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }

    pub fn w1(&self) -> &[f64] {
        &self.theta[..self.hidden_size * self.input_dim]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.hidden_size * self.input_dim;
        &self.theta[o..o + self.hidden_size]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.hidden_size * (self.input_dim + 1);
        &self.theta[o..o + self.hidden_size]
    }

    pub fn b2(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// On-disk checkpoint layout; matrices are row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsDocument {
    version: u32,
    input_dim: usize,
    hidden_size: usize,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    leaky_slope: f64,
    delta: f64,
}

impl From<PredictorParams> for ParamsDocument {
    fn from(p: PredictorParams) -> Self {
        Self {
            version: PARAMS_FORMAT_VERSION,
            input_dim: p.input_dim,
            hidden_size: p.hidden_size,
            w1: p
                .w1()
                .chunks_exact(p.input_dim)
                .map(<[f64]>::to_vec)
                .collect(),
            b1: p.b1().to_vec(),
            w2: p.w2().to_vec(),
            b2: p.b2(),
            leaky_slope: p.leaky_slope,
            delta: p.delta,
        }
    }
}

impl TryFrom<ParamsDocument> for PredictorParams {
    type Error = Error;

    fn try_from(doc: ParamsDocument) -> Result<Self> {
        if doc.version != PARAMS_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported predictor format version {}",
                doc.version
            )));
        }
        let p = PredictorParams::from_parts(
            doc.w1,
            doc.b1,
            doc.w2,
            doc.b2,
            doc.leaky_slope,
            doc.delta,
        )?;
        if p.input_dim != doc.input_dim || p.hidden_size != doc.hidden_size {
            return Err(Error::Config(
                "declared dimensions disagree with weight shapes".into(),
            ));
        }
        Ok(p)
    }
}

/// Outcome of a finite-difference audit of [`PredictorParams::loss_and_gradient`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub cases: usize,
    pub coordinates: usize,
    pub failures: usize,
    /// Largest relative error among coordinates whose magnitude exceeds the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_REL_TOL: f64 = 1e-5;
pub const GRADCHECK_ABS_TOL: f64 = 1e-8;

/// Compare analytic gradients with central differences on `n_cases` seeded random
/// (parameters, weighted batch) pairs.
pub fn gradcheck(n_cases: usize, seed: u64) -> GradcheckReport {
    let mut report = GradcheckReport {
        cases: n_cases,
        coordinates: 0,
        failures: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    for case in 0..n_cases {
        let mut rng = crate::rng::rng_from(crate::rng::derive_indexed(seed, case as u64));
        let d = rng.random_range(1..=5);
        let h = rng.random_range(1..=8);
        let n = rng.random_range(1..=12);
        let delta = rng.random_range(0.05..0.95);
        let scale = [0.5, 1.5, 2.0][rng.random_range(0..3)];
        let p = PredictorParams::init_scaled(d, h, delta, scale, &mut rng)
            .expect("valid random parameters");
        // The loss is not differentiable where a hidden pre-activation crosses zero, and
        // a central difference straddling the kink measures neither one-sided slope.
        // Rows whose pre-activations sit within reach of the stencil are redrawn.
        let margin = 4.0 * GRADCHECK_STEP * 3.0;
        let mut z = vec![0.0; h];
        let mut xs = Vec::with_capacity(n * d);
        while xs.len() < n * d {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            p.score_into(&x, &mut z);
            if z.iter().all(|v| v.abs() > margin) {
                xs.extend_from_slice(&x);
            }
        }
        let ys: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<bool>() {
                    1.0 - delta
                } else {
                    0.0
                }
            })
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let ws: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let (_, g) = p
            .loss_and_gradient(&xs, &ys, &ws)
            .expect("consistent shapes");
        let risk = |theta: Vec<f64>| -> f64 {
            let q = p.with_theta(theta);
            xs.chunks_exact(d)
                .zip(&ys)
                .zip(&ws)
                .map(|((x, y), w)| w * loss(q.predict(x), *y))
                .sum()
        };
        for k in 0..p.theta.len() {
            let mut plus = p.theta.clone();
            let mut minus = p.theta.clone();
            plus[k] += GRADCHECK_STEP;
            minus[k] -= GRADCHECK_STEP;
            let fd = (risk(plus) - risk(minus)) / (2.0 * GRADCHECK_STEP);
            let a = g.as_slice()[k];
            let abs = (a - fd).abs();
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            let scale = a.abs().max(fd.abs());
            if scale > GRADCHECK_ABS_TOL {
                let rel = abs / scale;
                report.max_rel_error = report.max_rel_error.max(rel);
                if abs > GRADCHECK_ABS_TOL && rel >= GRADCHECK_REL_TOL {
                    report.failures += 1;
                }
            }
        }
    }
    report
}
