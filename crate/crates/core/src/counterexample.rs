//! A W1-sensitive distribution map on which RRM never converges.
//!
//! Predictors are `f_theta(x) = (tanh(theta) + 2) x / eps` on `x in (0, 3 eps]` with a
//! uniform base. Deploying `f_theta` moves all mass to the point `eps (tanh(theta) + 2)`,
//! and the loss is
//! `l(f, y) = -15 gamma / 4 (f - y) + gamma / 2 f^2 + gamma / 2 y^2 + gamma (15/4)^2`.
//! Retraining solves `(tanh(theta') + 2)(tanh(theta) + 2) = 15 / 4`, an involution in
//! `tanh(theta)`, so every orbit except the fixed point has period two.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::distribution::w1_1d;
use crate::rng::rng_from;
use crate::{Error, Result};

/// Midpoint nodes for norms under the uniform base.
pub const QUAD_POINTS: usize = 100_000;
const TARGET: f64 = 15.0 / 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CEConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub theta0: f64,
    pub n_steps: usize,
    /// Norm-ratio constant checked against; anything above 3 works.
    pub norm_ratio_c: f64,
}

impl Default for CEConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            epsilon: 1e-4,
            theta0: (-0.5f64).atanh(),
            n_steps: 100,
            norm_ratio_c: 3.01,
        }
    }
}

impl CEConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !self.theta0.is_finite() {
            return Err(Error::Config("theta0 must be finite".into()));
        }
        Ok(())
    }

    /// `sup |l'(f)|` over reachable predictions `f in (0, 9]`: `gamma * max(15/4, 9 - 15/4)`.
    pub fn m_bound(&self) -> f64 {
        21.0 * self.gamma / 4.0
    }

    /// `sqrt(C eps) M / gamma`, the constant that would certify contraction under
    /// chi-square sensitivity.
    pub fn rate_constant(&self) -> f64 {
        (self.norm_ratio_c * self.epsilon).sqrt() * self.m_bound() / self.gamma
    }
}

/// `tanh(theta*)` of the unique fixed point, the positive root of `(t + 2)^2 = 15/4`.
pub fn fixed_point_tanh() -> f64 {
    15f64.sqrt() / 2.0 - 2.0
}

pub fn predict(theta: f64, x: f64, eps: f64) -> f64 {
    (theta.tanh() + 2.0) * x / eps
}

/// Location of the point mass induced by deploying `f_theta`.
pub fn induced_point(theta: f64, eps: f64) -> f64 {
    eps * (theta.tanh() + 2.0)
}

pub fn loss(f: f64, y: f64, gamma: f64) -> f64 {
    -TARGET * gamma * (f - y) + 0.5 * gamma * f * f + 0.5 * gamma * y * y + gamma * TARGET * TARGET
}

pub fn loss_grad(f: f64, gamma: f64) -> f64 {
    gamma * (f - TARGET)
}

/// `tanh` of the retrained parameter: the minimizer of the loss at the induced point.
pub fn update_tanh(t: f64) -> f64 {
    TARGET / (t + 2.0) - 2.0
}

/// One exact RRM step.
pub fn ce_rrm_step(theta: f64) -> Result<f64> {
    let u = update_tanh(theta.tanh());
    if !(u > -1.0 && u < 1.0) {
        return Err(Error::Construction(u));
    }
    Ok(u.atanh())
}

/// `||f_a - f_b||` under the uniform base on `(0, 3 eps]`, by midpoint quadrature.
pub fn quadrature_distance(theta_a: f64, theta_b: f64, eps: f64) -> f64 {
    let h = 3.0 * eps / QUAD_POINTS as f64;
    let sum: f64 = (0..QUAD_POINTS)
        .map(|i| {
            let x = (i as f64 + 0.5) * h;
            let d = predict(theta_a, x, eps) - predict(theta_b, x, eps);
            d * d
        })
        .sum();
    (sum / QUAD_POINTS as f64).sqrt()
}

/// Closed form of the same distance: `sqrt(3) |tanh(a) - tanh(b)|`.
pub fn closed_form_distance(theta_a: f64, theta_b: f64) -> f64 {
    3f64.sqrt() * (theta_a.tanh() - theta_b.tanh()).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CERun {
    pub thetas: Vec<f64>,
    /// `||f_{theta_{t+1}} - f_{theta_t}||` for every step.
    pub step_distances: Vec<f64>,
}

impl CERun {
    pub fn tanhs(&self) -> impl Iterator<Item = f64> + '_ {
        self.thetas.iter().map(|t| t.tanh())
    }

    pub fn min_step_distance(&self) -> Option<f64> {
        self.step_distances.iter().copied().reduce(f64::min)
    }

    /// Largest deviation from the alternating orbit `tanh(theta_t) = (-1)^(t+1) / 2`.
    pub fn max_orbit_error(&self) -> f64 {
        self.tanhs()
            .enumerate()
            .map(|(t, v)| {
                let want = if t % 2 == 0 { -0.5 } else { 0.5 };
                (v - want).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(["step", "theta", "tanh_theta", "step_distance"])?;
        for (t, theta) in self.thetas.iter().enumerate() {
            let dist = t
                .checked_sub(1)
                .map(|k| format!("{}", self.step_distances[k]))
                .unwrap_or_default();
            out.write_record([
                t.to_string(),
                format!("{theta}"),
                format!("{}", theta.tanh()),
                dist,
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn ce_run(cfg: &CEConfig) -> Result<CERun> {
    cfg.validate()?;
    if cfg.n_steps < 2 {
        return Err(Error::Config(
            "the counterexample needs at least 2 steps".into(),
        ));
    }
    let mut thetas = Vec::with_capacity(cfg.n_steps + 1);
    let mut step_distances = Vec::with_capacity(cfg.n_steps);
    let mut theta = cfg.theta0;
    thetas.push(theta);
    for _ in 0..cfg.n_steps {
        let next = ce_rrm_step(theta)?;
        step_distances.push(closed_form_distance(next, theta));
        thetas.push(next);
        theta = next;
    }
    Ok(CERun {
        thetas,
        step_distances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CEReport {
    pub n_triples: usize,
    /// Max of `W1 / (eps ||f - f'||)`; at most 1 for W1 sensitivity.
    pub max_w1_ratio: f64,
    pub w1_violations: usize,
    /// Max of `||f - f'||^2 / ||f - f'||^2_{f*}`; at most C for a bounded norm ratio.
    pub max_norm_ratio: f64,
    pub norm_ratio_c: f64,
    pub norm_ratio_violations: usize,
    /// Max of `|l''(f) - gamma|` over sampled predictions.
    pub max_curvature_error: f64,
    pub m_bound: f64,
    pub rate_constant: f64,
    pub all_pass: bool,
}

/// Check every property the construction relies on over `n_triples` seeded
/// `(theta, theta', theta*)` triples.
pub fn ce_verify_assumptions(cfg: &CEConfig, n_triples: usize, seed: u64) -> Result<CEReport> {
    cfg.validate()?;
    if n_triples == 0 {
        return Err(Error::InvalidParameter("need at least one triple".into()));
    }
    let eps = cfg.epsilon;
    let mut rng = rng_from(seed);
    let mut report = CEReport {
        n_triples,
        max_w1_ratio: 0.0,
        w1_violations: 0,
        max_norm_ratio: 0.0,
        norm_ratio_c: cfg.norm_ratio_c,
        norm_ratio_violations: 0,
        max_curvature_error: 0.0,
        m_bound: cfg.m_bound(),
        rate_constant: cfg.rate_constant(),
        all_pass: false,
    };
    let draw = |rng: &mut crate::rng::Rng| rng.random_range(-0.99..0.99f64).atanh();
    let mut done = 0;
    while done < n_triples {
        let (a, b, star) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        if a.tanh() == b.tanh() {
            continue;
        }
        done += 1;
        let dist = quadrature_distance(a, b, eps);
        let w1 = w1_1d(
            &[(induced_point(a, eps), 1.0)],
            &[(induced_point(b, eps), 1.0)],
        )?;
        let ratio = w1 / (eps * dist);
        report.max_w1_ratio = report.max_w1_ratio.max(ratio);
        if ratio > 1.0 + 1e-9 {
            report.w1_violations += 1;
        }
        let x_star = induced_point(star, eps);
        let d_star = predict(a, x_star, eps) - predict(b, x_star, eps);
        let nr = dist * dist / (d_star * d_star);
        report.max_norm_ratio = report.max_norm_ratio.max(nr);
        if nr > cfg.norm_ratio_c {
            report.norm_ratio_violations += 1;
        }
        // The gradient is affine, so a central difference recovers l'' up to rounding.
        let f = predict(star, rng.random_range(0.0..3.0 * eps), eps);
        let h = 1e-3;
        let curv = (loss_grad(f + h, cfg.gamma) - loss_grad(f - h, cfg.gamma)) / (2.0 * h);
        report.max_curvature_error = report.max_curvature_error.max((curv - cfg.gamma).abs());
    }
    report.all_pass = report.w1_violations == 0
        && report.norm_ratio_violations == 0
        && report.max_curvature_error <= 1e-9 * cfg.gamma.max(1.0);
    Ok(report)
}
