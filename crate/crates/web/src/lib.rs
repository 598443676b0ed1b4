//! Browser demo: the counterexample orbit, an RIR density explorer, and a small RRM run.
//!
//! The `wasm_bindgen` exports are thin wrappers over the functions in [`demo`], which
//! are plain Rust and tested natively.

use wasm_bindgen::prelude::*;

pub mod demo {
    use performa::counterexample::{ce_run, CEConfig};
    use performa::distribution::{chi2, rir_density, EmpiricalBase, ShiftMode};
    use performa::harness::{gen_synthetic, SyntheticSpec};
    use performa::predictor::weighted_l2;
    use performa::training::{prepare_base, rrm, RRMConfig};

    /// `tanh(theta_t)` along the counterexample orbit started at `tanh(theta_0) = t0`.
    pub fn orbit(t0: f64, steps: usize) -> Result<Vec<f64>, String> {
        if !(t0 > -1.0 && t0 < 1.0) {
            return Err(format!("tanh(theta_0) must lie in (-1, 1), got {t0}"));
        }
        let cfg = CEConfig {
            theta0: t0.atanh(),
            n_steps: steps,
            ..CEConfig::default()
        };
        let run = ce_run(&cfg).map_err(|e| e.to_string())?;
        Ok(run.tanhs().collect())
    }

    /// Uniform base on `n` evenly spaced points of [0, 1].
    fn grid_base(n: usize) -> Result<EmpiricalBase, String> {
        if n < 2 {
            return Err("need at least 2 atoms".into());
        }
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        EmpiricalBase::from_rows(&xs, 1, &vec![0.0; n], vec![]).map_err(|e| e.to_string())
    }

    fn logistic(delta: f64, slope: f64) -> impl Fn(&[f64]) -> f64 {
        move |x: &[f64]| (1.0 - delta) / (1.0 + (-slope * (x[0] - 0.5)).exp())
    }

    /// Induced RIR weights on the grid base for `f(x) = (1 - delta) sigmoid(slope (x - 1/2))`.
    pub fn rir_weights(delta: f64, slope: f64, n: usize) -> Result<Vec<f64>, String> {
        let base = grid_base(n)?;
        let d = rir_density(&base, &logistic(delta, slope), delta, ShiftMode::Full)
            .map_err(|e| e.to_string())?;
        Ok(d.weights().to_vec())
    }

    /// `[chi2, bound]` for two logistic predictors, where the bound is
    /// `||f - f'||^2 / delta`.
    pub fn chi2_vs_bound(
        delta: f64,
        slope_a: f64,
        slope_b: f64,
        n: usize,
    ) -> Result<Vec<f64>, String> {
        let base = grid_base(n)?;
        let (fa, fb) = (logistic(delta, slope_a), logistic(delta, slope_b));
        let da = rir_density(&base, &fa, delta, ShiftMode::Full).map_err(|e| e.to_string())?;
        let db = rir_density(&base, &fb, delta, ShiftMode::Full).map_err(|e| e.to_string())?;
        let c = chi2(&da, &db).map_err(|e| e.to_string())?;
        let dist = weighted_l2(
            &base.predictions(&fa),
            &base.predictions(&fb),
            base.weights(),
        );
        Ok(vec![c, dist * dist / delta])
    }

    /// RRM on a small synthetic base. Returns rows of
    /// `[iter, performative risk, step distance, contraction ratio (NaN if absent)]`,
    /// flattened.
    pub fn rrm_demo(delta: f64, hidden_size: usize, seed: u64) -> Result<Vec<f64>, String> {
        let spec = SyntheticSpec {
            n_rows: 150,
            n_nonstrategic: 2,
            n_strategic: 1,
            rng_seed: Some(seed),
            ..SyntheticSpec::default()
        };
        let cfg = RRMConfig {
            delta,
            hidden_size,
            rng_seed: seed,
            max_rrm_iters: 15,
            inner_tol: 1e-12,
            ..RRMConfig::default()
        };
        let raw = gen_synthetic(&spec).map_err(|e| e.to_string())?;
        let base = prepare_base(&raw, delta, cfg.mode).map_err(|e| e.to_string())?;
        let trace = rrm(&base, &cfg).map_err(|e| e.to_string())?;
        Ok(trace
            .records
            .iter()
            .flat_map(|r| {
                [
                    r.iter as f64,
                    r.risk_post_shift,
                    r.func_dist_to_prev,
                    r.contraction_ratio.unwrap_or(f64::NAN),
                ]
            })
            .collect())
    }
}

#[wasm_bindgen]
pub fn counterexample_orbit(t0: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    demo::orbit(t0, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rir_weights(delta: f64, slope: f64, n: usize) -> Result<Vec<f64>, JsError> {
    demo::rir_weights(delta, slope, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn chi2_vs_bound(
    delta: f64,
    slope_a: f64,
    slope_b: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    demo::chi2_vs_bound(delta, slope_a, slope_b, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rrm_demo(delta: f64, hidden_size: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    demo::rrm_demo(delta, hidden_size, u64::from(seed)).map_err(|e| JsError::new(&e))
}
