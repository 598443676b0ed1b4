use performa::distribution::{
    chi2, chi2_weights, norm_ratio, rir_density, rir_density_from_predictions, w1_1d,
    EmpiricalBase, ShiftMode,
};
use performa::harness::Standardizer;
use performa::predictor::{
    functional_distance, loss_grad, weighted_l2, ConstantPredictor, Predictor, PredictorParams,
    WeightedPoints,
};
use performa::rng::rng_from;
use proptest::prelude::*;

fn mode_strategy() -> impl Strategy<Value = ShiftMode> {
    prop_oneof![Just(ShiftMode::Full), Just(ShiftMode::Strategic)]
}

/// Rows with the last coordinate strategic, taking at most `levels` values.
fn base_strategy() -> impl Strategy<Value = (Vec<f64>, usize, Vec<f64>, usize)> {
    (1usize..4, 2usize..24, 2usize..6).prop_flat_map(|(nonstrat, rows, levels)| {
        let dim = nonstrat + 1;
        (
            prop::collection::vec(-3.0f64..3.0, rows * nonstrat),
            prop::collection::vec(0usize..levels, rows),
            prop::collection::vec(0.0f64..1.0, rows),
        )
            .prop_map(move |(xf, lv, ys)| {
                let mut xs = Vec::with_capacity(rows * dim);
                for r in 0..rows {
                    xs.extend_from_slice(&xf[r * nonstrat..(r + 1) * nonstrat]);
                    xs.push(lv[r] as f64);
                }
                (xs, dim, ys, levels)
            })
    })
}

fn build(xs: &[f64], dim: usize, ys: &[f64], mode: ShiftMode) -> EmpiricalBase {
    let raw = EmpiricalBase::from_rows(xs, dim, ys, vec![dim - 1]).unwrap();
    match mode {
        ShiftMode::Full => raw,
        ShiftMode::Strategic => raw.strategic_product().unwrap(),
    }
}

fn mlp(dim: usize, delta: f64, scale: f64, seed: u64) -> PredictorParams {
    PredictorParams::init_scaled(dim, 5, delta, scale, &mut rng_from(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn induced_weights_normalized_and_supported(
        (xs, dim, ys, _) in base_strategy(),
        mode in mode_strategy(),
        delta in 0.01f64..0.99,
        scale in 0.1f64..4.0,
        seed in any::<u64>(),
    ) {
        let base = build(&xs, dim, &ys, mode);
        let f = mlp(dim, delta, scale, seed);
        let d = rir_density(&base, &f, delta, mode).unwrap();
        let total: f64 = d.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        for (w, b) in d.weights().iter().zip(base.weights()) {
            prop_assert!(*w >= delta * b * (1.0 - 1e-12), "{w} < {delta} * {b}");
        }
    }

    #[test]
    fn constant_predictor_is_a_fixed_point(
        (xs, dim, ys, _) in base_strategy(),
        mode in mode_strategy(),
        delta in 0.01f64..0.99,
        frac in 0.0f64..1.0,
    ) {
        let base = build(&xs, dim, &ys, mode);
        let c = frac * (1.0 - delta);
        let d = rir_density(&base, &ConstantPredictor(c), delta, mode).unwrap();
        for (w, b) in d.weights().iter().zip(base.weights()) {
            prop_assert!((w - b).abs() <= 1e-15 * b.max(1.0));
        }
    }

    #[test]
    fn chi2_and_norm_ratio_bounds(
        (xs, dim, ys, _) in base_strategy(),
        mode in mode_strategy(),
        delta in 0.01f64..0.99,
        scales in (0.1f64..4.0, 0.1f64..4.0, 0.1f64..4.0),
        seeds in any::<(u64, u64, u64)>(),
    ) {
        let base = build(&xs, dim, &ys, mode);
        let f = mlp(dim, delta, scales.0, seeds.0);
        let g = mlp(dim, delta, scales.1, seeds.1);
        let pivot = mlp(dim, delta, scales.2, seeds.2);
        let df = rir_density(&base, &f, delta, mode).unwrap();
        let dg = rir_density(&base, &g, delta, mode).unwrap();
        let norm_sq = weighted_l2(&base.predictions(&f), &base.predictions(&g), base.weights()).powi(2);
        prop_assume!(norm_sq > 1e-300);
        let c = chi2(&dg, &df).unwrap();
        prop_assert!(c <= norm_sq / delta * (1.0 + 1e-9), "chi2 {c} vs {}", norm_sq / delta);
        let r = norm_ratio(&f, &g, &base, &pivot, delta, mode).unwrap();
        prop_assert!(r >= (1.0 / (2.0 - delta)) * (1.0 - 1e-9), "ratio {r}");
        prop_assert!(r <= (1.0 / delta) * (1.0 + 1e-9), "ratio {r}");
    }

    #[test]
    fn chi2_of_identical_distributions_is_zero(
        (xs, dim, ys, _) in base_strategy(),
        mode in mode_strategy(),
        delta in 0.01f64..0.99,
        seed in any::<u64>(),
    ) {
        let base = build(&xs, dim, &ys, mode);
        let f = mlp(dim, delta, 1.0, seed);
        let d = rir_density(&base, &f, delta, mode).unwrap();
        prop_assert_eq!(chi2(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn w1_bounded_by_chi2(
        points in prop::collection::vec((-5.0f64..5.0, 0.01f64..1.0, 0.01f64..1.0), 2..40),
    ) {
        let (pa, pb): (f64, f64) = points.iter().fold((0.0, 0.0), |s, p| (s.0 + p.1, s.1 + p.2));
        let a: Vec<(f64, f64)> = points.iter().map(|p| (p.0, p.1 / pa)).collect();
        let b: Vec<(f64, f64)> = points.iter().map(|p| (p.0, p.2 / pb)).collect();
        let wa: Vec<f64> = a.iter().map(|p| p.1).collect();
        let wb: Vec<f64> = b.iter().map(|p| p.1).collect();
        let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let w1 = w1_1d(&a, &b).unwrap();
        let bound = 0.5 * (hi - lo) * chi2_weights(&wa, &wb).unwrap().sqrt();
        prop_assert!(w1 <= bound * (1.0 + 1e-9) + 1e-15, "{w1} > {bound}");
    }

    #[test]
    fn w1_of_point_masses_is_their_gap(x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let w = w1_1d(&[(x, 1.0)], &[(y, 1.0)]).unwrap();
        prop_assert!((w - (x - y).abs()).abs() < 1e-12);
    }

    #[test]
    fn functional_distance_is_a_pseudometric(
        xs in prop::collection::vec(-3.0f64..3.0, 2..60),
        ws in prop::collection::vec(0.0f64..1.0, 60),
        seeds in any::<(u64, u64, u64)>(),
        delta in 0.05f64..0.95,
    ) {
        let n = xs.len() / 2;
        prop_assume!(n > 0);
        let feats = &xs[..2 * n];
        let weights = &ws[..n];
        let pts = || WeightedPoints::new(feats, 2, weights).unwrap();
        let f = mlp(2, delta, 2.0, seeds.0);
        let g = mlp(2, delta, 2.0, seeds.1);
        let h = mlp(2, delta, 2.0, seeds.2);
        let fg = functional_distance(&f, &g, pts());
        let gf = functional_distance(&g, &f, pts());
        let gh = functional_distance(&g, &h, pts());
        let fh = functional_distance(&f, &h, pts());
        prop_assert!(fg >= 0.0);
        prop_assert!((fg - gf).abs() <= 1e-15);
        prop_assert!(fh <= fg + gh + 1e-12);
        prop_assert_eq!(functional_distance(&f, &f, pts()), 0.0);
    }

    #[test]
    fn forward_stays_in_range(
        x in prop::collection::vec(-1e6f64..1e6, 3),
        delta in 0.01f64..0.99,
        scale in 0.1f64..4.0,
        seed in any::<u64>(),
    ) {
        let f = mlp(3, delta, scale, seed);
        let y = f.predict(&x);
        prop_assert!((0.0..=1.0 - delta).contains(&y), "{y}");
        let moderate: Vec<f64> = x.iter().map(|v| v * 1e-6).collect();
        let y = f.predict(&moderate);
        prop_assert!(y > 0.0 && y < 1.0 - delta, "{y}");
    }

    #[test]
    fn standardizer_round_trips(
        rows in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 4), 1..50),
    ) {
        let raw: Vec<f64> = rows.concat();
        let s = Standardizer::fit(&raw, 4);
        let mut t = raw.clone();
        s.transform(&mut t);
        for (a, b) in s.inverse(&t).iter().zip(&raw) {
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }
}

#[test]
fn loss_gradient_bounded_on_valid_domain() {
    for delta in [0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95] {
        let cap = 1.0 - delta;
        let n = 400;
        for i in 0..=n {
            let f = cap * i as f64 / n as f64;
            for y in [0.0, cap, 0.5 * cap] {
                assert!(loss_grad(f, y).abs() <= cap + 1e-15);
            }
        }
    }
}

#[test]
fn two_atom_induced_weights() {
    let base = EmpiricalBase::from_rows(&[0.0, 1.0], 1, &[0.0, 0.0], vec![]).unwrap();
    let d = rir_density_from_predictions(&base, &[0.0, 0.1], 0.9, ShiftMode::Full).unwrap();
    assert!((d.weights()[0] - 0.525).abs() < 1e-15);
    assert!((d.weights()[1] - 0.475).abs() < 1e-15);
}
