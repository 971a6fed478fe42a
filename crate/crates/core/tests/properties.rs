use critesn::analysis::{
    find_critical_b, fit_decay, lyapunov_exponent, DecayLaw, LyapunovConfig, DEFAULT_FIT_START,
};
use critesn::contraction::{
    audit_step_inequality, iterate_q, phi_k, tau_bound, verify_phi_monotonicity, CoverParams,
    GridSpec, Regime,
};
use critesn::dynamics::{convergence_trace, run, ConvergenceTrace, InputSequence, TraceMeta};
use critesn::readout::{fit_readout, memory_capacity};
use critesn::reservoir::{
    make_orthogonal_reservoir, random_gaussian, scale_to_spectrum, spectral_summary, Reservoir,
    SpectralMode,
};
use critesn::transfer::TransferFunction;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Absolute slack for distances at the rounding grain of O(1) states.
const ROUNDING_FLOOR: f64 = 1e-14;

fn weak_tf() -> impl Strategy<Value = TransferFunction> {
    prop_oneof![
        Just(TransferFunction::tanh()),
        Just(TransferFunction::sine_sigmoid())
    ]
}

fn input_spec() -> impl Strategy<Value = InputSequence> {
    prop_oneof![
        (0.1f64..2.0).prop_map(|amplitude| InputSequence::Alternating { amplitude }),
        (0.1f64..2.0, any::<u64>())
            .prop_map(|(amplitude, seed)| InputSequence::IidSign { amplitude, seed }),
        (-1.0f64..1.0).prop_map(|value| InputSequence::Constant { value }),
    ]
}

fn scaled_reservoir(k: usize, s: f64, seed: u64, tf: TransferFunction) -> Reservoir {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = scale_to_spectrum(&random_gaussian(k, &mut rng), s, SpectralMode::Singular).unwrap();
    let base = make_orthogonal_reservoir(k, 1, 1.0, seed).unwrap();
    Reservoir::new(w, base.w_in().clone(), tf).unwrap()
}

fn random_state(k: usize, seed: u64, scale: f64) -> DVector<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(k, |_, _| rng.random_range(-scale..=scale))
}

fn synthetic(q: Vec<f64>) -> ConvergenceTrace {
    ConvergenceTrace {
        q,
        meta: TraceMeta {
            reservoir: "synthetic".into(),
            input: InputSequence::Constant { value: 0.0 },
            x0: vec![],
            y0: vec![],
            perturb_at: None,
            delta_u: None,
        },
        floor_hit_at: None,
    }
}

#[test]
fn orthogonal_reservoirs_have_unit_singular_values() {
    for seed in 0..1000u64 {
        let k = (seed % 16) as usize + 1;
        let res = make_orthogonal_reservoir(k, 1, 1.0, seed).unwrap();
        let s = spectral_summary(res.w()).unwrap();
        assert!(
            s.singular_values.iter().all(|v| (v - 1.0).abs() <= 1e-9),
            "seed {seed}"
        );
        assert!(s.normality_residual <= 1e-9, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singular_value_dominates_eigenvalues(k in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = spectral_summary(&random_gaussian(k, &mut rng)).unwrap();
        prop_assert!(s.max_singular_value >= s.max_abs_eigenvalue * (1.0 - 1e-12));
    }

    #[test]
    fn spectral_scaling_is_idempotent(k in 1usize..10, seed in any::<u64>(), target in 0.1f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mode in [SpectralMode::Singular, SpectralMode::Eigen] {
            let once = scale_to_spectrum(&random_gaussian(k, &mut rng), target, mode).unwrap();
            let twice = scale_to_spectrum(&once, target, mode).unwrap();
            prop_assert!((&twice - &once).amax() <= 1e-12 * once.amax());
        }
    }

    #[test]
    fn trajectories_are_deterministic(k in 1usize..8, seed in any::<u64>(), input in input_spec(), tf in weak_tf()) {
        let res = make_orthogonal_reservoir(k, 1, 1.0, seed).unwrap().with_transfer(tf);
        let x0 = random_state(k, seed, 1.0);
        let a = run(&res, &input, &x0, 200).unwrap();
        let b = run(&res, &input, &x0, 200).unwrap();
        prop_assert_eq!(a.states.as_slice(), b.states.as_slice());
        for (lin, x) in a.linear_states.iter().zip(a.states.iter()) {
            prop_assert_eq!(res.tf().apply(*lin), *x);
        }
    }

    #[test]
    fn non_expansive_at_unit_gain(
        k in 1usize..8, seed in any::<u64>(), s in 0.5f64..=1.0, input in input_spec(), tf in weak_tf(),
    ) {
        let res = scaled_reservoir(k, s, seed, tf);
        let trace = convergence_trace(&res, &input, &random_state(k, seed, 2.0), &random_state(k, !seed, 2.0), 300)
            .unwrap();
        for w in trace.q.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn subcritical_envelope(k in 1usize..8, seed in any::<u64>(), s in 0.3f64..0.99, input in input_spec(), tf in weak_tf()) {
        let res = scaled_reservoir(k, s, seed, tf);
        let trace = convergence_trace(&res, &input, &random_state(k, seed, 2.0), &random_state(k, !seed, 2.0), 300)
            .unwrap();
        let q0 = trace.q[0];
        for (t, q) in trace.q.iter().enumerate() {
            let envelope = s.powi(t as i32) * q0 * (1.0 + 1e-9) + ROUNDING_FLOOR;
            prop_assert!(*q <= envelope, "t={} q={} s={}", t, q, s);
        }
    }

    #[test]
    fn lyapunov_below_log_gain(k in 1usize..6, seed in any::<u64>(), s in 0.3f64..0.99, input in input_spec(), tf in weak_tf()) {
        let res = scaled_reservoir(k, s, seed, tf);
        let cfg = LyapunovConfig { steps: 5_000, ..Default::default() };
        let r = lyapunov_exponent(&res, &input, &random_state(k, seed, 1.0), &cfg).unwrap();
        prop_assert!(r.exponent <= s.ln() + 1e-6, "{} vs {}", r.exponent, s.ln());
    }

    #[test]
    fn fit_recovers_power_law(a in -3.0f64..=-0.25, c in 0.1f64..10.0) {
        let q: Vec<f64> = (0..=10_000).map(|t| if t == 0 { c } else { c * (t as f64).powf(a) }).collect();
        let fit = fit_decay(&synthetic(q), DEFAULT_FIT_START);
        prop_assert_eq!(fit.law, DecayLaw::PowerLaw);
        prop_assert!((fit.exponent_pow - a).abs() <= 0.01 * a.abs());
    }

    #[test]
    fn fit_recovers_exponential(b in 0.5f64..=0.99, c in 0.1f64..10.0) {
        let q: Vec<f64> = (0..=200).map(|t| c * b.powi(t)).collect();
        let fit = fit_decay(&synthetic(q), DEFAULT_FIT_START);
        prop_assert_eq!(fit.law, DecayLaw::Exponential);
        prop_assert!((fit.exponent_exp - b.ln()).abs() <= 1e-3 * b.ln().abs());
    }

    #[test]
    fn critical_b_residuals(amplitude in 0.2f64..1.2, tf in weak_tf(), tol_exp in 6i32..=10) {
        let tol = 10f64.powi(-tol_exp);
        let cp = find_critical_b(&tf, amplitude, (1.0 + 1e-6, 50.0), tol).unwrap();
        prop_assert!(cp.orbit_residual <= 10.0 * tol, "{:?}", cp);
        prop_assert!(cp.marginal_residual <= 10.0 * tol, "{:?}", cp);
    }

    #[test]
    fn step_audit_at_unit_gain(k in 1usize..10, seed in any::<u64>(), input in input_spec(), tf in weak_tf()) {
        let res = make_orthogonal_reservoir(k, 1, 1.0, seed).unwrap().with_transfer(tf);
        let trace = convergence_trace(&res, &input, &random_state(k, seed, 3.0), &random_state(k, !seed, 3.0), 500)
            .unwrap();
        let report = audit_step_inequality(&trace, 1.0, &CoverParams::for_neurons(k).unwrap());
        prop_assert!(report.passed, "{:?}", report);
    }

    #[test]
    fn phi_k_properties(n in 1usize..=16) {
        let p = CoverParams::for_neurons(n).unwrap();
        let nn = (n * n) as f64;
        let grid = GridSpec::new(0.0, 4.0 * nn, nn / 400.0).unwrap();
        prop_assert!(verify_phi_monotonicity(&p, &grid).unwrap().passed);
        for z in grid.points() {
            prop_assert!(phi_k(z, &p).unwrap() <= 1.0);
        }
    }

    #[test]
    fn iterate_q_decreases(q0 in 1e-3f64..=1.0, n in 1usize..=4) {
        let q = iterate_q(q0, &CoverParams::for_neurons(n).unwrap(), 2_000).unwrap();
        prop_assert!(q.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    }

    #[test]
    fn subcritical_settling_within_bound(k in 1usize..8, seed in any::<u64>(), s in 0.3f64..0.95, input in input_spec()) {
        let res = scaled_reservoir(k, s, seed, TransferFunction::tanh());
        let trace = convergence_trace(&res, &input, &random_state(k, seed, 2.0), &random_state(k, !seed, 2.0), 2_000)
            .unwrap();
        let p = CoverParams::for_neurons(k).unwrap();
        let d0 = trace.q[0];
        let eps = d0 * 1e-6;
        let bound = tau_bound(eps, d0, Regime::Subcritical { s }, &p).unwrap();
        let measured = trace.settle_time(eps).unwrap();
        prop_assert!(measured as f64 <= bound.ceil(), "{} > {}", measured, bound);
    }

    #[test]
    fn readout_recovers_linear_maps(seed in any::<u64>(), k in 1usize..6, m in 1usize..3) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(60, k, |_, _| rng.random_range(-1.0..1.0));
        let truth = DMatrix::from_fn(m, k, |_, _| rng.random_range(-2.0..2.0));
        let model = fit_readout(&a, &(&a * truth.transpose()), 0.0).unwrap();
        prop_assert!(model.training_error <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mc_scores_bounded(seed in any::<u64>(), k in 2usize..8) {
        let res = make_orthogonal_reservoir(k, 1, 0.5, seed).unwrap();
        let light = memory_capacity(&res, 1.0, 3 * k, 2_000, 200, 1e-8, seed).unwrap();
        let heavy = memory_capacity(&res, 1.0, 3 * k, 2_000, 200, 1e4, seed).unwrap();
        for mc in [&light, &heavy] {
            prop_assert!(mc.per_delay.iter().all(|s| (0.0..=1.0 + 1e-9).contains(s)));
        }
    }

    #[test]
    fn training_error_non_decreasing_in_ridge(seed in any::<u64>(), k in 1usize..6) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(80, k, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(80, 1, |_, _| rng.random_range(-1.0..1.0));
        let mut last = 0.0;
        for ridge in [0.0, 1e-8, 1e-3, 1e-1, 1.0, 10.0, 1e3] {
            let err = fit_readout(&a, &b, ridge).unwrap().training_error;
            prop_assert!(err >= last - 1e-12, "ridge {}: {} < {}", ridge, err, last);
            last = err;
        }
    }
}
