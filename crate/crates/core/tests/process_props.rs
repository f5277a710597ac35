use jumpcalc::models::{birth_death, lattice_walk, poisson_counter, sis, yule, SisParams};
use jumpcalc::process::{covariability, rescale_time, taylor_drift_gap_bound, transform_process, ScalarMap};
use jumpcalc::{JumpKernel, Spec};
use proptest::prelude::*;

fn discrete_models() -> Vec<Spec> {
    vec![
        poisson_counter(1.3).unwrap(),
        birth_death(2.0, 1.0).unwrap(),
        lattice_walk(0.1, 60.0, 40.0).unwrap(),
        yule(0.7).unwrap(),
        sis(SisParams::new(50, 1.7, false)).unwrap(),
        sis(SisParams::new(50, 1.7, true)).unwrap(),
    ]
}

/// Admissible state of model `i` from a uniform `u ∈ [0, 1)`.
fn state(i: usize, u: f64) -> f64 {
    match i {
        0 | 3 => (100.0 * u).floor(),
        1 => (100.0 * u).floor() - 50.0,
        2 => 10.0 * u - 5.0,
        4 => (51.0 * u).floor(),
        _ => (51.0 * u).floor() / 50.0,
    }
}

fn channel_sums(spec: &Spec, x: f64) -> (f64, f64) {
    let JumpKernel::Discrete(channels) = spec.kernel() else { unreachable!() };
    let mut d = [0.0];
    spec.derivative_into(&[x], &mut d);
    let (mut mu, mut s2) = (d[0], 0.0);
    let mut disp = [0.0];
    for c in channels {
        let w = c.weight(&[x]);
        c.displace(&[x], &mut disp);
        mu += w * disp[0];
        s2 += w * disp[0] * disp[0];
    }
    (mu, s2)
}

proptest! {
    #[test]
    fn moments_equal_channel_sums(i in 0usize..6, u in 0.0f64..1.0) {
        let spec = &discrete_models()[i];
        let x = state(i, u);
        let (mu, s2) = channel_sums(spec, x);
        prop_assert_eq!(spec.drift(&[x]).unwrap()[0], mu);
        prop_assert_eq!(spec.diffusivity(&[x]).unwrap()[0], s2);
    }

    #[test]
    fn self_covariability_is_diffusivity(i in 0usize..6, u in 0.0f64..1.0) {
        let spec = &discrete_models()[i];
        let x = state(i, u);
        let s2 = spec.diffusivity(&[x]).unwrap()[0];
        let c = covariability(spec, spec, &[x]).unwrap();
        prop_assert!((c - s2).abs() <= 4.0 * f64::EPSILON * s2.abs());
    }

    #[test]
    fn identity_transform_is_a_fixed_point(i in 0usize..6, u in 0.0f64..1.0) {
        let spec = &discrete_models()[i];
        let x = state(i, u);
        let id = transform_process(spec, &ScalarMap::identity());
        let (mu, s2) = (spec.drift(&[x]).unwrap()[0], spec.diffusivity(&[x]).unwrap()[0]);
        // `(x + Δ) − x` rounds at the scale of `x`.
        let c = spec.c_delta();
        let tol = 4.0 * f64::EPSILON * spec.rate(&[x]) * (x.abs() + c);
        prop_assert!((id.drift(&[x]).unwrap()[0] - mu).abs() <= tol);
        prop_assert!((id.diffusivity(&[x]).unwrap()[0] - s2).abs() <= 2.0 * c * tol + 4.0 * f64::EPSILON * s2);
    }

    /// With integer rates and states every term is an exactly representable integer.
    #[test]
    fn square_drift_is_product_rule_on_integers(i in 0usize..3, u in 0.0f64..1.0) {
        let spec = &[poisson_counter(2.0).unwrap(), birth_death(2.0, 1.0).unwrap(), yule(1.0).unwrap()][i];
        let x = (100.0 * u).floor();
        let sq = transform_process(spec, &ScalarMap::square());
        let expected = 2.0 * x * spec.drift(&[x]).unwrap()[0] + spec.diffusivity(&[x]).unwrap()[0];
        prop_assert_eq!(sq.drift(&[x]).unwrap()[0], expected);
    }

    #[test]
    fn square_drift_is_product_rule(i in 0usize..6, u in 0.0f64..1.0) {
        let spec = &discrete_models()[i];
        let x = state(i, u);
        let sq = transform_process(spec, &ScalarMap::square());
        let (mu, s2) = (spec.drift(&[x]).unwrap()[0], spec.diffusivity(&[x]).unwrap()[0]);
        let expected = 2.0 * x * mu + s2;
        let scale = (2.0 * x * mu).abs().max(s2).max(f64::MIN_POSITIVE);
        prop_assert!((sq.drift(&[x]).unwrap()[0] - expected).abs() <= 1e-12 * scale);
    }

    #[test]
    fn taylor_gap_is_bounded(i in 0usize..6, u in 0.0f64..1.0, which in 0usize..3) {
        let spec = &discrete_models()[i];
        let x = state(i, u);
        let c = spec.c_delta();
        let (map, second_sup) = match which {
            0 => (ScalarMap::square(), 2.0),
            1 => (ScalarMap::exp_scaled(1.0), (x + c).exp()),
            _ => (ScalarMap::new("sin", f64::sin, f64::cos), 1.0),
        };
        let fx = transform_process(spec, &map);
        let gap = (fx.drift(&[x]).unwrap()[0] - (map.df)(x) * spec.drift(&[x]).unwrap()[0]).abs();
        let bound = taylor_drift_gap_bound(spec.diffusivity(&[x]).unwrap()[0], second_sup).unwrap();
        prop_assert!(gap <= bound * (1.0 + 1e-12) + 1e-12, "gap {} bound {}", gap, bound);
    }

    #[test]
    fn time_change_preserves_drift_to_diffusivity_ratio(i in 0usize..6, u in 0.0f64..1.0, k in 0.1f64..10.0) {
        let spec = &discrete_models()[i];
        let x = state(i, u);
        let slow = rescale_time(spec, move |s: &[f64]| k * (1.0 + s[0] * s[0]));
        let s2 = spec.diffusivity(&[x]).unwrap()[0];
        prop_assume!(s2 > 0.0);
        let r = spec.drift(&[x]).unwrap()[0] / s2;
        let r2 = slow.drift(&[x]).unwrap()[0] / slow.diffusivity(&[x]).unwrap()[0];
        prop_assert!((r - r2).abs() <= 4.0 * f64::EPSILON * r.abs().max(f64::MIN_POSITIVE));
    }
}

#[test]
fn continuous_kernel_refinement_converges() {
    use jumpcalc::ProcessSpec;
    // Jump u² at rate 1 + x²: drift (1 + x²)/3, diffusivity (1 + x²)/5.
    let build = |nodes: usize| {
        let k = JumpKernel::continuous(|x: &[f64]| 1.0 + x[0] * x[0], |_x: &[f64], u: f64, out: &mut [f64]| out[0] = u * u, nodes);
        ProcessSpec::new(1, k, 1.0, "smooth").unwrap()
    };
    let x = [0.5];
    let exact = (1.25 / 3.0, 1.25 / 5.0);
    let mut prev = f64::INFINITY;
    for nodes in [16, 32, 64, 128, 256] {
        let s = build(nodes);
        let err = (s.drift(&x).unwrap()[0] - exact.0).abs().max((s.diffusivity(&x).unwrap()[0] - exact.1).abs());
        assert!(err < prev / 3.5, "nodes {nodes}: {err} vs {prev}");
        prev = err;
    }
    assert!(prev < 1e-5);
}
