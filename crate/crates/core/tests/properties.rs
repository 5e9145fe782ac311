use proptest::prelude::*;

use spme::entropy::{build_partition, make_eta, Orientation, DEFAULT_OVERLAP};
use spme::experiments::estimate;
use spme::model::{BoxDomain, CoefficientSet, DiffusionNonlinearity, DriftFields, InitialDatum, NoiseField, ProblemSpec};
use spme::noise::{sample_path, NoisePath, NoiseSpec};
use spme::solver::{solve_path, SolverConfig};

fn datum(c: [f64; 3]) -> InitialDatum {
    InitialDatum::new("modes", move |x| {
        use std::f64::consts::PI;
        (c[0] * (PI * x[0]).sin() + c[1] * (2.0 * PI * x[0]).sin() + c[2] * (3.0 * PI * x[0]).sin()).max(0.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn refine_then_aggregate_is_identity(seed in any::<u64>(), steps in 1usize..20, modes in 0usize..4, log in 1u32..4) {
        let spec = NoiseSpec::new(modes, steps, 1.0, seed, "prop").unwrap();
        let p = sample_path(&spec).unwrap();
        let f = 1usize << log;
        let back = p.refine(f).unwrap().aggregate(f).unwrap();
        prop_assert_eq!(back.steps(), p.steps());
        for (a, b) in back.increments().iter().zip(p.increments()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        prop_assert_eq!(sample_path(&spec).unwrap(), p);
    }

    #[test]
    fn eta_is_convex_with_bounded_slope(delta in 0.01f64..1.0, z in 0.0f64..3.0, r in -5.0f64..5.0, plus in any::<bool>()) {
        let o = if plus { Orientation::Plus } else { Orientation::Minus };
        let eta = make_eta(delta, z, o).unwrap();
        let (v, d1, d2) = eta.all(r);
        let (lo, hi) = eta.outer_slopes();
        prop_assert!(v >= 0.0 && d2 >= 0.0);
        prop_assert!(d1 >= lo && d1 <= hi);
        prop_assert!(eta.d1(r + 0.1) >= d1);
        prop_assert!((v - eta.kruzhkov(r)).abs() <= delta);
    }

    #[test]
    fn partition_sums_to_one(x in 0.0f64..=1.0, y in 0.0f64..=2.0) {
        let p = build_partition(&BoxDomain::new(2, [1.0, 2.0]).unwrap(), DEFAULT_OVERLAP).unwrap();
        prop_assert!((p.sum([x, y]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_is_shift_equivariant(xs in prop::collection::vec(-10.0f64..10.0, 2..30), c in -5.0f64..5.0) {
        let e = estimate(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let s = estimate(&shifted);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(e.mean >= lo - 1e-12 && e.mean <= hi + 1e-12);
        prop_assert!((s.mean - e.mean - c).abs() < 1e-9);
        prop_assert!((s.se - e.se).abs() < 1e-9 && e.se >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn regularized_a_is_bounded_below(n in 1u32..40, r in -50.0f64..50.0) {
        let reg = DiffusionNonlinearity::pme(2.0, 2.0).unwrap().regularize(n).unwrap();
        prop_assert!(reg.a(r) >= 2.0 / n as f64 - 1e-12);
    }

    #[test]
    fn deterministic_scheme_contracts_in_l1(a in prop::array::uniform3(0.0f64..2.0), b in prop::array::uniform3(0.0f64..2.0)) {
        let d = BoxDomain::interval(1.0).unwrap();
        let c = CoefficientSet::new(DiffusionNonlinearity::pme(2.0, 2.0).unwrap(), &NoiseField::zero(1), &DriftFields::zero(1)).unwrap();
        let spec = ProblemSpec::new(d, 0.01, c, datum(a)).unwrap();
        let tilde = spec.with_initial(datum(b));
        let noise = NoisePath::zeros(20, 0, 5e-4);
        let cfg = SolverConfig::new(16);
        let u = solve_path(&spec, 8, &noise, &cfg).unwrap();
        let v = solve_path(&tilde, 8, &noise, &cfg).unwrap();
        let plus = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).max(0.0)).sum::<f64>() / 16.0;
        let before = plus(&u.snapshots[0].u, &v.snapshots[0].u);
        let after = plus(&u.final_state().u, &v.final_state().u);
        prop_assert!(after <= before + 1e-10, "{after} > {before}");
    }
}
