use spme::entropy::{build_partition, default_battery, make_eta, EntropyTestPair, Orientation, TimeProfile, TimeShape};
use spme::experiments::*;
use spme::model::{BoxDomain, CoefficientSet, DiffusionNonlinearity, DriftFields, InitialDatum, NoiseField, ProblemSpec, Profile};
use spme::noise::NoisePath;
use spme::solver::{solve_path, SolverConfig};
use spme::Error;

fn small(noise: f64, xi: InitialDatum) -> ProblemSpec {
    reference_problem(noise).unwrap().with_initial(xi)
}

fn ensemble(spec: &ProblemSpec, paths: usize, cells: usize, levels: Vec<u32>) -> EnsembleConfig {
    EnsembleConfig::new(spec, paths, 11, SolverConfig::new(cells), levels).unwrap()
}

fn d() -> BoxDomain {
    BoxDomain::interval(1.0).unwrap()
}

#[test]
fn nonnegativity_of_zero_datum() {
    let spec = small(0.5, InitialDatum::zero());
    let rep = run_nonnegativity(&spec, &ensemble(&spec, 4, 32, vec![8])).unwrap();
    assert!(rep.passed(), "{rep:?}");
    assert_eq!(rep.metric("min_pre_clip").unwrap().estimate, 0.0);
    assert_eq!(rep.metric("max_clipped_mass").unwrap().estimate, 0.0);
}

#[test]
fn deterministic_bump_stays_nonnegative() {
    let spec = small(0.0, InitialDatum::bump(d(), 2.0, [0.5, 0.0], 0.3));
    let rep = run_nonnegativity(&spec, &ensemble(&spec, 2, 64, vec![16])).unwrap();
    assert!(rep.metric("min_pre_clip").unwrap().estimate >= -1e-12);
    assert!(rep.passed());
}

#[test]
fn zero_condition_is_required() {
    let d = d();
    let c = CoefficientSet::new(
        DiffusionNonlinearity::pme(2.0, 2.0).unwrap(),
        &NoiseField::additive(1, d.lengths, &[0.3], Profile::Sine),
        &DriftFields::zero(1),
    )
    .unwrap();
    let spec = ProblemSpec::new(d, 0.01, c, InitialDatum::sine(d, 1.0)).unwrap();
    let e = EnsembleConfig::new(&spec, 2, 0, SolverConfig::new(16), vec![8]).unwrap();
    assert!(matches!(run_nonnegativity(&spec, &e), Err(Error::Config(_))));
}

#[test]
fn identical_inputs_have_zero_contraction_distance() {
    let spec = small(0.5, InitialDatum::sine(d(), 2.0));
    let e = ensemble(&spec, 3, 32, vec![8]);
    let rep = run_l1_contraction(&spec, &spec, &e).unwrap();
    for m in rep.metrics.iter().filter(|m| m.name.starts_with("stability@")) {
        assert_eq!(m.estimate, 0.0);
    }
    assert!(rep.passed());
    let mut unc = e.clone();
    unc.coupled = false;
    assert!(matches!(run_l1_contraction(&spec, &spec, &unc), Err(Error::Config(_))));
}

#[test]
fn deterministic_comparison_preserves_order() {
    let xi = InitialDatum::sine(d(), 1.0);
    let spec = small(0.0, xi.clone());
    let tilde = spec.with_initial(xi.plus(&InitialDatum::bump(d(), 0.1, [0.5, 0.0], 0.2)));
    let rep = run_l1_contraction(&spec, &tilde, &ensemble(&spec, 2, 64, vec![16])).unwrap();
    let last = rep.metric("ordering@T").unwrap();
    assert!(last.estimate <= 1e-8, "{last:?}");
    assert!(rep.passed());
}

#[test]
fn cauchy_needs_three_levels_and_vanishes_for_zero_data() {
    let spec = small(0.5, InitialDatum::zero());
    let e = ensemble(&spec, 2, 16, vec![4]);
    assert!(matches!(run_cauchy_in_n(&spec, &[4, 8], &e), Err(Error::Config(_))));
    let rep = run_cauchy_in_n(&spec, &[4, 8, 16], &e).unwrap();
    assert_eq!(rep.metric("D(4,8)").unwrap().estimate, 0.0);
    assert!(rep.passed());
}

#[test]
fn cauchy_of_nondegenerate_phi_is_negligible() {
    let d = d();
    let c = CoefficientSet::new(DiffusionNonlinearity::linear(1.0, 2.0, 1.0).unwrap(), &NoiseField::zero(1), &DriftFields::zero(1)).unwrap();
    let spec = ProblemSpec::new(d, 0.01, c, InitialDatum::sine(d, 1.0)).unwrap();
    let rep = run_cauchy_in_n(&spec, &[2, 4, 8], &ensemble(&spec, 2, 16, vec![2])).unwrap();
    assert!(rep.metric("D(2,4)").unwrap().estimate < 1e-10);
    assert!(rep.passed());
}

#[test]
fn apriori_of_zero_and_of_heat() {
    let spec = small(0.5, InitialDatum::zero());
    let rep = run_apriori(&spec, &ensemble(&spec, 2, 16, vec![4, 8])).unwrap();
    for m in &rep.metrics {
        assert_eq!(m.estimate, 0.0, "{}", m.name);
    }
    assert!(rep.passed());

    let d = d();
    let c = CoefficientSet::new(DiffusionNonlinearity::linear(1.0, 2.0, 1.0).unwrap(), &NoiseField::zero(1), &DriftFields::zero(1)).unwrap();
    let heat = ProblemSpec::new(d, 0.02, c, InitialDatum::sine(d, 1.0)).unwrap();
    let rep = run_apriori(&heat, &ensemble(&heat, 2, 128, vec![4])).unwrap();
    assert!((rep.metric("sup_l2_sq@n=4").unwrap().estimate - 0.5).abs() < 1e-3);
}

#[test]
fn initial_attainment_of_zero_datum() {
    let spec = small(0.5, InitialDatum::zero());
    let rep = run_initial_attainment(&spec, &ensemble(&spec, 2, 16, vec![8])).unwrap();
    assert_eq!(rep.metric("g(T/64)").unwrap().estimate, 0.0);
    assert!(rep.passed());
}

#[test]
fn initial_attainment_decreases_for_heat() {
    let d = d();
    let c = CoefficientSet::new(DiffusionNonlinearity::linear(1.0, 2.0, 1.0).unwrap(), &NoiseField::zero(1), &DriftFields::zero(1)).unwrap();
    let heat = ProblemSpec::new(d, 0.1, c, InitialDatum::sine(d, 1.0)).unwrap();
    let rep = run_initial_attainment(&heat, &ensemble(&heat, 2, 64, vec![4])).unwrap();
    assert!(rep.passed(), "{rep:?}");
    let slope = rep.metric("loglog_slope").unwrap().estimate;
    assert!(slope > 1.5, "smooth data: g ~ gamma^2, got slope {slope}");
}

fn frozen(profile: impl Fn(f64) -> f64, cells: usize) -> Vec<spme::solver::Trajectory> {
    let d = d();
    let c = CoefficientSet::new(DiffusionNonlinearity::linear(1.0, 2.0, 1.0).unwrap(), &NoiseField::zero(1), &DriftFields::zero(1)).unwrap();
    let spec = ProblemSpec::new(d, 0.01, c, InitialDatum::zero()).unwrap();
    let mut tr = solve_path(&spec, 4, &NoisePath::zeros(4, 0, 0.0025), &SolverConfig::new(cells).recording_all()).unwrap();
    let centers = tr.grid.centers();
    for s in &mut tr.snapshots {
        s.u = centers.iter().map(|x| profile(x[0])).collect();
    }
    vec![tr.clone(), tr]
}

#[test]
fn mollified_difference_of_constants_and_of_a_sine() {
    let phi = DiffusionNonlinearity::pme(2.0, 2.0).unwrap();
    let eps = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0];
    let rep = run_mollified_difference(&frozen(|_| 0.7, 256), &phi, &eps).unwrap();
    assert!(rep.metrics.iter().filter(|m| m.name.starts_with("M_")).all(|m| m.estimate == 0.0));
    assert!(rep.passed());
    let rep = run_mollified_difference(&frozen(|x| (std::f64::consts::PI * x).sin(), 256), &phi, &eps).unwrap();
    let s = rep.metric("slope_u").unwrap().estimate;
    assert!((s - 1.0).abs() < 0.1, "slope {s}");
    assert!(run_mollified_difference(&frozen(|_| 0.0, 16), &phi, &eps).is_err(), "eps = 1/32 is unresolved at J = 16");
}

#[test]
fn entropy_battery_of_zero_datum() {
    let spec = small(0.5, InitialDatum::zero()).with_initial(InitialDatum::zero());
    let mut short = spec.clone();
    short.horizon = 0.005;
    let e = ensemble(&short, 2, 16, vec![8]);
    let p = build_partition(&d(), 0.25).unwrap();
    let battery: Vec<EntropyTestPair> = p
        .members
        .iter()
        .map(|m| EntropyTestPair::new(make_eta(0.1, 0.0, Orientation::Plus).unwrap(), TimeProfile { shape: TimeShape::Full, horizon: 0.005 }, m.cutoff.clone()).unwrap())
        .collect();
    let rep = run_entropy_battery(&short, &e, &battery).unwrap();
    for m in &rep.metrics {
        assert!(m.estimate.abs() < 1e-12, "{}: {}", m.name, m.estimate);
    }
    assert!(rep.passed());
    assert!(matches!(run_entropy_battery(&short, &e, &[]), Err(Error::Config(_))));
    assert!(!default_battery(&d(), 0.005, 1.0).unwrap().is_empty());
}

#[test]
fn reports_are_reproducible_across_worker_counts() {
    let spec = small(0.5, InitialDatum::sine(d(), 2.0));
    let e = ensemble(&spec, 4, 32, vec![8]);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let r = run_nonnegativity(&spec, &e).unwrap();
            let mut buf = Vec::new();
            r.write_csv(&mut buf, "h").unwrap();
            r.write_plot_data(&mut buf, "h").unwrap();
            buf
        })
    };
    let a = run(1);
    assert_eq!(a, run(3));
    assert_eq!(a, run(1));
}
