//! Desk-scale acceptance runs. Every test prints one `PASS`/`FAIL` line with its numbers
//! (visible with `--nocapture`) and then asserts the verdict.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use spme::cli::{run, Overrides, RunManifest};
use spme::entropy::default_battery;
use spme::experiments::*;
use spme::model::nonlinearity::regularization_probe;
use spme::model::{BoxDomain, CoefficientSet, DiffusionNonlinearity, DriftFields, InitialDatum, NoiseField, ProblemSpec};
use spme::noise::NoisePath;
use spme::solver::{solve_path, SolverConfig};

const PATHS: usize = 64;
const CELLS: usize = 128;
const LEVEL: u32 = 16;
const SEED: u64 = 20240101;

fn verdict(name: &str, ok: bool, detail: String) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn reference() -> ProblemSpec {
    reference_problem(0.5).unwrap()
}

fn ensemble(spec: &ProblemSpec, levels: Vec<u32>) -> EnsembleConfig {
    EnsembleConfig::new(spec, PATHS, SEED, SolverConfig::new(CELLS), levels).unwrap()
}

fn show(rep: &ExperimentReport, name: &str) -> String {
    let m = rep.metric(name).unwrap_or_else(|| panic!("metric {name} missing from {}", rep.suite));
    format!("{name} = {:.4e} (se {:.2e}) {} {:.4e}", m.lhs, m.std_error, m.relation.as_str(), m.rhs)
}

#[test]
fn regularization_contract() {
    let phi = DiffusionNonlinearity::pme(2.0, 2.0).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for n in [4u32, 8, 16, 32, 64] {
        let p = regularization_probe(&phi, &phi.regularize(n).unwrap(), n);
        let nf = n as f64;
        ok &= p.sup_error <= 4.0 / nf && p.min_a >= 2.0 / nf;
        detail.push(format!("n={n}: sup|a-a_n|={:.3e}<={:.3e}, min a_n={:.4}>={:.4}", p.sup_error, 4.0 / nf, p.min_a, 2.0 / nf));
    }
    verdict("regularization contract", ok, detail.join("; "));
}

fn heat_l1_error(cells: usize, dt: Option<f64>) -> f64 {
    let d = BoxDomain::interval(1.0).unwrap();
    let eps = 1.0;
    let horizon = 0.1;
    let c = CoefficientSet::new(DiffusionNonlinearity::linear(eps, 2.0, 1.0).unwrap(), &NoiseField::zero(1), &DriftFields::zero(1)).unwrap();
    let spec = ProblemSpec::new(d, horizon, c, InitialDatum::sine(d, 1.0)).unwrap();
    let cfg = SolverConfig::new(cells);
    let dt = dt.unwrap_or_else(|| cfg.default_dt(&spec).unwrap());
    let steps = (horizon / dt).round() as usize;
    let tr = solve_path(&spec, 64, &NoisePath::zeros(steps, 0, horizon / steps as f64), &cfg).unwrap();
    let decay = (-eps * PI * PI * horizon).exp();
    let exact: Vec<f64> = tr.grid.centers().iter().map(|x| decay * (PI * x[0]).sin()).collect();
    let diff: Vec<f64> = tr.final_state().u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).collect();
    tr.grid.integrate(&diff)
}

#[test]
fn deterministic_limit_fidelity() {
    let err = heat_l1_error(256, Some(1e-4));
    let errs: Vec<f64> = [64, 128, 256].iter().map(|&j| heat_l1_error(j, None)).collect();
    let x: Vec<f64> = [64.0f64, 128.0, 256.0].iter().map(|j| (1.0 / j).ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (order, _) = linear_fit(&x, &y);
    verdict(
        "deterministic limit fidelity",
        err <= 1e-3 && order >= 0.9,
        format!("L1 error at J=256 dt=1e-4: {err:.3e} <= 1e-3; errors {errs:?} give spatial order {order:.3} >= 0.9"),
    );
}

#[test]
fn nonnegativity() {
    let spec = reference();
    let rep = run_nonnegativity(&spec, &ensemble(&spec, vec![LEVEL])).unwrap();
    verdict(
        "non-negativity",
        rep.passed(),
        format!("{}; {}; {}", show(&rep, "max_clipped_mass"), show(&rep, "mean_clipped_mass"), show(&rep, "min_pre_clip")),
    );
}

fn perturbed(spec: &ProblemSpec, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ProblemSpec {
    let d = spec.domain;
    let base = InitialDatum::sine(d, 2.0);
    spec.with_initial(base.plus(&InitialDatum::new("perturbation", move |x| f(x[0]))))
}

#[test]
fn comparison_principle() {
    let spec = reference();
    let tilde = perturbed(&spec, |x| 0.1 * (-((x - 0.5) / 0.15).powi(2)).exp());
    let rep = run_l1_contraction(&spec, &tilde, &ensemble(&spec, vec![LEVEL])).unwrap();
    let m = rep.metric("ordering@T").expect("data are ordered");
    verdict("comparison principle", m.passed(), show(&rep, "ordering@T"));
}

#[test]
fn l1_stability_trend() {
    let spec = reference();
    let tilde = perturbed(&spec, |x| 0.1 * (2.0 * PI * x).sin());
    let rep = run_l1_contraction(&spec, &tilde, &ensemble(&spec, vec![LEVEL])).unwrap();
    let m = rep.metric("stability@T").unwrap();
    verdict(
        "L1 stability trend",
        m.passed(),
        format!("{}; {}; {}", show(&rep, "stability@T"), show(&rep, "initial_positive_part_l1"), show(&rep, "lipschitz_L")),
    );
}

#[test]
fn entropy_battery() {
    let spec = reference();
    let ens = ensemble(&spec, vec![LEVEL]);
    let battery = default_battery(&spec.domain, spec.horizon, 2.0).unwrap();
    let rep = run_entropy_battery(&spec, &ens, &battery).unwrap();
    let worst = |prefix: &str| {
        rep.metrics
            .iter()
            .filter(|m| m.name.starts_with(prefix) && m.verdict.is_some())
            .map(|m| m.lhs - m.rhs)
            .fold(f64::INFINITY, f64::min)
    };
    let failed: Vec<&str> = rep.failures().iter().map(|m| m.name.as_str()).collect();
    verdict(
        "entropy battery",
        rep.passed(),
        format!(
            "{} pairs; min margin MC {:.3e}, deterministic {:.3e}; failed {:?}",
            battery.len(),
            worst("mc:"),
            worst("det:"),
            failed
        ),
    );
}

fn ladder() -> &'static LadderRun {
    static RUN: OnceLock<LadderRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let spec = reference();
        run_level_ladder(&spec, &[8, 16, 32, 64], &ensemble(&spec, vec![8])).unwrap()
    })
}

#[test]
fn cauchy_in_n() {
    let rep = cauchy_report(ladder()).unwrap();
    let d: Vec<String> = ["D(8,16)", "D(16,32)", "D(32,64)"].iter().map(|n| show(&rep, n)).collect();
    let failed: Vec<&str> = rep.failures().iter().map(|m| m.name.as_str()).collect();
    verdict("Cauchy in n", rep.passed(), format!("{}; failed {failed:?}", d.join("; ")));
}

#[test]
fn apriori_uniformity() {
    let full = ladder();
    let sub = LadderRun {
        levels: full.levels[..3].to_vec(),
        grid: full.grid.clone(),
        finals: full.finals.iter().map(|f| f[..3].to_vec()).collect(),
        norms: full.norms.iter().map(|n| n[..3].to_vec()).collect(),
        provenance: full.provenance.clone(),
    };
    let rep = apriori_report(&sub).unwrap();
    let names = ["sup_l2_sq uniform in n", "grad_bracket_sq uniform in n", "sup_lm1 uniform in n"];
    let detail: Vec<String> = names.iter().map(|n| show(&rep, n)).collect();
    verdict("a priori uniformity", rep.passed(), detail.join("; "));
}

#[test]
fn initial_attainment() {
    let spec = reference();
    let rep = run_initial_attainment(&spec, &ensemble(&spec, vec![LEVEL])).unwrap();
    let checks: Vec<String> = rep.metrics.iter().filter(|m| m.verdict.is_some()).map(|m| show(&rep, &m.name)).collect();
    verdict("initial attainment", rep.passed(), format!("{}; {}", checks.join("; "), show(&rep, "loglog_slope")));
}

#[test]
fn mollified_difference_rate() {
    let spec = reference();
    let eps = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0];
    let rep = run_mollified_difference_ensemble(&spec, &ensemble(&spec, vec![LEVEL]), &eps).unwrap();
    let m = rep.metric("slope_u").unwrap();
    verdict("mollified-difference rate", m.passed(), format!("{}; {}", show(&rep, "slope_u"), show(&rep, "slope_phi")));
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reproducibility() {
    let root = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.cfg");
    let run_in = |name: &str, threads: usize| {
        let m = RunManifest {
            config: config.clone(),
            suites: ["nonnegativity", "l1-contraction", "cauchy", "initial-attainment", "mollified-difference"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            out: root.path().join(name),
            overrides: Overrides { seed: Some(7), max_paths: Some(8), max_cells: Some(32) },
            plot_data: true,
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run(&m).unwrap());
        read_dir(&m.out)
    };
    let a = run_in("a", 1);
    let b = run_in("b", 1);
    let c = run_in("c", 3);
    let ok = a == b && a == c && a.len() >= 6;
    verdict(
        "reproducibility",
        ok,
        format!("{} files; rerun identical: {}; 1 vs 3 workers identical: {}", a.len(), a == b, a == c),
    );
}
