mod common;

use stablebound::bound::{assemble_report, estimate_g1_g2, informal_bound, psi2_exponent, write_reports_csv, BoundReport};
use stablebound::certify::rnn_constants;
use stablebound::dynsys::{simulate, Trajectory};
use stablebound::experiment::{
    build_paper_generator, emit_curves, generate_dataset, summarize, ExperimentConfig, ExperimentContext,
};
use stablebound::loss::empirical_loss;
use stablebound::mcmc::{mh_sample, ChainConfig};
use stablebound::mixing::effective_data_constants;
use stablebound::numerics::{norm2, truncated_gaussian, SeededRng};
use stablebound::{Activation, LossSpec, RnnSystem};

/// Straight-line RNN recursion, written independently of the library's step.
fn reference_outputs(sys: &RnnSystem, s0: &[f64], inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (a, b, c, d) = (sys.a().to_rows(), sys.b().to_rows(), sys.c().to_rows(), sys.d().to_rows());
    let affine = |m: &Vec<Vec<f64>>, x: &[f64]| m.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum::<f64>()).collect::<Vec<f64>>();
    let mut s = s0.to_vec();
    let mut out = Vec::new();
    for v in inputs {
        let y: Vec<f64> = affine(&c, &s).iter().zip(affine(&d, v)).zip(sys.b_y()).map(|((p, q), r)| sys.sigma_g().apply(p + q + r)).collect();
        s = affine(&a, &s).iter().zip(affine(&b, v)).zip(sys.b_s()).map(|((p, q), r)| sys.sigma_f().apply(p + q + r)).collect();
        out.push(y);
    }
    out
}

#[test]
fn simulation_matches_reference_recursion() {
    let mut rng = SeededRng::new(17);
    for _ in 0..50 {
        let sys = common::random_rnn(&mut rng, 3, 2, 2, 0.8, Activation::Tanh, Activation::Sigmoid, true);
        let s0 = common::gaussian_vec(&mut rng, 3, 1.0);
        let inputs = common::input_sequence(&mut rng, 40, 2, 2.0);
        let sim = simulate(&sys, &s0, &inputs).unwrap();
        let reference = reference_outputs(&sys, &s0, &inputs);
        for (p, q) in sim.outputs.iter().flatten().zip(reference.iter().flatten()) {
            assert!((p - q).abs() <= 1e-12, "{p} vs {q}");
        }
    }
}

#[test]
fn generator_amplitude_never_exceeds_certified_bound() {
    let gen = build_paper_generator();
    let k = rnn_constants(&gen).unwrap();
    let d = effective_data_constants(&gen, &k, 1.27).unwrap();
    let mut rng = SeededRng::new(5);
    let noise = truncated_gaussian(&mut rng, 1.0, 1.27, 2_000_000).unwrap();
    let inputs: Vec<Vec<f64>> = noise.chunks(2).map(<[f64]>::to_vec).collect();
    let sim = simulate(&gen, &[0.0, 0.0], &inputs).unwrap();
    let worst = sim.outputs.iter().map(|o| norm2(o)).fold(0.0, f64::max);
    assert!(worst <= d.b_q, "{worst} > {}", d.b_q);
}

#[test]
fn synthetic_data_is_bounded_and_reproducible() {
    let data = generate_dataset(11, 500, 1.0, 1.27).unwrap();
    for (x, y) in data.inputs.iter().zip(&data.outputs) {
        assert!(x[0].abs() < 1.0 && y[0].abs() < 1.0);
        assert!((x[0] * x[0] + y[0] * y[0]).sqrt() <= 2f64.sqrt());
    }
    assert_eq!(generate_dataset(11, 500, 1.0, 1.27).unwrap(), data);
}

#[test]
fn paper_generator_model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("generator.json");
    let gen = build_paper_generator();
    gen.save(&path).unwrap();
    let back = RnnSystem::load(&path).unwrap();
    assert_eq!(back.a().as_slice(), gen.a().as_slice());
    assert_eq!(back.d().as_slice(), gen.d().as_slice());
    assert_eq!(back.b_y(), gen.b_y());
    let missing = RnnSystem::load(&dir.path().join("nope.json")).unwrap_err();
    assert!(missing.to_string().contains("nope.json"));
}

#[test]
fn trajectory_csv_round_trip() {
    let data = generate_dataset(2, 30, 1.0, 1.27).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    data.save_csv(&path).unwrap();
    assert_eq!(Trajectory::load_csv(&path).unwrap(), data);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("t,x_0,y_0\n"));
}

#[test]
fn empirical_loss_depends_on_order() {
    let data = generate_dataset(3, 60, 1.0, 1.27).unwrap();
    let shifted = Trajectory::new(
        data.inputs[1..].iter().chain(&data.inputs[..1]).cloned().collect(),
        data.outputs[1..].iter().chain(&data.outputs[..1]).cloned().collect(),
    )
    .unwrap();
    let shape = stablebound::PredictorShape::default();
    let theta: Vec<f64> = (0..14).map(|i| 0.1 * ((i * 7 % 5) as f64 - 2.0)).collect();
    let (pred, s0) = shape.unflatten(&theta).unwrap();
    let a = empirical_loss(&LossSpec::Square, &pred, &s0, &data).unwrap();
    let b = empirical_loss(&LossSpec::Square, &pred, &s0, &shifted).unwrap();
    assert_ne!(a, b);
}

#[test]
fn metropolis_hastings_balances_two_modes() {
    // equal-width modes at ±4 with weights 0.3 / 0.7
    let (w1, w2) = (0.3f64, 0.7f64);
    let target = |x: &[f64]| {
        let a = w1.ln() - 0.5 * (x[0] + 4.0).powi(2);
        let b = w2.ln() - 0.5 * (x[0] - 4.0).powi(2);
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln()
    };
    let cfg = ChainConfig {
        steps: 1_000_000,
        burn_in: 1_000,
        thin: 1,
        proposal_std: 4.0,
        seed: 99,
    };
    let chain = mh_sample(target, &[0.0], &cfg).unwrap();
    let left = chain.samples.iter().filter(|s| s[0] < 0.0).count() as f64;
    let right = chain.samples.len() as f64 - left;
    let ratio = right / left;
    let expected = w2 / w1;
    assert!((ratio / expected - 1.0).abs() < 0.05, "mode ratio {ratio} vs {expected}");
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        n_grid: vec![20, 100],
        n_seeds: 2,
        n_f: 300,
        ..ExperimentConfig::default()
    }
}

#[test]
fn cell_samples_are_certified_and_informal_bound_dominates() {
    let ctx = ExperimentContext::new(small_config()).unwrap();
    let cell = ctx.run_cell(0, 100).unwrap();
    assert_eq!(cell.records.len(), 300);
    for r in &cell.records {
        assert!(r.constants.tau < ctx.cfg.tau_max);
        assert!(r.psi1_exp.is_finite() && r.psi2_exp.is_finite());
    }
    let g = estimate_g1_g2(&cell.records, &ctx.data).unwrap();
    let informal = informal_bound(cell.report.lambda, 100, ctx.cfg.delta, cell.report.kl, &g).unwrap();
    assert!(informal >= cell.report.r_n);

    let losses: Vec<f64> = cell.records.iter().map(|r| r.emp_loss).collect();
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(cell.report.post_emp_loss >= lo && cell.report.post_emp_loss <= hi);
}

#[test]
fn doubling_n_at_fixed_lambda_halves_transient_exponents() {
    let ctx = ExperimentContext::new(small_config()).unwrap();
    let cell = ctx.run_cell(1, 20).unwrap();
    let lambda = 3.0;
    for r in &cell.records {
        let at = |n| psi2_exponent(lambda, n, r.l_ell, &r.constants, ctx.data.b_q, &r.gh, r.s0_norm).unwrap();
        assert_eq!(at(40), at(20) / 2.0);
    }
    let report = assemble_report(20, 1, cell.report.lambda, ctx.cfg.delta, &cell.records).unwrap();
    assert_eq!(report, cell.report);
}

fn read_all(dir: &std::path::Path) -> Vec<String> {
    ["bound_report.csv", "summary.csv", "crossover.csv"]
        .iter()
        .map(|f| std::fs::read_to_string(dir.join(f)).unwrap())
        .collect()
}

#[test]
fn emitted_curves_have_documented_layout_and_are_reproducible() {
    let cfg = small_config();
    let reports = stablebound::run_experiment(&cfg).unwrap();
    assert_eq!(reports.len(), 4);
    assert_eq!(
        reports.iter().map(|r| (r.seed, r.n)).collect::<Vec<_>>(),
        vec![(0, 20), (0, 100), (1, 20), (1, 100)]
    );
    let dir = tempfile::tempdir().unwrap();
    emit_curves(&reports, &dir.path().join("a")).unwrap();
    emit_curves(&stablebound::run_experiment(&cfg).unwrap(), &dir.path().join("b")).unwrap();
    let a = read_all(&dir.path().join("a"));
    assert_eq!(a, read_all(&dir.path().join("b")));

    assert_eq!(
        a[0].lines().next().unwrap(),
        "N,seed,lambda,delta,kl,psi_hat,r_N,post_emp_loss,total_bound,z_hat,n_samples"
    );
    assert_eq!(
        a[1].lines().next().unwrap(),
        "N,n_seeds,total_median,total_min,total_max,post_emp_loss_median,post_emp_loss_min,post_emp_loss_max,vacuity_level"
    );
    assert_eq!(a[1].lines().count(), 3);
    assert_eq!(a[2].lines().next().unwrap(), "seed,n_star");
    assert!(a[2].lines().last().unwrap().starts_with("median,"));
    for r in &reports {
        assert_eq!(r.total, r.post_emp_loss + r.r_n);
    }
}

#[test]
fn single_report_gives_one_row() {
    let report = BoundReport {
        n: 10,
        seed: 3,
        lambda: 1.5,
        delta: 0.025,
        kl: 0.25,
        psi_hat: 0.5,
        r_n: 3.0,
        post_emp_loss: 0.125,
        total: 3.125,
        z_hat: 2.0,
        n_samples: 7,
    };
    let mut buf = Vec::new();
    write_reports_csv(std::slice::from_ref(&report), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text,
        "N,seed,lambda,delta,kl,psi_hat,r_N,post_emp_loss,total_bound,z_hat,n_samples\n10,3,1.5,0.025,0.25,0.5,3,0.125,3.125,2,7\n"
    );
    let dir = tempfile::tempdir().unwrap();
    let files = emit_curves(std::slice::from_ref(&report), dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(files.bound_report).unwrap(), text);
    assert!(emit_curves(&[], dir.path()).is_err());
}

/// Median total bound over seeds should not rise past N = 50 by more than Monte-Carlo wiggle.
#[test]
fn median_bound_trend_at_paper_configuration() {
    let reports = stablebound::run_experiment(&ExperimentConfig::default()).unwrap();
    let summary = summarize(&reports);
    let tail: Vec<_> = summary.iter().filter(|r| r.n >= 50).collect();
    for w in tail.windows(2) {
        assert!(
            w[1].total_median <= 1.02 * w[0].total_median,
            "median rises from {} at N={} to {} at N={}",
            w[0].total_median,
            w[0].n,
            w[1].total_median,
            w[1].n
        );
    }
}
