//! End-to-end synthetic experiment: a fixed ReLU/tanh generator produces data,
//! predictors of the same shape are drawn from a stability-truncated Gaussian
//! prior, and the bound is evaluated on a grid of dataset sizes and seeds.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bound::{assemble_report, check_delta, psi1_exponent, psi2_exponent, save_reports_csv, BoundReport, SampleRecord};
use crate::certify::{g_and_h, rnn_constants, ClassSConstants};
use crate::dynsys::{decay_steps, simulate, steady_state_radius, Activation, RnnSystem, Trajectory};
use crate::error::{Error, Result};
use crate::loss::{empirical_loss, loss_lipschitz_with, LipschitzMode, LossSpec};
use crate::mcmc::{chain_diagnostics, mh_sample, ChainConfig};
use crate::mixing::{effective_data_constants, DataConstants};
use crate::numerics::{derive_seed, norm2, spectral_norm, truncated_gaussian, Matrix, SeededRng};

/// Square loss of the zero predictor against tanh-bounded labels never exceeds this.
pub const VACUITY_LEVEL: f64 = 1.0;

/// Steady-state tolerance used for the data burn-in.
pub const DATA_STEADY_TOL: f64 = 1e-9;

/// `λ` as a function of the dataset size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaRule {
    SqrtN,
    Fixed(f64),
}

impl LambdaRule {
    pub fn lambda(&self, n: usize) -> f64 {
        match *self {
            LambdaRule::SqrtN => (n as f64).sqrt(),
            LambdaRule::Fixed(v) => v,
        }
    }
}

impl fmt::Display for LambdaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaRule::SqrtN => f.write_str("sqrt_n"),
            LambdaRule::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for LambdaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sqrt_n" => Ok(LambdaRule::SqrtN),
            other => other
                .parse::<f64>()
                .map(LambdaRule::Fixed)
                .map_err(|_| Error::invalid(format!("lambda must be `sqrt_n` or a number, got `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawLambda {
    Value(f64),
    Name(String),
}

impl Serialize for LambdaRule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            LambdaRule::SqrtN => RawLambda::Name("sqrt_n".into()).serialize(s),
            LambdaRule::Fixed(v) => RawLambda::Value(v).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaRule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawLambda::deserialize(d)? {
            RawLambda::Value(v) => Ok(LambdaRule::Fixed(v)),
            RawLambda::Name(n) => n.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Experiment configuration; the JSON config file mirrors these fields.
///
/// `chain.steps` is derived as `chain.burn_in + n_f * chain.thin` so that
/// every chain retains exactly `n_f` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_grid: Vec<usize>,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub prior_sigma2: f64,
    pub lambda_rule: LambdaRule,
    pub delta: f64,
    pub n_f: usize,
    pub chain: ChainConfig,
    pub loss: LossSpec,
    pub lipschitz_mode: LipschitzMode,
    pub e_inf: f64,
    pub e_std: f64,
    pub tau_max: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_grid: vec![5, 9, 20, 50, 100, 200, 500, 1000],
            n_seeds: 10,
            base_seed: 0,
            prior_sigma2: 0.02,
            lambda_rule: LambdaRule::SqrtN,
            delta: 0.025,
            n_f: 5000,
            chain: ChainConfig {
                steps: 0,
                burn_in: 1000,
                thin: 10,
                proposal_std: 0.05,
                seed: 0,
            },
            loss: LossSpec::Square,
            lipschitz_mode: LipschitzMode::Paper,
            e_inf: 1.27,
            e_std: 1.0,
            tau_max: 0.995,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::invalid("n_grid must be nonempty"));
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_grid must be strictly ascending positive sizes"));
        }
        if self.n_seeds == 0 {
            return Err(Error::invalid("n_seeds must be positive"));
        }
        if !(self.prior_sigma2 > 0.0 && self.prior_sigma2.is_finite()) {
            return Err(Error::invalid("prior_sigma2 must be positive"));
        }
        if let LambdaRule::Fixed(v) = self.lambda_rule {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("fixed lambda must be positive, got {v}")));
            }
        }
        check_delta(self.delta)?;
        if self.n_f == 0 {
            return Err(Error::invalid("n_f must be positive"));
        }
        self.chain_for(0).validate()?;
        self.loss.validate()?;
        if let LossSpec::SoftmaxXent { classes } = self.loss {
            return Err(Error::invalid(format!(
                "the synthetic generator emits a scalar real label; softmax with {classes} classes does not apply"
            )));
        }
        if !(self.e_inf > 0.0 && self.e_std > 0.0) {
            return Err(Error::invalid("e_inf and e_std must be positive"));
        }
        if !(self.tau_max > 0.0 && self.tau_max < 1.0) {
            return Err(Error::invalid(format!("tau_max must lie in (0, 1), got {}", self.tau_max)));
        }
        Ok(())
    }

    /// Chain settings for one cell, with the seed mixed from `cell_seed`.
    pub fn chain_for(&self, cell_seed: u64) -> ChainConfig {
        ChainConfig {
            steps: self.chain.burn_in + self.n_f * self.chain.thin,
            seed: cell_seed,
            ..self.chain
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_seeds as u64).map(move |i| self.base_seed + i)
    }
}

/// Layout of predictor parameter vectors.
///
/// Order: `Â` (row-major), `B̂`, `b̂_s`, `Ĉ`, `D̂`, `b̂_y`, `ŝ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorShape {
    pub n_s: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub sigma_f: Activation,
    pub sigma_g: Activation,
}

impl Default for PredictorShape {
    fn default() -> Self {
        PredictorShape {
            n_s: 2,
            n_x: 1,
            n_y: 1,
            sigma_f: Activation::Relu,
            sigma_g: Activation::Tanh,
        }
    }
}

impl PredictorShape {
    fn sizes(&self) -> [usize; 7] {
        let (s, x, y) = (self.n_s, self.n_x, self.n_y);
        [s * s, s * x, s, y * s, y * x, y, s]
    }

    pub fn dim(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn flatten(&self, sys: &RnnSystem, s0: &[f64]) -> Result<Vec<f64>> {
        if sys.n_s() != self.n_s || sys.n_v() != self.n_x || sys.n_y() != self.n_y || s0.len() != self.n_s {
            return Err(Error::invalid("system does not match the predictor shape"));
        }
        let mut theta = Vec::with_capacity(self.dim());
        theta.extend_from_slice(sys.a().as_slice());
        theta.extend_from_slice(sys.b().as_slice());
        theta.extend_from_slice(sys.b_s());
        theta.extend_from_slice(sys.c().as_slice());
        theta.extend_from_slice(sys.d().as_slice());
        theta.extend_from_slice(sys.b_y());
        theta.extend_from_slice(s0);
        Ok(theta)
    }

    pub fn unflatten(&self, theta: &[f64]) -> Result<(RnnSystem, Vec<f64>)> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let mut rest = theta;
        let mut parts = self.sizes().map(|k| {
            let (head, tail) = rest.split_at(k);
            rest = tail;
            head.to_vec()
        });
        let s0 = std::mem::take(&mut parts[6]);
        let [a, b, b_s, c, d, b_y, _] = parts;
        let sys = RnnSystem::new(
            Matrix::new(self.n_s, self.n_s, a)?,
            Matrix::new(self.n_s, self.n_x, b)?,
            b_s,
            Matrix::new(self.n_y, self.n_s, c)?,
            Matrix::new(self.n_y, self.n_x, d)?,
            b_y,
            self.sigma_f,
            self.sigma_g,
        )?;
        Ok((sys, s0))
    }

    /// `Lip(σ_f)·‖Â‖₂` read straight from the parameter vector.
    pub fn contraction_rate(&self, theta: &[f64]) -> Result<f64> {
        let k = self.n_s * self.n_s;
        if theta.len() < k {
            return Err(Error::invalid("parameter vector too short"));
        }
        let a = Matrix::new(self.n_s, self.n_s, theta[..k].to_vec())?;
        Ok(self.sigma_f.lipschitz() * spectral_norm(&a)?)
    }
}

/// The fixed generator of the synthetic experiment (stacked output `[y; x]`).
pub fn build_paper_generator() -> RnnSystem {
    let m = |rows: [[f64; 2]; 2]| Matrix::from_rows(&rows.map(|r| r.to_vec())).expect("2x2 literal");
    RnnSystem::new(
        m([[0.52, 0.23], [0.23, -0.52]]),
        m([[-0.82, -0.45], [0.36, -0.96]]),
        vec![0.38, -0.06],
        m([[0.05, -0.10], [-0.11, 0.01]]),
        m([[0.09, -0.11], [0.05, -0.16]]),
        vec![-0.53, -0.79],
        Activation::Relu,
        Activation::Tanh,
    )
    .expect("generator literal is consistent")
}

/// Samples `n` steady-state steps of `gen` driven by truncated-Gaussian noise.
///
/// The first `label_dim` output coordinates become the label `y(t)`, the rest
/// the predictor input `x(t)`. The noise stream is consumed time step by time
/// step, so datasets from the same seed are prefixes of each other.
pub fn generate_dataset_with(
    gen: &RnnSystem,
    label_dim: usize,
    seed: u64,
    n: usize,
    e_std: f64,
    e_inf: f64,
) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    if label_dim == 0 || label_dim >= gen.n_y() {
        return Err(Error::invalid(format!(
            "label dimension {label_dim} must split the {}-dimensional generator output",
            gen.n_y()
        )));
    }
    let burn = data_burn_in(gen, e_inf)?;
    let nv = gen.n_v();
    let mut rng = SeededRng::new(seed);
    let noise = truncated_gaussian(&mut rng, e_std, e_inf, (burn + n) * nv)?;
    let inputs: Vec<Vec<f64>> = noise.chunks(nv).map(<[f64]>::to_vec).collect();
    let sim = simulate(gen, &vec![0.0; gen.n_s()], &inputs)?;
    let (labels, xs) = sim.outputs[burn..]
        .iter()
        .map(|o| (o[..label_dim].to_vec(), o[label_dim..].to_vec()))
        .unzip();
    Trajectory::new(xs, labels)
}

/// Burn-in that puts a zero-initialized generator within [`DATA_STEADY_TOL`]
/// of its steady state.
pub fn data_burn_in(gen: &RnnSystem, e_inf: f64) -> Result<usize> {
    let k = rnn_constants(gen)?;
    let input_bound = e_inf * (gen.n_v() as f64).sqrt();
    let radius = steady_state_radius(gen, &k, input_bound);
    decay_steps(k.c, k.tau, radius, DATA_STEADY_TOL)
}

pub fn generate_dataset(seed: u64, n: usize, e_std: f64, e_inf: f64) -> Result<Trajectory> {
    generate_dataset_with(&build_paper_generator(), 1, seed, n, e_std, e_inf)
}

/// Quantities shared by every cell of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub cfg: ExperimentConfig,
    pub generator: RnnSystem,
    pub generator_constants: ClassSConstants,
    pub data: DataConstants,
    pub shape: PredictorShape,
}

impl ExperimentContext {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = build_paper_generator();
        let generator_constants = rnn_constants(&generator)?;
        let data = effective_data_constants(&generator, &generator_constants, cfg.e_inf)?;
        Ok(ExperimentContext {
            cfg,
            generator,
            generator_constants,
            data,
            shape: PredictorShape::default(),
        })
    }

    /// Stability-truncated Gaussian log prior (up to a constant).
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        match self.shape.contraction_rate(theta) {
            Ok(tau) if tau < self.cfg.tau_max => {
                -0.5 * theta.iter().map(|x| x * x).sum::<f64>() / self.cfg.prior_sigma2
            }
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn dataset(&self, seed: u64, n: usize) -> Result<Trajectory> {
        generate_dataset_with(&self.generator, 1, seed, n, self.cfg.e_std, self.cfg.e_inf)
    }

    /// Draws the prior cloud for one cell.
    pub fn prior_samples(&self, seed: u64, n: usize) -> Result<(Vec<Vec<f64>>, f64)> {
        let chain_cfg = self.cfg.chain_for(derive_seed(self.cfg.chain.seed, &[seed, n as u64]));
        let init = vec![0.0; self.shape.dim()];
        let chain = mh_sample(|t| self.log_prior(t), &init, &chain_cfg)?;
        let rate = chain_diagnostics(&chain)?.acceptance_rate;
        Ok((chain.samples, rate))
    }

    /// Constants, losses and Ψ-exponents of one parameter vector.
    pub fn evaluate_sample(&self, theta: &[f64], data: &Trajectory, lambda: f64) -> Result<SampleRecord> {
        let (sys, s0) = self.shape.unflatten(theta)?;
        let constants = rnn_constants(&sys)?;
        if !(constants.tau < self.cfg.tau_max) {
            return Err(Error::Invariant(format!(
                "retained sample has tau = {} >= tau_max = {}",
                constants.tau, self.cfg.tau_max
            )));
        }
        let gh = g_and_h(&constants)?;
        let l_ell = loss_lipschitz_with(&self.cfg.loss, &self.data, &gh, self.cfg.lipschitz_mode);
        let emp_loss = empirical_loss(&self.cfg.loss, &sys, &s0, data)?;
        let s0_norm = norm2(&s0);
        let n = data.len();
        let psi1_exp = psi1_exponent(lambda, n, l_ell, &self.data, &gh)?;
        let psi2_exp = psi2_exponent(lambda, n, l_ell, &constants, self.data.b_q, &gh, s0_norm)?;
        if !(psi1_exp.is_finite() && psi2_exp.is_finite()) {
            return Err(Error::Invariant("non-finite Psi exponent".into()));
        }
        Ok(SampleRecord {
            theta: theta.to_vec(),
            s0_norm,
            constants,
            gh,
            l_ell,
            emp_loss,
            psi1_exp,
            psi2_exp,
        })
    }

    /// Everything computed for one `(seed, N)` cell.
    pub fn run_cell(&self, seed: u64, n: usize) -> Result<CellResult> {
        let data = self.dataset(seed, n)?;
        let (thetas, acceptance_rate) = self.prior_samples(seed, n)?;
        let lambda = self.cfg.lambda_rule.lambda(n);
        let records = thetas
            .par_iter()
            .map(|t| self.evaluate_sample(t, &data, lambda))
            .collect::<Result<Vec<_>>>()?;
        let report = assemble_report(n, seed, lambda, self.cfg.delta, &records)?;
        Ok(CellResult {
            report,
            records,
            acceptance_rate,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub report: BoundReport,
    pub records: Vec<SampleRecord>,
    pub acceptance_rate: f64,
}

/// Bound reports for every `(seed, N)` cell, ordered by seed then `N`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<BoundReport>> {
    let ctx = ExperimentContext::new(cfg.clone())?;
    let cells: Vec<(u64, usize)> = cfg
        .seeds()
        .flat_map(|s| cfg.n_grid.iter().map(move |&n| (s, n)))
        .collect();
    cells
        .par_iter()
        .map(|&(seed, n)| {
            let cell = ctx.run_cell(seed, n)?;
            log::info!(
                "seed {seed} N {n}: total {:.4} (acceptance {:.3})",
                cell.report.total,
                cell.acceptance_rate
            );
            Ok(cell.report)
        })
        .collect()
}

/// Per-`N` spread of the total bound and posterior empirical loss across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub n_seeds: usize,
    pub total_median: f64,
    pub total_min: f64,
    pub total_max: f64,
    pub post_emp_loss_median: f64,
    pub post_emp_loss_min: f64,
    pub post_emp_loss_max: f64,
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "N",
    "n_seeds",
    "total_median",
    "total_min",
    "total_max",
    "post_emp_loss_median",
    "post_emp_loss_min",
    "post_emp_loss_max",
    "vacuity_level",
];

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn summarize(reports: &[BoundReport]) -> Vec<SummaryRow> {
    let mut ns: Vec<usize> = reports.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let cell: Vec<&BoundReport> = reports.iter().filter(|r| r.n == n).collect();
            let totals: Vec<f64> = cell.iter().map(|r| r.total).collect();
            let losses: Vec<f64> = cell.iter().map(|r| r.post_emp_loss).collect();
            let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            SummaryRow {
                n,
                n_seeds: cell.len(),
                total_median: median(&totals),
                total_min: min(&totals),
                total_max: max(&totals),
                post_emp_loss_median: median(&losses),
                post_emp_loss_min: min(&losses),
                post_emp_loss_max: max(&losses),
            }
        })
        .collect()
}

/// Smallest grid size from which `values` stay below `level` for the rest of the grid.
pub fn crossover(points: &[(usize, f64)], level: f64) -> Option<usize> {
    let mut answer = None;
    for &(n, v) in points.iter().rev() {
        if v < level {
            answer = Some(n);
        } else {
            break;
        }
    }
    answer
}

/// Per-seed and median crossover sizes `N*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossovers {
    pub per_seed: Vec<(u64, Option<usize>)>,
    pub median: Option<usize>,
}

pub fn crossovers(reports: &[BoundReport]) -> Crossovers {
    let mut seeds: Vec<u64> = reports.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let per_seed = seeds
        .into_iter()
        .map(|s| {
            let mut pts: Vec<(usize, f64)> = reports.iter().filter(|r| r.seed == s).map(|r| (r.n, r.total)).collect();
            pts.sort_by_key(|p| p.0);
            (s, crossover(&pts, VACUITY_LEVEL))
        })
        .collect();
    let med: Vec<(usize, f64)> = summarize(reports).iter().map(|r| (r.n, r.total_median)).collect();
    Crossovers {
        per_seed,
        median: crossover(&med, VACUITY_LEVEL),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub bound_report: PathBuf,
    pub summary: PathBuf,
    pub crossover: PathBuf,
}

fn write_csv_file<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<std::fs::File>) -> std::result::Result<(), csv::Error>,
{
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    fill(&mut w).map_err(csv_err)?;
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn fmt_opt(n: Option<usize>) -> String {
    n.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `bound_report.csv`, `summary.csv` and `crossover.csv` into `dir`.
pub fn emit_curves(reports: &[BoundReport], dir: &Path) -> Result<EmittedFiles> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to emit"));
    }
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = EmittedFiles {
        bound_report: dir.join("bound_report.csv"),
        summary: dir.join("summary.csv"),
        crossover: dir.join("crossover.csv"),
    };
    save_reports_csv(reports, &files.bound_report)?;
    write_csv_file(&files.summary, |w| {
        w.write_record(SUMMARY_COLUMNS)?;
        for r in summarize(reports) {
            w.write_record([
                r.n.to_string(),
                r.n_seeds.to_string(),
                r.total_median.to_string(),
                r.total_min.to_string(),
                r.total_max.to_string(),
                r.post_emp_loss_median.to_string(),
                r.post_emp_loss_min.to_string(),
                r.post_emp_loss_max.to_string(),
                VACUITY_LEVEL.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write_csv_file(&files.crossover, |w| {
        w.write_record(["seed", "n_star"])?;
        let c = crossovers(reports);
        for (seed, n) in &c.per_seed {
            w.write_record([seed.to_string(), fmt_opt(*n)])?;
        }
        w.write_record(["median".to_string(), fmt_opt(c.median)])
    })?;
    Ok(files)
}
