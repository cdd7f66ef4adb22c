//! RNN-shaped discrete-time state-space systems and their simulation.
//!
//! A block is `s(t+1) = σ_f(A s(t) + B v(t) + b_s)`, `y(t) = σ_g(C s(t) + D v(t) + b_y)`.
//! Steady-state (infinite-past) trajectories are approximated by running a
//! burn-in prefix from `s0 = 0`; the prefix length comes from the exponential
//! convergence certificate.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certify::ClassSConstants;
use crate::error::{Error, Result};
use crate::numerics::{norm2, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Relu | Activation::Tanh | Activation::Identity => 1.0,
            Activation::Sigmoid => 0.25,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Whether the activation maps into a bounded interval of half-width at most 1.
    pub fn is_saturating(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Sigmoid)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        };
        f.write_str(s)
    }
}

/// Anything that advances a state and emits an output from an input.
pub trait StateSpace {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Writes `f(s, v)` into `next` and `g(s, v)` into `y`.
    fn step(&self, s: &[f64], v: &[f64], next: &mut [f64], y: &mut [f64]);
}

/// One recurrent block with affine pre-activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct RnnSystem {
    a: Matrix,
    b: Matrix,
    b_s: Vec<f64>,
    c: Matrix,
    d: Matrix,
    b_y: Vec<f64>,
    sigma_f: Activation,
    sigma_g: Activation,
}

impl RnnSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Matrix,
        b: Matrix,
        b_s: Vec<f64>,
        c: Matrix,
        d: Matrix,
        b_y: Vec<f64>,
        sigma_f: Activation,
        sigma_g: Activation,
    ) -> Result<Self> {
        let n_s = a.rows();
        let n_v = b.cols();
        let n_y = c.rows();
        let check = |what: &'static str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, got })
            }
        };
        check("A columns", n_s, a.cols())?;
        check("B rows", n_s, b.rows())?;
        check("b_s length", n_s, b_s.len())?;
        check("C columns", n_s, c.cols())?;
        check("D rows", n_y, d.rows())?;
        check("D columns", n_v, d.cols())?;
        check("b_y length", n_y, b_y.len())?;
        if b_s.iter().chain(&b_y).any(|x| !x.is_finite()) {
            return Err(Error::invalid("bias entries must be finite"));
        }
        Ok(RnnSystem {
            a,
            b,
            b_s,
            c,
            d,
            b_y,
            sigma_f,
            sigma_g,
        })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn b_s(&self) -> &[f64] {
        &self.b_s
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn d(&self) -> &Matrix {
        &self.d
    }
    pub fn b_y(&self) -> &[f64] {
        &self.b_y
    }
    pub fn sigma_f(&self) -> Activation {
        self.sigma_f
    }
    pub fn sigma_g(&self) -> Activation {
        self.sigma_g
    }

    pub fn n_s(&self) -> usize {
        self.a.rows()
    }
    pub fn n_v(&self) -> usize {
        self.b.cols()
    }
    pub fn n_y(&self) -> usize {
        self.c.rows()
    }

    pub fn from_json_str(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serialization is infallible");
        std::fs::write(path, text + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl StateSpace for RnnSystem {
    fn state_dim(&self) -> usize {
        self.n_s()
    }
    fn input_dim(&self) -> usize {
        self.n_v()
    }
    fn output_dim(&self) -> usize {
        self.n_y()
    }

    #[inline]
    fn step(&self, s: &[f64], v: &[f64], next: &mut [f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (cij, sj) in self.c.row(i).iter().zip(s) {
                acc += cij * sj;
            }
            for (dij, vj) in self.d.row(i).iter().zip(v) {
                acc += dij * vj;
            }
            *out = self.sigma_g.apply(acc + self.b_y[i]);
        }
        for (i, out) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (aij, sj) in self.a.row(i).iter().zip(s) {
                acc += aij * sj;
            }
            for (bij, vj) in self.b.row(i).iter().zip(v) {
                acc += bij * vj;
            }
            *out = self.sigma_f.apply(acc + self.b_s[i]);
        }
    }
}

/// On-disk model layout (matrices as nested row-major arrays).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_s: usize,
    pub n_v: usize,
    pub n_y: usize,
    pub sigma_f: Activation,
    pub sigma_g: Activation,
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B")]
    pub b: Matrix,
    pub b_s: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Matrix,
    #[serde(rename = "D")]
    pub d: Matrix,
    pub b_y: Vec<f64>,
}

impl TryFrom<ModelFile> for RnnSystem {
    type Error = Error;

    fn try_from(m: ModelFile) -> Result<Self> {
        let sys = RnnSystem::new(m.a, m.b, m.b_s, m.c, m.d, m.b_y, m.sigma_f, m.sigma_g)?;
        for (what, expected, got) in [
            ("n_s", m.n_s, sys.n_s()),
            ("n_v", m.n_v, sys.n_v()),
            ("n_y", m.n_y, sys.n_y()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch { what, expected, got });
            }
        }
        Ok(sys)
    }
}

impl From<RnnSystem> for ModelFile {
    fn from(s: RnnSystem) -> Self {
        ModelFile {
            n_s: s.n_s(),
            n_v: s.n_v(),
            n_y: s.n_y(),
            sigma_f: s.sigma_f,
            sigma_g: s.sigma_g,
            a: s.a,
            b: s.b,
            b_s: s.b_s,
            c: s.c,
            d: s.d,
            b_y: s.b_y,
        }
    }
}

/// Two blocks in series: the first block's output drives the second block.
///
/// The stacked state is `[s1; s2]` and the overall output is the second
/// block's output.
#[derive(Debug, Clone)]
pub struct Series<S1, S2> {
    pub first: S1,
    pub second: S2,
}

impl<S1: StateSpace, S2: StateSpace> Series<S1, S2> {
    pub fn new(first: S1, second: S2) -> Result<Self> {
        if first.output_dim() != second.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "series interconnection (first output vs second input)",
                expected: second.input_dim(),
                got: first.output_dim(),
            });
        }
        Ok(Series { first, second })
    }
}

impl<S1: StateSpace, S2: StateSpace> StateSpace for Series<S1, S2> {
    fn state_dim(&self) -> usize {
        self.first.state_dim() + self.second.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.first.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.second.output_dim()
    }

    fn step(&self, s: &[f64], v: &[f64], next: &mut [f64], y: &mut [f64]) {
        let n1 = self.first.state_dim();
        let (s1, s2) = s.split_at(n1);
        let (next1, next2) = next.split_at_mut(n1);
        let mut y1 = vec![0.0; self.first.output_dim()];
        self.first.step(s1, v, next1, &mut y1);
        self.second.step(s2, &y1, next2, y);
    }
}

/// States `s(0..T)` and outputs `y(0..T)` of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    /// `s(T)`, the state after the last input.
    pub final_state: Vec<f64>,
}

fn check_inputs<S: StateSpace + ?Sized>(sys: &S, s0: &[f64], inputs: &[Vec<f64>]) -> Result<()> {
    if s0.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: sys.state_dim(),
            got: s0.len(),
        });
    }
    if let Some(bad) = inputs.iter().find(|v| v.len() != sys.input_dim()) {
        return Err(Error::DimensionMismatch {
            what: "input vector",
            expected: sys.input_dim(),
            got: bad.len(),
        });
    }
    Ok(())
}

pub fn simulate<S: StateSpace + ?Sized>(sys: &S, s0: &[f64], inputs: &[Vec<f64>]) -> Result<Simulation> {
    check_inputs(sys, s0, inputs)?;
    let mut states = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut s = s0.to_vec();
    let mut next = vec![0.0; sys.state_dim()];
    for v in inputs {
        let mut y = vec![0.0; sys.output_dim()];
        sys.step(&s, v, &mut next, &mut y);
        states.push(std::mem::replace(&mut s, next.clone()));
        outputs.push(y);
    }
    Ok(Simulation {
        states,
        outputs,
        final_state: s,
    })
}

/// Streams `(t, y(t))` without materializing the trajectory.
pub fn for_each_output<S, F>(sys: &S, s0: &[f64], inputs: &[Vec<f64>], mut visit: F) -> Result<()>
where
    S: StateSpace + ?Sized,
    F: FnMut(usize, &[f64]),
{
    check_inputs(sys, s0, inputs)?;
    let mut s = s0.to_vec();
    let mut next = vec![0.0; sys.state_dim()];
    let mut y = vec![0.0; sys.output_dim()];
    for (t, v) in inputs.iter().enumerate() {
        sys.step(&s, v, &mut next, &mut y);
        std::mem::swap(&mut s, &mut next);
        visit(t, &y);
    }
    Ok(())
}

/// Smallest `T ≥ 0` with `C·τᵀ·gap ≤ tol`.
pub fn decay_steps(c: f64, tau: f64, gap: f64, tol: f64) -> Result<usize> {
    if !(tau < 1.0) {
        return Err(Error::NotClassS { what: "tau", value: tau });
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let mut bound = c * gap;
    let mut steps = 0;
    while bound > tol {
        bound *= tau;
        steps += 1;
    }
    Ok(steps)
}

/// Burn-in that brings an initial state within `tol` of the steady state,
/// using `s0_bound + C/(1−τ)` as the initial gap.
pub fn burn_in_length(consts: &ClassSConstants, s0_bound: f64, tol: f64) -> Result<usize> {
    if !(consts.tau < 1.0) {
        return Err(Error::NotClassS {
            what: "tau",
            value: consts.tau,
        });
    }
    let gap = s0_bound + consts.c / (1.0 - consts.tau);
    decay_steps(consts.c, consts.tau, gap, tol)
}

/// Radius of a ball containing every steady-state state of an RNN driven by
/// inputs with `‖v‖₂ ≤ input_bound`: `(L_v·input_bound + ‖σ_f(b_s)‖)/(1−τ)`.
pub fn steady_state_radius(sys: &RnnSystem, consts: &ClassSConstants, input_bound: f64) -> f64 {
    let offset: Vec<f64> = sys.b_s.iter().map(|b| sys.sigma_f.apply(*b)).collect();
    (consts.l_v * input_bound + norm2(&offset)) / (1.0 - consts.tau)
}

/// Outputs after the first `burn_in` steps of a run started at zero.
pub fn steady_state_outputs<S: StateSpace + ?Sized>(
    sys: &S,
    inputs_with_prefix: &[Vec<f64>],
    burn_in: usize,
) -> Result<Vec<Vec<f64>>> {
    if burn_in >= inputs_with_prefix.len() {
        return Err(Error::invalid(format!(
            "burn-in {burn_in} must be shorter than the input sequence ({})",
            inputs_with_prefix.len()
        )));
    }
    let s0 = vec![0.0; sys.state_dim()];
    let mut out = Vec::with_capacity(inputs_with_prefix.len() - burn_in);
    for_each_output(sys, &s0, inputs_with_prefix, |t, y| {
        if t >= burn_in {
            out.push(y.to_vec());
        }
    })?;
    Ok(out)
}

/// Labelled time series: predictor inputs `x(t)` and labels `y(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::DimensionMismatch {
                what: "trajectory outputs vs inputs",
                expected: inputs.len(),
                got: outputs.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::invalid("trajectory must be nonempty"));
        }
        let nx = inputs[0].len();
        let ny = outputs[0].len();
        if inputs.iter().any(|x| x.len() != nx) || outputs.iter().any(|y| y.len() != ny) {
            return Err(Error::invalid("trajectory vectors must have constant dimension"));
        }
        if inputs.iter().chain(&outputs).flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory entries must be finite"));
        }
        Ok(Trajectory { inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs[0].len()
    }

    /// The window `[start, end)` as its own trajectory.
    pub fn window(&self, start: usize, end: usize) -> Result<Trajectory> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(format!(
                "window [{start}, {end}) outside trajectory of length {}",
                self.len()
            )));
        }
        Ok(Trajectory {
            inputs: self.inputs[start..end].to_vec(),
            outputs: self.outputs[start..end].to_vec(),
        })
    }

    /// CSV with header `t, x_0..x_{m-1}, y_0..y_{p-1}`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> std::result::Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.input_dim()).map(|i| format!("x_{i}")));
        header.extend((0..self.output_dim()).map(|i| format!("y_{i}")));
        wtr.write_record(&header)?;
        for (t, (x, y)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(x.iter().chain(y).map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(file).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Trajectory> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| Error::invalid(format!("trajectory header: {e}")))?
            .clone();
        let nx = headers.iter().filter(|h| h.starts_with("x_")).count();
        let ny = headers.iter().filter(|h| h.starts_with("y_")).count();
        if headers.get(0) != Some("t") || headers.len() != 1 + nx + ny {
            return Err(Error::invalid("trajectory header must be t, x_*, y_*"));
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::invalid(format!("trajectory row: {e}")))?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::invalid(format!("trajectory value: {e}")))?;
            inputs.push(vals[..nx].to_vec());
            outputs.push(vals[nx..].to_vec());
        }
        Trajectory::new(inputs, outputs)
    }

    pub fn load_csv(path: &Path) -> Result<Trajectory> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Trajectory::read_csv(file)
    }
}
