//! Loss functions, their certified Lipschitz constants, and trajectory losses.

use serde::{Deserialize, Serialize};

use crate::certify::{g_and_h, ClassSConstants, GhPair};
use crate::dynsys::{for_each_output, StateSpace, Trajectory};
use crate::error::{Error, Result};
use crate::mixing::DataConstants;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `‖ŷ − y‖₂²`
    Square,
    /// Cross-entropy of `softmax(ŷ)` against soft labels `y ∈ [0,1]^K`.
    SoftmaxXent { classes: usize },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::SoftmaxXent { classes } if classes < 2 => Err(Error::invalid(format!(
                "softmax cross-entropy needs at least 2 classes, got {classes}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Which square-loss Lipschitz constant to report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMode {
    /// `2·B^q·G_θ`, ignoring the label's own amplitude.
    #[default]
    Paper,
    /// `2·B^q·(G_θ + 1)`, which also covers the label term.
    Conservative,
}

pub fn loss_value(spec: &LossSpec, y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            what: "label vs prediction",
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if let LossSpec::SoftmaxXent { classes } = *spec {
        spec.validate()?;
        if y.len() != classes {
            return Err(Error::DimensionMismatch {
                what: "softmax classes",
                expected: classes,
                got: y.len(),
            });
        }
        if let Some(bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("soft label {bad} outside [0, 1]")));
        }
    }
    Ok(loss_unchecked(spec, y, yhat))
}

#[inline]
fn loss_unchecked(spec: &LossSpec, y: &[f64], yhat: &[f64]) -> f64 {
    match spec {
        LossSpec::Square => y.iter().zip(yhat).map(|(a, b)| (b - a) * (b - a)).sum(),
        LossSpec::SoftmaxXent { .. } => {
            let max = yhat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + yhat.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            y.iter().zip(yhat).map(|(yi, zi)| yi * (lse - zi)).sum()
        }
    }
}

pub fn loss_lipschitz(spec: &LossSpec, data: &DataConstants, gh: &GhPair) -> f64 {
    loss_lipschitz_with(spec, data, gh, LipschitzMode::Paper)
}

pub fn loss_lipschitz_with(spec: &LossSpec, data: &DataConstants, gh: &GhPair, mode: LipschitzMode) -> f64 {
    match (*spec, mode) {
        (LossSpec::Square, LipschitzMode::Paper) => 2.0 * data.b_q * gh.g,
        (LossSpec::Square, LipschitzMode::Conservative) => 2.0 * data.b_q * (gh.g + 1.0),
        (LossSpec::SoftmaxXent { classes }, _) => {
            let k = classes as f64;
            k * (2.0 * data.b_q * gh.g + k.ln() + 2.0)
        }
    }
}

fn check_trajectory<S: StateSpace + ?Sized>(spec: &LossSpec, pred: &S, data: &Trajectory) -> Result<()> {
    spec.validate()?;
    if pred.input_dim() != data.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "predictor input vs trajectory input",
            expected: pred.input_dim(),
            got: data.input_dim(),
        });
    }
    if pred.output_dim() != data.output_dim() {
        return Err(Error::DimensionMismatch {
            what: "predictor output vs trajectory label",
            expected: pred.output_dim(),
            got: data.output_dim(),
        });
    }
    if let LossSpec::SoftmaxXent { classes } = *spec {
        if data.output_dim() != classes {
            return Err(Error::DimensionMismatch {
                what: "softmax classes",
                expected: classes,
                got: data.output_dim(),
            });
        }
        if data.outputs.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("soft labels must lie in [0, 1]"));
        }
    }
    Ok(())
}

/// Average loss of the predictor started at `s0` over the whole trajectory.
pub fn empirical_loss<S: StateSpace + ?Sized>(
    spec: &LossSpec,
    pred: &S,
    s0: &[f64],
    data: &Trajectory,
) -> Result<f64> {
    check_trajectory(spec, pred, data)?;
    let mut total = 0.0;
    for_each_output(pred, s0, &data.inputs, |t, yhat| {
        total += loss_unchecked(spec, &data.outputs[t], yhat);
    })?;
    Ok(total / data.len() as f64)
}

/// Average loss over the post-prefix window of a run started at zero, which
/// approximates the loss of the predictor's steady-state trajectory.
pub fn infinite_horizon_loss<S: StateSpace + ?Sized>(
    spec: &LossSpec,
    pred: &S,
    data_with_prefix: &Trajectory,
    burn_in: usize,
) -> Result<f64> {
    check_trajectory(spec, pred, data_with_prefix)?;
    if burn_in >= data_with_prefix.len() {
        return Err(Error::invalid(format!(
            "burn-in {burn_in} must be shorter than the trajectory ({})",
            data_with_prefix.len()
        )));
    }
    let s0 = vec![0.0; pred.state_dim()];
    let mut total = 0.0;
    for_each_output(pred, &s0, &data_with_prefix.inputs, |t, yhat| {
        if t >= burn_in {
            total += loss_unchecked(spec, &data_with_prefix.outputs[t], yhat);
        }
    })?;
    Ok(total / (data_with_prefix.len() - burn_in) as f64)
}

/// Deterministic bound on `|V_N − L̂_N|` caused by the predictor's initial transient.
pub fn transient_gap_bound(c: &ClassSConstants, l_ell: f64, b_q: f64, s0_norm: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let GhPair { h, .. } = g_and_h(c)?;
    Ok(l_ell * c.c / n as f64 * (2.0 * b_q * h + s0_norm * c.l_gs / (1.0 - c.tau)))
}
