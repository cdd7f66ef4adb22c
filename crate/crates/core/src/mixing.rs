//! Amplitude and weak-dependence constants of the data process.

use serde::{Deserialize, Serialize};

use crate::certify::{ClassSConstants, GhPair};
use crate::dynsys::RnnSystem;
use crate::error::{Error, Result};

/// `(B^q, θ̄∞(1), ‖e‖∞)` for the stacked label/input process `[y; x]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConstants {
    pub b_q: f64,
    pub theta_bar: f64,
    pub e_inf: f64,
}

impl DataConstants {
    pub fn new(b_q: f64, theta_bar: f64, e_inf: f64) -> Result<Self> {
        if !(b_q > 0.0 && b_q.is_finite()) {
            return Err(Error::invalid(format!("B^q must be positive and finite, got {b_q}")));
        }
        if !(theta_bar >= 0.0 && theta_bar.is_finite()) {
            return Err(Error::invalid(format!("theta_bar must be >= 0, got {theta_bar}")));
        }
        if !(e_inf > 0.0 && e_inf.is_finite()) {
            return Err(Error::invalid(format!("e_inf must be positive, got {e_inf}")));
        }
        Ok(DataConstants {
            b_q,
            theta_bar,
            e_inf,
        })
    }
}

/// Constants of the process emitted by a certified generator driven by
/// i.i.d. noise with `‖e‖∞ ≤ e_inf`.
pub fn data_constants(gen: &ClassSConstants, e_inf: f64) -> Result<DataConstants> {
    if !(gen.tau < 1.0) {
        return Err(Error::NotClassS {
            what: "tau",
            value: gen.tau,
        });
    }
    let rem = 1.0 - gen.tau;
    let gain = gen.l_v * gen.l_gs;
    let b_q = 2.0 * e_inf * (gen.l_gv + gain / rem);
    let theta_bar = 2.0 * e_inf * gain / (rem * rem);
    DataConstants::new(b_q, theta_bar, e_inf)
}

/// Euclidean bound `√n_y` on the output of a block with a saturating output activation.
pub fn saturation_bound(sys: &RnnSystem) -> Option<f64> {
    sys.sigma_g().is_saturating().then(|| (sys.n_y() as f64).sqrt())
}

/// [`data_constants`] with `B^q` tightened to the output saturation level when smaller.
pub fn effective_data_constants(gen_sys: &RnnSystem, gen: &ClassSConstants, e_inf: f64) -> Result<DataConstants> {
    let mut d = data_constants(gen, e_inf)?;
    if let Some(sat) = saturation_bound(gen_sys) {
        d.b_q = d.b_q.min(sat);
    }
    Ok(d)
}

/// Mixing coefficient and amplitude of the predictor's output process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorMixing {
    pub theta_o: f64,
    pub o_inf: f64,
}

pub fn predictor_mixing(data: &DataConstants, gh: &GhPair) -> PredictorMixing {
    PredictorMixing {
        theta_o: data.theta_bar * gh.g + data.b_q * gh.h,
        o_inf: data.b_q * gh.g,
    }
}
