//! Class-𝒮 certificates for recurrent blocks and their interconnections.
//!
//! A certificate `(C, τ, L_v, L_gs, L_gv)` bounds how fast trajectories forget
//! their initial state (`C·τᵗ`), how strongly past inputs move the state
//! (`L_v`), and how Lipschitz the output map is in state and input.

use serde::{Deserialize, Serialize};

use crate::dynsys::{Activation, RnnSystem};
use crate::error::{Error, Result};
use crate::numerics::{discrete_lyapunov, spectral_norm, Matrix};

/// Replacement for `max(τ1, τ2)` when composing memoryless blocks with
/// [`ZeroTauPolicy::Floor`].
pub const TAU_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSConstants {
    pub c: f64,
    pub tau: f64,
    pub l_v: f64,
    pub l_gs: f64,
    pub l_gv: f64,
}

impl ClassSConstants {
    pub fn new(c: f64, tau: f64, l_v: f64, l_gs: f64, l_gv: f64) -> Result<Self> {
        let k = ClassSConstants {
            c,
            tau,
            l_v,
            l_gs,
            l_gv,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 1.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("C must be finite and >= 1, got {}", self.c)));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::invalid(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.tau < 1.0) {
            return Err(Error::NotClassS {
                what: "tau",
                value: self.tau,
            });
        }
        for (name, v) in [("L_v", self.l_v), ("L_gs", self.l_gs), ("L_gv", self.l_gv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The aggregates `G_θ` and `H_θ` of a predictor certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhPair {
    pub g: f64,
    pub h: f64,
}

/// Which expression to use for the input-to-state constant of an RNN block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LvConvention {
    /// `L_v = Lip(σ_f)·‖B‖₂`, the value the proof actually establishes.
    #[default]
    Proof,
    /// `L_v = Lip(σ_f)⁻¹·‖B‖₂` as typeset in the RNN constants table.
    Table,
}

pub fn rnn_constants(sys: &RnnSystem) -> Result<ClassSConstants> {
    rnn_constants_with(sys, LvConvention::Proof)
}

pub fn rnn_constants_with(sys: &RnnSystem, lv: LvConvention) -> Result<ClassSConstants> {
    let lip_f = sys.sigma_f().lipschitz();
    let lip_g = sys.sigma_g().lipschitz();
    let tau = lip_f * spectral_norm(sys.a())?;
    if !(tau < 1.0) {
        return Err(Error::NotClassS {
            what: "Lip(sigma_f)*||A||_2",
            value: tau,
        });
    }
    let norm_b = spectral_norm(sys.b())?;
    let l_v = match lv {
        LvConvention::Proof => lip_f * norm_b,
        LvConvention::Table => norm_b / lip_f,
    };
    ClassSConstants::new(
        1.0,
        tau,
        l_v,
        lip_g * spectral_norm(sys.c())?,
        lip_g * spectral_norm(sys.d())?,
    )
}

/// Outcome of the state-contraction test `Lip(σ_f)‖A‖₂ < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub passed: bool,
    /// `Lip(σ_f)·‖A‖₂`; the contraction rate when `passed`.
    pub value: f64,
}

pub fn check_contraction(sys: &RnnSystem) -> Result<ContractionCheck> {
    let value = sys.sigma_f().lipschitz() * spectral_norm(sys.a())?;
    Ok(ContractionCheck {
        passed: value < 1.0,
        value,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum LyapunovOutcome {
    /// `aᵀPa ≤ μP` holds for the returned `P`.
    Certified(Matrix),
    /// `a` is Schur stable but its decay is slower than `√μ`.
    RateTooSlow,
}

/// Quadratic certificate `aᵀPa ≤ μP` for linear dynamics `s ↦ a s`.
///
/// Solves the Lyapunov equation for `a/√μ` with `q = I`, which gives
/// `μP − aᵀPa = μI`. Fails with [`Error::Instability`] when `a` is not Schur.
pub fn check_linear_lyapunov(a: &Matrix, mu: f64) -> Result<LyapunovOutcome> {
    if !a.is_square() {
        return Err(Error::invalid("check_linear_lyapunov needs a square matrix"));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::invalid(format!("mu must lie in (0, 1), got {mu}")));
    }
    let n = a.rows();
    discrete_lyapunov(a, &Matrix::identity(n))?;
    let scaled = a.scale(1.0 / mu.sqrt());
    let p = match discrete_lyapunov(&scaled, &Matrix::identity(n)) {
        Ok(p) => p,
        Err(Error::Instability(_)) => return Ok(LyapunovOutcome::RateTooSlow),
        Err(e) => return Err(e),
    };
    let slack = p.scale(mu).sub(&a.transpose().matmul(&p)?.matmul(a)?)?;
    let margin = Matrix::identity(n).scale(1e-9);
    if slack.add(&margin)?.is_positive_definite() {
        Ok(LyapunovOutcome::Certified(p))
    } else {
        Ok(LyapunovOutcome::RateTooSlow)
    }
}

/// Result of checking `∂f/∂s(s,v)ᵀ P ∂f/∂s(s,v) ≤ μP` on sampled points.
///
/// Passing is evidence, not a proof: only the listed points were checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicCheck {
    pub points_checked: usize,
    pub violations: usize,
    pub heuristic: bool,
}

/// Samples the Jacobian condition for an RNN with a user-supplied `P`.
///
/// The state Jacobian of `σ_f(A s + B v + b_s)` is `diag(σ_f'(·))·A`.
pub fn sampled_lyapunov_check(
    sys: &RnnSystem,
    p: &Matrix,
    mu: f64,
    points: &[(Vec<f64>, Vec<f64>)],
) -> Result<HeuristicCheck> {
    let n = sys.n_s();
    if p.rows() != n || !p.is_square() {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov matrix size",
            expected: n,
            got: p.rows(),
        });
    }
    let mut violations = 0;
    for (s, v) in points {
        let mut pre = sys.a().mul_vec(s);
        let bv = sys.b().mul_vec(v);
        for i in 0..n {
            pre[i] += bv[i] + sys.b_s()[i];
        }
        let mut jac = sys.a().clone();
        for (i, z) in pre.iter().enumerate() {
            let slope = activation_slope(sys.sigma_f(), *z);
            for j in 0..n {
                jac.set(i, j, slope * sys.a().get(i, j));
            }
        }
        let lhs = jac.transpose().matmul(p)?.matmul(&jac)?;
        if !p.scale(mu).sub(&lhs)?.is_positive_definite() {
            violations += 1;
        }
    }
    Ok(HeuristicCheck {
        points_checked: points.len(),
        violations,
        heuristic: true,
    })
}

fn activation_slope(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - z.tanh().powi(2),
        Activation::Sigmoid => {
            let s = act.apply(z);
            s * (1.0 - s)
        }
        Activation::Identity => 1.0,
    }
}

/// How to treat `max(τ1, τ2) = 0` in series composition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ZeroTauPolicy {
    #[default]
    Error,
    /// Compose as if `max(τ1, τ2)` were [`TAU_FLOOR`].
    Floor,
}

/// Certificate of `first → second` (output of `first` drives `second`).
pub fn series_compose(first: &ClassSConstants, second: &ClassSConstants) -> Result<ClassSConstants> {
    series_compose_with(first, second, ZeroTauPolicy::Error)
}

pub fn series_compose_with(
    first: &ClassSConstants,
    second: &ClassSConstants,
    policy: ZeroTauPolicy,
) -> Result<ClassSConstants> {
    first.validate()?;
    second.validate()?;
    let mut tau = first.tau.max(second.tau);
    if tau == 0.0 {
        match policy {
            ZeroTauPolicy::Error => return Err(Error::SingularComposition),
            ZeroTauPolicy::Floor => tau = TAU_FLOOR,
        }
    }
    let g = -2.0 / (std::f64::consts::E * tau.ln());
    let coupling = g * second.l_v * first.l_gs;
    let c = (first.c.powi(2) * (1.0 + coupling.powi(2) / tau) + second.c.powi(2)).sqrt();
    let drive = second.l_v * g * (first.l_gs * first.l_v).max(first.l_gv);
    let l_v = (first.l_v.powi(2) + drive.powi(2) / tau.powi(3)).sqrt();
    ClassSConstants::new(c, tau.sqrt(), l_v, second.l_gs, second.l_gv)
}

/// Certificate of the generator feeding the predictor, with output `[ŷ; y]`.
pub fn augment_full_generator(gen: &ClassSConstants, pred: &ClassSConstants) -> Result<ClassSConstants> {
    let widened = ClassSConstants {
        l_gv: (pred.l_gv.powi(2) + 1.0).sqrt(),
        ..*pred
    };
    series_compose(gen, &widened)
}

/// Certificate of the prediction-error system `ŷ − y` driven by the generator noise.
///
/// Transcribed directly from the error-system formulas (they coincide with
/// the full-generator ones, which are computed through [`series_compose`]).
pub fn error_system_constants(gen: &ClassSConstants, pred: &ClassSConstants) -> Result<ClassSConstants> {
    gen.validate()?;
    pred.validate()?;
    let tau_t = gen.tau.max(pred.tau);
    if tau_t == 0.0 {
        return Err(Error::SingularComposition);
    }
    let big_g = -2.0 / (std::f64::consts::E * tau_t.ln());
    let c_e = (gen.c * gen.c * (1.0 + (big_g * pred.l_v * gen.l_gs).powi(2) / tau_t) + pred.c * pred.c).sqrt();
    let l_e_v = (gen.l_v * gen.l_v
        + (pred.l_v * big_g * f64::max(gen.l_gs * gen.l_v, gen.l_gv)).powi(2) / (tau_t * tau_t * tau_t))
        .sqrt();
    ClassSConstants::new(
        c_e,
        tau_t.sqrt(),
        l_e_v,
        pred.l_gs,
        (pred.l_gv * pred.l_gv + 1.0).sqrt(),
    )
}

pub fn g_and_h(c: &ClassSConstants) -> Result<GhPair> {
    if !(c.tau < 1.0) {
        return Err(Error::NotClassS {
            what: "tau",
            value: c.tau,
        });
    }
    let gain = c.l_gs * c.l_v;
    let rem = 1.0 - c.tau;
    Ok(GhPair {
        g: gain / rem + c.l_gv,
        h: gain / (rem * rem),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::Activation;
    use approx::assert_relative_eq;

    fn unit(tau: f64) -> ClassSConstants {
        ClassSConstants::new(1.0, tau, 1.0, 1.0, 1.0).unwrap()
    }

    fn rnn(a: Matrix, sigma_f: Activation) -> RnnSystem {
        let n = a.rows();
        RnnSystem::new(
            a,
            Matrix::identity(n),
            vec![0.0; n],
            Matrix::identity(n),
            Matrix::identity(n),
            vec![0.0; n],
            sigma_f,
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn memoryless_block_has_zero_tau() {
        let k = rnn_constants(&rnn(Matrix::zeros(2, 2), Activation::Relu)).unwrap();
        assert_eq!((k.c, k.tau), (1.0, 0.0));
    }

    #[test]
    fn expansive_block_rejected() {
        let err = rnn_constants(&rnn(Matrix::identity(2).scale(1.2), Activation::Relu)).unwrap_err();
        match err {
            Error::NotClassS { value, .. } => assert_relative_eq!(value, 1.2, max_relative = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn contraction_examples() {
        let sig = check_contraction(&rnn(Matrix::identity(2).scale(3.9), Activation::Sigmoid)).unwrap();
        assert!(sig.passed);
        assert_relative_eq!(sig.value, 0.975, max_relative = 1e-12);

        let edge = check_contraction(&rnn(Matrix::identity(2), Activation::Relu)).unwrap();
        assert!(!edge.passed);
    }

    #[test]
    fn table_convention_divides_by_lipschitz() {
        let sys = rnn(Matrix::zeros(2, 2), Activation::Sigmoid);
        let proof = rnn_constants(&sys).unwrap();
        let table = rnn_constants_with(&sys, LvConvention::Table).unwrap();
        assert_relative_eq!(proof.l_v, 0.25, max_relative = 1e-12);
        assert_relative_eq!(table.l_v, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn lyapunov_certificates() {
        match check_linear_lyapunov(&Matrix::identity(2).scale(0.5), 0.3).unwrap() {
            LyapunovOutcome::Certified(p) => {
                // P = I / (1 - 0.25/0.3)
                assert_relative_eq!(p.get(0, 0), 6.0, max_relative = 1e-10);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            check_linear_lyapunov(&Matrix::zeros(2, 2), 0.7).unwrap(),
            LyapunovOutcome::Certified(Matrix::identity(2))
        );
        assert_eq!(
            check_linear_lyapunov(&Matrix::identity(2).scale(0.9), 0.5).unwrap(),
            LyapunovOutcome::RateTooSlow
        );
        assert!(matches!(
            check_linear_lyapunov(&Matrix::identity(2).scale(1.1), 0.5),
            Err(Error::Instability(_))
        ));
    }

    #[test]
    fn sampled_check_is_heuristic() {
        let sys = rnn(Matrix::identity(2).scale(0.5), Activation::Tanh);
        let pts = vec![(vec![0.1, 0.2], vec![0.0, 0.0]), (vec![3.0, -1.0], vec![1.0, 1.0])];
        let r = sampled_lyapunov_check(&sys, &Matrix::identity(2), 0.3, &pts).unwrap();
        assert!(r.heuristic);
        assert_eq!((r.points_checked, r.violations), (2, 0));
        let r = sampled_lyapunov_check(&sys, &Matrix::identity(2), 0.2, &pts).unwrap();
        assert!(r.violations > 0);
    }

    #[test]
    fn series_unit_blocks() {
        // reference values from an independent float evaluation of the formulas
        let k = series_compose(&unit(0.25), &unit(0.25)).unwrap();
        assert_relative_eq!(k.tau, 0.5, max_relative = 1e-15);
        assert_relative_eq!(k.c, 1.768_256_384_763_583, max_relative = 1e-12);
        assert_relative_eq!(k.l_v, 4.362_074_079_622_538, max_relative = 1e-12);
        assert_eq!((k.l_gs, k.l_gv), (1.0, 1.0));
    }

    #[test]
    fn series_without_coupling() {
        let a = ClassSConstants::new(1.5, 0.3, 0.7, 0.4, 0.2).unwrap();
        let b = ClassSConstants::new(2.0, 0.6, 0.0, 0.9, 0.1).unwrap();
        let k = series_compose(&a, &b).unwrap();
        assert_relative_eq!(k.c, (1.5f64 * 1.5 + 4.0).sqrt(), max_relative = 1e-15);
        assert_eq!(k.l_v, 0.7);

        let z = ClassSConstants::new(1.0, 0.5, 0.0, 0.0, 0.0).unwrap();
        let k = series_compose(&z, &z).unwrap();
        assert_relative_eq!(k.c, 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(k.tau, 0.5f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn series_zero_tau() {
        let z = unit(0.0);
        assert!(matches!(series_compose(&z, &z), Err(Error::SingularComposition)));
        let k = series_compose_with(&z, &z, ZeroTauPolicy::Floor).unwrap();
        assert_relative_eq!(k.tau, 1e-6, max_relative = 1e-12);
        assert!(k.c >= 1.0);
    }

    #[test]
    fn full_generator_output_gain() {
        let gen = unit(0.25);
        let mut pred = unit(0.25);
        pred.l_gv = 0.0;
        assert_eq!(augment_full_generator(&gen, &pred).unwrap().l_gv, 1.0);
        pred.l_gv = 3f64.sqrt();
        assert_relative_eq!(augment_full_generator(&gen, &pred).unwrap().l_gv, 2.0, max_relative = 1e-15);

        let fg = augment_full_generator(&unit(0.25), &unit(0.25)).unwrap();
        let plain = series_compose(&unit(0.25), &unit(0.25)).unwrap();
        assert_eq!((fg.c, fg.tau, fg.l_v, fg.l_gs), (plain.c, plain.tau, plain.l_v, plain.l_gs));
        assert_relative_eq!(fg.l_gv, 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn error_system_trivial_case() {
        let e = error_system_constants(&unit(0.25), &unit(0.25)).unwrap();
        let fg = augment_full_generator(&unit(0.25), &unit(0.25)).unwrap();
        assert_relative_eq!(e.c, fg.c, max_relative = 1e-14);
        assert_relative_eq!(e.l_v, fg.l_v, max_relative = 1e-14);
        assert_eq!(e.tau, fg.tau);
    }

    #[test]
    fn g_and_h_examples() {
        let gh = g_and_h(&ClassSConstants::new(1.0, 0.0, 1.0, 1.0, 0.0).unwrap()).unwrap();
        assert_eq!((gh.g, gh.h), (1.0, 1.0));
        let gh = g_and_h(&ClassSConstants::new(1.0, 0.5, 2.0, 1.0, 0.5).unwrap()).unwrap();
        assert_eq!((gh.g, gh.h), (4.5, 8.0));
        let bad = ClassSConstants {
            c: 1.0,
            tau: 1.0,
            l_v: 1.0,
            l_gs: 1.0,
            l_gv: 1.0,
        };
        assert!(matches!(g_and_h(&bad), Err(Error::NotClassS { .. })));
    }

    #[test]
    fn invalid_constants_rejected() {
        assert!(ClassSConstants::new(0.5, 0.1, 1.0, 1.0, 1.0).is_err());
        assert!(ClassSConstants::new(1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(ClassSConstants::new(1.0, 0.1, -1.0, 1.0, 1.0).is_err());
    }
}
