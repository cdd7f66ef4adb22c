//! Assembly of the PAC-Bayes bound from prior samples.
//!
//! The posterior is never sampled directly: prior draws are reweighted by the
//! Gibbs factor `β = exp(−λ·L̂_N)`, and both the KL term and the posterior
//! expected empirical loss are importance averages over those weights. The
//! moment-generating terms are stored as raw exponents and aggregated with
//! [`log_mean_exp`], since `exp` of them overflows for moderately large `λ`.

use serde::{Deserialize, Serialize};

use crate::certify::{ClassSConstants, GhPair};
use crate::error::{Error, Result};
use crate::mixing::DataConstants;
use crate::numerics::log_mean_exp;

/// Everything the bound needs from one prior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub theta: Vec<f64>,
    pub s0_norm: f64,
    pub constants: ClassSConstants,
    pub gh: GhPair,
    pub l_ell: f64,
    pub emp_loss: f64,
    pub psi1_exp: f64,
    pub psi2_exp: f64,
}

fn check_rate(lambda: f64, n: usize) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    Ok(())
}

/// `(2λ²L_ℓ²/N)·(B^q(G+H) + θ̄·G)²`
pub fn psi1_exponent(lambda: f64, n: usize, l_ell: f64, data: &DataConstants, gh: &GhPair) -> Result<f64> {
    check_rate(lambda, n)?;
    let inner = data.b_q * (gh.g + gh.h) + data.theta_bar * gh.g;
    Ok(2.0 * lambda * lambda * l_ell * l_ell / n as f64 * inner * inner)
}

/// `(2λL_ℓC/N)·(2B^qH + ‖ŝ₀‖·L_gs/(1−τ))`
pub fn psi2_exponent(
    lambda: f64,
    n: usize,
    l_ell: f64,
    c: &ClassSConstants,
    b_q: f64,
    gh: &GhPair,
    s0_norm: f64,
) -> Result<f64> {
    check_rate(lambda, n)?;
    if !(c.tau < 1.0) {
        return Err(Error::NotClassS {
            what: "tau",
            value: c.tau,
        });
    }
    Ok(2.0 * lambda * l_ell * c.c / n as f64 * (2.0 * b_q * gh.h + s0_norm * c.l_gs / (1.0 - c.tau)))
}

/// `½(ln mean exp(ψ₁) + ln mean exp(ψ₂))` over the records.
pub fn psi_hat(samples: &[SampleRecord]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("psi_hat needs at least one sample"));
    }
    let p1: Vec<f64> = samples.iter().map(|s| s.psi1_exp).collect();
    let p2: Vec<f64> = samples.iter().map(|s| s.psi2_exp).collect();
    Ok(0.5 * (log_mean_exp(&p1)? + log_mean_exp(&p2)?))
}

pub fn gibbs_weights(losses: &[f64], lambda_n: f64) -> Vec<f64> {
    losses.iter().map(|l| (-lambda_n * l).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsEstimates {
    pub z_hat: f64,
    pub kl: f64,
    pub post_emp_loss: f64,
    /// The raw KL estimate was negative and has been clamped to zero.
    pub kl_clamped: bool,
}

/// Importance estimates of `Ẑ`, `KL(ρ̂‖π)` and `E_ρ̂ L̂_N` from prior draws.
///
/// The weights are rescaled by their maximum before averaging; every output
/// is invariant under a common rescaling of `beta`.
pub fn gibbs_estimates(beta: &[f64], losses: &[f64]) -> Result<GibbsEstimates> {
    if beta.is_empty() || beta.len() != losses.len() {
        return Err(Error::invalid(format!(
            "need equally many weights and losses (got {} and {})",
            beta.len(),
            losses.len()
        )));
    }
    if let Some(bad) = beta.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Error::invalid(format!("Gibbs weight {bad} is not positive")));
    }
    let max = beta.iter().copied().fold(0.0, f64::max);
    let w: Vec<f64> = beta.iter().map(|b| b / max).collect();
    let lw: Vec<f64> = w.iter().map(|x| x.ln()).collect();
    Ok(normalized_estimates(&w, &lw, max.ln(), losses))
}

/// Same as [`gibbs_estimates`] but from `ln β`, which cannot underflow.
pub fn gibbs_estimates_from_log(log_beta: &[f64], losses: &[f64]) -> Result<GibbsEstimates> {
    if log_beta.is_empty() || log_beta.len() != losses.len() {
        return Err(Error::invalid("need equally many weights and losses"));
    }
    if log_beta.iter().chain(losses).any(|v| !v.is_finite()) {
        return Err(Error::invalid("Gibbs weights and losses must be finite"));
    }
    let shift = log_beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lw: Vec<f64> = log_beta.iter().map(|lb| lb - shift).collect();
    let w: Vec<f64> = lw.iter().map(|x| x.exp()).collect();
    Ok(normalized_estimates(&w, &lw, shift, losses))
}

/// Estimates from weights `w = β / max β` (so `max w = 1`), their logs, and `ln max β`.
fn normalized_estimates(w: &[f64], lw: &[f64], log_scale: f64, losses: &[f64]) -> GibbsEstimates {
    let n = w.len() as f64;
    let (mut m0, mut m_wlnw, mut m_wl) = (0.0, 0.0, 0.0);
    for ((wi, lwi), l) in w.iter().zip(lw).zip(losses) {
        m0 += wi;
        m_wlnw += wi * lwi;
        m_wl += wi * l;
    }
    m0 /= n;
    m_wlnw /= n;
    m_wl /= n;

    let raw_kl = -m0.ln() + m_wlnw / m0;
    let kl_clamped = raw_kl < 0.0;
    if kl_clamped {
        log::warn!("KL estimate {raw_kl:e} is negative (Monte-Carlo noise); clamping to 0");
    }
    GibbsEstimates {
        z_hat: (-(log_scale + m0.ln())).exp(),
        kl: raw_kl.max(0.0),
        post_emp_loss: m_wl / m0,
        kl_clamped,
    }
}

pub fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidConfidence(delta))
    }
}

/// `r_N = (KL + ln(1/δ) + Ψ̂)/λ`
pub fn pac_bound(lambda: f64, delta: f64, kl: f64, psi_hat_val: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok((kl + (1.0 / delta).ln() + psi_hat_val) / lambda)
}

/// Sample-maximum estimates of the suprema `G₁`, `G₂` over the parameter set.
///
/// These are lower bounds on the true suprema: only the sampled parameters
/// were inspected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G1G2 {
    pub g1: f64,
    pub g2: f64,
}

pub fn g1_term(l_ell: f64, data: &DataConstants, gh: &GhPair) -> f64 {
    let inner = data.b_q * (gh.g + gh.h) + data.theta_bar * gh.g;
    2.0 * l_ell * l_ell * inner * inner
}

pub fn g2_term(l_ell: f64, c: &ClassSConstants, b_q: f64, gh: &GhPair, s0_norm: f64) -> f64 {
    2.0 * l_ell * c.c * (2.0 * b_q * gh.h + s0_norm * c.l_gs / (1.0 - c.tau))
}

pub fn estimate_g1_g2(samples: &[SampleRecord], data: &DataConstants) -> Result<G1G2> {
    if samples.is_empty() {
        return Err(Error::invalid("estimate_g1_g2 needs at least one sample"));
    }
    let mut out = G1G2 {
        g1: f64::NEG_INFINITY,
        g2: f64::NEG_INFINITY,
    };
    for s in samples {
        out.g1 = out.g1.max(g1_term(s.l_ell, data, &s.gh));
        out.g2 = out.g2.max(g2_term(s.l_ell, &s.constants, data.b_q, &s.gh, s.s0_norm));
    }
    Ok(out)
}

/// Gap bound with the suprema in place of the prior averages:
/// `(KL + ln(1/δ) + λ²G₁/N + λG₂/N)/λ`.
pub fn informal_bound(lambda: f64, n: usize, delta: f64, kl: f64, g: &G1G2) -> Result<f64> {
    check_rate(lambda, n)?;
    let nf = n as f64;
    pac_bound(lambda, delta, kl, lambda * lambda / nf * g.g1 + lambda / nf * g.g2)
}

/// All components of the bound for one `(N, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub seed: u64,
    pub lambda: f64,
    pub delta: f64,
    pub kl: f64,
    pub psi_hat: f64,
    pub r_n: f64,
    pub post_emp_loss: f64,
    pub total: f64,
    pub z_hat: f64,
    pub n_samples: usize,
}

/// Full bound from sample records with the Gibbs posterior at temperature `lambda`.
pub fn assemble_report(n: usize, seed: u64, lambda: f64, delta: f64, samples: &[SampleRecord]) -> Result<BoundReport> {
    check_rate(lambda, n)?;
    check_delta(delta)?;
    let losses: Vec<f64> = samples.iter().map(|s| s.emp_loss).collect();
    let log_beta: Vec<f64> = losses.iter().map(|l| -lambda * l).collect();
    let gibbs = gibbs_estimates_from_log(&log_beta, &losses)?;
    let psi = psi_hat(samples)?;
    let r_n = pac_bound(lambda, delta, gibbs.kl, psi)?;
    Ok(BoundReport {
        n,
        seed,
        lambda,
        delta,
        kl: gibbs.kl,
        psi_hat: psi,
        r_n,
        post_emp_loss: gibbs.post_emp_loss,
        total: gibbs.post_emp_loss + r_n,
        z_hat: gibbs.z_hat,
        n_samples: samples.len(),
    })
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "N",
    "seed",
    "lambda",
    "delta",
    "kl",
    "psi_hat",
    "r_N",
    "post_emp_loss",
    "total_bound",
    "z_hat",
    "n_samples",
];

pub fn write_reports_csv<W: std::io::Write>(reports: &[BoundReport], w: W) -> std::result::Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(REPORT_COLUMNS)?;
    for r in reports {
        wtr.write_record([
            r.n.to_string(),
            r.seed.to_string(),
            r.lambda.to_string(),
            r.delta.to_string(),
            r.kl.to_string(),
            r.psi_hat.to_string(),
            r.r_n.to_string(),
            r.post_emp_loss.to_string(),
            r.total.to_string(),
            r.z_hat.to_string(),
            r.n_samples.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_reports_csv(reports: &[BoundReport], path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_reports_csv(reports, file).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}
