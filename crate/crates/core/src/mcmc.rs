//! Gaussian random-walk Metropolis–Hastings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal_std: f64,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("chain needs at least one step"));
        }
        if self.burn_in >= self.steps {
            return Err(Error::invalid(format!(
                "burn-in ({}) must be smaller than steps ({})",
                self.burn_in, self.steps
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if !(self.proposal_std > 0.0 && self.proposal_std.is_finite()) {
            return Err(Error::invalid(format!(
                "proposal_std must be positive, got {}",
                self.proposal_std
            )));
        }
        Ok(())
    }

    /// Number of states [`mh_sample`] retains.
    pub fn retained(&self) -> usize {
        (self.steps - self.burn_in) / self.thin
    }
}

/// Retained states of one chain plus acceptance bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub log_densities: Vec<f64>,
    pub accepted: usize,
    pub proposed: usize,
}

/// Runs `cfg.steps` proposals from `init` and keeps every `thin`-th state
/// after `burn_in`. Proposals where `log_density` is `-inf` (or NaN) are
/// always rejected.
pub fn mh_sample<F>(log_density: F, init: &[f64], cfg: &ChainConfig) -> Result<Chain>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    let mut current = init.to_vec();
    let mut current_ld = log_density(&current);
    if !current_ld.is_finite() {
        return Err(Error::InvalidStart);
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut proposal = vec![0.0; current.len()];
    let mut samples = Vec::with_capacity(cfg.retained());
    let mut log_densities = Vec::with_capacity(cfg.retained());
    let mut accepted = 0;

    for step in 0..cfg.steps {
        for (p, x) in proposal.iter_mut().zip(&current) {
            *p = x + rng.normal(cfg.proposal_std);
        }
        let ld = log_density(&proposal);
        // the uniform is drawn unconditionally so the stream layout does not
        // depend on the target
        let u = rng.uniform();
        if ld.is_finite() && (ld >= current_ld || u.ln() < ld - current_ld) {
            std::mem::swap(&mut current, &mut proposal);
            current_ld = ld;
            accepted += 1;
        }
        if step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thin == cfg.thin - 1 {
            samples.push(current.clone());
            log_densities.push(current_ld);
        }
    }
    Ok(Chain {
        samples,
        log_densities,
        accepted,
        proposed: cfg.steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn chain_diagnostics(chain: &Chain) -> Result<ChainDiagnostics> {
    let n = chain.samples.len();
    if n == 0 || chain.proposed == 0 {
        return Err(Error::invalid("empty chain"));
    }
    let dim = chain.samples[0].len();
    let mut mean = vec![0.0; dim];
    for s in &chain.samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for s in &chain.samples {
        for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
    Ok(ChainDiagnostics {
        acceptance_rate: chain.accepted as f64 / chain.proposed as f64,
        mean,
        std,
    })
}

/// Chain dump: `step, theta_0..theta_{d-1}, log_density`, one row per retained state.
pub fn write_chain_csv<W: std::io::Write>(chain: &Chain, w: W) -> std::result::Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    let dim = chain.samples.first().map_or(0, Vec::len);
    let mut header = vec!["step".to_string()];
    header.extend((0..dim).map(|i| format!("theta_{i}")));
    header.push("log_density".into());
    wtr.write_record(&header)?;
    for (i, (s, ld)) in chain.samples.iter().zip(&chain.log_densities).enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(s.iter().map(f64::to_string));
        rec.push(ld.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_chain_csv(chain: &Chain, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_chain_csv(chain, file).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}
