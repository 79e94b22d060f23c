//! Effect-estimation metrics and the per-run report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeCensus;

fn check_paired(true_ite: &[f64], est_ite: &[f64]) -> Result<()> {
    if true_ite.is_empty() {
        return Err(Error::contract("effect metrics need at least one unit"));
    }
    if true_ite.len() != est_ite.len() {
        return Err(Error::contract(format!(
            "paired effect vectors of lengths {} and {}",
            true_ite.len(),
            est_ite.len()
        )));
    }
    Ok(())
}

/// Absolute difference between the mean true effect and the mean estimate.
pub fn eps_ate(true_ite: &[f64], est_ite: &[f64]) -> Result<f64> {
    check_paired(true_ite, est_ite)?;
    let n = true_ite.len() as f64;
    let true_mean = true_ite.iter().sum::<f64>() / n;
    let est_mean = est_ite.iter().sum::<f64>() / n;
    Ok((true_mean - est_mean).abs())
}

/// Root of the mean squared per-unit effect error.
pub fn sqrt_pehe(true_ite: &[f64], est_ite: &[f64]) -> Result<f64> {
    check_paired(true_ite, est_ite)?;
    let n = true_ite.len() as f64;
    let mse = true_ite
        .iter()
        .zip(est_ite)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(mse.sqrt())
}

/// Factual-outcome mean squared error per split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMse {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

/// One trained run's evaluation summary. Serializes to JSON and round-trips;
/// `runtime_seconds` is the only field expected to differ between reruns of
/// the same seed and configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub sqrt_pehe: f64,
    pub eps_ate: f64,
    pub factual_mse: SplitMse,
    pub edge_census: EdgeCensus,
    pub config_fingerprint: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub saturation_events: u64,
    pub runtime_seconds: f64,
}

/// FNV-1a over a canonical serialization; stable across runs and platforms.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    format!("{hash:016x}")
}
