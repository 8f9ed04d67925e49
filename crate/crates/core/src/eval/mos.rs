//! Mean-opinion-score aggregation: mean and a normal-approximation 95%
//! confidence half-width over 1–5 ratings.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MosReport {
    pub n: usize,
    pub mean: f64,
    /// `1.96 · s/√n` with sample sd; absent when a single rating leaves the
    /// spread undefined.
    pub ci95: Option<f64>,
}

pub fn mos_aggregate(ratings: &[u32]) -> Result<MosReport> {
    if ratings.is_empty() {
        return Err(Error::InvalidArgument("no ratings".into()));
    }
    if let Some(bad) = ratings.iter().find(|&&r| !(1..=5).contains(&r)) {
        return Err(Error::InvalidArgument(format!(
            "rating {bad} outside 1..5"
        )));
    }
    let n = ratings.len();
    let mean = ratings.iter().map(|&r| r as f64).sum::<f64>() / n as f64;
    let ci95 = if n >= 2 {
        let var = ratings
            .iter()
            .map(|&r| (r as f64 - mean).powi(2))
            .sum::<f64>()
            / (n as f64 - 1.0);
        Some(1.96 * var.sqrt() / (n as f64).sqrt())
    } else {
        None
    };
    Ok(MosReport { n, mean, ci95 })
}
