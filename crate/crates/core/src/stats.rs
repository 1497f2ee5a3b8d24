//! Prompt length statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    /// `histogram[t]` = number of prompts with exactly `t` tokens.
    pub histogram: Vec<usize>,
}

impl LengthStats {
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("tokens,count\n");
        for (t, c) in self.histogram.iter().enumerate() {
            s.push_str(&format!("{t},{c}\n"));
        }
        s
    }
}

/// Tokens are maximal runs of non-whitespace.
pub fn token_count(prompt: &str) -> usize {
    prompt.split_whitespace().count()
}

pub fn length_stats<S: AsRef<str>>(prompts: &[S]) -> Result<LengthStats> {
    if prompts.is_empty() {
        return Err(Error::Invalid("length statistics need at least one prompt".into()));
    }
    let lens: Vec<usize> = prompts.iter().map(|p| token_count(p.as_ref())).collect();
    let n = lens.len() as f64;
    let mean = lens.iter().sum::<usize>() as f64 / n;
    let var = lens.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    let mut histogram = vec![0usize; lens.iter().max().copied().unwrap_or(0) + 1];
    for &l in &lens {
        histogram[l] += 1;
    }
    Ok(LengthStats {
        count: lens.len(),
        mean,
        std_dev: var.sqrt(),
        histogram,
    })
}
