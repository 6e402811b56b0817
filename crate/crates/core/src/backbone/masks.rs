use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Two independent random token masks; `true` marks a hidden token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPair {
    pub mask_a: Vec<bool>,
    pub mask_b: Vec<bool>,
}

/// Number of masked tokens: `round(ratio·n)` with ties to even.
pub fn masked_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).round_ties_even() as usize
}

/// Draws two masks, each hiding exactly `round(ratio·n)` of `n` tokens.
pub fn sample_masks(n: usize, ratio: f64, seed: u64) -> Result<MaskPair> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Parameter(format!("mask ratio {ratio} outside (0, 1)")));
    }
    let count = masked_count(n, ratio);
    if count == 0 || count >= n {
        return Err(Error::Parameter(format!(
            "mask ratio {ratio} on {n} tokens masks {count}: need between 1 and {}",
            n.saturating_sub(1)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let mut m = vec![false; n];
        for i in sample(&mut rng, n, count) {
            m[i] = true;
        }
        m
    };
    let mask_a = draw();
    let mask_b = draw();
    Ok(MaskPair { mask_a, mask_b })
}

pub(crate) fn positions(mask: &[bool], masked: bool) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m == masked)
        .map(|(i, _)| i)
        .collect()
}
