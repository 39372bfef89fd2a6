use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &Tensor) -> Tensor {
    Tensor::vector(softmax_slice(logits.values()))
}

pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Draws an index with the given probabilities using one uniform variate.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &Tensor, rng: &mut R) -> Result<usize> {
    sample_slice(probs.values(), rng)
}

pub fn sample_slice<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = probs.iter().sum();
    if probs.is_empty() || (total - 1.0).abs() > 1e-6 || probs.iter().any(|p| *p < 0.0) {
        return Err(Error::NotNormalized(total));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc && *p > 0.0 {
            return Ok(i);
        }
    }
    Ok(last_positive)
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&Tensor::vector(vec![0.0, 0.0])).values(), &[0.5, 0.5]);
        let p = softmax(&Tensor::vector(vec![1000.0; 3]));
        assert!(p.values().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&Tensor::vector(vec![1f64.ln(), 3f64.ln()]));
        assert!((p.values()[0] - 0.25).abs() < 1e-12);
        assert!((p.values()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_extreme_logits() {
        let p = softmax(&Tensor::vector(vec![1e6, -1e6, 0.0, 1e6]));
        let s: f64 = p.values().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(p.is_finite());
    }

    #[test]
    fn degenerate_distribution() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(sample_categorical(&Tensor::vector(vec![1.0, 0.0, 0.0]), &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn fair_coin_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let probs = Tensor::vector(vec![0.5, 0.5]);
        let zeros = (0..10_000)
            .filter(|_| sample_categorical(&probs, &mut rng).unwrap() == 0)
            .count();
        let freq = zeros as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "freq {freq}");
    }

    #[test]
    fn same_seed_same_draws() {
        let probs = Tensor::vector(vec![0.2, 0.3, 0.5]);
        let draws = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| sample_categorical(&probs, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draws(7), draws(7));
    }

    #[test]
    fn rejects_unnormalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_categorical(&Tensor::vector(vec![0.5, 0.6]), &mut rng), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.3, 0.9, 0.7]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
