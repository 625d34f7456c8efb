//! Inverted dropout: training zeroes entries with probability `rate` and
//! scales survivors by 1/(1-rate); eval is the identity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::RunMode;

#[derive(Debug)]
pub struct DropoutCache {
    mask: Option<Mat>,
}

pub fn dropout(x: &Mat, rate: f64, mode: &mut RunMode) -> Result<(Mat, DropoutCache)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    match mode {
        RunMode::Train(rng) if rate > 0.0 => {
            let keep_scale = 1.0 / (1.0 - rate);
            let mask = Mat::from_fn(x.rows(), x.cols(), |_, _| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            });
            let y = x.hadamard(&mask)?;
            Ok((y, DropoutCache { mask: Some(mask) }))
        }
        _ => Ok((x.clone(), DropoutCache { mask: None })),
    }
}

pub fn dropout_backward(cache: &DropoutCache, dy: &Mat) -> Result<Mat> {
    match &cache.mask {
        Some(mask) => dy.hadamard(mask),
        None => Ok(dy.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn rate_zero_and_eval_are_identity() {
        let x = Mat::from_fn(4, 5, |r, c| (r * 5 + c) as f64);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (y, _) = dropout(&x, 0.0, &mut RunMode::Train(&mut rng)).unwrap();
        assert_eq!(y, x);
        let (y, _) = dropout(&x, 0.3, &mut RunMode::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn survivor_fraction_and_mean_are_preserved() {
        let n = 100_000;
        let x = Mat::from_fn(1, n, |_, _| 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let (y, _) = dropout(&x, 0.3, &mut RunMode::Train(&mut rng)).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count();
        let frac = survivors as f64 / n as f64;
        assert!((frac - 0.7).abs() < 0.01, "survivor fraction {frac}");
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn backward_reuses_the_mask() {
        let x = Mat::from_fn(10, 10, |_, _| 2.0);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (y, cache) = dropout(&x, 0.5, &mut RunMode::Train(&mut rng)).unwrap();
        let dy = Mat::from_fn(10, 10, |_, _| 1.0);
        let dx = dropout_backward(&cache, &dy).unwrap();
        for (yy, dd) in y.data().iter().zip(dx.data().iter()) {
            assert_eq!(*yy == 0.0, *dd == 0.0);
        }
    }

    #[test]
    fn invalid_rate_is_rejected() {
        let x = Mat::zeros(1, 1);
        assert!(dropout(&x, 1.0, &mut RunMode::Eval).is_err());
        assert!(dropout(&x, -0.1, &mut RunMode::Eval).is_err());
    }
}
