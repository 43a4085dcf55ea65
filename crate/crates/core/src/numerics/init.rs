use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::rng::Rng;

/// Xavier uniform initialization: entries drawn from
/// (−√(6/(rows+cols)), +√(6/(rows+cols))), strictly inside the interval.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidDimension(format!(
            "xavier_init {rows}x{cols}"
        )));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = Rng::new(seed);
    let mut out = DenseMatrix::zeros(rows, cols);
    for v in out.values_mut() {
        // open-interval draw keeps 2u−1 strictly inside (−1, 1)
        *v = bound * (2.0 * rng.next_f64_open() - 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_forced_by_formula() {
        // rows+cols = 6 → bound = 1
        let m = xavier_init(1, 5, 11).unwrap();
        assert!(m.values().iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = xavier_init(2, 2, 7).unwrap();
        let b = xavier_init(2, 2, 7).unwrap();
        assert_eq!(a, b);
        let c = xavier_init(2, 2, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_near_zero() {
        let m = xavier_init(100, 100, 3).unwrap();
        let n = m.values().len() as f64;
        let mean: f64 = m.values().iter().sum::<f64>() / n;
        // uniform(−a, a) has variance a²/3, so SE of the mean is a/√(3n)
        let a = (6.0 / 200.0f64).sqrt();
        let se = a / (3.0 * n).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3·SE {}", 3.0 * se);
    }

    #[test]
    fn every_entry_strictly_inside() {
        let bound = (6.0 / 300.0f64).sqrt();
        let m = xavier_init(200, 100, 99).unwrap();
        assert!(m.values().iter().all(|&v| v.abs() < bound));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(xavier_init(0, 4, 1).is_err());
        assert!(xavier_init(4, 0, 1).is_err());
    }
}
