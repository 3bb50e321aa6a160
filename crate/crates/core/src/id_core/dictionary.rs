use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Word;
use crate::error::{Error, Result};
use crate::real::Real;

/// `K` identity words plus one special word for newborn objects, stored as a
/// `(K + 1) × C` matrix. Row `k - 1` holds label `k`; row `K` is the special word.
#[derive(Debug, Clone, PartialEq)]
pub struct IdDictionary<T> {
    pub words: Array2<T>,
}

impl<T: Real> IdDictionary<T> {
    pub fn new(capacity: usize, dim: usize, init_sigma: f64, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("K", "dictionary capacity must be at least 1"));
        }
        if dim == 0 {
            return Err(Error::config("C", "word dimension must be at least 1"));
        }
        if !(init_sigma.is_finite() && init_sigma >= 0.0) {
            return Err(Error::config("init_sigma", "must be finite and non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, init_sigma).expect("validated sigma");
        let words = Array2::from_shape_fn((capacity + 1, dim), |_| T::of(normal.sample(&mut rng)));
        Ok(Self { words })
    }

    pub fn from_words(words: Array2<T>) -> Result<Self> {
        if words.nrows() < 2 || words.ncols() == 0 {
            return Err(Error::config("K", "need at least one regular word and a non-empty width"));
        }
        Ok(Self { words })
    }

    /// `K`, the number of regular identity words.
    pub fn capacity(&self) -> usize {
        self.words.nrows() - 1
    }

    /// `C`, the word width.
    pub fn dim(&self) -> usize {
        self.words.ncols()
    }

    pub fn special_index(&self) -> usize {
        self.capacity()
    }

    pub fn row_of(&self, word: Word) -> usize {
        match word {
            Word::Label(k) => {
                debug_assert!(k >= 1 && k as usize <= self.capacity());
                k as usize - 1
            }
            Word::Special => self.special_index(),
        }
    }

    pub fn word(&self, word: Word) -> ArrayView1<'_, T> {
        self.words.row(self.row_of(word))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let d = IdDictionary::<f32>::new(50, 256, 0.02, 1).unwrap();
        assert_eq!(d.words.dim(), (51, 256));
        assert_eq!(d.special_index(), 50);
        let tiny = IdDictionary::<f64>::new(1, 1, 0.02, 1).unwrap();
        assert_eq!(tiny.words.dim(), (2, 1));
        assert_eq!(IdDictionary::<f64>::new(4, 8, 0.02, 9).unwrap(), IdDictionary::new(4, 8, 0.02, 9).unwrap());
        assert!(matches!(IdDictionary::<f64>::new(0, 8, 0.02, 0), Err(Error::Config { .. })));
        assert!(matches!(IdDictionary::<f64>::new(3, 0, 0.02, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn init_scale_follows_sigma() {
        let d = IdDictionary::<f64>::new(100, 100, 0.02, 5).unwrap();
        let n = d.words.len() as f64;
        let var = d.words.iter().map(|v| v * v).sum::<f64>() / n;
        assert!((var.sqrt() - 0.02).abs() < 0.001);
    }
}
