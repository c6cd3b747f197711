use std::collections::VecDeque;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Bounded FIFO of recent images; the oldest image is evicted first.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    capacity: usize,
    items: VecDeque<Tensor<f32>>,
}

impl ImageBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "image buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, v: Tensor<f32>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(v);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.items.iter()
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, p: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::InsufficientData {
                available: 0,
                requested: p,
            });
        }
        Ok((0..p)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect())
    }

    /// `p` images drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, p: usize, rng: &mut R) -> Result<Vec<&Tensor<f32>>> {
        Ok(self
            .sample_indices(p, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tagged(k: usize) -> Tensor<f32> {
        Tensor::new(vec![1], vec![k as f32]).unwrap()
    }

    fn tags(b: &ImageBuffer) -> Vec<usize> {
        b.iter().map(|t| t.values()[0] as usize).collect()
    }

    #[test]
    fn evicts_oldest() {
        let mut b = ImageBuffer::new(3);
        for k in 1..=4 {
            b.push(tagged(k));
        }
        assert_eq!(tags(&b), vec![2, 3, 4]);
    }

    #[test]
    fn empty_sample_errors() {
        let b = ImageBuffer::new(3);
        assert!(b.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut b = ImageBuffer::new(5);
        for k in 0..5 {
            b.push(tagged(k));
        }
        let a = b
            .sample_indices(5, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let c = b
            .sample_indices(5, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn sampling_frequencies_within_three_sigma() {
        let mut b = ImageBuffer::new(10);
        for k in 0..10 {
            b.push(tagged(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut counts = [0usize; 10];
        for i in b.sample_indices(n, &mut rng).unwrap() {
            counts[i] += 1;
        }
        let p = 0.1;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn holds_the_most_recent_items(capacity in 1usize..20, pushes in 0usize..60) {
            let mut b = ImageBuffer::new(capacity);
            for k in 0..pushes {
                b.push(tagged(k));
                prop_assert!(b.len() <= capacity);
            }
            let expected: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
            prop_assert_eq!(tags(&b), expected);
        }
    }
}
