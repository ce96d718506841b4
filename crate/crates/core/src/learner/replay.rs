use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;

use super::batch::Episode;
use crate::{Error, Result};

/// Circular episode buffer; the oldest episode is evicted first.
#[derive(Debug, Clone)]
pub struct EpisodeBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn insert(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn get(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    /// Uniform sample without replacement. Requires more stored episodes than
    /// `batch_size`.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Episode>> {
        if batch_size == 0 || self.episodes.len() <= batch_size {
            return Err(Error::Usage(format!(
                "sampling {batch_size} episodes needs more than {batch_size} stored, have {}",
                self.episodes.len()
            )));
        }
        Ok(sample(rng, self.episodes.len(), batch_size)
            .iter()
            .map(|i| &self.episodes[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tagged(tag: f64) -> Episode {
        Episode {
            states: vec![vec![tag], vec![tag]],
            observations: vec![vec![vec![0.0]], vec![vec![0.0]]],
            actions: vec![vec![0]],
            rewards: vec![tag],
            terminated: vec![true],
            success: false,
        }
    }

    #[test]
    fn evicts_oldest() {
        let mut buf = EpisodeBuffer::new(3).unwrap();
        for i in 0..4 {
            buf.insert(tagged(i as f64));
        }
        assert_eq!(buf.len(), 3);
        let tags: Vec<f64> = (0..3).map(|i| buf.get(i).unwrap().rewards[0]).collect();
        assert_eq!(tags, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sample_needs_more_than_batch() {
        let mut buf = EpisodeBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..4 {
            buf.insert(tagged(i as f64));
        }
        assert!(matches!(buf.sample(4, &mut rng), Err(Error::Usage(_))));
        assert_eq!(buf.sample(3, &mut rng).unwrap().len(), 3);
    }

    #[test]
    fn no_repeats_within_a_call() {
        let mut buf = EpisodeBuffer::new(10).unwrap();
        for i in 0..10 {
            buf.insert(tagged(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut tags: Vec<i64> = buf.sample(9, &mut rng).unwrap().iter().map(|e| e.rewards[0] as i64).collect();
            tags.sort();
            tags.dedup();
            assert_eq!(tags.len(), 9);
        }
    }

    #[test]
    fn single_draws_are_uniform() {
        let mut buf = EpisodeBuffer::new(100).unwrap();
        for i in 0..100 {
            buf.insert(tagged(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 10_000;
        let mut counts = [0usize; 100];
        for _ in 0..draws {
            counts[buf.sample(1, &mut rng).unwrap()[0].rewards[0] as usize] += 1;
        }
        let expected = draws as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // χ²(99) upper 0.1% quantile
        assert!(chi2 < 148.23, "chi2 = {chi2}");
        let sd = (draws as f64 * 0.01 * 0.99).sqrt();
        let worst = counts.iter().map(|&c| (c as f64 - expected).abs()).fold(0.0, f64::max);
        assert!(worst <= 3.5 * sd, "worst deviation {worst} vs sd {sd}");
    }
}
