//! Negative sampling from the smoothed unigram distribution.

use rand::Rng;

use crate::corpus::Vocabulary;

/// How many times a draw colliding with the excluded word is retried before
/// the collision is accepted. Keeps degenerate (single-word) vocabularies
/// from looping forever.
const EXCLUDE_RETRIES: usize = 8;

/// Sampling distribution proportional to count^alpha, realized as a
/// cumulative mass table over word-ids.
#[derive(Debug, Clone)]
pub struct UnigramTable {
    cumulative: Vec<f64>,
    alpha: f64,
}

impl UnigramTable {
    /// Build the table; word i gets mass count_i^alpha / sum_j count_j^alpha.
    pub fn build(vocab: &Vocabulary, alpha: f64) -> Self {
        let masses: Vec<f64> = vocab
            .counts()
            .iter()
            .map(|&c| (c as f64).powf(alpha))
            .collect();
        let total: f64 = masses.iter().sum();
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in masses {
            acc += m;
            cumulative.push(acc / total);
        }
        UnigramTable { cumulative, alpha }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Sampling probability of a word-id.
    pub fn probability(&self, id: u32) -> f64 {
        let i = id as usize;
        if i == 0 {
            self.cumulative[0]
        } else {
            self.cumulative[i] - self.cumulative[i - 1]
        }
    }

    /// Cumulative mass up to and including each word-id.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Draw one word-id.
    pub fn sample<G: Rng>(&self, rng: &mut G) -> u32 {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.cumulative.len() - 1) as u32
    }

    /// Draw `k` negatives, redrawing collisions with `exclude` a bounded
    /// number of times before accepting them.
    pub fn draw_negatives<G: Rng>(&self, k: usize, exclude: u32, rng: &mut G) -> Vec<u32> {
        let mut out = Vec::with_capacity(k);
        self.draw_negatives_into(k, exclude, rng, &mut out);
        out
    }

    /// Allocation-free variant of [`UnigramTable::draw_negatives`].
    pub fn draw_negatives_into<G: Rng>(
        &self,
        k: usize,
        exclude: u32,
        rng: &mut G,
        out: &mut Vec<u32>,
    ) {
        out.clear();
        for _ in 0..k {
            let mut id = self.sample(rng);
            for _ in 0..EXCLUDE_RETRIES {
                if id != exclude {
                    break;
                }
                id = self.sample(rng);
            }
            out.push(id);
        }
    }
}
