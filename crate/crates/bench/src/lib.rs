//! Shared fixtures for the benchmark targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bitembed::corpus::Vocabulary;

/// Zipf-ish synthetic vocabulary of `n` distinct alphabetic words.
pub fn synthetic_vocab(n: usize) -> Vocabulary {
    let tokens: Vec<String> = (0..n)
        .flat_map(|rank| {
            let count = (n / (rank + 1)).max(1);
            std::iter::repeat_n(word_name(rank), count)
        })
        .collect();
    Vocabulary::build(tokens, 1).expect("non-empty")
}

/// Deterministic letter-only word for a rank (digits would be split by the
/// tokenizer).
pub fn word_name(rank: usize) -> String {
    let mut name = String::new();
    let mut r = rank;
    loop {
        name.push((b'a' + (r % 26) as u8) as char);
        r /= 26;
        if r == 0 {
            break;
        }
    }
    name
}

/// A corpus line of `len` words sampled by rank from the vocabulary.
pub fn synthetic_line(vocab: &Vocabulary, len: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        // quadratic skew toward frequent ranks
        let u: f64 = rng.random();
        let rank = ((u * u) * vocab.len() as f64) as usize;
        words.push(vocab.word(rank.min(vocab.len() - 1) as u32).to_string());
    }
    words.join(" ")
}
