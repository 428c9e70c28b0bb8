//! Intrinsic evaluation: word-similarity correlation, word-analogy
//! accuracy, and nearest/furthest neighbor listings.
//!
//! Similarity scoring ranks pairs by cosine and reports Spearman rank
//! correlation against the human scores. Analogy questions are answered by
//! an argmax over the whole vocabulary (minus the three query words) using
//! either additive or multiplicative combination of cosines. Word lookups
//! try an exact match first and fall back to lowercase, since training is
//! case sensitive while benchmark files mix cases. Out-of-vocabulary rows
//! are skipped and counted, never scored as wrong.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::lossy_lines;
use crate::error::{Error, Result};
use crate::vectors::WordVectors;

/// Word pairs with human similarity judgements.
#[derive(Debug, Clone)]
pub struct SimilarityDataset {
    pub pairs: Vec<(String, String, f64)>,
}

impl SimilarityDataset {
    /// Parse `word1 word2 score` rows (tab- or whitespace-separated).
    /// Empty lines and `#` comments are skipped.
    pub fn parse<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, line) in lossy_lines(reader).enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected `word1 word2 score`, got {trimmed:?}"),
                });
            }
            let score: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("bad score {:?}", fields[2]),
            })?;
            if !score.is_finite() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("non-finite score {score}"),
                });
            }
            pairs.push((fields[0].to_string(), fields[1].to_string(), score));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyDataset {
                path: source.to_string(),
            });
        }
        Ok(SimilarityDataset { pairs })
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let name = path.as_ref().display().to_string();
        Self::parse(File::open(path)?, &name)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Analogy questions `a : a* :: b : b*`.
#[derive(Debug, Clone)]
pub struct AnalogyDataset {
    pub questions: Vec<[String; 4]>,
}

impl AnalogyDataset {
    /// Parse four whitespace-separated words per line. Lines starting with
    /// `:` are category headers and are skipped; so are empty lines.
    pub fn parse<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut questions = Vec::new();
        for (idx, line) in lossy_lines(reader).enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with(':') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected four words, got {trimmed:?}"),
                });
            }
            questions.push([
                fields[0].to_string(),
                fields[1].to_string(),
                fields[2].to_string(),
                fields[3].to_string(),
            ]);
        }
        if questions.is_empty() {
            return Err(Error::EmptyDataset {
                path: source.to_string(),
            });
        }
        Ok(AnalogyDataset { questions })
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let name = path.as_ref().display().to_string();
        Self::parse(File::open(path)?, &name)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

/// How analogy candidates are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalogyMethod {
    /// cos(c, a*) - cos(c, a) + cos(c, b)
    Add,
    /// s(c, a*) * s(c, b) / (s(c, a) + eps) with s = (cos + 1) / 2
    Mul,
}

impl std::str::FromStr for AnalogyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "add" | "3cosadd" => Ok(AnalogyMethod::Add),
            "mul" | "3cosmul" => Ok(AnalogyMethod::Mul),
            other => Err(Error::InvalidConfig(format!(
                "analogy method must be `add` or `mul`, got {other:?}"
            ))),
        }
    }
}

const MUL_EPSILON: f64 = 0.001;

/// Outcome of a similarity or analogy evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    pub score: f64,
    pub evaluated: usize,
    pub skipped_oov: usize,
}

/// Cosine similarity of two nonzero vectors.
pub fn cosine(x: &[f32], y: &[f32]) -> Result<f64> {
    assert_eq!(x.len(), y.len());
    let mut dot = 0f64;
    let mut nx = 0f64;
    let mut ny = 0f64;
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (nx.sqrt() * ny.sqrt()))
}

/// Ranks with ties assigned the average (fractional) rank, 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the average rank
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average-rank vectors.
pub fn spearman(pred: &[f64], human: &[f64]) -> Result<f64> {
    if pred.len() != human.len() || pred.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "rank correlation needs two equal-length lists of >= 2 values, got {} and {}",
            pred.len(),
            human.len()
        )));
    }
    let rp = average_ranks(pred);
    let rh = average_ranks(human);
    let n = rp.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0f64;
    let mut var_p = 0f64;
    let mut var_h = 0f64;
    for (&a, &b) in rp.iter().zip(&rh) {
        cov += (a - mean) * (b - mean);
        var_p += (a - mean).powi(2);
        var_h += (b - mean).powi(2);
    }
    if var_p == 0.0 {
        return Err(Error::ConstantRanks {
            which: "prediction",
        });
    }
    if var_h == 0.0 {
        return Err(Error::ConstantRanks { which: "human" });
    }
    Ok(cov / (var_p.sqrt() * var_h.sqrt()))
}

/// Spearman correlation between cosine similarities and human scores over
/// the in-vocabulary pairs.
pub fn eval_similarity(vecs: &WordVectors, ds: &SimilarityDataset) -> Result<EvalResult> {
    let mut predicted = Vec::new();
    let mut human = Vec::new();
    let mut skipped = 0usize;
    for (w1, w2, score) in &ds.pairs {
        let (Some(a), Some(b)) = (vecs.lexicon().resolve(w1), vecs.lexicon().resolve(w2)) else {
            skipped += 1;
            continue;
        };
        predicted.push(cosine(vecs.row(a), vecs.row(b))?);
        human.push(*score);
    }
    if predicted.len() < 2 {
        return Err(Error::TooFewPairs {
            evaluated: predicted.len(),
            total: ds.len(),
        });
    }
    Ok(EvalResult {
        score: spearman(&predicted, &human)?,
        evaluated: predicted.len(),
        skipped_oov: skipped,
    })
}

/// Fraction of analogy questions whose argmax candidate is the expected
/// answer. Candidates are every vocabulary word except the three query
/// words; rows are normalized internally so dot products are cosines.
pub fn eval_analogy(
    vecs: &WordVectors,
    ds: &AnalogyDataset,
    method: AnalogyMethod,
) -> Result<EvalResult> {
    let dim = vecs.dim();
    let matrix = vecs.normalized_matrix();
    let row = |id: u32| -> &[f32] { &matrix[id as usize * dim..(id as usize + 1) * dim] };
    let vocab_size = vecs.len() as u32;

    let outcomes: Vec<Option<bool>> = ds
        .questions
        .par_iter()
        .map(|[a, a_star, b, b_star]| {
            let ids = [
                vecs.lexicon().resolve(a)?,
                vecs.lexicon().resolve(a_star)?,
                vecs.lexicon().resolve(b)?,
                vecs.lexicon().resolve(b_star)?,
            ];
            let [id_a, id_a_star, id_b, id_b_star] = ids;
            let excluded = [id_a, id_a_star, id_b];

            let dot = |x: &[f32], y: &[f32]| -> f64 {
                x.iter().zip(y).map(|(&p, &q)| p as f64 * q as f64).sum()
            };
            let mut best: Option<(f64, u32)> = None;
            for candidate in 0..vocab_size {
                if excluded.contains(&candidate) {
                    continue;
                }
                let c = row(candidate);
                let cos_a = dot(c, row(id_a));
                let cos_a_star = dot(c, row(id_a_star));
                let cos_b = dot(c, row(id_b));
                let score = match method {
                    AnalogyMethod::Add => cos_a_star - cos_a + cos_b,
                    AnalogyMethod::Mul => {
                        let s = |cos: f64| (cos + 1.0) / 2.0;
                        s(cos_a_star) * s(cos_b) / (s(cos_a) + MUL_EPSILON)
                    }
                };
                if best.is_none_or(|(b_score, _)| score > b_score) {
                    best = Some((score, candidate));
                }
            }
            Some(best.map(|(_, id)| id == id_b_star).unwrap_or(false))
        })
        .collect();

    let evaluated = outcomes.iter().flatten().count();
    let correct = outcomes.iter().flatten().filter(|&&c| c).count();
    let skipped = ds.len() - evaluated;
    if evaluated == 0 {
        return Err(Error::NoEvaluableQuestions { skipped });
    }
    Ok(EvalResult {
        score: correct as f64 / evaluated as f64,
        evaluated,
        skipped_oov: skipped,
    })
}

/// Ranked neighbor lists for one target word.
#[derive(Debug, Clone)]
pub struct Neighbors {
    /// Highest dot products, descending.
    pub closest: Vec<(String, f64)>,
    /// Lowest dot products, ascending.
    pub furthest: Vec<(String, f64)>,
}

/// Top-n closest and furthest words to `word` by dot product. The target
/// itself is excluded; ties break toward the smaller word-id. An
/// out-of-vocabulary target reports the nearest spellings instead.
pub fn neighbors(vecs: &WordVectors, word: &str, n: usize) -> Result<Neighbors> {
    let Some(target) = vecs.lexicon().resolve(word) else {
        return Err(Error::UnknownWord {
            word: word.to_string(),
            suggestions: closest_spellings(vecs, word, 5),
        });
    };
    let target_row = vecs.row(target);
    let mut scored: Vec<(u32, f64)> = (0..vecs.len() as u32)
        .filter(|&id| id != target)
        .map(|id| {
            let dot = vecs
                .row(id)
                .iter()
                .zip(target_row)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>();
            (id, dot)
        })
        .collect();
    let n = n.min(scored.len());

    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let closest = scored[..n]
        .iter()
        .map(|&(id, s)| (vecs.lexicon().word(id).to_string(), s))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let furthest = scored[..n]
        .iter()
        .map(|&(id, s)| (vecs.lexicon().word(id).to_string(), s))
        .collect();
    Ok(Neighbors { closest, furthest })
}

fn closest_spellings(vecs: &WordVectors, word: &str, n: usize) -> Vec<String> {
    let mut scored: Vec<(usize, u32)> = (0..vecs.len() as u32)
        .map(|id| (levenshtein(word, vecs.lexicon().word(id)), id))
        .collect();
    scored.sort();
    scored
        .into_iter()
        .take(n)
        .map(|(_, id)| vecs.lexicon().word(id).to_string())
        .collect()
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
