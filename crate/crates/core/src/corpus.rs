//! Corpus streaming: token normalization, vocabulary construction, and
//! subsampled training windows.
//!
//! Tokens are maximal runs of alphabetic characters with case preserved;
//! digits and punctuation act as separators. Newlines delimit sentences and
//! windows never cross them. Invalid UTF-8 is replaced with U+FFFD, which is
//! not alphabetic and therefore also separates tokens.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Split a line into normalized tokens: maximal alphabetic runs, original
/// case preserved.
pub fn tokenize(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
}

/// Frequency-filtered word list, ordered by descending count with ties
/// broken by first occurrence in the corpus.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    total_tokens: u64,
}

impl Vocabulary {
    /// Build from a token stream, keeping tokens with frequency >= `min_count`.
    pub fn build<I, S>(tokens: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, (u64, usize)> = HashMap::new();
        let mut order = 0usize;
        for token in tokens {
            let token = token.as_ref();
            match counts.get_mut(token) {
                Some(entry) => entry.0 += 1,
                None => {
                    counts.insert(token.to_string(), (1, order));
                    order += 1;
                }
            }
        }
        Self::from_counted(counts, min_count)
    }

    /// Build from newline-delimited text, tolerating invalid UTF-8.
    pub fn from_reader<R: Read>(reader: R, min_count: u64) -> Result<Self> {
        let mut counts: HashMap<String, (u64, usize)> = HashMap::new();
        let mut order = 0usize;
        for line in lossy_lines(reader) {
            let line = line?;
            for token in tokenize(&line) {
                match counts.get_mut(token) {
                    Some(entry) => entry.0 += 1,
                    None => {
                        counts.insert(token.to_string(), (1, order));
                        order += 1;
                    }
                }
            }
        }
        Self::from_counted(counts, min_count)
    }

    fn from_counted(counts: HashMap<String, (u64, usize)>, min_count: u64) -> Result<Self> {
        let mut entries: Vec<(String, u64, usize)> = counts
            .into_iter()
            .filter(|(_, (count, _))| *count >= min_count)
            .map(|(word, (count, first))| (word, count, first))
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary { min_count });
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

        let mut words = Vec::with_capacity(entries.len());
        let mut word_counts = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        let mut total = 0u64;
        for (id, (word, count, _)) in entries.into_iter().enumerate() {
            index.insert(word.clone(), id as u32);
            words.push(word);
            word_counts.push(count);
            total += count;
        }
        Ok(Vocabulary {
            words,
            counts: word_counts,
            index,
            total_tokens: total,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn id_of(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Sum of counts over retained words.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Write one `word<TAB>count` line per word, descending by count.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (word, count) in self.words.iter().zip(&self.counts) {
            writeln!(out, "{word}\t{count}")?;
        }
        Ok(())
    }
}

/// Probability of keeping an occurrence of a word under frequency
/// subsampling: min(1, sqrt(t / f)) with f the word's corpus frequency.
pub fn keep_probability(word_count: u64, total_tokens: u64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let f = word_count as f64 / total_tokens as f64;
    (t / f).sqrt().min(1.0)
}

/// A center word with its surrounding context word-ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingWindow {
    pub center: u32,
    pub context: Vec<u32>,
}

/// Settings for window iteration.
#[derive(Debug, Clone, Copy)]
pub struct WindowConfig {
    /// Maximum window radius w; the effective radius is drawn uniformly
    /// from {1..w} per position unless `fixed_window` is set.
    pub window_size: usize,
    /// Subsampling threshold t; 0 disables subsampling.
    pub subsample: f64,
    /// Always use the full radius w instead of a random reduced one.
    pub fixed_window: bool,
}

/// Iterate over lines as lossy UTF-8 strings, splitting on `\n` bytes.
pub fn lossy_lines<R: Read>(reader: R) -> LossyLines<R> {
    LossyLines {
        reader: BufReader::new(reader),
        buf: Vec::new(),
    }
}

pub struct LossyLines<R> {
    reader: BufReader<R>,
    buf: Vec<u8>,
}

impl<R: Read> Iterator for LossyLines<R> {
    type Item = io::Result<String>;

    fn next(&mut self) -> Option<io::Result<String>> {
        self.buf.clear();
        match self.reader.read_until(b'\n', &mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                if self.buf.last() == Some(&b'\n') {
                    self.buf.pop();
                }
                Some(Ok(String::from_utf8_lossy(&self.buf).into_owned()))
            }
            Err(e) => Some(Err(e)),
        }
    }
}

/// Disjoint byte ranges assigning the corpus to `workers` readers.
pub fn shard_ranges(file_len: u64, workers: usize) -> Vec<(u64, u64)> {
    let workers = workers.max(1) as u64;
    (0..workers)
        .map(|i| (file_len * i / workers, file_len * (i + 1) / workers))
        .collect()
}

/// Lines whose starting byte offset falls in `[start, end)` of a file.
///
/// A reader starting mid-file skips the partial line it lands on (that line
/// belongs to the preceding shard); the line straddling `end` is processed
/// to completion.
pub struct ShardLines {
    reader: BufReader<File>,
    pos: u64,
    end: u64,
    buf: Vec<u8>,
}

impl ShardLines {
    pub fn open<P: AsRef<Path>>(path: P, start: u64, end: u64) -> io::Result<Self> {
        let mut file = File::open(path)?;
        file.seek(SeekFrom::Start(start))?;
        let mut reader = BufReader::new(file);
        let mut pos = start;
        if start > 0 {
            let mut skip = Vec::new();
            pos += reader.read_until(b'\n', &mut skip)? as u64;
        }
        Ok(ShardLines {
            reader,
            pos,
            end,
            buf: Vec::new(),
        })
    }
}

impl Iterator for ShardLines {
    type Item = io::Result<String>;

    fn next(&mut self) -> Option<io::Result<String>> {
        if self.pos >= self.end {
            return None;
        }
        self.buf.clear();
        match self.reader.read_until(b'\n', &mut self.buf) {
            Ok(0) => None,
            Ok(n) => {
                self.pos += n as u64;
                if self.buf.last() == Some(&b'\n') {
                    self.buf.pop();
                }
                Some(Ok(String::from_utf8_lossy(&self.buf).into_owned()))
            }
            Err(e) => Some(Err(e)),
        }
    }
}

/// Stream training windows from sentence lines.
///
/// Per sentence, out-of-vocabulary tokens are removed, each surviving token
/// is kept with probability min(1, sqrt(t/f)), and every retained position
/// becomes a candidate center with context drawn from a randomly reduced
/// window. Windows with empty context are skipped. The draw order — one
/// subsampling draw per in-vocabulary token, then one radius draw per
/// retained position — is part of the determinism contract.
pub struct WindowIter<'v, L, G> {
    lines: L,
    vocab: &'v Vocabulary,
    config: WindowConfig,
    rng: G,
    keep_prob: Vec<f64>,
    sentence: Vec<u32>,
    position: usize,
    words_seen: u64,
}

/// Build a [`WindowIter`] over the given sentence lines.
pub fn iterate_windows<'v, L, G>(
    lines: L,
    vocab: &'v Vocabulary,
    config: WindowConfig,
    rng: G,
) -> WindowIter<'v, L, G>
where
    L: Iterator<Item = io::Result<String>>,
    G: Rng,
{
    let keep_prob = if config.subsample > 0.0 {
        vocab
            .counts()
            .iter()
            .map(|&c| keep_probability(c, vocab.total_tokens(), config.subsample))
            .collect()
    } else {
        Vec::new()
    };
    WindowIter {
        lines,
        vocab,
        config,
        rng,
        keep_prob,
        sentence: Vec::new(),
        position: 0,
        words_seen: 0,
    }
}

impl<L, G> WindowIter<'_, L, G>
where
    L: Iterator<Item = io::Result<String>>,
    G: Rng,
{
    /// In-vocabulary token occurrences consumed so far, before subsampling.
    pub fn words_seen(&self) -> u64 {
        self.words_seen
    }

    /// Read lines until one yields a non-empty retained sentence.
    fn next_sentence(&mut self) -> Option<io::Result<()>> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e)),
            };
            self.sentence.clear();
            for token in tokenize(&line) {
                let Some(id) = self.vocab.id_of(token) else {
                    continue;
                };
                self.words_seen += 1;
                if self.config.subsample > 0.0 {
                    let u: f64 = self.rng.random();
                    if u >= self.keep_prob[id as usize] {
                        continue;
                    }
                }
                self.sentence.push(id);
            }
            if !self.sentence.is_empty() {
                self.position = 0;
                return Some(Ok(()));
            }
        }
    }
}

impl<L, G> Iterator for WindowIter<'_, L, G>
where
    L: Iterator<Item = io::Result<String>>,
    G: Rng,
{
    type Item = Result<TrainingWindow>;

    fn next(&mut self) -> Option<Result<TrainingWindow>> {
        loop {
            if self.position >= self.sentence.len() {
                match self.next_sentence()? {
                    Ok(()) => {}
                    Err(e) => return Some(Err(e.into())),
                }
            }
            let o = self.position;
            self.position += 1;

            let radius = if self.config.fixed_window {
                self.config.window_size
            } else {
                self.rng.random_range(1..=self.config.window_size)
            };
            let lo = o.saturating_sub(radius);
            let hi = (o + radius).min(self.sentence.len() - 1);
            if hi == lo {
                continue;
            }
            let mut context = Vec::with_capacity(hi - lo);
            context.extend_from_slice(&self.sentence[lo..o]);
            context.extend_from_slice(&self.sentence[o + 1..=hi]);
            return Some(Ok(TrainingWindow {
                center: self.sentence[o],
                context,
            }));
        }
    }
}
