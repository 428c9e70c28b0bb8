//! CBOW negative-sampling SGD with an optional quantizer inserted into the
//! objective.
//!
//! The forward pass averages the quantized context vectors, scores the
//! quantized center and negative vectors against that average, and takes the
//! usual sigmoid losses. Gradients are computed with respect to the
//! quantized quantities and applied unchanged to the underlying
//! full-precision parameters (straight-through). With the 32-bit scheme the
//! quantizer is the identity and this is exactly standard CBOW negative
//! sampling.
//!
//! Parallelism is lock-free: workers update the shared parameter matrices
//! with relaxed atomic reads and writes and no synchronization. Lost updates
//! and torn row reads are tolerated; exact reproducibility is guaranteed at
//! `workers = 1` only.

use std::fs::File;
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{iterate_windows, ShardLines, TrainingWindow, Vocabulary, WindowConfig};
use crate::corpus::shard_ranges;
use crate::error::{Error, Result};
use crate::eval::{eval_analogy, AnalogyDataset, AnalogyMethod};
use crate::quantize::{Bitlevel, QuantizationScheme};
use crate::sampler::UnigramTable;
use crate::vectors::WordVectors;

/// Hyperparameters for a training run.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub subsample: f64,
    pub min_count: u64,
    pub bitlevel: Bitlevel,
    /// Unigram smoothing exponent for negative sampling.
    pub alpha: f64,
    /// Worker threads; 0 means available parallelism.
    pub workers: usize,
    pub seed: u64,
    /// Use the full window radius instead of a random reduced one.
    pub fixed_window: bool,
    /// Average the quantized context sum by the context size. Disabling
    /// reproduces the plain-sum variant of the quantized objective.
    pub context_average: bool,
    /// Track the running maximum absolute parameter value (divergence
    /// diagnostic).
    pub track_max_abs: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dim: 800,
            window: 10,
            negatives: 12,
            epochs: 25,
            lr_start: 0.05,
            lr_end: 0.0001,
            subsample: 1e-4,
            min_count: 5,
            bitlevel: Bitlevel::B1,
            alpha: 0.75,
            workers: 0,
            seed: 1,
            fixed_window: false,
            context_average: true,
            track_max_abs: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim < 1 {
            return fail("dimension must be >= 1".into());
        }
        if self.window < 1 {
            return fail("window size must be >= 1".into());
        }
        if self.negatives < 1 {
            return fail("negative sample count must be >= 1".into());
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1".into());
        }
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return fail(format!(
                "learning rates must satisfy lr_start > lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if !self.subsample.is_finite() || self.subsample < 0.0 {
            return fail("subsample threshold must be finite and >= 0".into());
        }
        if self.min_count < 1 {
            return fail("min count must be >= 1".into());
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return fail("sampling exponent must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn scheme(&self) -> QuantizationScheme {
        QuantizationScheme::new(self.bitlevel)
    }

    fn effective_workers(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

/// Learning rate at training progress `p` in [0, 1]: linear interpolation
/// from `lr_start` to `lr_end`, floored at `lr_end`.
pub fn learning_rate(config: &TrainingConfig, progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    (config.lr_start * (1.0 - p) + config.lr_end * p).max(config.lr_end)
}

/// The two trained parameter matrices (center and context vectors), stored
/// as f32 bits in atomic cells so workers can share them without locks.
///
/// All accesses are `Relaxed`; concurrent updates may lose writes, which the
/// training procedure tolerates.
pub struct EmbeddingPair {
    center: Vec<AtomicU32>,
    context: Vec<AtomicU32>,
    vocab_size: usize,
    dim: usize,
}

impl EmbeddingPair {
    /// Initialize center entries uniformly in the open interval
    /// (-0.5/dim, +0.5/dim) and context entries to zero.
    pub fn init<G: Rng>(vocab_size: usize, dim: usize, rng: &mut G) -> Self {
        assert!(vocab_size >= 1 && dim >= 1);
        let bound = (0.5 / dim as f64) as f32;
        let mut center = Vec::with_capacity(vocab_size * dim);
        for _ in 0..vocab_size * dim {
            let value = loop {
                let u: f64 = rng.random();
                let x = ((u - 0.5) / dim as f64) as f32;
                if -bound < x && x < bound {
                    break x;
                }
            };
            center.push(AtomicU32::new(value.to_bits()));
        }
        let context = (0..vocab_size * dim)
            .map(|_| AtomicU32::new(0f32.to_bits()))
            .collect();
        EmbeddingPair {
            center,
            context,
            vocab_size,
            dim,
        }
    }

    /// All-zero matrices; handy for tests and hand-computed cases.
    pub fn zeroed(vocab_size: usize, dim: usize) -> Self {
        let zeros = |n: usize| (0..n).map(|_| AtomicU32::new(0f32.to_bits())).collect();
        EmbeddingPair {
            center: zeros(vocab_size * dim),
            context: zeros(vocab_size * dim),
            vocab_size,
            dim,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn range(&self, row: u32) -> Range<usize> {
        let start = row as usize * self.dim;
        start..start + self.dim
    }

    pub fn center_row(&self, row: u32) -> Vec<f32> {
        self.center[self.range(row)]
            .iter()
            .map(|c| f32::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }

    pub fn context_row(&self, row: u32) -> Vec<f32> {
        self.context[self.range(row)]
            .iter()
            .map(|c| f32::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }

    pub fn write_center_row(&self, row: u32, values: &[f32]) {
        assert_eq!(values.len(), self.dim);
        for (cell, &v) in self.center[self.range(row)].iter().zip(values) {
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    pub fn write_context_row(&self, row: u32, values: &[f32]) {
        assert_eq!(values.len(), self.dim);
        for (cell, &v) in self.context[self.range(row)].iter().zip(values) {
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    /// Snapshot of the center matrix, row-major.
    pub fn center_matrix(&self) -> Vec<f32> {
        self.center
            .iter()
            .map(|c| f32::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }

    /// Snapshot of the context matrix, row-major.
    pub fn context_matrix(&self) -> Vec<f32> {
        self.context
            .iter()
            .map(|c| f32::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }

    fn read_into(cells: &[AtomicU32], out: &mut [f64]) -> f64 {
        let mut max_abs = 0f64;
        for (dst, cell) in out.iter_mut().zip(cells) {
            let x = f32::from_bits(cell.load(Ordering::Relaxed)) as f64;
            *dst = x;
            max_abs = max_abs.max(x.abs());
        }
        max_abs
    }

    /// Read a center row as f64, returning the row's max |entry| (NaN and
    /// infinity propagate into the return value for divergence checks).
    fn read_center(&self, row: u32, out: &mut [f64]) -> f64 {
        Self::read_into(&self.center[self.range(row)], out)
    }

    fn read_context(&self, row: u32, out: &mut [f64]) -> f64 {
        Self::read_into(&self.context[self.range(row)], out)
    }

    /// row += scale * delta, elementwise, unsynchronized.
    fn add_center(&self, row: u32, scale: f64, delta: &[f64]) {
        for (cell, &d) in self.center[self.range(row)].iter().zip(delta) {
            let cur = f32::from_bits(cell.load(Ordering::Relaxed)) as f64;
            cell.store(((cur + scale * d) as f32).to_bits(), Ordering::Relaxed);
        }
    }

    fn add_context(&self, row: u32, scale: f64, delta: &[f64]) {
        for (cell, &d) in self.context[self.range(row)].iter().zip(delta) {
            let cur = f32::from_bits(cell.load(Ordering::Relaxed)) as f64;
            cell.store(((cur + scale * d) as f32).to_bits(), Ordering::Relaxed);
        }
    }
}

/// Inlined quantizer for the training hot loop. Mirrors
/// [`QuantizationScheme::quantize`] with the scheme's codebook values
/// materialized as f64.
#[derive(Debug, Clone, Copy)]
struct Quantizer {
    bitlevel: Bitlevel,
    levels: [f64; 4],
}

impl Quantizer {
    fn from_scheme(scheme: &QuantizationScheme) -> Self {
        let mut levels = [0f64; 4];
        for (dst, &v) in levels.iter_mut().zip(scheme.codebook()) {
            *dst = v as f64;
        }
        Quantizer {
            bitlevel: scheme.bitlevel(),
            levels,
        }
    }

    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self.bitlevel {
            Bitlevel::B1 => {
                if x >= 0.0 {
                    self.levels[1]
                } else {
                    self.levels[0]
                }
            }
            Bitlevel::B2 => {
                if x > 0.5 {
                    self.levels[3]
                } else if x >= 0.0 {
                    self.levels[2]
                } else if x >= -0.5 {
                    self.levels[1]
                } else {
                    self.levels[0]
                }
            }
            Bitlevel::B32 => x,
        }
    }
}

/// Loss and gradients of the negative-sampling objective, evaluated at the
/// (already quantized) center vector, negative vectors, and context average.
///
/// This is the pure mathematical core of a training step: callers quantize
/// first, and apply the returned gradients to the full-precision parameters
/// (the straight-through contract makes that the correct update).
#[derive(Debug, Clone)]
pub struct CbowGradients {
    pub loss: f64,
    /// dJ / d(center), length d.
    pub center: Vec<f64>,
    /// dJ / d(negative_i), one entry per negative.
    pub negatives: Vec<Vec<f64>>,
    /// dJ / d(context average), length d.
    pub context_avg: Vec<f64>,
}

/// Numerically stable -log(sigmoid(z)) = softplus(-z).
#[inline]
fn neg_log_sigmoid(z: f64) -> f64 {
    // softplus(x) = max(x, 0) + ln(1 + e^{-|x|})
    let x = -z;
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Evaluate the objective and its gradients at given quantized quantities.
pub fn cbow_objective(
    center_q: &[f64],
    negatives_q: &[Vec<f64>],
    context_avg_q: &[f64],
) -> Result<CbowGradients> {
    let d = center_q.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

    let z_pos = dot(center_q, context_avg_q);
    if !z_pos.is_finite() {
        return Err(Error::NonFinite {
            context: "positive score".into(),
            value: z_pos,
        });
    }
    let mut loss = neg_log_sigmoid(z_pos);
    let g_pos = sigmoid(z_pos) - 1.0;

    let mut grad_ctx = vec![0.0; d];
    for (g, &c) in grad_ctx.iter_mut().zip(center_q) {
        *g = g_pos * c;
    }
    let grad_center: Vec<f64> = context_avg_q.iter().map(|&v| g_pos * v).collect();

    let mut grad_negs = Vec::with_capacity(negatives_q.len());
    for (i, neg) in negatives_q.iter().enumerate() {
        let z = dot(neg, context_avg_q);
        if !z.is_finite() {
            return Err(Error::NonFinite {
                context: format!("negative score {i}"),
                value: z,
            });
        }
        loss += neg_log_sigmoid(-z);
        let g = sigmoid(z);
        grad_negs.push(context_avg_q.iter().map(|&v| g * v).collect());
        for (acc, &n) in grad_ctx.iter_mut().zip(neg) {
            *acc += g * n;
        }
    }

    Ok(CbowGradients {
        loss,
        center: grad_center,
        negatives: grad_negs,
        context_avg: grad_ctx,
    })
}

/// Reusable per-worker scratch space for training steps.
struct StepBuffers {
    center_q: Vec<f64>,
    context_avg: Vec<f64>,
    grad_ctx: Vec<f64>,
    row: Vec<f64>,
    neg_rows: Vec<f64>,
    negatives: Vec<u32>,
}

impl StepBuffers {
    fn new(dim: usize, k: usize) -> Self {
        StepBuffers {
            center_q: vec![0.0; dim],
            context_avg: vec![0.0; dim],
            grad_ctx: vec![0.0; dim],
            row: vec![0.0; dim],
            neg_rows: vec![0.0; dim * k],
            negatives: Vec::with_capacity(k),
        }
    }
}

/// One SGD step on a window. Returns the pre-update loss.
///
/// Gradient application follows the straight-through contract: gradients of
/// the quantized objective are added to the full-precision rows. The context
/// gradient is applied whole to every context word.
pub fn cbow_step(
    emb: &EmbeddingPair,
    window: &TrainingWindow,
    negatives: &[u32],
    lr: f64,
    scheme: &QuantizationScheme,
) -> Result<f64> {
    let quantizer = Quantizer::from_scheme(scheme);
    let mut bufs = StepBuffers::new(emb.dim(), negatives.len());
    bufs.negatives.extend_from_slice(negatives);
    let mut max_abs = 0.0;
    step_impl(emb, window, lr, &quantizer, true, &mut bufs, &mut max_abs)
}

fn diverged(what: &'static str, word_id: u32, progress: f64) -> Error {
    Error::Diverged {
        what,
        word_id,
        progress,
    }
}

/// Shared step used by [`cbow_step`] and the worker loop. `bufs.negatives`
/// must already hold the drawn negative ids.
fn step_impl(
    emb: &EmbeddingPair,
    window: &TrainingWindow,
    lr: f64,
    quantizer: &Quantizer,
    context_average: bool,
    bufs: &mut StepBuffers,
    running_max_abs: &mut f64,
) -> Result<f64> {
    debug_assert!(!window.context.is_empty());
    let d = emb.dim();

    // Quantized context average.
    bufs.context_avg.iter_mut().for_each(|x| *x = 0.0);
    for &ctx_id in &window.context {
        let row_max = emb.read_context(ctx_id, &mut bufs.row);
        if !row_max.is_finite() {
            return Err(diverged("context vector", ctx_id, f64::NAN));
        }
        *running_max_abs = running_max_abs.max(row_max);
        for (acc, &x) in bufs.context_avg.iter_mut().zip(&bufs.row) {
            *acc += quantizer.apply(x);
        }
    }
    if context_average {
        let inv = 1.0 / window.context.len() as f64;
        bufs.context_avg.iter_mut().for_each(|x| *x *= inv);
    }

    // Quantized center and negative rows.
    let row_max = emb.read_center(window.center, &mut bufs.center_q);
    if !row_max.is_finite() {
        return Err(diverged("center vector", window.center, f64::NAN));
    }
    *running_max_abs = running_max_abs.max(row_max);
    bufs.center_q.iter_mut().for_each(|x| *x = quantizer.apply(*x));

    for (i, &neg_id) in bufs.negatives.iter().enumerate() {
        let dst = &mut bufs.neg_rows[i * d..(i + 1) * d];
        let row_max = emb.read_center(neg_id, dst);
        if !row_max.is_finite() {
            return Err(diverged("negative vector", neg_id, f64::NAN));
        }
        *running_max_abs = running_max_abs.max(row_max);
        dst.iter_mut().for_each(|x| *x = quantizer.apply(*x));
    }

    // Scores, loss, and shared gradient pieces.
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let z_pos = dot(&bufs.center_q, &bufs.context_avg);
    if !z_pos.is_finite() {
        return Err(diverged("positive score", window.center, f64::NAN));
    }
    let mut loss = neg_log_sigmoid(z_pos);
    let g_pos = sigmoid(z_pos) - 1.0;

    for (g, &c) in bufs.grad_ctx.iter_mut().zip(&bufs.center_q) {
        *g = g_pos * c;
    }

    // Center update: u_o -= lr * g_pos * v_avg.
    for (dst, &v) in bufs.row.iter_mut().zip(&bufs.context_avg) {
        *dst = g_pos * v;
    }
    emb.add_center(window.center, -lr, &bufs.row);

    // Negative updates: u_i -= lr * sigmoid(z_i) * v_avg.
    for (i, &neg_id) in bufs.negatives.iter().enumerate() {
        let neg_q = &bufs.neg_rows[i * d..(i + 1) * d];
        let z = dot(neg_q, &bufs.context_avg);
        if !z.is_finite() {
            return Err(diverged("negative score", neg_id, f64::NAN));
        }
        loss += neg_log_sigmoid(-z);
        let g = sigmoid(z);
        for (acc, &n) in bufs.grad_ctx.iter_mut().zip(neg_q) {
            *acc += g * n;
        }
        for (dst, &v) in bufs.row.iter_mut().zip(&bufs.context_avg) {
            *dst = g * v;
        }
        emb.add_center(neg_id, -lr, &bufs.row);
    }

    // Context updates: each context word receives the whole context-average
    // gradient (no division by the context size).
    for &ctx_id in &window.context {
        emb.add_context(ctx_id, -lr, &bufs.grad_ctx);
    }

    if !loss.is_finite() {
        return Err(diverged("loss", window.center, f64::NAN));
    }
    Ok(loss)
}

/// Mean training loss over one reporting interval (1% of total progress).
#[derive(Debug, Clone, Copy)]
pub struct IntervalStat {
    /// Interval index, 0..100.
    pub interval: usize,
    pub mean_loss: f64,
    pub updates: u64,
    /// Learning rate observed when the interval was first entered.
    pub lr: f64,
}

/// Summary of a training run.
#[derive(Debug, Clone)]
pub struct TrainingReport {
    /// Non-empty reporting intervals in order.
    pub intervals: Vec<IntervalStat>,
    /// In-vocabulary word occurrences processed (across all epochs).
    pub words_processed: u64,
    pub wall_secs: f64,
    /// Running max |parameter| when tracking was enabled.
    pub max_abs: Option<f64>,
}

impl TrainingReport {
    /// Mean loss of the final reporting interval ("end training loss").
    pub fn end_loss(&self) -> Option<f64> {
        self.intervals.last().map(|s| s.mean_loss)
    }

    /// Update-weighted mean loss over intervals in `range` (interval
    /// indices, e.g. 0..10 for the first 10% of training).
    pub fn mean_loss_over(&self, range: Range<usize>) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0u64;
        for s in &self.intervals {
            if range.contains(&s.interval) {
                sum += s.mean_loss * s.updates as f64;
                n += s.updates;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Progress snapshot passed to the training progress callback at each 1%
/// interval boundary.
#[derive(Debug, Clone, Copy)]
pub struct ProgressEvent {
    /// Completed interval index, 0..100.
    pub interval: usize,
    /// Fraction of expected word occurrences processed.
    pub progress: f64,
    pub lr: f64,
    /// Mean loss of the completed interval.
    pub mean_loss: f64,
    pub words_per_sec: f64,
}

type ProgressFn<'a> = dyn Fn(ProgressEvent) + Sync + 'a;

const INTERVALS: usize = 100;
const FLUSH_WORDS: u64 = 10_000;

fn atomic_f64_add(cell: &AtomicU64, x: f64) {
    let mut cur = cell.load(Ordering::Relaxed);
    loop {
        let new = (f64::from_bits(cur) + x).to_bits();
        match cell.compare_exchange_weak(cur, new, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(seen) => cur = seen,
        }
    }
}

fn atomic_f64_max(cell: &AtomicU64, x: f64) {
    // Non-negative f64 bit patterns order like the values.
    cell.fetch_max(x.to_bits(), Ordering::Relaxed);
}

struct SharedState {
    processed: AtomicU64,
    abort: AtomicBool,
    loss_sum: Vec<AtomicU64>,
    loss_count: Vec<AtomicU64>,
    lr_seen: Vec<AtomicU64>,
    reported: AtomicU64,
    max_abs: AtomicU64,
}

impl SharedState {
    fn new() -> Self {
        let zeros = |n: usize| (0..n).map(|_| AtomicU64::new(0)).collect::<Vec<_>>();
        SharedState {
            processed: AtomicU64::new(0),
            abort: AtomicBool::new(false),
            loss_sum: zeros(INTERVALS),
            loss_count: zeros(INTERVALS),
            lr_seen: zeros(INTERVALS),
            reported: AtomicU64::new(0),
            max_abs: AtomicU64::new(0),
        }
    }

    fn interval_mean(&self, i: usize) -> Option<f64> {
        let n = self.loss_count[i].load(Ordering::Relaxed);
        (n > 0).then(|| f64::from_bits(self.loss_sum[i].load(Ordering::Relaxed)) / n as f64)
    }
}

/// Result of [`train`]: the raw parameter matrices, the vocabulary they are
/// indexed by, and the run report.
pub struct TrainOutput {
    pub embeddings: EmbeddingPair,
    pub vocab: Arc<Vocabulary>,
    pub report: TrainingReport,
}

/// Build the vocabulary from the corpus and train embeddings over it.
pub fn train(corpus: &Path, config: &TrainingConfig) -> Result<TrainOutput> {
    config.validate()?;
    let vocab = Arc::new(Vocabulary::from_reader(
        File::open(corpus)?,
        config.min_count,
    )?);
    train_with_vocab(corpus, vocab, config, None)
}

fn mix_seed(seed: u64, worker: u64, epoch: u64, stream: u64) -> u64 {
    // splitmix64 over the packed identifiers
    let mut z = seed
        .wrapping_add(worker.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(epoch.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(stream.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train over a pre-built vocabulary, optionally reporting interval
/// progress through `on_progress`.
pub fn train_with_vocab(
    corpus: &Path,
    vocab: Arc<Vocabulary>,
    config: &TrainingConfig,
    on_progress: Option<&ProgressFn<'_>>,
) -> Result<TrainOutput> {
    config.validate()?;
    let table = UnigramTable::build(&vocab, config.alpha);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let emb = EmbeddingPair::init(vocab.len(), config.dim, &mut init_rng);

    let file_len = std::fs::metadata(corpus)?.len();
    let workers = config.effective_workers();
    let ranges = shard_ranges(file_len, workers);
    let total_expected = (config.epochs as u64).saturating_mul(vocab.total_tokens());
    let shared = SharedState::new();
    let started = Instant::now();

    thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::with_capacity(workers);
        for (worker_id, &(start, end)) in ranges.iter().enumerate() {
            let vocab = &vocab;
            let table = &table;
            let emb = &emb;
            let shared = &shared;
            handles.push(scope.spawn(move || {
                run_worker(WorkerContext {
                    corpus,
                    vocab,
                    table,
                    emb,
                    shared,
                    config,
                    worker_id: worker_id as u64,
                    shard: (start, end),
                    total_expected,
                    started,
                    on_progress,
                })
            }));
        }
        let mut first_err = None;
        for handle in handles {
            let joined = handle.join().expect("worker thread panicked");
            if let Err(e) = joined {
                first_err.get_or_insert(e);
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })?;

    let intervals = (0..INTERVALS)
        .filter_map(|i| {
            shared.interval_mean(i).map(|mean_loss| IntervalStat {
                interval: i,
                mean_loss,
                updates: shared.loss_count[i].load(Ordering::Relaxed),
                lr: f64::from_bits(shared.lr_seen[i].load(Ordering::Relaxed)),
            })
        })
        .collect();

    let report = TrainingReport {
        intervals,
        words_processed: shared.processed.load(Ordering::Relaxed),
        wall_secs: started.elapsed().as_secs_f64(),
        max_abs: config
            .track_max_abs
            .then(|| f64::from_bits(shared.max_abs.load(Ordering::Relaxed))),
    };
    Ok(TrainOutput {
        embeddings: emb,
        vocab,
        report,
    })
}

struct WorkerContext<'a> {
    corpus: &'a Path,
    vocab: &'a Vocabulary,
    table: &'a UnigramTable,
    emb: &'a EmbeddingPair,
    shared: &'a SharedState,
    config: &'a TrainingConfig,
    worker_id: u64,
    shard: (u64, u64),
    total_expected: u64,
    started: Instant,
    on_progress: Option<&'a ProgressFn<'a>>,
}

fn run_worker(ctx: WorkerContext<'_>) -> Result<()> {
    let cfg = ctx.config;
    let quantizer = Quantizer::from_scheme(&cfg.scheme());
    let mut bufs = StepBuffers::new(cfg.dim, cfg.negatives);
    let window_config = WindowConfig {
        window_size: cfg.window,
        subsample: cfg.subsample,
        fixed_window: cfg.fixed_window,
    };
    let mut max_abs = 0f64;

    let result = (|| -> Result<()> {
        for epoch in 0..cfg.epochs as u64 {
            let window_rng =
                ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, ctx.worker_id, epoch, 0));
            let mut negative_rng =
                ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, ctx.worker_id, epoch, 1));
            let lines = ShardLines::open(ctx.corpus, ctx.shard.0, ctx.shard.1)?;
            let mut windows = iterate_windows(lines, ctx.vocab, window_config, window_rng);

            let mut flushed: u64 = 0;
            let mut global = ctx.shared.processed.load(Ordering::Relaxed);
            let mut progress = global as f64 / ctx.total_expected.max(1) as f64;
            let mut lr = learning_rate(cfg, progress);
            let mut bin = ((progress * INTERVALS as f64) as usize).min(INTERVALS - 1);
            ctx.shared.lr_seen[bin]
                .compare_exchange(0, lr.to_bits(), Ordering::Relaxed, Ordering::Relaxed)
                .ok();

            while let Some(window) = windows.next() {
                if ctx.shared.abort.load(Ordering::Relaxed) {
                    return Ok(());
                }
                let window = window?;

                let seen = windows.words_seen();
                if seen - flushed >= FLUSH_WORDS {
                    global = ctx
                        .shared
                        .processed
                        .fetch_add(seen - flushed, Ordering::Relaxed)
                        + (seen - flushed);
                    flushed = seen;
                    progress = (global as f64 / ctx.total_expected.max(1) as f64).min(1.0);
                    lr = learning_rate(cfg, progress);
                    let new_bin = ((progress * INTERVALS as f64) as usize).min(INTERVALS - 1);
                    if new_bin != bin {
                        ctx.shared.lr_seen[new_bin]
                            .compare_exchange(0, lr.to_bits(), Ordering::Relaxed, Ordering::Relaxed)
                            .ok();
                        report_completed_intervals(&ctx, new_bin, progress, lr);
                        bin = new_bin;
                    }
                }

                ctx.table.draw_negatives_into(
                    cfg.negatives,
                    window.center,
                    &mut negative_rng,
                    &mut bufs.negatives,
                );
                let loss = step_impl(
                    ctx.emb,
                    &window,
                    lr,
                    &quantizer,
                    cfg.context_average,
                    &mut bufs,
                    &mut max_abs,
                )
                .map_err(|e| attach_progress(e, progress))?;

                atomic_f64_add(&ctx.shared.loss_sum[bin], loss);
                ctx.shared.loss_count[bin].fetch_add(1, Ordering::Relaxed);
                if cfg.track_max_abs {
                    atomic_f64_max(&ctx.shared.max_abs, max_abs);
                }
            }

            let seen = windows.words_seen();
            if seen > flushed {
                ctx.shared
                    .processed
                    .fetch_add(seen - flushed, Ordering::Relaxed);
            }
        }
        Ok(())
    })();

    if result.is_err() {
        ctx.shared.abort.store(true, Ordering::Relaxed);
    }
    result
}

fn attach_progress(e: Error, progress: f64) -> Error {
    match e {
        Error::Diverged { what, word_id, .. } => Error::Diverged {
            what,
            word_id,
            progress: progress * 100.0,
        },
        other => other,
    }
}

/// Fire the progress callback once per completed interval, guarded so that
/// only one worker reports each.
fn report_completed_intervals(ctx: &WorkerContext<'_>, new_bin: usize, progress: f64, lr: f64) {
    let Some(callback) = ctx.on_progress else {
        return;
    };
    loop {
        let reported = ctx.shared.reported.load(Ordering::Relaxed) as usize;
        if reported >= new_bin {
            return;
        }
        if ctx
            .shared
            .reported
            .compare_exchange(
                reported as u64,
                reported as u64 + 1,
                Ordering::Relaxed,
                Ordering::Relaxed,
            )
            .is_err()
        {
            continue;
        }
        let completed = reported;
        let mean_loss = ctx.shared.interval_mean(completed).unwrap_or(f64::NAN);
        let elapsed = ctx.started.elapsed().as_secs_f64().max(1e-9);
        callback(ProgressEvent {
            interval: completed,
            progress,
            lr,
            mean_loss,
            words_per_sec: ctx.shared.processed.load(Ordering::Relaxed) as f64 / elapsed,
        });
    }
}

/// One grid axis per tunable the loss-versus-capacity sweep varies.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub bitlevels: Vec<Bitlevel>,
    pub dims: Vec<usize>,
    pub epochs: Vec<usize>,
}

/// Train every configuration in the grid and write one CSV row per run:
/// `bitlevel,dim,epochs,end_loss,analogy_add,analogy_mul`.
///
/// The vocabulary is built once, so all rows share corpus statistics.
/// Analogy columns are left empty when no dataset is supplied.
pub fn sweep<W: std::io::Write>(
    corpus: &Path,
    base: &TrainingConfig,
    grid: &SweepGrid,
    analogy: Option<&AnalogyDataset>,
    mut out: W,
) -> Result<()> {
    if grid.bitlevels.is_empty() || grid.dims.is_empty() || grid.epochs.is_empty() {
        return Err(Error::InvalidConfig("sweep grid axes must be non-empty".into()));
    }
    let vocab = Arc::new(Vocabulary::from_reader(
        File::open(corpus)?,
        base.min_count,
    )?);
    writeln!(out, "bitlevel,dim,epochs,end_loss,analogy_add,analogy_mul")?;
    for &bitlevel in &grid.bitlevels {
        for &dim in &grid.dims {
            for &epochs in &grid.epochs {
                let config = TrainingConfig {
                    bitlevel,
                    dim,
                    epochs,
                    ..base.clone()
                };
                let trained = train_with_vocab(corpus, Arc::clone(&vocab), &config, None)?;
                let end_loss = trained.report.end_loss().unwrap_or(f64::NAN);
                let (add, mul) = match analogy {
                    Some(ds) => {
                        let vectors = WordVectors::finalize(
                            &trained.embeddings,
                            &trained.vocab,
                            &config.scheme(),
                        )?;
                        let add = eval_analogy(&vectors, ds, AnalogyMethod::Add)?;
                        let mul = eval_analogy(&vectors, ds, AnalogyMethod::Mul)?;
                        (format!("{:.4}", add.score), format!("{:.4}", mul.score))
                    }
                    None => (String::new(), String::new()),
                };
                writeln!(
                    out,
                    "{},{},{},{:.6},{},{}",
                    bitlevel.bits(),
                    dim,
                    epochs,
                    end_loss,
                    add,
                    mul
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_corpus(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    fn small_config() -> TrainingConfig {
        TrainingConfig {
            dim: 8,
            window: 2,
            negatives: 3,
            epochs: 1,
            lr_start: 0.05,
            lr_end: 0.0001,
            subsample: 0.0,
            min_count: 1,
            bitlevel: Bitlevel::B32,
            alpha: 0.75,
            workers: 1,
            seed: 7,
            fixed_window: false,
            context_average: true,
            track_max_abs: false,
        }
    }

    #[test]
    fn init_respects_range_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = EmbeddingPair::init(10, 4, &mut rng);
        let bound = 0.5 / 4.0;
        for row in 0..10 {
            for &x in &emb.center_row(row) {
                assert!((x as f64) > -bound && (x as f64) < bound, "{x}");
            }
            assert!(emb.context_row(row).iter().all(|&x| x == 0.0));
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let emb2 = EmbeddingPair::init(10, 4, &mut rng2);
        assert_eq!(emb.center_matrix(), emb2.center_matrix());
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainingConfig::default();
        assert_eq!(learning_rate(&cfg, 0.0), 0.05);
        assert!((learning_rate(&cfg, 0.5) - 0.02505).abs() < 1e-12);
        assert_eq!(learning_rate(&cfg, 1.0), 0.0001);
        assert_eq!(learning_rate(&cfg, 2.0), 0.0001);
    }

    #[test]
    fn zero_embeddings_loss_is_k_plus_one_ln2() {
        let emb = EmbeddingPair::zeroed(5, 8);
        let window = TrainingWindow {
            center: 0,
            context: vec![1, 2],
        };
        let scheme = QuantizationScheme::new(Bitlevel::B32);
        let loss = cbow_step(&emb, &window, &[3, 4, 3], 0.05, &scheme).unwrap();
        assert!((loss - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        // everything stays zero: all gradients are scaled zero vectors
        assert!(emb.center_matrix().iter().all(|&x| x == 0.0));
        assert!(emb.context_matrix().iter().all(|&x| x == 0.0));
    }

    fn finite_difference_check(bitlevel: Bitlevel, seed: u64) -> f64 {
        let d = 4;
        let k = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = QuantizationScheme::new(bitlevel);
        let rand_q = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..d)
                .map(|_| scheme.quantize(rng.random_range(-1.0..1.0)).unwrap())
                .collect()
        };
        let center: Vec<f64> = rand_q(&mut rng);
        let negs: Vec<Vec<f64>> = (0..k).map(|_| rand_q(&mut rng)).collect();
        // context average of two quantized vectors
        let c1 = rand_q(&mut rng);
        let c2 = rand_q(&mut rng);
        let ctx: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| (a + b) / 2.0).collect();

        let grads = cbow_objective(&center, &negs, &ctx).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;

        let loss_at = |center: &[f64], negs: &[Vec<f64>], ctx: &[f64]| -> f64 {
            cbow_objective(center, negs, ctx).unwrap().loss
        };

        for i in 0..d {
            let mut plus = center.clone();
            let mut minus = center.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss_at(&plus, &negs, &ctx) - loss_at(&minus, &negs, &ctx)) / (2.0 * h);
            worst = worst.max(rel_err(grads.center[i], fd));
        }
        for (j, neg) in negs.iter().enumerate() {
            for i in 0..d {
                let mut plus = negs.clone();
                let mut minus = negs.clone();
                plus[j][i] = neg[i] + h;
                minus[j][i] = neg[i] - h;
                let fd = (loss_at(&center, &plus, &ctx) - loss_at(&center, &minus, &ctx)) / (2.0 * h);
                worst = worst.max(rel_err(grads.negatives[j][i], fd));
            }
        }
        for i in 0..d {
            let mut plus = ctx.clone();
            let mut minus = ctx.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss_at(&center, &negs, &plus) - loss_at(&center, &negs, &minus)) / (2.0 * h);
            worst = worst.max(rel_err(grads.context_avg[i], fd));
        }
        worst
    }

    // magnitude floor absorbs finite-difference rounding noise on
    // exactly-zero gradient components
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (i, bitlevel) in [Bitlevel::B32, Bitlevel::B1, Bitlevel::B2]
            .into_iter()
            .enumerate()
        {
            let worst = finite_difference_check(bitlevel, 100 + i as u64);
            assert!(worst < 1e-4, "bitlevel {bitlevel}: rel err {worst}");
        }
    }

    #[test]
    fn ste_update_applies_quantized_gradient_to_full_precision_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let emb = EmbeddingPair::init(6, 4, &mut rng);
        let scheme = QuantizationScheme::new(Bitlevel::B1);
        let window = TrainingWindow {
            center: 0,
            context: vec![1, 2],
        };
        let negatives = [3u32, 4];
        let lr = 0.1;

        let before = emb.center_row(0);
        let center_q: Vec<f64> = before
            .iter()
            .map(|&x| scheme.quantize(x as f64).unwrap())
            .collect();
        let negs_q: Vec<Vec<f64>> = negatives
            .iter()
            .map(|&id| {
                emb.center_row(id)
                    .iter()
                    .map(|&x| scheme.quantize(x as f64).unwrap())
                    .collect()
            })
            .collect();
        let mut ctx = vec![0.0f64; 4];
        for &c in &window.context {
            for (acc, &x) in ctx.iter_mut().zip(&emb.context_row(c)) {
                *acc += scheme.quantize(x as f64).unwrap();
            }
        }
        ctx.iter_mut().for_each(|x| *x /= window.context.len() as f64);
        let grads = cbow_objective(&center_q, &negs_q, &ctx).unwrap();

        cbow_step(&emb, &window, &negatives, lr, &scheme).unwrap();
        let after = emb.center_row(0);
        for i in 0..4 {
            let expected = (before[i] as f64 - lr * grads.center[i]) as f32;
            assert_eq!(after[i], expected);
        }
    }

    #[test]
    fn training_reduces_loss_full_precision_and_quantized() {
        let line = "a b";
        let lines: Vec<&str> = std::iter::repeat_n(line, 10_000).collect();
        let corpus = write_corpus(&lines);
        for bitlevel in [Bitlevel::B32, Bitlevel::B1] {
            let config = TrainingConfig {
                bitlevel,
                ..small_config()
            };
            let out = train(corpus.path(), &config).unwrap();
            let first = out.report.mean_loss_over(0..10).unwrap();
            let last = out.report.mean_loss_over(90..100).unwrap();
            assert!(
                last < first,
                "bitlevel {bitlevel}: first {first}, last {last}"
            );
        }
    }

    #[test]
    fn single_worker_runs_are_bit_identical() {
        let names = ["oak", "pine", "elm", "ash", "fir", "yew", "teak"];
        let lines: Vec<String> = (0..400)
            .map(|i| {
                format!(
                    "{} {} {}",
                    names[i % 7],
                    names[(i + 1) % 7],
                    names[(i + 2) % 7]
                )
            })
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let corpus = write_corpus(&refs);
        let config = small_config();
        let a = train(corpus.path(), &config).unwrap();
        let b = train(corpus.path(), &config).unwrap();
        assert_eq!(a.embeddings.center_matrix(), b.embeddings.center_matrix());
        assert_eq!(a.embeddings.context_matrix(), b.embeddings.context_matrix());
        assert_eq!(a.report.words_processed, b.report.words_processed);
    }

    #[test]
    fn nan_parameter_aborts_training() {
        let lines: Vec<String> = (0..200).map(|_| "a b c d".to_string()).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let corpus = write_corpus(&refs);
        let config = small_config();
        let vocab = Arc::new(
            Vocabulary::from_reader(File::open(corpus.path()).unwrap(), config.min_count).unwrap(),
        );
        // poison one parameter, then train over the pre-built vocab:
        // init happens inside train, so poison via a 1-step reproduction
        let emb = EmbeddingPair::zeroed(vocab.len(), config.dim);
        let mut row = vec![0f32; config.dim];
        row[0] = f32::NAN;
        emb.write_center_row(0, &row);
        let window = TrainingWindow {
            center: 0,
            context: vec![1],
        };
        let err = cbow_step(
            &emb,
            &window,
            &[2, 3],
            0.05,
            &QuantizationScheme::new(Bitlevel::B32),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn context_sum_variant_trains_and_differs_from_average() {
        // > 10k words so the progress counter flushes and late intervals fill
        let lines: Vec<String> = (0..8_000).map(|_| "alto bass alto tenor".to_string()).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let corpus = write_corpus(&refs);

        let averaged = small_config();
        let summed = TrainingConfig {
            context_average: false,
            ..small_config()
        };
        let a = train(corpus.path(), &averaged).unwrap();
        let b = train(corpus.path(), &summed).unwrap();
        // both train (loss falls), but the objectives differ
        assert!(
            b.report.mean_loss_over(90..100).unwrap() < b.report.mean_loss_over(0..10).unwrap()
        );
        assert_ne!(a.embeddings.center_matrix(), b.embeddings.center_matrix());
    }

    #[test]
    fn max_abs_is_tracked_when_enabled() {
        let lines: Vec<String> = (0..300).map(|_| "a b c".to_string()).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let corpus = write_corpus(&refs);
        let config = TrainingConfig {
            track_max_abs: true,
            ..small_config()
        };
        let out = train(corpus.path(), &config).unwrap();
        let max_abs = out.report.max_abs.unwrap();
        assert!(max_abs > 0.0 && max_abs.is_finite());
    }

    #[test]
    fn sweep_emits_one_row_per_configuration() {
        let names = ["red", "blue", "green", "cyan", "plum"];
        let lines: Vec<String> = (0..500)
            .map(|i| {
                format!(
                    "{} {} {}",
                    names[i % 5],
                    names[(i + 1) % 5],
                    names[(i + 2) % 5]
                )
            })
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let corpus = write_corpus(&refs);
        let base = small_config();

        let mut csv = Vec::new();
        let grid = SweepGrid {
            bitlevels: vec![Bitlevel::B1],
            dims: vec![8],
            epochs: vec![1],
        };
        sweep(corpus.path(), &base, &grid, None, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let rows: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], "bitlevel,dim,epochs,end_loss,analogy_add,analogy_mul");
        assert!(rows[1].starts_with("1,8,1,"));

        let mut csv = Vec::new();
        let grid = SweepGrid {
            bitlevels: vec![Bitlevel::B1, Bitlevel::B32],
            dims: vec![8],
            epochs: vec![1],
        };
        sweep(corpus.path(), &base, &grid, None, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let rows: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].starts_with("1,8,1,"));
        assert!(rows[2].starts_with("32,8,1,"));
        // all rows have the full column count
        for row in &rows[1..] {
            assert_eq!(row.split(',').count(), 6);
        }
    }
}
