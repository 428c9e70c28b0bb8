//! Finalized word vectors: quantized finalization, post-hoc thresholding,
//! row normalization, and the text and packed-binary file formats.
//!
//! Packed layout, little-endian:
//!
//! ```text
//! magic "W2BQ" | version u8 = 1 | bitlevel u8 | dimension u32 | vocab u64
//! | per word: byte length u16 + UTF-8 bytes
//! | payload: packed rows in vocab order (see quantize::pack_rows)
//! ```
//!
//! The codebook is implied by the bitlevel, so only standard-codebook
//! vectors can be packed. Loading materializes codebook values as floats;
//! downstream similarity math runs at full precision.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::quantize::{pack_rows, unpack_rows, Bitlevel, QuantizationScheme};
use crate::trainer::EmbeddingPair;

const MAGIC: &[u8; 4] = b"W2BQ";
const FORMAT_VERSION: u8 = 1;

/// Word list with id lookup; the count-free counterpart of
/// [`Vocabulary`] used by finalized vectors, whose file formats do not
/// carry frequencies.
#[derive(Debug, Clone)]
pub struct Lexicon {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Lexicon {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (id, word) in words.iter().enumerate() {
            if index.insert(word.clone(), id as u32).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate word {word:?}")));
            }
        }
        Ok(Lexicon { words, index })
    }

    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        Lexicon::new(vocab.words().to_vec()).expect("vocabulary words are unique")
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

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id_of(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Exact-match lookup first, then a lowercase fallback. Training is
    /// case sensitive while evaluation sets mix cases, so the fallback
    /// recovers pairs that differ only in casing.
    pub fn resolve(&self, word: &str) -> Option<u32> {
        self.id_of(word)
            .or_else(|| self.id_of(&word.to_lowercase()))
    }
}

/// A V x d matrix of word vectors with its lexicon.
#[derive(Debug, Clone)]
pub struct WordVectors {
    lexicon: Lexicon,
    matrix: Vec<f32>,
    dim: usize,
    bitlevel: Bitlevel,
    normalized: bool,
}

impl WordVectors {
    /// Wrap a row-major matrix. Quantized bit levels require every entry to
    /// be a standard-codebook member.
    pub fn new(lexicon: Lexicon, matrix: Vec<f32>, dim: usize, bitlevel: Bitlevel) -> Result<Self> {
        if dim == 0 || matrix.len() != lexicon.len() * dim {
            return Err(Error::InvalidConfig(format!(
                "matrix of {} entries does not match {} words x {} dims",
                matrix.len(),
                lexicon.len(),
                dim
            )));
        }
        if bitlevel.is_quantized() {
            let scheme = QuantizationScheme::new(bitlevel);
            for (i, &x) in matrix.iter().enumerate() {
                if scheme.code_of(x).is_none() {
                    return Err(Error::NotInCodebook {
                        row: i / dim,
                        col: i % dim,
                        value: x as f64,
                        bits: bitlevel.bits(),
                    });
                }
            }
        }
        Ok(WordVectors {
            lexicon,
            matrix,
            dim,
            bitlevel,
            normalized: false,
        })
    }

    /// Finalize trained embeddings: row i is the quantized sum of the
    /// center and context vectors of word i (the plain sum at full
    /// precision).
    pub fn finalize(
        emb: &EmbeddingPair,
        vocab: &Vocabulary,
        scheme: &QuantizationScheme,
    ) -> Result<Self> {
        assert_eq!(emb.vocab_size(), vocab.len());
        let dim = emb.dim();
        let center = emb.center_matrix();
        let context = emb.context_matrix();
        let mut matrix = Vec::with_capacity(center.len());
        for (i, (&u, &v)) in center.iter().zip(&context).enumerate() {
            let sum = (u as f64 + v as f64) as f32;
            if !sum.is_finite() {
                return Err(Error::NonFinite {
                    context: format!(
                        "finalized vector for word {:?} (dimension {})",
                        vocab.word((i / dim) as u32),
                        i % dim
                    ),
                    value: sum as f64,
                });
            }
            matrix.push(scheme.quantize(sum as f64)? as f32);
        }
        WordVectors::new(
            Lexicon::from_vocabulary(vocab),
            matrix,
            dim,
            scheme.bitlevel(),
        )
    }

    /// Apply the 1-bit quantizer to trained full-precision vectors (the
    /// thresholded baseline, trained without quantization).
    pub fn threshold_t1(&self) -> Result<Self> {
        if self.bitlevel != Bitlevel::B32 {
            return Err(Error::InvalidConfig(format!(
                "thresholding expects full-precision input, got {}-bit",
                self.bitlevel.bits()
            )));
        }
        let scheme = QuantizationScheme::new(Bitlevel::B1);
        let matrix = scheme.quantize_vector(&self.matrix)?;
        WordVectors::new(self.lexicon.clone(), matrix, self.dim, Bitlevel::B1)
    }

    pub fn len(&self) -> usize {
        self.lexicon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexicon.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bitlevel(&self) -> Bitlevel {
        self.bitlevel
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row(&self, id: u32) -> &[f32] {
        let start = id as usize * self.dim;
        &self.matrix[start..start + self.dim]
    }

    /// Scale every nonzero row to unit L2 norm. The bit level is kept for
    /// provenance but normalized quantized vectors are no longer codebook
    /// members and cannot be packed.
    pub fn normalize_rows(mut self) -> Self {
        normalize_in_place(&mut self.matrix, self.dim);
        self.normalized = true;
        self
    }

    /// Row-normalized copy of the matrix, leaving `self` untouched.
    pub fn normalized_matrix(&self) -> Vec<f32> {
        let mut m = self.matrix.clone();
        normalize_in_place(&mut m, self.dim);
        m
    }

    /// Write the text format: a `V d` header line, then one line per word
    /// with the word and its values (shortest f32-roundtrip decimals).
    pub fn save_text<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for word in self.lexicon.words() {
            if word.chars().any(char::is_whitespace) {
                return Err(Error::WordWithWhitespace { word: word.clone() });
            }
        }
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (id, word) in self.lexicon.words().iter().enumerate() {
            write!(out, "{word}")?;
            for &x in self.row(id as u32) {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Load the text format. Values are full precision regardless of how
    /// they were produced.
    pub fn load_text<P: AsRef<Path>>(path: P) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();

        let parse = |line: usize, msg: String| Error::Parse { line, msg };
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse(1, "empty file".into()))?;
        let header = header?;
        let mut parts = header.split_whitespace();
        let vocab_size: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse(1, format!("expected `V d` header, got {header:?}")))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse(1, format!("expected `V d` header, got {header:?}")))?;
        if parts.next().is_some() {
            return Err(parse(1, format!("expected `V d` header, got {header:?}")));
        }
        if vocab_size == 0 || dim == 0 {
            return Err(parse(1, "vocabulary size and dimension must be positive".into()));
        }

        let mut words = Vec::with_capacity(vocab_size);
        let mut matrix = Vec::with_capacity(vocab_size * dim);
        for (idx, line) in &mut lines {
            let line_no = idx + 1;
            let line = line?;
            if words.len() == vocab_size {
                return Err(parse(
                    line_no,
                    format!("expected {vocab_size} rows, found more"),
                ));
            }
            let mut fields = line.split_whitespace();
            let word = fields
                .next()
                .ok_or_else(|| parse(line_no, "empty row".into()))?;
            words.push(word.to_string());
            let mut count = 0;
            for field in fields {
                let x: f32 = field.parse().map_err(|_| {
                    parse(line_no, format!("bad value {field:?}"))
                })?;
                matrix.push(x);
                count += 1;
            }
            if count != dim {
                return Err(parse(
                    line_no,
                    format!("expected {dim} values, got {count}"),
                ));
            }
        }
        if words.len() != vocab_size {
            return Err(parse(
                words.len() + 1,
                format!("expected {} rows, got {}", vocab_size, words.len()),
            ));
        }
        let lexicon = Lexicon::new(words).map_err(|e| parse(2, e.to_string()))?;
        WordVectors::new(lexicon, matrix, dim, Bitlevel::B32)
    }

    /// Write the packed binary format. Requires an unnormalized 1- or 2-bit
    /// matrix with the standard codebook.
    pub fn save_packed<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        if !self.bitlevel.is_quantized() {
            return Err(Error::InvalidConfig(
                "packed format requires 1- or 2-bit vectors; save full precision as text".into(),
            ));
        }
        if self.normalized {
            return Err(Error::InvalidConfig(
                "normalized vectors are no longer codebook values and cannot be packed".into(),
            ));
        }
        let scheme = QuantizationScheme::new(self.bitlevel);
        let payload = pack_rows(&self.matrix, self.dim, &scheme)?;

        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&[FORMAT_VERSION, self.bitlevel.bits()])?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for word in self.lexicon.words() {
            let bytes = word.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(Error::InvalidConfig(format!(
                    "word of {} bytes exceeds the 65535-byte format limit",
                    bytes.len()
                )));
            }
            out.write_all(&(bytes.len() as u16).to_le_bytes())?;
            out.write_all(bytes)?;
        }
        out.write_all(&payload)?;
        out.flush()?;
        Ok(())
    }

    /// Load the packed binary format, reproducing the saved codebook values
    /// bit-exactly.
    pub fn load_packed<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let bad = |msg: String| Error::BadPackedFile(msg);

        let mut header = [0u8; 18];
        read_exact_or(&mut reader, &mut header, "header")?;
        if &header[0..4] != MAGIC {
            return Err(bad(format!(
                "bad magic {:02x?}, expected {MAGIC:02x?}",
                &header[0..4]
            )));
        }
        if header[4] != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}, expected {FORMAT_VERSION}",
                header[4]
            )));
        }
        let bitlevel = Bitlevel::from_bits(header[5])
            .filter(|b| b.is_quantized())
            .ok_or_else(|| bad(format!("invalid bitlevel byte {}", header[5])))?;
        let dim = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let vocab_size = u64::from_le_bytes(header[10..18].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(bad("dimension must be positive".into()));
        }

        let mut words = Vec::with_capacity(vocab_size);
        for i in 0..vocab_size {
            let mut len_bytes = [0u8; 2];
            read_exact_or(&mut reader, &mut len_bytes, "vocab section")?;
            let len = u16::from_le_bytes(len_bytes) as usize;
            let mut word = vec![0u8; len];
            read_exact_or(&mut reader, &mut word, "vocab section")?;
            let word = String::from_utf8(word)
                .map_err(|_| bad(format!("word {i} is not valid UTF-8")))?;
            words.push(word);
        }

        let scheme = QuantizationScheme::new(bitlevel);
        let expected_payload = vocab_size * scheme.bytes_per_row(dim);
        let mut payload = Vec::with_capacity(expected_payload);
        reader.read_to_end(&mut payload)?;
        if payload.len() != expected_payload {
            return Err(bad(format!(
                "payload of {} bytes, expected {expected_payload}",
                payload.len()
            )));
        }
        let matrix = unpack_rows(&payload, dim, &scheme)?;
        let lexicon = Lexicon::new(words).map_err(|e| bad(e.to_string()))?;
        WordVectors::new(lexicon, matrix, dim, bitlevel)
    }
}

fn read_exact_or<R: Read>(reader: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::BadPackedFile(format!("truncated file while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn normalize_in_place(matrix: &mut [f32], dim: usize) {
    for row in matrix.chunks_exact_mut(dim) {
        let norm = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in row {
                *x = (*x as f64 / norm) as f32;
            }
        }
    }
}
