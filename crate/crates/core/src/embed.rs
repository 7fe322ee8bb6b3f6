//! Pre-trained word vectors in the FastText `.vec` text format and lookup of
//! token sequences into padded embedding matrices.
//!
//! Format: a header line `V d`, then `V` lines `word v1 ... vd`, single
//! spaces, UTF-8, newline-terminated.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor2D;
use crate::textprep::TokenSequence;

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    words: Vec<String>,
    matrix: Tensor2D,
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, matrix: Tensor2D) -> Result<Self> {
        if words.len() != matrix.rows() {
            return Err(Error::shape(
                "EmbeddingTable::new",
                format!("{} words", words.len()),
                format!("{} rows", matrix.rows()),
            ));
        }
        if matrix.cols() == 0 {
            return Err(Error::Argument("embedding dimension must be >= 1".into()));
        }
        if !matrix.is_finite() {
            return Err(Error::Argument("embedding matrix has non-finite entries".into()));
        }
        let mut vocab = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if vocab.insert(w.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate word {w:?}")));
            }
        }
        Ok(Self {
            vocab,
            words,
            matrix,
        })
    }

    pub fn load_vec_file(path: impl AsRef<Path>, vocab_limit: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_vec(BufReader::new(file), vocab_limit, &path.display().to_string())
    }

    /// Reads `.vec` text. Keeps the first `vocab_limit` distinct words in
    /// file order; a repeated word keeps its first vector.
    pub fn read_vec(reader: impl BufRead, vocab_limit: usize, source: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| perr(1, "empty file, expected header `V d`".into()))?
            .map_err(|e| Error::io(source, e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (declared_v, dim) = match fields.as_slice() {
            [v, d] => match (v.parse::<usize>(), d.parse::<usize>()) {
                (Ok(v), Ok(d)) if d >= 1 => (v, d),
                _ => return Err(perr(1, format!("malformed header {header:?}"))),
            },
            _ => return Err(perr(1, format!("malformed header {header:?}"))),
        };

        let target = declared_v.min(vocab_limit);
        let mut words: Vec<String> = Vec::with_capacity(target);
        let mut data = Vec::with_capacity(target * dim);
        let mut vocab = HashMap::with_capacity(target);
        let mut read = 0usize;
        while words.len() < target && read < declared_v {
            let line_no = read + 2;
            let line = match lines.next() {
                Some(l) => l.map_err(|e| Error::io(source, e))?,
                None => {
                    return Err(perr(
                        line_no,
                        format!("file ends after {read} vectors, header declares {declared_v}"),
                    ))
                }
            };
            read += 1;
            let line = line.trim_end_matches(['\r', ' ']);
            let mut parts = line.split(' ');
            let word = parts.next().unwrap_or_default();
            if word.is_empty() {
                return Err(perr(line_no, "missing word".into()));
            }
            let values: Vec<&str> = parts.collect();
            if values.len() != dim {
                return Err(perr(
                    line_no,
                    format!("expected {dim} components, found {}", values.len()),
                ));
            }
            if vocab.contains_key(word) {
                continue;
            }
            for v in values {
                let x: f64 = v
                    .parse()
                    .map_err(|_| perr(line_no, format!("bad number {v:?}")))?;
                if !x.is_finite() {
                    return Err(perr(line_no, format!("non-finite component {v:?}")));
                }
                data.push(x);
            }
            vocab.insert(word.to_string(), words.len());
            words.push(word.to_string());
        }
        let matrix = Tensor2D::new(words.len(), dim, data)?;
        Ok(Self {
            vocab,
            words,
            matrix,
        })
    }

    pub fn write_vec_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_vec(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_vec(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for v in self.matrix.row(i) {
                // `{}` on f64 prints the shortest exactly round-tripping form
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.vocab.get(word).copied()
    }

    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.matrix.row(i))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// The `V x d` look-up matrix; row `i` is the vector of `words()[i]`.
    pub fn matrix(&self) -> &Tensor2D {
        &self.matrix
    }

    pub fn embed_sequence(&self, seq: &TokenSequence, max_seq_len: usize) -> Result<EmbeddedSequence> {
        if self.is_empty() {
            return Err(Error::Argument("embedding table is empty".into()));
        }
        if max_seq_len == 0 {
            return Err(Error::Argument("max_seq_len must be >= 1".into()));
        }
        let mut vectors = Tensor2D::zeros(max_seq_len, self.dim());
        let mut mask = vec![false; max_seq_len];
        let mut oov_count = 0;
        for (t, token) in seq.tokens.iter().take(max_seq_len).enumerate() {
            mask[t] = true;
            match self.lookup(token) {
                Some(row) => vectors.row_mut(t).copy_from_slice(row),
                None => oov_count += 1,
            }
        }
        Ok(EmbeddedSequence {
            vectors,
            mask,
            oov_count,
        })
    }
}

/// `T x d` token vectors right-padded to `max_seq_len`; `mask[t]` is true for
/// real tokens (including OOV tokens, whose rows are zero).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSequence {
    pub vectors: Tensor2D,
    pub mask: Vec<bool>,
    pub oov_count: usize,
}

impl EmbeddedSequence {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}
