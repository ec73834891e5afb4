//! Word-vector vocabulary: the discrete search space for trigger words.
//!
//! Vocabularies are read from the plain-text "count dim" format: a header line
//! followed by one `word v1 ... vd` line per entry. Lookup is case-insensitive;
//! when two entries fold to the same key the first one is kept.

use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unparsable component {token:?}")]
    BadComponent { line: usize, token: String },
    #[error("header declares {declared} entries, found {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("zero-norm vector for {0:?}")]
    ZeroVector(String),
    #[error("vector dimensions differ ({0} vs {1})")]
    VectorDimensions(usize, usize),
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error("k = {k} outside 1..={max}")]
    InvalidK { k: usize, max: usize },
    #[error("empty vocabulary")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable word → vector map.
#[derive(Debug, Clone)]
pub struct EmbeddingVocabulary {
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
    index: HashMap<String, usize>,
    dim: usize,
    normalized: bool,
    duplicates_dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResult {
    pub word: String,
    pub similarity: f64,
}

fn fold(word: &str) -> String {
    word.to_lowercase()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl EmbeddingVocabulary {
    /// Builds a vocabulary from in-memory entries. Case-folding duplicates are
    /// dropped (first occurrence wins) and counted.
    pub fn from_entries<I>(entries: I, normalize: bool) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut words = Vec::new();
        let mut vectors = Vec::new();
        let mut index = HashMap::new();
        let mut dim = None;
        let mut duplicates_dropped = 0;

        for (word, mut vector) in entries {
            let d = *dim.get_or_insert(vector.len());
            if vector.len() != d {
                return Err(EmbeddingError::VectorDimensions(d, vector.len()));
            }
            let key = fold(&word);
            if index.contains_key(&key) {
                duplicates_dropped += 1;
                continue;
            }
            let norm = l2(&vector);
            if norm == 0.0 || !norm.is_finite() {
                return Err(EmbeddingError::ZeroVector(word));
            }
            if normalize {
                vector.iter_mut().for_each(|x| *x /= norm);
            }
            index.insert(key, words.len());
            words.push(word);
            vectors.push(vector);
        }

        let dim = dim.ok_or(EmbeddingError::Empty)?;
        if dim < 2 {
            return Err(EmbeddingError::MalformedHeader(format!(
                "dimension {dim} < 2"
            )));
        }
        if duplicates_dropped > 0 {
            log::warn!("dropped {duplicates_dropped} case-folded duplicate word(s)");
        }
        let norms = vectors.iter().map(|v| l2(v)).collect();
        Ok(Self {
            words,
            vectors,
            norms,
            index,
            dim,
            normalized: normalize,
            duplicates_dropped,
        })
    }

    /// Parses the textual word-vector format.
    pub fn load<R: BufRead>(reader: R, normalize: bool) -> Result<Self, EmbeddingError> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| EmbeddingError::MalformedHeader("missing header".into()))??;
        let mut fields = header.split_whitespace();
        let parse_field = |f: Option<&str>| -> Result<usize, EmbeddingError> {
            f.and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| EmbeddingError::MalformedHeader(header.clone()))
        };
        let count = parse_field(fields.next())?;
        let dim = parse_field(fields.next())?;
        if fields.next().is_some() || dim < 2 {
            return Err(EmbeddingError::MalformedHeader(header.clone()));
        }

        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default().to_string();
            let vector = parts
                .map(|t| {
                    t.parse::<f64>().map_err(|_| EmbeddingError::BadComponent {
                        line: lineno,
                        token: t.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if vector.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    line: lineno,
                    expected: dim,
                    found: vector.len(),
                });
            }
            entries.push((word, vector));
        }
        if entries.len() != count {
            return Err(EmbeddingError::CountMismatch {
                declared: count,
                found: entries.len(),
            });
        }
        Self::from_entries(entries, normalize)
    }

    pub fn load_path(path: &std::path::Path, normalize: bool) -> Result<Self, EmbeddingError> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file), normalize)
    }

    /// Writes the vocabulary back out in the textual format.
    pub fn write_to<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (word, v) in self.words.iter().zip(&self.vectors) {
            write!(out, "{word}")?;
            for x in v {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn vector_at(&self, idx: usize) -> &[f64] {
        &self.vectors[idx]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(&fold(word)).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index_of(word).is_some()
    }

    /// Canonical spelling of `word` as stored in the vocabulary.
    pub fn canonical(&self, word: &str) -> Option<&str> {
        self.index_of(word).map(|i| self.words[i].as_str())
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.vectors[i].as_slice())
    }

    /// Top-`k` words by cosine similarity to `query`, descending, ties broken
    /// by ascending word order.
    pub fn nearest_neighbors(
        &self,
        query: &str,
        k: usize,
        exclude_self: bool,
    ) -> Result<Vec<NeighborResult>, EmbeddingError> {
        let q = self
            .index_of(query)
            .ok_or_else(|| EmbeddingError::UnknownWord(query.to_string()))?;
        if k == 0 || k > self.len() {
            return Err(EmbeddingError::InvalidK { k, max: self.len() });
        }
        let qv = &self.vectors[q];
        let qn = self.norms[q];

        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| !(exclude_self && i == q))
            .map(|i| {
                let dot: f64 = qv.iter().zip(&self.vectors[i]).map(|(a, b)| a * b).sum();
                ((dot / (qn * self.norms[i])).clamp(-1.0, 1.0), i)
            })
            .collect();

        let order = |a: &(f64, usize), b: &(f64, usize)| {
            b.0.total_cmp(&a.0)
                .then_with(|| self.words[a.1].cmp(&self.words[b.1]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);

        Ok(scored
            .into_iter()
            .map(|(similarity, i)| NeighborResult {
                word: self.words[i].clone(),
                similarity,
            })
            .collect())
    }
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::VectorDimensions(a.len(), b.len()));
    }
    let (na, nb) = (l2(a), l2(b));
    if na == 0.0 {
        return Err(EmbeddingError::ZeroVector("<lhs>".into()));
    }
    if nb == 0.0 {
        return Err(EmbeddingError::ZeroVector("<rhs>".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
