use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Mask;
use crate::tensor::{Rng, Vector};

/// Character-level text with a sorted vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CharCorpus {
    text: String,
    vocab: Vec<char>,
    index: HashMap<char, usize>,
    stream: Vec<usize>,
}

/// One training sequence: one-hot inputs, next-character targets, and the
/// mask marking real (1) versus padded (0) steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vector>,
    pub targets: Vec<Vector>,
    pub mask: Mask,
}

impl CharCorpus {
    pub fn from_text(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::Config("corpus is empty".into()));
        }
        let mut vocab: Vec<char> = text.chars().collect();
        vocab.sort_unstable();
        vocab.dedup();
        let index: HashMap<char, usize> = vocab.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let stream = text.chars().map(|c| index[&c]).collect();
        Ok(Self {
            text: text.to_string(),
            vocab,
            index,
            stream,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn vocab(&self) -> &[char] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn stream(&self) -> &[usize] {
        &self.stream
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index
                    .get(&c)
                    .copied()
                    .ok_or_else(|| Error::Range(format!("{c:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, codes: &[usize]) -> Result<String> {
        codes
            .iter()
            .map(|&i| {
                self.vocab
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::Range(format!("index {i} is outside the vocabulary")))
            })
            .collect()
    }

    /// Contiguous windows of `seq_len` steps with stride `seq_len`. With an
    /// rng the first window starts at a random offset below `seq_len`. The
    /// last window is padded to full length with masked steps.
    pub fn sequences(&self, seq_len: usize, rng: Option<&mut Rng>) -> Result<Vec<Sequence>> {
        self.sequences_in(0..self.stream.len(), seq_len, rng)
    }

    /// [`CharCorpus::sequences`] over the stream positions in `span` only.
    pub fn sequences_in(&self, span: Range<usize>, seq_len: usize, rng: Option<&mut Rng>) -> Result<Vec<Sequence>> {
        if seq_len == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        if span.end > self.stream.len() {
            return Err(Error::Range(format!(
                "span {span:?} exceeds a stream of {}",
                self.stream.len()
            )));
        }
        let pairs = span.len().saturating_sub(1);
        if pairs == 0 {
            return Err(Error::Config("corpus needs at least two characters".into()));
        }
        let offset = match rng {
            Some(r) => r.index(seq_len.min(pairs)),
            None => 0,
        };
        let v = self.vocab_size();
        let stream = &self.stream[span];
        let mut out = Vec::new();
        let mut start = offset;
        while start < pairs {
            let end = (start + seq_len).min(pairs);
            let mut inputs = Vec::with_capacity(seq_len);
            let mut targets = Vec::with_capacity(seq_len);
            let mut bits = Vec::with_capacity(seq_len);
            for t in start..end {
                inputs.push(Vector::one_hot(v, stream[t]));
                targets.push(Vector::one_hot(v, stream[t + 1]));
                bits.push(1);
            }
            for _ in end..start + seq_len {
                inputs.push(Vector::zeros(v));
                targets.push(Vector::zeros(v));
                bits.push(0);
            }
            out.push(Sequence {
                inputs,
                targets,
                mask: Mask::new(bits)?,
            });
            start = end;
        }
        Ok(out)
    }
}

pub fn load_corpus(path: &Path) -> Result<CharCorpus> {
    let text = std::fs::read_to_string(path)?;
    CharCorpus::from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abab() {
        let c = CharCorpus::from_text("abab").unwrap();
        assert_eq!(c.vocab(), &['a', 'b']);
        assert_eq!(c.stream(), &[0, 1, 0, 1]);
    }

    #[test]
    fn vocab_ignores_order() {
        assert_eq!(
            CharCorpus::from_text("ba").unwrap().vocab(),
            CharCorpus::from_text("ab").unwrap().vocab()
        );
    }

    #[test]
    fn encode_decode() {
        let c = CharCorpus::from_text("To be, or not to be.\n").unwrap();
        let codes = c.encode(c.text()).unwrap();
        assert_eq!(c.decode(&codes).unwrap(), c.text());
        assert!(c.encode("z").is_err());
        assert!(c.decode(&[99]).is_err());
    }

    #[test]
    fn empty_is_an_error() {
        assert!(CharCorpus::from_text("").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.txt");
        std::fs::write(&p, "").unwrap();
        assert!(load_corpus(&p).is_err());
    }

    #[test]
    fn windows_cover_the_stream_and_pad_the_tail() {
        let c = CharCorpus::from_text("abcdefghij").unwrap();
        let seqs = c.sequences(4, None).unwrap();
        assert_eq!(seqs.len(), 3);
        assert_eq!(seqs[2].mask.bits(), &[1, 0, 0, 0]);
        assert_eq!(seqs[2].inputs[0].argmax(), 8);
        assert_eq!(seqs[2].targets[0].argmax(), 9);
        assert_eq!(seqs[2].inputs[1].sum(), 0.0);
        let active: usize = seqs.iter().map(|s| s.mask.active_count()).sum();
        assert_eq!(active, 9);
    }

    #[test]
    fn random_offset_is_seeded() {
        let c = CharCorpus::from_text(&"abcdefgh".repeat(20)).unwrap();
        let a = c.sequences(7, Some(&mut Rng::new(3))).unwrap();
        let b = c.sequences(7, Some(&mut Rng::new(3))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn span_windows_stay_inside() {
        let c = CharCorpus::from_text("abcdefgh").unwrap();
        let seqs = c.sequences_in(4..8, 2, None).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].inputs[0].argmax(), 4);
        assert_eq!(seqs[1].targets[0].argmax(), 7);
        assert_eq!(seqs[1].mask.bits(), &[1, 0]);
        assert!(c.sequences_in(4..9, 2, None).is_err());
    }
}
