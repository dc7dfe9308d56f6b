//! UCI bag-of-words corpora, train/test splitting and synthetic corpora.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{HcrmError, Result};

/// Documents as token sequences with per-token train flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab: Vec<String>,
    pub docs: Vec<Vec<u32>>,
    /// `train[d][t]` is true when token t of document d is in the training
    /// section. All true until split.
    pub train: Vec<Vec<bool>>,
}

impl Corpus {
    pub fn new(vocab: Vec<String>, docs: Vec<Vec<u32>>) -> Result<Self> {
        let w = vocab.len();
        if let Some(bad) = docs.iter().flatten().find(|&&t| t as usize >= w) {
            return Err(HcrmError::Format(format!("token {bad} outside vocabulary of {w}")));
        }
        let train = docs.iter().map(|d| vec![true; d.len()]).collect();
        Ok(Corpus { vocab, docs, train })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Training tokens of every document (empty documents kept).
    pub fn train_docs(&self) -> Vec<Vec<u32>> {
        self.docs
            .iter()
            .zip(&self.train)
            .map(|(d, f)| d.iter().zip(f).filter(|(_, &t)| t).map(|(&w, _)| w).collect())
            .collect()
    }

    /// `(doc, word)` pairs of the test section.
    pub fn test_tokens(&self) -> Vec<(usize, u32)> {
        let mut out = Vec::new();
        for (d, (doc, flags)) in self.docs.iter().zip(&self.train).enumerate() {
            for (&w, &t) in doc.iter().zip(flags) {
                if !t {
                    out.push((d, w));
                }
            }
        }
        out
    }

    /// `(doc, word, count)` triples, 0-based, sorted.
    pub fn triples(&self) -> Vec<(usize, usize, u32)> {
        let mut out = Vec::new();
        for (d, doc) in self.docs.iter().enumerate() {
            let mut counts = BTreeMap::new();
            for &w in doc {
                *counts.entry(w as usize).or_insert(0u32) += 1;
            }
            out.extend(counts.into_iter().map(|(w, c)| (d, w, c)));
        }
        out
    }
}

fn parse_header(line: Option<&str>, what: &str) -> Result<usize> {
    line.and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| HcrmError::Format(format!("malformed header: expected {what}")))
}

/// Parses a UCI `docword` text and a vocabulary (one word per line).
pub fn parse_uci_bow(docword: &str, vocab: &str) -> Result<Corpus> {
    let mut lines = docword.lines().filter(|l| !l.trim().is_empty());
    let d = parse_header(lines.next(), "D")?;
    let w = parse_header(lines.next(), "W")?;
    let nnz = parse_header(lines.next(), "NNZ")?;
    let words: Vec<String> = vocab.lines().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if words.len() != w {
        return Err(HcrmError::Format(format!(
            "vocabulary has {} words but header says W = {w}",
            words.len()
        )));
    }
    let mut docs = vec![Vec::new(); d];
    let mut seen = 0usize;
    for (ln, line) in lines.enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<Vec<usize>> = (f.len() == 3)
            .then(|| f.iter().map(|x| x.parse().ok()).collect())
            .flatten();
        let Some(v) = parsed else {
            return Err(HcrmError::Format(format!("line {}: expected 'doc word count'", ln + 4)));
        };
        let (doc, word, count) = (v[0], v[1], v[2]);
        if doc == 0 || doc > d {
            return Err(HcrmError::Format(format!("line {}: docID {doc} out of range 1..={d}", ln + 4)));
        }
        if word == 0 || word > w {
            return Err(HcrmError::Format(format!("line {}: wordID {word} out of range 1..={w}", ln + 4)));
        }
        docs[doc - 1].extend(std::iter::repeat_n((word - 1) as u32, count));
        seen += 1;
    }
    if seen != nnz {
        return Err(HcrmError::Format(format!("header says NNZ = {nnz} but found {seen} triples")));
    }
    Corpus::new(words, docs)
}

pub fn load_uci_bow(docword: &Path, vocab: &Path) -> Result<Corpus> {
    parse_uci_bow(&fs::read_to_string(docword)?, &fs::read_to_string(vocab)?)
}

/// Writes the docword file and the vocabulary file.
pub fn write_uci_bow<W1: Write, W2: Write>(corpus: &Corpus, mut docword: W1, mut vocab: W2) -> Result<()> {
    let triples = corpus.triples();
    writeln!(docword, "{}", corpus.num_docs())?;
    writeln!(docword, "{}", corpus.vocab_size())?;
    writeln!(docword, "{}", triples.len())?;
    for (d, w, c) in triples {
        writeln!(docword, "{} {} {}", d + 1, w + 1, c)?;
    }
    for word in &corpus.vocab {
        writeln!(vocab, "{word}")?;
    }
    Ok(())
}

/// Flags each token train with probability `p_train`, independently.
pub fn split_train_test(corpus: &Corpus, p_train: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&p_train) {
        return Err(HcrmError::Domain(format!("p_train must be in [0, 1], got {p_train}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    for (doc, flags) in out.docs.iter().zip(out.train.iter_mut()) {
        *flags = doc.iter().map(|_| rng.random::<f64>() < p_train).collect();
    }
    Ok(out)
}

/// A synthetic corpus and the topics that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// K×W topic-word probabilities.
    pub tau: Vec<Vec<f64>>,
    /// Per-document topic weights.
    pub doc_topics: Vec<Vec<f64>>,
}

fn dirichlet<R: Rng>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive concentration");
    loop {
        let mut v: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        let z: f64 = v.iter().sum();
        if z > 0.0 {
            v.iter_mut().for_each(|x| *x /= z);
            return v;
        }
    }
}

fn categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// LDA-style corpus: τ_k ~ Dir(η), doc weights ~ Dir(α), tokens from the
/// mixture.
pub fn synth_corpus(
    k: usize,
    w: usize,
    n_docs: usize,
    doc_len: usize,
    alpha: f64,
    eta: f64,
    seed: u64,
) -> Result<SyntheticCorpus> {
    if k == 0 || k > w {
        return Err(HcrmError::Domain(format!("need 1 <= K <= W, got K = {k}, W = {w}")));
    }
    if !(alpha > 0.0 && eta > 0.0) {
        return Err(HcrmError::Domain("concentrations must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau: Vec<Vec<f64>> = (0..k).map(|_| dirichlet(eta, w, &mut rng)).collect();
    let mut docs = Vec::with_capacity(n_docs);
    let mut doc_topics = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let theta = dirichlet(alpha, k, &mut rng);
        let doc = (0..doc_len)
            .map(|_| categorical(&tau[categorical(&theta, &mut rng)], &mut rng) as u32)
            .collect();
        docs.push(doc);
        doc_topics.push(theta);
    }
    let vocab = (0..w).map(|i| format!("w{i}")).collect();
    Ok(SyntheticCorpus {
        corpus: Corpus::new(vocab, docs)?,
        tau,
        doc_topics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_expanded_tokens() {
        let c = parse_uci_bow("1\n2\n1\n1 2 3\n", "a\nb\n").unwrap();
        assert_eq!(c.docs, vec![vec![1, 1, 1]]);
    }

    #[test]
    fn format_errors() {
        assert!(matches!(parse_uci_bow("1\n2\n2\n1 1 1\n1 2 1\n1 2 1\n", "a\nb\n"), Err(HcrmError::Format(m)) if m.contains("NNZ")));
        assert!(matches!(parse_uci_bow("1\n2\n1\n1 0 1\n", "a\nb\n"), Err(HcrmError::Format(m)) if m.contains("wordID")));
        assert!(matches!(parse_uci_bow("x\n2\n1\n", "a\nb\n"), Err(HcrmError::Format(m)) if m.contains("header")));
        assert!(parse_uci_bow("1\n3\n0\n", "a\nb\n").is_err());
    }

    #[test]
    fn split_extremes() {
        let c = synth_corpus(2, 5, 3, 20, 0.5, 0.5, 1).unwrap().corpus;
        assert!(split_train_test(&c, 1.0, 3).unwrap().train.iter().flatten().all(|&t| t));
        assert!(split_train_test(&c, 0.0, 3).unwrap().train.iter().flatten().all(|&t| !t));
        assert!(split_train_test(&c, 1.5, 3).is_err());
    }

    #[test]
    fn empty_documents_allowed() {
        let s = synth_corpus(2, 4, 3, 0, 1.0, 1.0, 0).unwrap();
        assert_eq!(s.corpus.num_tokens(), 0);
        assert_eq!(s.corpus.num_docs(), 3);
    }
}
