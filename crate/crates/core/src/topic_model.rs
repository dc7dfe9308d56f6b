//! Dirichlet-categorical topic likelihood, posterior summaries and
//! perplexity.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{HcrmError, Result};
use crate::franchise::{Chain, FranchiseState, Model, Observation, SamplerConfig};

pub const DEFAULT_ETA: f64 = 0.5;
pub const BETA_SMOOTHING: f64 = 1e-9;

/// Which topic a predictive is asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DishRef {
    Existing(usize),
    New,
}

/// Word counts per dish under a symmetric Dirichlet(η) topic prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicWordStats {
    vocab_size: usize,
    eta: f64,
    counts: Vec<Vec<u32>>,
    totals: Vec<u64>,
}

impl TopicWordStats {
    pub fn new(vocab_size: usize, eta: f64) -> Result<Self> {
        if vocab_size == 0 {
            return Err(HcrmError::Domain("vocabulary must be nonempty".into()));
        }
        if !(eta > 0.0) {
            return Err(HcrmError::Domain(format!("eta must be positive, got {eta}")));
        }
        Ok(TopicWordStats {
            vocab_size,
            eta,
            counts: Vec::new(),
            totals: Vec::new(),
        })
    }

    /// Recounts words per dish from a seated state.
    pub fn from_state(state: &FranchiseState, vocab_size: usize, eta: f64) -> Result<Self> {
        let mut s = Self::new(vocab_size, eta)?;
        for _ in 0..state.num_dishes() {
            s.push_dish();
        }
        for i in 0..state.num_restaurants() {
            for (l, &w) in state.items(i).iter().enumerate() {
                if w as usize >= vocab_size {
                    return Err(HcrmError::Domain(format!("word {w} outside vocabulary")));
                }
                s.add(state.dish_of(i, l), w);
            }
        }
        Ok(s)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn count(&self, k: usize, w: usize) -> u32 {
        self.counts[k][w]
    }

    pub fn dish_total(&self, k: usize) -> u64 {
        self.totals[k]
    }

    pub fn word_log_predictive(&self, dish: DishRef, w: usize) -> Result<f64> {
        if w >= self.vocab_size {
            return Err(HcrmError::Domain(format!("word {w} outside vocabulary")));
        }
        match dish {
            DishRef::New => Ok(-(self.vocab_size as f64).ln()),
            DishRef::Existing(k) if k < self.counts.len() => Ok(self.predictive(k, w as u32)),
            DishRef::Existing(k) => Err(HcrmError::UnknownDish(k)),
        }
    }

    fn predictive(&self, k: usize, w: u32) -> f64 {
        let wn = self.vocab_size as f64 * self.eta;
        ((f64::from(self.counts[k][w as usize]) + self.eta) / (self.totals[k] as f64 + wn)).ln()
    }
}

impl Observation for TopicWordStats {
    fn log_predictive(&self, dish: Option<usize>, item: u32) -> f64 {
        match dish {
            Some(k) => self.predictive(k, item),
            None => -(self.vocab_size as f64).ln(),
        }
    }

    fn log_predictive_group(&self, dish: Option<usize>, items: &[u32]) -> f64 {
        let wn = self.vocab_size as f64 * self.eta;
        let mut seen: Vec<(u32, u32)> = Vec::with_capacity(items.len());
        let mut lp = 0.0;
        for (t, &w) in items.iter().enumerate() {
            let extra = match seen.iter_mut().find(|(x, _)| *x == w) {
                Some((_, c)) => {
                    *c += 1;
                    *c - 1
                }
                None => {
                    seen.push((w, 1));
                    0
                }
            };
            let (n_kw, n_k) = match dish {
                Some(k) => (self.counts[k][w as usize], self.totals[k]),
                None => (0, 0),
            };
            lp += ((f64::from(n_kw + extra) + self.eta) / ((n_k + t as u64) as f64 + wn)).ln();
        }
        lp
    }

    fn add(&mut self, dish: usize, item: u32) {
        self.counts[dish][item as usize] += 1;
        self.totals[dish] += 1;
    }

    fn remove(&mut self, dish: usize, item: u32) {
        self.counts[dish][item as usize] -= 1;
        self.totals[dish] -= 1;
    }

    fn push_dish(&mut self) {
        self.counts.push(vec![0; self.vocab_size]);
        self.totals.push(0);
    }

    fn swap_remove_dish(&mut self, dish: usize) {
        debug_assert_eq!(self.totals[dish], 0);
        self.counts.swap_remove(dish);
        self.totals.swap_remove(dish);
    }

    fn num_dishes(&self) -> usize {
        self.counts.len()
    }

    fn log_marginal(&self) -> f64 {
        let wn = self.vocab_size as f64 * self.eta;
        let lg_eta = ln_gamma(self.eta);
        self.counts
            .iter()
            .zip(&self.totals)
            .map(|(row, &n)| {
                ln_gamma(wn) - ln_gamma(n as f64 + wn)
                    + row
                        .iter()
                        .filter(|&&c| c > 0)
                        .map(|&c| ln_gamma(f64::from(c) + self.eta) - lg_eta)
                        .sum::<f64>()
            })
            .sum()
    }

    fn check_against(&self, state: &FranchiseState) -> Result<()> {
        if *self != Self::from_state(state, self.vocab_size, self.eta)? {
            return Err(HcrmError::StateCorruption("topic-word counts disagree with the seating".into()));
        }
        Ok(())
    }
}

/// Stacked posterior summary: each retained sample contributes its own block
/// of topics, with β scaled by 1/S, so `Σ_k β_dk τ_kw` is the per-sample
/// averaged predictive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub num_samples: usize,
    pub vocab_size: usize,
    /// Sample index of each stacked topic.
    pub topic_sample: Vec<usize>,
    /// D×K document-topic weights (rows sum to 1).
    pub beta: Vec<Vec<f64>>,
    /// K×W topic-word probabilities (rows sum to 1).
    pub tau: Vec<Vec<f64>>,
}

impl PosteriorSummary {
    pub fn num_topics(&self) -> usize {
        self.tau.len()
    }

    pub fn num_docs(&self) -> usize {
        self.beta.len()
    }

    /// `Σ_k β_dk τ_kw`.
    pub fn word_probability(&self, d: usize, w: usize) -> f64 {
        self.beta[d]
            .iter()
            .zip(&self.tau)
            .map(|(b, row)| b * row[w])
            .sum()
    }

    /// Uniform β and τ over `k` topics.
    pub fn uniform(docs: usize, k: usize, vocab_size: usize) -> Self {
        PosteriorSummary {
            num_samples: 1,
            vocab_size,
            topic_sample: vec![0; k],
            beta: vec![vec![1.0 / k as f64; k]; docs],
            tau: vec![vec![1.0 / vocab_size as f64; vocab_size]; k],
        }
    }

    /// A single topic holding the η-smoothed corpus word frequencies.
    pub fn unigram(docs: usize, vocab_size: usize, train_words: &[u32], eta: f64) -> Self {
        let mut freq = vec![eta; vocab_size];
        for &w in train_words {
            freq[w as usize] += 1.0;
        }
        let z: f64 = freq.iter().sum();
        freq.iter_mut().for_each(|f| *f /= z);
        PosteriorSummary {
            num_samples: 1,
            vocab_size,
            topic_sample: vec![0],
            beta: vec![vec![1.0]; docs],
            tau: vec![freq],
        }
    }

    /// Largest deviation of any β or τ row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.beta
            .iter()
            .chain(&self.tau)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Top `n` word ids of every topic of the last retained sample, each with
    /// its probability.
    pub fn top_words(&self, n: usize) -> Vec<Vec<(usize, f64)>> {
        let last = self.topic_sample.iter().copied().max().unwrap_or(0);
        self.tau
            .iter()
            .zip(&self.topic_sample)
            .filter(|(_, &s)| s == last)
            .map(|(row, _)| {
                let mut idx: Vec<usize> = (0..row.len()).collect();
                idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                idx.into_iter().take(n).map(|w| (w, row[w])).collect()
            })
            .collect()
    }

    pub fn write_beta_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(out, &self.beta)
    }

    pub fn write_tau_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(out, &self.tau)
    }
}

pub fn write_matrix_csv<W: Write>(mut out: W, rows: &[Vec<f64>]) -> Result<()> {
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Collects per-sample (β, τ) blocks.
#[derive(Debug, Clone)]
pub struct SummaryAccumulator {
    docs: usize,
    vocab_size: usize,
    eta: f64,
    blocks: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl SummaryAccumulator {
    pub fn new(docs: usize, vocab_size: usize, eta: f64) -> Self {
        SummaryAccumulator {
            docs,
            vocab_size,
            eta,
            blocks: Vec::new(),
        }
    }

    pub fn num_samples(&self) -> usize {
        self.blocks.len()
    }

    pub fn add(&mut self, state: &FranchiseState, stats: &TopicWordStats) -> Result<()> {
        if state.num_restaurants() != self.docs || stats.vocab_size() != self.vocab_size {
            return Err(HcrmError::Dimension("sample does not match the summary shape".into()));
        }
        let k = state.num_dishes();
        if k == 0 {
            // Nothing seated: every document falls back to the prior topic.
            let tau = vec![vec![1.0 / self.vocab_size as f64; self.vocab_size]];
            self.blocks.push((vec![vec![1.0]; self.docs], tau));
            return Ok(());
        }
        let mut beta = vec![vec![BETA_SMOOTHING; k]; self.docs];
        for (d, row) in beta.iter_mut().enumerate() {
            for (j, &m) in state.table_sizes(d).iter().enumerate() {
                row[state.table_dishes(d)[j]] += f64::from(m);
            }
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|b| *b /= z);
        }
        let wn = self.vocab_size as f64 * self.eta;
        let tau = (0..k)
            .map(|t| {
                (0..self.vocab_size)
                    .map(|w| (f64::from(stats.count(t, w)) + self.eta) / (stats.dish_total(t) as f64 + wn))
                    .collect()
            })
            .collect();
        self.blocks.push((beta, tau));
        Ok(())
    }

    pub fn finish(&self) -> Result<PosteriorSummary> {
        let s = self.blocks.len();
        if s == 0 {
            return Err(HcrmError::NoSamples);
        }
        let scale = 1.0 / s as f64;
        let mut beta = vec![Vec::new(); self.docs];
        let mut tau = Vec::new();
        let mut topic_sample = Vec::new();
        for (idx, (b, t)) in self.blocks.iter().enumerate() {
            for (d, row) in b.iter().enumerate() {
                beta[d].extend(row.iter().map(|x| x * scale));
            }
            topic_sample.extend(std::iter::repeat_n(idx, t.len()));
            tau.extend(t.iter().cloned());
        }
        Ok(PosteriorSummary {
            num_samples: s,
            vocab_size: self.vocab_size,
            topic_sample,
            beta,
            tau,
        })
    }
}

/// Summary of an explicit list of retained samples.
pub fn accumulate_summary(samples: &[(FranchiseState, TopicWordStats)], eta: f64) -> Result<PosteriorSummary> {
    let (first, stats) = samples.first().ok_or(HcrmError::NoSamples)?;
    let mut acc = SummaryAccumulator::new(first.num_restaurants(), stats.vocab_size(), eta);
    for (state, stats) in samples {
        acc.add(state, stats)?;
    }
    acc.finish()
}

/// `exp(-mean ln Σ_k β_dk τ_kw)` over `(doc, word)` test tokens.
pub fn perplexity(test_tokens: &[(usize, u32)], summary: &PosteriorSummary) -> Result<f64> {
    if test_tokens.is_empty() {
        return Err(HcrmError::Domain("no test tokens".into()));
    }
    let mut total = 0.0;
    for &(d, w) in test_tokens {
        if d >= summary.num_docs() {
            return Err(HcrmError::Dimension(format!("document {d} has no beta row")));
        }
        if w as usize >= summary.vocab_size {
            return Err(HcrmError::Domain(format!("word {w} outside vocabulary")));
        }
        let p = summary.word_probability(d, w as usize);
        if !(p > 0.0) {
            return Err(HcrmError::ZeroProbability { doc: d, word: w as usize });
        }
        total += p.ln();
    }
    Ok((-total / test_tokens.len() as f64).exp())
}

pub type TopicChain = Chain<TopicWordStats>;

/// Seats the training tokens of every document and returns the chain.
pub fn topic_chain(
    docs: Vec<Vec<u32>>,
    vocab_size: usize,
    eta: f64,
    model: Model,
    config: SamplerConfig,
) -> Result<TopicChain> {
    if let Some(&w) = docs.iter().flatten().find(|&&w| w as usize >= vocab_size) {
        return Err(HcrmError::Domain(format!("word {w} outside vocabulary of {vocab_size}")));
    }
    let stats = TopicWordStats::new(vocab_size, eta)?;
    Chain::new(model, config, FranchiseState::new(docs), stats)
}

/// Steps the chain until `config.iterations`, feeding retained samples to
/// `acc` and calling `on_step` after every iteration.
pub fn run_topic_chain<F>(chain: &mut TopicChain, acc: &mut SummaryAccumulator, mut on_step: F) -> Result<()>
where
    F: FnMut(&TopicChain) -> Result<()>,
{
    while chain.iteration() < chain.config().iterations {
        chain.step()?;
        if chain.config().keeps(chain.iteration()) {
            acc.add(chain.state(), chain.observation())?;
        }
        on_step(chain)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_with(counts: &[(usize, u32, u32)], dishes: usize, w: usize) -> TopicWordStats {
        let mut s = TopicWordStats::new(w, DEFAULT_ETA).unwrap();
        for _ in 0..dishes {
            s.push_dish();
        }
        for &(k, word, c) in counts {
            for _ in 0..c {
                s.add(k, word);
            }
        }
        s
    }

    #[test]
    fn predictive_examples() {
        let s = stats_with(&[], 1, 7);
        assert!((s.word_log_predictive(DishRef::Existing(0), 3).unwrap() + 7f64.ln()).abs() < 1e-15);
        let s = stats_with(&[(0, 2, 3), (0, 0, 7)], 1, 5);
        let v = s.word_log_predictive(DishRef::Existing(0), 2).unwrap();
        assert!((v - (3.5f64 / 12.5).ln()).abs() < 1e-15);
        let s = stats_with(&[], 0, 4);
        assert_eq!(s.word_log_predictive(DishRef::New, 1).unwrap(), 0.25f64.ln());
        assert_eq!(
            s.word_log_predictive(DishRef::Existing(0), 1),
            Err(HcrmError::UnknownDish(0))
        );
    }

    #[test]
    fn group_predictive_is_the_dirichlet_multinomial() {
        let s = stats_with(&[(0, 1, 2), (0, 0, 1)], 1, 3);
        // Two tokens of word 1 then one of word 2, by enumeration of the chain rule.
        let wn = 1.5;
        let expected = ((2.5f64) / (3.0 + wn)).ln()
            + ((3.5f64) / (4.0 + wn)).ln()
            + ((0.5f64) / (5.0 + wn)).ln();
        let got = s.log_predictive_group(Some(0), &[1, 1, 2]);
        assert!((got - expected).abs() < 1e-14);
        // The marginal is the product of sequential predictives.
        let mut t = stats_with(&[], 1, 3);
        let mut seq = 0.0;
        for w in [1, 1, 0, 2] {
            seq += t.log_predictive(Some(0), w);
            t.add(0, w);
        }
        assert!((t.log_marginal() - seq).abs() < 1e-12);
    }

    #[test]
    fn perplexity_examples() {
        let u = PosteriorSummary::uniform(2, 3, 8);
        let toks = [(0usize, 1u32), (1, 5), (0, 7)];
        assert!((perplexity(&toks, &u).unwrap() - 8.0).abs() < 1e-12);

        let half = PosteriorSummary {
            num_samples: 1,
            vocab_size: 2,
            topic_sample: vec![0],
            beta: vec![vec![1.0]],
            tau: vec![vec![0.5, 0.5]],
        };
        assert!((perplexity(&[(0, 0)], &half).unwrap() - 2.0).abs() < 1e-12);

        let skew = PosteriorSummary {
            num_samples: 1,
            vocab_size: 3,
            topic_sample: vec![0],
            beta: vec![vec![1.0]],
            tau: vec![vec![0.5, 0.125, 0.375]],
        };
        assert!((perplexity(&[(0, 0), (0, 1)], &skew).unwrap() - 4.0).abs() < 1e-12);

        let zero = PosteriorSummary {
            tau: vec![vec![1.0, 0.0]],
            ..half
        };
        assert!(matches!(
            perplexity(&[(0, 1)], &zero),
            Err(HcrmError::ZeroProbability { .. })
        ));
    }

    fn seated(items: Vec<Vec<u32>>, seat: Vec<Vec<usize>>, dishes: Vec<Vec<usize>>) -> FranchiseState {
        FranchiseState::from_assignments(items, seat, dishes).unwrap()
    }

    #[test]
    fn single_dish_sample() {
        let state = seated(vec![vec![0, 1, 1]], vec![vec![0, 0, 1]], vec![vec![0, 0]]);
        let stats = TopicWordStats::from_state(&state, 3, DEFAULT_ETA).unwrap();
        let sum = accumulate_summary(&[(state, stats)], DEFAULT_ETA).unwrap();
        assert_eq!(sum.beta, vec![vec![1.0]]);
        assert!(sum.max_row_sum_error() < 1e-12);
    }

    #[test]
    fn repeated_samples_are_idempotent() {
        let state = seated(
            vec![vec![0, 1, 2], vec![2]],
            vec![vec![0, 1, 1], vec![0]],
            vec![vec![0, 1], vec![1]],
        );
        let stats = TopicWordStats::from_state(&state, 3, DEFAULT_ETA).unwrap();
        let one = accumulate_summary(&[(state.clone(), stats.clone())], DEFAULT_ETA).unwrap();
        let two = accumulate_summary(&[(state.clone(), stats.clone()), (state, stats)], DEFAULT_ETA)
            .unwrap();
        for d in 0..2 {
            for w in 0..3 {
                assert!((one.word_probability(d, w) - two.word_probability(d, w)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn averaged_predictive_over_two_samples() {
        // Three tokens in one document; sample A puts all on one dish, sample B
        // splits word 2 onto a second dish.
        let items = vec![vec![0u32, 1, 2]];
        let a = seated(items.clone(), vec![vec![0, 0, 0]], vec![vec![0]]);
        let b = seated(items, vec![vec![0, 0, 1]], vec![vec![0, 1]]);
        let sa = TopicWordStats::from_state(&a, 3, 0.5).unwrap();
        let sb = TopicWordStats::from_state(&b, 3, 0.5).unwrap();
        let sum = accumulate_summary(&[(a, sa), (b, sb)], 0.5).unwrap();
        assert_eq!(sum.num_topics(), 3);
        assert!(sum.max_row_sum_error() < 1e-12);

        // Sample A: β=[1], τ = (1.5, 1.5, 1.5)/4.5.
        let pa = [1.0 / 3.0; 3];
        // Sample B: β ∝ (2+ε, 1+ε); τ_0 = (1.5,1.5,.5)/3.5, τ_1 = (.5,.5,1.5)/2.5.
        let e = BETA_SMOOTHING;
        let (b0, b1) = ((2.0 + e) / (3.0 + 2.0 * e), (1.0 + e) / (3.0 + 2.0 * e));
        let t0 = [1.5 / 3.5, 1.5 / 3.5, 0.5 / 3.5];
        let t1 = [0.5 / 2.5, 0.5 / 2.5, 1.5 / 2.5];
        for w in 0..3 {
            let pb = b0 * t0[w] + b1 * t1[w];
            let expected = 0.5 * (pa[w] + pb);
            assert!((sum.word_probability(0, w) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn no_samples() {
        assert_eq!(accumulate_summary(&[], 0.5), Err(HcrmError::NoSamples));
    }

    #[test]
    fn top_words_of_last_sample() {
        let s = PosteriorSummary {
            num_samples: 2,
            vocab_size: 3,
            topic_sample: vec![0, 1],
            beta: vec![vec![0.5, 0.5]],
            tau: vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.1, 0.7]],
        };
        let top = s.top_words(2);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0][0].0, 2);
        assert_eq!(top[0][1].0, 0);
    }
}
