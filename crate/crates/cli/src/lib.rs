//! Subcommands of the `hcrm` binary.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hcrm_core::data_io::{load_uci_bow, split_train_test, synth_corpus, Corpus};
use hcrm_core::distributions::{ccrm_poisson_log_pmf, crm_poisson_log_pmf, restaurant_counts_log_pmf, CountMatrix};
use hcrm_core::franchise::Checkpoint;
use hcrm_core::levy::BaseLaplace;
use hcrm_core::topic_model::{perplexity, run_topic_chain, topic_chain, PosteriorSummary, SummaryAccumulator, TopicChain};
use hcrm_core::HcrmError;
use serde::Serialize;

use crate::config::{ModelConfig, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] HcrmError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Loads the configured corpus (UCI files or a synthetic one).
pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let c = &cfg.corpus;
    match (&c.docword, &c.vocab, &c.synthetic) {
        (Some(d), Some(v), _) => {
            for p in [d, v] {
                if !p.is_file() {
                    return Err(CliError::Usage(format!("corpus file {} not found", p.display())));
                }
            }
            Ok(load_uci_bow(d, v)?)
        }
        (None, None, Some(s)) => Ok(synth_corpus(s.topics, s.vocab, s.docs, s.doc_len, s.alpha, s.eta, s.seed)?.corpus),
        (Some(_), None, _) | (None, Some(_), _) => {
            Err(CliError::Usage("both --docword and --vocab are required".into()))
        }
        (None, None, None) => Err(CliError::Usage(
            "no corpus given (use --docword/--vocab or --synthetic)".into(),
        )),
    }
}

/// The corpus with the run's train/test split applied.
pub fn split_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    Ok(split_train_test(&load_corpus(cfg)?, cfg.p_train, cfg.split_seed())?)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.out
        .as_deref()
        .ok_or_else(|| CliError::Usage("--out is required".into()))
}

#[derive(Serialize)]
struct ProgressLine<'a> {
    iteration: usize,
    dishes: usize,
    tables: usize,
    log_joint: f64,
    theta: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitMetrics {
    pub iterations: usize,
    pub samples: usize,
    pub test_tokens: usize,
    pub perplexity: Option<f64>,
    pub unigram_perplexity: Option<f64>,
}

fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("iter-{iteration:06}.ckpt"))
}

fn write_checkpoint(dir: &Path, chain: &TopicChain) -> Result<(), CliError> {
    let path = checkpoint_path(dir, chain.iteration());
    let cp = Checkpoint {
        iteration: chain.iteration(),
        model: chain.model().clone(),
        config: chain.config().clone(),
        rng: chain.rng().clone(),
        state: chain.state().clone(),
    };
    let mut w = create(&path)?;
    cp.write(&mut w)?;
    w.flush().map_err(io_err(&path))
}

fn unigram_for(corpus: &Corpus, eta: f64) -> PosteriorSummary {
    let words: Vec<u32> = corpus.train_docs().into_iter().flatten().collect();
    PosteriorSummary::unigram(corpus.num_docs(), corpus.vocab_size(), &words, eta)
}

fn write_top_words(path: &Path, summary: &PosteriorSummary, vocab: &[String], n: usize) -> Result<(), CliError> {
    let mut text = String::new();
    for (k, words) in summary.top_words(n).iter().enumerate() {
        let list: Vec<String> = words.iter().map(|(w, p)| format!("{}:{p:.4}", vocab[*w])).collect();
        text.push_str(&format!("topic {k}\t{}\n", list.join(" ")));
    }
    write_text(path, &text)
}

/// Runs one chain and writes everything into `cfg.out`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitMetrics, CliError> {
    cfg.validate()?;
    let corpus = split_corpus(cfg)?;
    let dir = out_dir(cfg)?;
    fs::create_dir_all(dir.join("checkpoints")).map_err(io_err(dir))?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;

    let mut sampler = cfg.sampler.clone();
    sampler.seed = cfg.seed;
    let mut chain = topic_chain(corpus.train_docs(), corpus.vocab_size(), cfg.eta, cfg.model.model()?, sampler)?;
    write_checkpoint(dir, &chain)?;
    let total = cfg.sampler.iterations;
    if total == 0 {
        return Ok(FitMetrics {
            iterations: 0,
            samples: 0,
            test_tokens: 0,
            perplexity: None,
            unigram_perplexity: None,
        });
    }

    let progress_path = dir.join("progress.jsonl");
    let mut progress = create(&progress_path)?;
    let mut acc = SummaryAccumulator::new(corpus.num_docs(), corpus.vocab_size(), cfg.eta);
    run_topic_chain(&mut chain, &mut acc, |c| {
        let line = ProgressLine {
            iteration: c.iteration(),
            dishes: c.state().num_dishes(),
            tables: c.state().total_tables(),
            log_joint: c.log_joint()?,
            theta: &c.model().base.mass_parameters(),
        };
        let json = serde_json::to_string(&line).expect("progress serialises");
        writeln!(progress, "{json}").map_err(|e| HcrmError::Io(e.to_string()))?;
        if c.iteration() % cfg.checkpoint_every == 0 || c.iteration() == total {
            write_checkpoint(dir, c).map_err(|e| HcrmError::Io(e.to_string()))?;
        }
        if c.iteration() % 100 == 0 {
            log::info!("iteration {} dishes {}", c.iteration(), c.state().num_dishes());
        }
        Ok(())
    })?;
    progress.flush().map_err(io_err(&progress_path))?;

    let summary = acc.finish()?;
    let summary_path = dir.join("summary.json");
    write_text(&summary_path, &serde_json::to_string(&summary).expect("summary serialises"))?;
    summary.write_beta_csv(create(&dir.join("beta.csv"))?)?;
    summary.write_tau_csv(create(&dir.join("tau.csv"))?)?;
    write_top_words(&dir.join("top_words.txt"), &summary, &corpus.vocab, cfg.top_words)?;

    let test = corpus.test_tokens();
    let (ppl, uni) = if test.is_empty() {
        (None, None)
    } else {
        (
            Some(perplexity(&test, &summary)?),
            Some(perplexity(&test, &unigram_for(&corpus, cfg.eta))?),
        )
    };
    let metrics = FitMetrics {
        iterations: total,
        samples: summary.num_samples,
        test_tokens: test.len(),
        perplexity: ppl,
        unigram_perplexity: uni,
    };
    write_text(
        &dir.join("metrics.json"),
        &serde_json::to_string_pretty(&metrics).expect("metrics serialise"),
    )?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub p_train: f64,
    pub model: String,
    pub perplexity: f64,
}

/// Run directory of one grid point.
pub fn eval_run_dir(out: &Path, p_train: f64) -> PathBuf {
    out.join(format!("p_train-{p_train:.2}"))
}

/// Fits (unless `fit` is false) and scores each training fraction in `grid`,
/// writing `perplexity.csv` into `cfg.out`.
pub fn cmd_eval(cfg: &RunConfig, grid: &[f64], fit: bool) -> Result<Vec<EvalRow>, CliError> {
    if grid.is_empty() {
        return Err(CliError::Usage("empty p_train grid".into()));
    }
    let out = out_dir(cfg)?.to_path_buf();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut rows = Vec::new();
    for &p in grid {
        let mut run = cfg.clone();
        run.p_train = p;
        run.out = Some(eval_run_dir(&out, p));
        if fit {
            cmd_fit(&run)?;
        }
        let path = eval_run_dir(&out, p).join("summary.json");
        let text = fs::read_to_string(&path)
            .map_err(|_| CliError::Usage(format!("missing summary {}", path.display())))?;
        let summary: PosteriorSummary = serde_json::from_str(&text)
            .map_err(|e| HcrmError::Format(format!("{}: {e}", path.display())))?;
        let corpus = split_corpus(&run)?;
        let test = corpus.test_tokens();
        rows.push(EvalRow {
            p_train: p,
            model: cfg.model.label(),
            perplexity: perplexity(&test, &summary)?,
        });
        rows.push(EvalRow {
            p_train: p,
            model: "unigram".into(),
            perplexity: perplexity(&test, &unigram_for(&corpus, cfg.eta))?,
        });
    }
    write_text(&out.join("perplexity.csv"), &eval_csv(&rows))?;
    Ok(rows)
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("p_train,model,perplexity\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.p_train, r.model, r.perplexity));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PmfKind {
    /// CRM-Poisson count matrix.
    Eq5,
    /// Count matrix given its number of columns.
    Ccrm,
    /// Table occupancies of one restaurant.
    Espf2,
}

/// Parses rows separated by `;` with entries separated by `,` or spaces.
pub fn parse_matrix(text: &str, rows: Option<usize>) -> Result<CountMatrix, CliError> {
    let lines: Vec<&str> = text
        .split([';', '\n'])
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        let n = rows.ok_or_else(|| CliError::Usage("an empty matrix needs --n".into()))?;
        return Ok(CountMatrix::empty(n));
    }
    let parsed: Result<Vec<Vec<u32>>, CliError> = lines
        .iter()
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|x| !x.is_empty())
                .map(|x| x.parse::<u32>().map_err(|_| CliError::Usage(format!("bad count {x:?}"))))
                .collect()
        })
        .collect();
    Ok(CountMatrix::from_rows(&parsed?)?)
}

/// Log-probability of `m` under the configured base measure.
pub fn cmd_pmf(model: &ModelConfig, kind: PmfKind, m: &CountMatrix, n: Option<usize>) -> Result<f64, CliError> {
    let base = model.base_spec()?;
    let n = n.unwrap_or(m.rows());
    Ok(match kind {
        PmfKind::Eq5 => crm_poisson_log_pmf(base.mass, &base.unit(), n, m)?,
        PmfKind::Ccrm => ccrm_poisson_log_pmf(&base.unit(), n, m.cols(), m)?,
        PmfKind::Espf2 => {
            if m.rows() != 1 {
                return Err(CliError::Usage("espf2 takes a single row of table sizes".into()));
            }
            restaurant_counts_log_pmf(&BaseLaplace::new(base), &model.object_spec()?, m.row(0))?
        }
    })
}

/// 15 significant digits.
pub fn format_log_prob(x: f64) -> String {
    format!("{x:.14e}")
}
