//! Run configuration: a TOML file merged with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hcrm_core::franchise::{Model, SamplerConfig, TableRule};
use hcrm_core::levy::{GgpComponent, LevySpec};
use hcrm_core::topic_model::DEFAULT_ETA;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BaseFamily {
    #[default]
    Gamma,
    Ggp,
    Sggp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ObjectFamily {
    #[default]
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableRuleArg {
    Conditional,
    Marginal,
}

impl From<TableRuleArg> for TableRule {
    fn from(r: TableRuleArg) -> Self {
        match r {
            TableRuleArg::Conditional => TableRule::Conditional,
            TableRuleArg::Marginal => TableRule::Marginal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base: BaseFamily,
    /// Base mass θ (gamma and ggp bases).
    pub theta: f64,
    /// Discount of the ggp base.
    pub d: f64,
    /// `θ1:d1,θ2:d2,...` for the sggp base.
    pub sggp_components: String,
    pub object: ObjectFamily,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base: BaseFamily::Gamma,
            theta: 1.0,
            d: 0.0,
            sggp_components: "1:0,1:0.4".into(),
            object: ObjectFamily::Gamma,
        }
    }
}

/// Parses `θ1:d1,θ2:d2,...`.
pub fn parse_components(s: &str) -> Result<Vec<GgpComponent>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (t, d) = p
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("sggp component {p:?} is not θ:d")))?;
            let parse = |x: &str| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("bad number {x:?} in sggp components")))
            };
            Ok(GgpComponent {
                theta: parse(t)?,
                discount: parse(d)?,
            })
        })
        .collect()
}

impl ModelConfig {
    pub fn base_spec(&self) -> Result<LevySpec, CliError> {
        Ok(match self.base {
            BaseFamily::Gamma => LevySpec::gamma(self.theta)?,
            BaseFamily::Ggp => LevySpec::generalized_gamma(self.d, self.theta)?,
            BaseFamily::Sggp => LevySpec::sum_generalized_gamma(parse_components(&self.sggp_components)?)?,
        })
    }

    pub fn object_spec(&self) -> Result<LevySpec, CliError> {
        Ok(match self.object {
            ObjectFamily::Gamma => LevySpec::gamma(1.0)?,
        })
    }

    pub fn model(&self) -> Result<Model, CliError> {
        Ok(Model::new(self.base_spec()?, self.object_spec()?)?)
    }

    pub fn label(&self) -> String {
        let base = match self.base {
            BaseFamily::Gamma => "gamma",
            BaseFamily::Ggp => "ggp",
            BaseFamily::Sggp => "sggp",
        };
        format!("hcrm-{base}-gamma")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub vocab: usize,
    pub docs: usize,
    pub doc_len: usize,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            topics: 3,
            vocab: 10,
            docs: 50,
            doc_len: 40,
            alpha: 0.5,
            eta: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub docword: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub p_train: f64,
    /// Symmetric Dirichlet parameter of the topic-word prior.
    pub eta: f64,
    pub checkpoint_every: usize,
    pub top_words: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub corpus: CorpusConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            p_train: 0.5,
            eta: DEFAULT_ETA,
            checkpoint_every: 500,
            top_words: 10,
            out: None,
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            corpus: CorpusConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative corpus paths are relative to the config file.
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpus.docword, &mut cfg.corpus.vocab, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Seed of the train/test split, distinct from the chain's.
    pub fn split_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.p_train) {
            return Err(CliError::Usage(format!("p_train must be in [0, 1], got {}", self.p_train)));
        }
        if !(self.eta > 0.0) {
            return Err(CliError::Usage(format!("eta must be positive, got {}", self.eta)));
        }
        if self.checkpoint_every == 0 {
            return Err(CliError::Usage("checkpoint_every must be >= 1".into()));
        }
        self.model.model()?;
        self.sampler.validate()?;
        Ok(())
    }
}

/// Flags shared by `fit` and `eval`; each overrides the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long, value_enum)]
    pub base: Option<BaseFamily>,
    #[arg(long, value_enum)]
    pub object: Option<ObjectFamily>,
    /// Discount of the ggp base.
    #[arg(long)]
    pub d: Option<f64>,
    /// Base mass θ.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Components of the sggp base as "θ1:d1,θ2:d2,...".
    #[arg(long)]
    pub sggp_components: Option<String>,
    #[arg(long)]
    pub p_train: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// UCI docword file.
    #[arg(long)]
    pub docword: Option<PathBuf>,
    /// UCI vocabulary file.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Use a synthetic corpus (see the --synth-* flags).
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub synth_topics: Option<usize>,
    #[arg(long)]
    pub synth_vocab: Option<usize>,
    #[arg(long)]
    pub synth_docs: Option<usize>,
    #[arg(long)]
    pub synth_doc_len: Option<usize>,
    #[arg(long)]
    pub synth_seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub top_words: Option<usize>,
    #[arg(long, value_enum)]
    pub table_rule: Option<TableRuleArg>,
    /// Keep the base masses fixed.
    #[arg(long)]
    pub no_hyper: bool,
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

impl Overrides {
    /// Loads `--config` (or defaults), applies the flags and validates.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.seed, c.seed);
        set!(self.iterations, c.sampler.iterations);
        set!(self.burn_in, c.sampler.burn_in);
        set!(self.thin, c.sampler.thin);
        set!(self.base, c.model.base);
        set!(self.object, c.model.object);
        set!(self.d, c.model.d);
        set!(self.theta, c.model.theta);
        set!(self.sggp_components, c.model.sggp_components);
        set!(self.p_train, c.p_train);
        set!(self.eta, c.eta);
        set!(self.checkpoint_every, c.checkpoint_every);
        set!(self.top_words, c.top_words);
        if let Some(r) = self.table_rule {
            c.sampler.table_rule = r.into();
        }
        if self.no_hyper {
            c.sampler.resample_hyper = false;
        }
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        if self.docword.is_some() || self.vocab.is_some() {
            c.corpus.synthetic = None;
            set!(self.docword.as_ref().map(|p| Some(p.clone())), c.corpus.docword);
            set!(self.vocab.as_ref().map(|p| Some(p.clone())), c.corpus.vocab);
        }
        let synth_flag = self.synthetic
            || self.synth_topics.is_some()
            || self.synth_vocab.is_some()
            || self.synth_docs.is_some()
            || self.synth_doc_len.is_some()
            || self.synth_seed.is_some();
        if synth_flag {
            c.corpus.docword = None;
            c.corpus.vocab = None;
            let s = c.corpus.synthetic.get_or_insert_with(SyntheticConfig::default);
            set!(self.synth_topics, s.topics);
            set!(self.synth_vocab, s.vocab);
            set!(self.synth_docs, s.docs);
            set!(self.synth_doc_len, s.doc_len);
            set!(self.synth_seed, s.seed);
        }
        c.sampler.seed = c.seed;
        for p in [&mut c.corpus.docword, &mut c.corpus.vocab, &mut c.out].into_iter().flatten() {
            *p = absolute(p);
        }
        c.validate()?;
        Ok(c)
    }
}
