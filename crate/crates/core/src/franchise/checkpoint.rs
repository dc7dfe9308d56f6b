//! Line-based checkpoints: a version header followed by one JSON document.

use std::io::{BufRead, Write};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HcrmError, Result};
use crate::franchise::sampler::{Model, SamplerConfig};
use crate::franchise::state::FranchiseState;

pub const CHECKPOINT_HEADER: &str = "hcrm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub model: Model,
    pub config: SamplerConfig,
    pub rng: ChaCha8Rng,
    pub state: FranchiseState,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_HEADER} {CHECKPOINT_VERSION}")?;
        let body = serde_json::to_string(self).map_err(|e| HcrmError::Checkpoint(e.to_string()))?;
        writeln!(out, "{body}")?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| HcrmError::Checkpoint("empty checkpoint".into()))??;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_HEADER) {
            return Err(HcrmError::Checkpoint(format!("bad header {header:?}")));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| HcrmError::Checkpoint(format!("bad header {header:?}")))?;
        if version != CHECKPOINT_VERSION {
            return Err(HcrmError::Checkpoint(format!("unsupported version {version}")));
        }
        let body = lines
            .next()
            .ok_or_else(|| HcrmError::Checkpoint("missing body".into()))??;
        let cp: Checkpoint =
            serde_json::from_str(&body).map_err(|e| HcrmError::Checkpoint(e.to_string()))?;
        cp.state.check_invariants()?;
        Ok(cp)
    }
}
