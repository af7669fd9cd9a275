//! Model checkpoints: a self-describing JSON file holding the
//! architecture, flattened 64-bit weights, input-standardization
//! statistics, the training seed and config, and (optionally) the
//! optimizer state for resuming.
//!
//! Weights round-trip bit-exactly: floats are printed in shortest
//! round-trip form. Checkpoints carry no timestamps, so rewriting the
//! same model produces identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamState;
use crate::error::Error;
use crate::Result;

use super::train::TrainConfig;
use super::{ExplicitQuantileNet, QuantileNet, Standardizer, SummaryNet};
use super::{ExplicitArch, IqnArch, SummaryArch};
use crate::autodiff::Tensor;

/// Any of the three network families.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyNet {
    Implicit(QuantileNet),
    Explicit(ExplicitQuantileNet),
    Summary(SummaryNet),
}

impl AnyNet {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyNet::Implicit(_) => "implicit",
            AnyNet::Explicit(_) => "explicit",
            AnyNet::Summary(_) => "summary",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            AnyNet::Implicit(n) => n.arch.input_dim,
            AnyNet::Explicit(n) => n.arch.input_dim,
            AnyNet::Summary(n) => n.arch.input_dim,
        }
    }

    pub fn as_implicit(&self) -> Result<&QuantileNet> {
        match self {
            AnyNet::Implicit(n) => Ok(n),
            other => Err(Error::invalid(format!(
                "expected an implicit-quantile checkpoint, found kind '{}'",
                other.kind()
            ))),
        }
    }

    pub fn as_explicit(&self) -> Result<&ExplicitQuantileNet> {
        match self {
            AnyNet::Explicit(n) => Ok(n),
            other => Err(Error::invalid(format!(
                "expected an explicit-quantile checkpoint, found kind '{}'",
                other.kind()
            ))),
        }
    }

    pub fn as_summary(&self) -> Result<&SummaryNet> {
        match self {
            AnyNet::Summary(n) => Ok(n),
            other => Err(Error::invalid(format!(
                "expected a summary-net checkpoint, found kind '{}'",
                other.kind()
            ))),
        }
    }
}

/// A trained (or in-progress) model plus everything needed to resume
/// or reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: AnyNet,
    pub train_config: Option<TrainConfig>,
    /// Training-stage seed (weights-init seed is part of provenance
    /// only; the weights themselves are stored).
    pub seed: Option<u64>,
    pub epochs_done: usize,
    /// Optimizer state for `train_resume`; absent on finished models.
    pub optimizer: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "kebab-case")]
enum ArchSpec {
    Implicit(IqnArch),
    Explicit(ExplicitArch),
    Summary(SummaryArch),
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    arch: ArchSpec,
    standardizer: Standardizer,
    params: Vec<Tensor>,
    train_config: Option<TrainConfig>,
    seed: Option<u64>,
    epochs_done: usize,
    optimizer: Option<AdamState>,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Serialize a checkpoint to pretty JSON at `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let (arch, standardizer, params) = match &ckpt.net {
        AnyNet::Implicit(n) => (
            ArchSpec::Implicit(n.arch.clone()),
            n.standardizer.clone(),
            n.params.clone(),
        ),
        AnyNet::Explicit(n) => (
            ArchSpec::Explicit(n.arch.clone()),
            n.standardizer.clone(),
            n.params.clone(),
        ),
        AnyNet::Summary(n) => (
            ArchSpec::Summary(n.arch.clone()),
            n.standardizer.clone(),
            n.params.clone(),
        ),
    };
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        arch,
        standardizer,
        params,
        train_config: ckpt.train_config.clone(),
        seed: ckpt.seed,
        epochs_done: ckpt.epochs_done,
        optimizer: ckpt.optimizer.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Load and validate a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    let net = match file.arch {
        ArchSpec::Implicit(arch) => {
            let expect = QuantileNet::new(arch.clone(), 0).params.len();
            check_param_count(expect, file.params.len())?;
            AnyNet::Implicit(QuantileNet {
                arch,
                params: file.params,
                standardizer: file.standardizer,
            })
        }
        ArchSpec::Explicit(arch) => {
            let expect = ExplicitQuantileNet::new(arch.clone(), 0)?.params.len();
            check_param_count(expect, file.params.len())?;
            AnyNet::Explicit(ExplicitQuantileNet {
                arch,
                params: file.params,
                standardizer: file.standardizer,
            })
        }
        ArchSpec::Summary(arch) => {
            let expect =
                SummaryNet::new(arch.input_dim, arch.hidden.clone(), arch.output_dim, 0)
                    .params
                    .len();
            check_param_count(expect, file.params.len())?;
            AnyNet::Summary(SummaryNet {
                arch,
                params: file.params,
                standardizer: file.standardizer,
            })
        }
    };
    Ok(Checkpoint {
        net,
        train_config: file.train_config,
        seed: file.seed,
        epochs_done: file.epochs_done,
        optimizer: file.optimizer,
    })
}

fn check_param_count(expect: usize, got: usize) -> Result<()> {
    if expect != got {
        return Err(Error::Parse(format!(
            "checkpoint holds {got} parameter tensors, architecture expects {expect}"
        )));
    }
    Ok(())
}
