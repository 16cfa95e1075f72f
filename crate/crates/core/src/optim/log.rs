use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::network::ParameterVector;
use crate::{Error, Result};

/// One record per SGD epoch or HF iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub iteration: usize,
    /// Mean training loss (HF: on the gradient batch with that iteration's
    /// masks, after the update decision).
    pub loss: f64,
    pub heldout_loss: f64,
    /// Damping after the iteration (HF) or learning rate (SGD).
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub cg_iters: usize,
    pub termination: String,
    pub accepted: bool,
}

impl TrainingRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("training record serializes")
    }
}

/// Appends records as JSON lines.
#[derive(Debug)]
pub struct TrainingLog {
    path: PathBuf,
}

impl TrainingLog {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::write(path, "")?;
        Ok(TrainingLog { path: path.to_path_buf() })
    }

    pub fn append(&self, record: &TrainingRecord) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{}", record.to_json_line())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Vec<TrainingRecord>> {
        std::fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
            .collect()
    }
}

/// Optimizer state stored next to a parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: String,
    pub iteration: usize,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub anneals: usize,
    pub best_heldout: Option<f64>,
}

/// Writes `<stem>.params` and `<stem>.state.json` into `dir`.
pub fn save_checkpoint(dir: &Path, stem: &str, params: &ParameterVector, state: &OptimizerState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    params.save(&dir.join(format!("{stem}.params")))?;
    let json = serde_json::to_string_pretty(state).expect("optimizer state serializes");
    std::fs::write(dir.join(format!("{stem}.state.json")), json + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(ParameterVector, OptimizerState)> {
    let params = ParameterVector::load(&dir.join(format!("{stem}.params")))?;
    let path = dir.join(format!("{stem}.state.json"));
    let state =
        serde_json::from_str(&std::fs::read_to_string(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;
    Ok((params, state))
}
