use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::AdaptConfig;
use crate::error::{Error, Result};
use crate::optim::AdamConfig;

pub const LOSS_LOG_HEADER: &str = "iter,js,sg,og,og_m,total";

/// Loss components of one iteration, as logged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iter: usize,
    pub js: f64,
    pub sg: f64,
    pub og: f64,
    pub og_m: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub iteration: usize,
    pub mean_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Diverged,
}

/// Record of one adaptation run. Rows are only ever appended while the run
/// is in progress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: AdaptConfig,
    pub optimizer: AdamConfig,
    pub checkpoint_ids: Vec<String>,
    pub seed: u64,
    pub status: RunStatus,
    pub iterations: usize,
    pub losses: Vec<LossRow>,
    pub evaluations: Vec<EvalSnapshot>,
    pub final_error: Option<f64>,
    pub target_indices: Vec<usize>,
    pub target_images_read: usize,
    pub target_label_accesses: usize,
    pub wall_clock_secs: f64,
    /// Caller-supplied description of the full run setup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_config: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn new(config: &AdaptConfig, checkpoint_ids: Vec<String>) -> Self {
        RunManifest {
            config: config.clone(),
            optimizer: config.adam(),
            checkpoint_ids,
            seed: config.seed,
            status: RunStatus::Running,
            iterations: 0,
            losses: Vec::new(),
            evaluations: Vec::new(),
            final_error: None,
            target_indices: Vec::new(),
            target_images_read: 0,
            target_label_accesses: 0,
            wall_clock_secs: 0.0,
            resolved_config: None,
        }
    }

    pub fn push_loss(&mut self, row: LossRow) {
        self.iterations += 1;
        self.losses.push(row);
    }

    pub fn loss_log(&self) -> String {
        let mut out = String::from(LOSS_LOG_HEADER);
        out.push('\n');
        for r in &self.losses {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.js, r.sg, r.og, r.og_m, r.total
            ));
        }
        out
    }

    /// Writes `manifest.json` and `losses.csv` into `dir`, each through a
    /// temporary file and a rename.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("manifest.json"), &(serde_json::to_string_pretty(self)? + "\n"))?;
        write_atomic(&dir.join("losses.csv"), &self.loss_log())
    }
}

pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parses a loss log written by [`RunManifest::loss_log`].
pub fn parse_loss_log(text: &str) -> Result<Vec<LossRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_LOG_HEADER) {
        return Err(Error::invalid("loss log is missing its header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("loss log row {}: `{line}`", i + 1));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(LossRow {
                iter: f[0].parse().map_err(|_| bad())?,
                js: num(f[1])?,
                sg: num(f[2])?,
                og: num(f[3])?,
                og_m: num(f[4])?,
                total: num(f[5])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_log_round_trips() {
        let mut m = RunManifest::new(&AdaptConfig::default(), vec!["a".into()]);
        m.push_loss(LossRow {
            iter: 1,
            js: 0.1,
            sg: 1.0 / 3.0,
            og: 2e-9,
            og_m: 0.0,
            total: 0.7,
        });
        let rows = parse_loss_log(&m.loss_log()).unwrap();
        assert_eq!(rows, m.losses);
        assert_eq!(m.iterations, 1);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(back, m);
    }
}
