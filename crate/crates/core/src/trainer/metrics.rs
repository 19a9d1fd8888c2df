use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{sign_code, EnvSpec};
use crate::rollout::Trajectory;
use crate::{Error, Result};

/// One line of `metrics.csv`. Empty cells mean "not measured in this window".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episodes: u64,
    pub psr_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub eval_return: Option<f64>,
    pub prediction_accuracy: Option<f64>,
}

/// Held-out prediction quality during burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnInPoint {
    pub update: u64,
    pub train_loss: f64,
    pub holdout_loss: f64,
    pub holdout_accuracy: f64,
}

/// Outcome of training the policy on one frozen summarizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub target: f64,
    pub reached: bool,
    pub psr_loss: Option<f64>,
    pub psr_updates: u64,
    pub final_return: Option<f64>,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::at_path(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::at_path(path, e))?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Write episodes laid out on the full horizon, padding rows included.
pub fn write_trajectories(path: &Path, spec: &EnvSpec, episodes: &[&Trajectory]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::at_path(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::at_path(path, e);
    let mut header = vec!["episode_id".to_string(), "t".to_string()];
    header.extend((0..spec.num_discrete()).map(|i| format!("obs{i}")));
    header.extend((0..spec.num_continuous()).map(|i| format!("cont{i}")));
    header.extend(
        ["action", "reward", "reward_code", "done", "is_test_action", "is_padding"]
            .iter()
            .map(|s| s.to_string()),
    );
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let pad = spec.padding_observation();
    for ep in episodes {
        for t in 0..spec.horizon {
            let live = t < ep.len();
            let obs = if live { &ep.observations[t] } else { &pad };
            let mut cells = vec![ep.id.to_string(), t.to_string()];
            cells.extend(obs.discrete.iter().map(|s| s.to_string()));
            cells.extend(obs.continuous.iter().map(|x| x.to_string()));
            if live {
                cells.push(ep.actions[t].to_string());
                cells.push(ep.rewards[t].to_string());
                cells.push(sign_code(ep.rewards[t]).to_string());
            } else {
                cells.extend([spec.action_cardinality.to_string(), "0".into(), "0".into()]);
            }
            cells.push(u8::from(live && ep.done_at(t)).to_string());
            cells.push(u8::from(ep.is_test_action(t)).to_string());
            cells.push(u8::from(!live).to_string());
            writeln!(out, "{}", cells.join(",")).map_err(io)?;
        }
    }
    out.flush().map_err(io)?;
    Ok(())
}
