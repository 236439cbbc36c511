use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, Adam, EpochRecord, Result, TrainConfig, TrainError};
use crate::forgetting::ForgettingState;
use crate::gradcore::serialize::{read_all, write_tensor};
use crate::gradcore::{ParameterSet, Tensor};

pub const CHECKPOINT_FORMAT: &str = "focalsal-checkpoint-1";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub format: String,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub adam_step: u64,
    pub config: TrainConfig,
    /// Log of the completed epochs, so a resumed run reports all of them.
    pub record: Vec<EpochRecord>,
}

/// Everything needed to continue a run exactly: parameters, optimizer
/// moments, forgetting state and the epoch counter. Stored as a directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParameterSet<f32>,
    pub adam: Adam,
    pub forgetting: Option<ForgettingState>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> TrainError {
    TrainError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn read_records(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let f = fs::File::open(path).map_err(|e| io_error(path, e))?;
    read_all(&mut BufReader::new(f)).map_err(|e| corrupt(path, e.to_string()))
}

impl Checkpoint {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let meta = CheckpointMeta {
            adam_step: self.adam.step,
            ..self.meta.clone()
        };
        let json = serde_json::to_string_pretty(&meta).map_err(|e| io_error(dir, e))?;
        fs::write(dir.join("meta.json"), format!("{json}\n")).map_err(|e| io_error(dir, e))?;

        let mut buf = Vec::new();
        for (name, p) in self.params.iter() {
            write_tensor(&mut buf, name, &p.value)?;
        }
        fs::write(dir.join("params.bin"), &buf).map_err(|e| io_error(dir, e))?;

        buf.clear();
        for (name, m) in &self.adam.m {
            write_tensor(&mut buf, &format!("m/{name}"), m)?;
        }
        for (name, v) in &self.adam.v {
            write_tensor(&mut buf, &format!("v/{name}"), v)?;
        }
        fs::write(dir.join("adam.bin"), &buf).map_err(|e| io_error(dir, e))?;

        let fpath = dir.join("forgetting.bin");
        match &self.forgetting {
            Some(st) => {
                buf.clear();
                st.write(&mut buf)?;
                fs::write(&fpath, &buf).map_err(|e| io_error(dir, e))?;
            }
            None if fpath.exists() => fs::remove_file(&fpath).map_err(|e| io_error(&fpath, e))?,
            None => {}
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mpath = dir.join("meta.json");
        let raw = fs::read(&mpath).map_err(|e| io_error(&mpath, e))?;
        let meta: CheckpointMeta = serde_json::from_slice(&raw).map_err(|e| corrupt(&mpath, e.to_string()))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(corrupt(&mpath, format!("unknown format `{}`", meta.format)));
        }
        if meta.config.hash() != meta.config_hash {
            return Err(corrupt(&mpath, "stored config does not match its hash"));
        }

        let ppath = dir.join("params.bin");
        let mut params = ParameterSet::new();
        for (name, t) in read_records(&ppath)? {
            params.insert(name, t).map_err(|e| corrupt(&ppath, e.to_string()))?;
        }
        let expected = meta.config.effective_net().parameter_shapes();
        if expected.len() != params.len()
            || expected
                .iter()
                .any(|(n, s)| params.value(n).map(|t| t.shape() != s.as_slice()).unwrap_or(true))
        {
            return Err(corrupt(&ppath, "parameters do not match the stored architecture"));
        }

        let apath = dir.join("adam.bin");
        let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
        for (name, t) in read_records(&apath)? {
            if let Some(n) = name.strip_prefix("m/") {
                m.insert(n.to_string(), t);
            } else if let Some(n) = name.strip_prefix("v/") {
                v.insert(n.to_string(), t);
            } else {
                return Err(corrupt(&apath, format!("unexpected record `{name}`")));
            }
        }
        let names: Vec<&str> = params.names().collect();
        if !m.keys().map(String::as_str).eq(names.iter().copied()) || !v.keys().map(String::as_str).eq(names.iter().copied()) {
            return Err(corrupt(&apath, "optimizer moments do not match the parameters"));
        }

        let fpath = dir.join("forgetting.bin");
        let forgetting = if meta.config.variant.pfm() {
            let f = fs::File::open(&fpath).map_err(|e| io_error(&fpath, e))?;
            Some(ForgettingState::read(&mut BufReader::new(f)).map_err(|e| corrupt(&fpath, e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            adam: Adam {
                step: meta.adam_step,
                m,
                v,
            },
            meta,
            params,
            forgetting,
        })
    }
}
