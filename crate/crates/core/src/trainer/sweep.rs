use serde::Serialize;

use super::{train, Result, RunRecord, TrainConfig, TrainError, TrainOptions};
use crate::synthdata::{FocalStackSample, TrainingView};

/// Transformation margins of the standard sweep grid.
pub const DELTA_GRID: [f64; 7] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

/// Final validation metrics of one margin, averaged over seeds.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub runs: usize,
    pub mean_f: f64,
    pub mean_mae: f64,
}

impl SweepRow {
    pub fn from_records(delta: f64, records: &[RunRecord]) -> Result<Self> {
        let mut f = Vec::with_capacity(records.len());
        let mut mae = Vec::with_capacity(records.len());
        for r in records {
            match (r.final_f(), r.final_mae()) {
                (Some(a), Some(b)) => {
                    f.push(a);
                    mae.push(b);
                }
                _ => return Err(TrainError::Data("sweep runs need validation metrics".into())),
            }
        }
        if f.is_empty() {
            return Err(TrainError::Config("sweep needs at least one seed".into()));
        }
        let n = f.len() as f64;
        Ok(Self {
            delta,
            runs: f.len(),
            mean_f: f.iter().sum::<f64>() / n,
            mean_mae: mae.iter().sum::<f64>() / n,
        })
    }
}

/// Train `base` once per (delta, seed) and aggregate per delta. `on_run`
/// sees every finished run, e.g. to store its log.
pub fn delta_sweep(
    train_set: &[TrainingView<'_>],
    eval: &[FocalStackSample],
    base: &TrainConfig,
    deltas: &[f64],
    seeds: &[u64],
    mut on_run: impl FnMut(f64, u64, &RunRecord) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    if eval.is_empty() {
        return Err(TrainError::Data("a sweep needs a validation corpus".into()));
    }
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut records = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.forgetting.delta = delta;
            let rec = train(train_set, eval, &cfg, &TrainOptions::default())?.record;
            on_run(delta, seed, &rec)?;
            records.push(rec);
        }
        rows.push(SweepRow::from_records(delta, &records)?);
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
