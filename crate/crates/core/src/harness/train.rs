use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::Bound;
use crate::pointcloud::PointCloud;
use crate::tensor::Tensor;

use super::model::{cloud_pass, Model, ViewTrace};
use super::optim::{cosine_lr, AdamW, AdamWConfig};
use super::derive_seed;

/// Losses and diagnostics of one optimizer step, averaged over the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub l_ass: f64,
    pub l_cts: f64,
    pub l_contras: f64,
    pub l_total: f64,
    /// Largest iteration count of any transport solve in the batch.
    pub sinkhorn_iters: usize,
    /// Largest final marginal error of any transport solve in the batch.
    pub sinkhorn_marginal_err: f64,
    /// L2 norm of the batch gradient over all parameters.
    pub grad_norm: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

impl MetricsRecord {
    /// Equality of everything except wall-clock time.
    pub fn same_values(&self, other: &Self) -> bool {
        Self { wall_ms: 0.0, ..self.clone() } == Self { wall_ms: 0.0, ..other.clone() }
    }
}

/// Diagnostics of the first cloud of a step, for debug exports.
#[derive(Clone, Debug)]
pub struct StepTrace {
    pub views: [ViewTrace; 2],
}

pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub total_steps: usize,
}

impl Trainer {
    pub fn new(model: Model, total_steps: usize) -> Self {
        let optimizer = AdamW::new(&model.store, AdamWConfig::with_decay(model.config.weight_decay));
        Self {
            model,
            optimizer,
            total_steps,
        }
    }

    /// One optimizer step on `batch`. Every cloud runs on its own tape; the
    /// batch gradient is the mean of the per-cloud gradients.
    pub fn train_step(&mut self, batch: &[PointCloud], step: usize) -> Result<(MetricsRecord, StepTrace)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let start = Instant::now();
        let cfg = &self.model.config;
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<Tensor> = self
            .model
            .store
            .ids()
            .map(|id| Tensor::zeros(self.model.store.get(id).shape()))
            .collect();
        let (mut l_ass, mut l_cts, mut l_contras) = (0.0, 0.0, 0.0);
        let mut iters = 0;
        let mut marginal = 0.0f64;
        let mut trace = None;
        for (i, cloud) in batch.iter().enumerate() {
            let tape = Tape::with_precision(cfg.precision);
            let bound = Bound::new(&tape, &self.model.store);
            let patch_seed = derive_seed(cfg.seed, &[1, step as u64, i as u64]);
            let mask_seed = derive_seed(cfg.seed, &[2, step as u64, i as u64]);
            let pass = cloud_pass(&self.model, &bound, cloud, patch_seed, mask_seed)?;
            l_ass += pass.l_ass.item()? * scale;
            l_cts += pass.l_cts.item()? * scale;
            l_contras += pass.l_contras.item()? * scale;
            for r in &pass.sinkhorn {
                iters = iters.max(r.iterations);
                marginal = marginal.max(r.marginal_error);
            }
            let g = tape.backward(pass.total.scale(scale))?;
            for (acc, g) in grads.iter_mut().zip(bound.gradients(&g)) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            if trace.is_none() {
                trace = Some(StepTrace { views: pass.views });
            }
        }
        let mut sq = 0.0;
        for (id, g) in self.model.store.ids().zip(&grads) {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", self.model.store.name(id))));
            }
            sq += g.data().iter().map(|x| x * x).sum::<f64>();
        }
        let lr = cosine_lr(step, self.total_steps, cfg.lr);
        self.optimizer.step(&mut self.model.store, &grads, lr)?;
        let record = MetricsRecord {
            step,
            l_ass,
            l_cts,
            l_contras,
            l_total: l_ass + l_cts + l_contras,
            sinkhorn_iters: iters,
            sinkhorn_marginal_err: marginal,
            grad_norm: sq.sqrt(),
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        Ok((record, trace.expect("nonempty batch")))
    }
}

/// Dataset indices of the batch used at `step`: the data is reshuffled at
/// the start of every epoch from `(seed, epoch)`; the last batch of an
/// epoch may be short.
pub fn batch_indices(clouds: usize, batch_size: usize, seed: u64, step: usize) -> Vec<usize> {
    let per_epoch = clouds.div_ceil(batch_size);
    let (epoch, b) = (step / per_epoch, step % per_epoch);
    let mut order: Vec<usize> = (0..clouds).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3, epoch as u64])));
    order[b * batch_size..((b + 1) * batch_size).min(clouds)].to_vec()
}

/// Callback invoked after every step of [`pretrain`].
pub trait StepObserver {
    fn observe(&mut self, record: &MetricsRecord, trace: &StepTrace) -> Result<()>;
}

impl<F: FnMut(&MetricsRecord, &StepTrace) -> Result<()>> StepObserver for F {
    fn observe(&mut self, record: &MetricsRecord, trace: &StepTrace) -> Result<()> {
        self(record, trace)
    }
}

/// Trains a fresh model on `data` for the configured number of steps.
pub fn pretrain(
    model: Model,
    data: &[PointCloud],
    observer: &mut dyn StepObserver,
) -> Result<(Model, Vec<MetricsRecord>)> {
    if data.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let cfg = model.config.clone();
    let total = cfg.total_steps(data.len());
    let mut trainer = Trainer::new(model, total);
    let mut records = Vec::with_capacity(total);
    for step in 0..total {
        let batch: Vec<PointCloud> = batch_indices(data.len(), cfg.batch_size, cfg.seed, step)
            .into_iter()
            .map(|i| data[i].clone())
            .collect();
        let (record, trace) = trainer.train_step(&batch, step)?;
        observer.observe(&record, &trace)?;
        records.push(record);
    }
    Ok((trainer.model, records))
}

/// Appends one JSON object per line.
pub fn write_metrics_jsonl<W: Write>(mut w: W, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_metrics_jsonl(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub const SUMMARY_HEADER: &str = "metric,first,last,mean,min,max";

/// One CSV row per numeric metric over the whole run.
pub fn write_summary_csv<W: Write>(mut w: W, records: &[MetricsRecord]) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    if records.is_empty() {
        return Ok(());
    }
    type Column = (&'static str, fn(&MetricsRecord) -> f64);
    let columns: [Column; 8] = [
        ("l_ass", |r| r.l_ass),
        ("l_cts", |r| r.l_cts),
        ("l_contras", |r| r.l_contras),
        ("l_total", |r| r.l_total),
        ("sinkhorn_iters", |r| r.sinkhorn_iters as f64),
        ("sinkhorn_marginal_err", |r| r.sinkhorn_marginal_err),
        ("grad_norm", |r| r.grad_norm),
        ("wall_ms", |r| r.wall_ms),
    ];
    for (name, get) in columns {
        let v: Vec<f64> = records.iter().map(get).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(w, "{name},{},{},{mean},{min},{max}", v[0], v[v.len() - 1])?;
    }
    Ok(())
}

/// Writes a matrix as comma-separated rows with full precision.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Tensor) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
