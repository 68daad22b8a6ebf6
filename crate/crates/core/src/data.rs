//! Labelled dataset collection, the binary dataset file and the training loop.
//!
//! One record per sampling instant. It holds the encoded features of every UE,
//! the solver coefficients of every UE in ascending AP order and the
//! round-robin target `t mod N_u`. The user-centric model trains on the
//! target's label, the network-centric model on all labels.
//!
//! File layout, all integers and floats little-endian:
//!
//! ```text
//! header  magic "HLWNDSET" | version u32 | n_aps u32 | n_ues u32 | n_subflows u32
//!         seed u64 | norm_max_db f64 | digest [u8; 32] | n_records u64
//! record  time_index u64 | target u32 | flagged u32
//!         features f64 x (n_ues * n_aps) | labels f64 x (n_ues * n_subflows)
//!         subflow AP indices u32 x (n_ues * n_subflows)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use log::{debug, info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::mptcp_association;
use crate::channel::channel_state;
use crate::env::{build_topology, simulate_positions, MobilityConfig, TopologyConfig};
use crate::error::{Error, Result};
use crate::models::{build_model, encode_condition_input, gather_rows, Model, ModelDims, ModelKind};
use crate::nn::{mse_loss, Adam, AdamConfig, Mode};
use crate::solver::{solve_pf, SolverOptions};

pub const MAGIC: &[u8; 8] = b"HLWNDSET";
pub const FORMAT_VERSION: u32 = 1;
/// Largest share of non-converged solves a collection tolerates.
pub const MAX_FLAGGED_FRACTION: f64 = 0.01;

pub type Digest = [u8; 32];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub n_aps: usize,
    pub n_ues: usize,
    pub n_subflows: usize,
    pub seed: u64,
    pub norm_max_db: f64,
    pub digest: Digest,
}

impl DatasetHeader {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_aps: self.n_aps,
            n_ues: self.n_ues,
            n_subflows: self.n_subflows,
        }
    }

    fn feature_len(&self) -> usize {
        self.n_ues * self.n_aps
    }

    fn label_len(&self) -> usize {
        self.n_ues * self.n_subflows
    }

    fn record_bytes(&self) -> usize {
        16 + 8 * self.feature_len() + 12 * self.label_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub time_index: u64,
    pub target_ue: usize,
    /// Solver did not converge at this instant; excluded from training.
    pub flagged: bool,
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub subflow_ap_indices: Vec<usize>,
}

/// The target UE's view of a record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<'a> {
    pub time_index: u64,
    pub target_ue: usize,
    pub condition_features: &'a [f64],
    pub label: &'a [f64],
    pub subflow_ap_indices: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_flagged(&self) -> usize {
        self.records.iter().filter(|r| r.flagged).count()
    }

    pub fn sample(&self, idx: usize) -> Sample<'_> {
        let r = &self.records[idx];
        let n_f = self.header.n_subflows;
        let span = r.target_ue * n_f..(r.target_ue + 1) * n_f;
        Sample {
            time_index: r.time_index,
            target_ue: r.target_ue,
            condition_features: &r.features,
            label: &r.labels[span.clone()],
            subflow_ap_indices: &r.subflow_ap_indices[span],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        h.dims().validate()?;
        for r in &self.records {
            if r.features.len() != h.feature_len() {
                return Err(Error::dim("record features", h.feature_len(), r.features.len()));
            }
            if r.labels.len() != h.label_len() || r.subflow_ap_indices.len() != h.label_len() {
                return Err(Error::dim("record labels", h.label_len(), r.labels.len()));
            }
            if r.target_ue >= h.n_ues {
                return Err(Error::InvalidInput(format!("target UE {} out of range", r.target_ue)));
            }
            if r.features.iter().chain(&r.labels).any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!("record {} has values outside [0, 1]", r.time_index)));
            }
            for idx in r.subflow_ap_indices.chunks(h.n_subflows) {
                if idx.windows(2).any(|w| w[0] >= w[1]) || idx.iter().any(|&i| i >= h.n_aps) {
                    return Err(Error::InvalidInput(format!("record {} has bad subflow indices", r.time_index)));
                }
            }
        }
        Ok(())
    }
}

/// Everything a collection run needs besides the UE count, subflow count and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: TopologyConfig,
    pub mobility: MobilityConfig,
    pub solver: SolverOptions,
    pub norm_max_db: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            topology: TopologyConfig::default(),
            mobility: MobilityConfig::default(),
            solver: SolverOptions::default(),
            norm_max_db: crate::models::DEFAULT_NORM_MAX_DB,
        }
    }
}

/// Simulates `floor(T / T_s)` instants of random-waypoint motion and labels
/// each with the proportional-fair optimum under MPTCP association.
pub fn collect_dataset(sim: &SimConfig, n_ue: usize, n_f: usize, seed: u64, digest: Digest) -> Result<Dataset> {
    let topo = build_topology(&sim.topology)?;
    let mobility = MobilityConfig { seed, ..sim.mobility };
    let trajectory = simulate_positions(&topo, n_ue, &mobility)?;
    let n_a = topo.n_aps();
    info!("collecting {} instants, {n_ue} UEs, {n_f} subflows", trajectory.len());

    let records: Vec<Record> = trajectory
        .par_iter()
        .enumerate()
        .map(|(t, positions)| {
            let channel = channel_state(&topo, positions)?;
            let assoc = mptcp_association(&channel, &topo, n_f)?;
            let report = solve_pf(&channel.capacity, &assoc, &sim.solver)?;
            if !report.converged {
                debug!("instant {t}: solver stopped at KKT residual {:e}", report.kkt_residual);
            }
            let features = encode_condition_input(&channel, &assoc, sim.norm_max_db)?.into_vec();
            let labels = gather_rows(&report.allocation.rho, &assoc).concat();
            let subflow_ap_indices = (0..n_ue).flat_map(|j| assoc.aps_of(j)).collect();
            Ok(Record {
                time_index: t as u64,
                target_ue: t % n_ue,
                flagged: !report.converged,
                features,
                labels,
                subflow_ap_indices,
            })
        })
        .collect::<Result<_>>()?;

    let ds = Dataset {
        header: DatasetHeader {
            n_aps: n_a,
            n_ues: n_ue,
            n_subflows: n_f,
            seed,
            norm_max_db: sim.norm_max_db,
            digest,
        },
        records,
    };
    let flagged = ds.n_flagged();
    if flagged as f64 > MAX_FLAGGED_FRACTION * ds.len() as f64 {
        return Err(Error::Solver(format!(
            "{flagged} of {} instants did not converge (limit {:.0}%)",
            ds.len(),
            MAX_FLAGGED_FRACTION * 100.0
        )));
    }
    if flagged > 0 {
        warn!("{flagged} instants flagged as non-converged");
    }
    Ok(ds)
}

/// Shuffles and splits into `round(ratio * n)` training and the rest validation records.
pub fn split_dataset(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * ds.len() as f64).round() as usize;
    let pick = |idx: &[usize]| Dataset {
        header: ds.header.clone(),
        records: idx.iter().map(|&i| ds.records[i].clone()).collect(),
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{v} does not fit the file format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let h = &ds.header;
    let mut out = Vec::with_capacity(80 + ds.len() * h.record_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, h.n_aps)?;
    put_u32(&mut out, h.n_ues)?;
    put_u32(&mut out, h.n_subflows)?;
    out.extend_from_slice(&h.seed.to_le_bytes());
    out.extend_from_slice(&h.norm_max_db.to_le_bytes());
    out.extend_from_slice(&h.digest);
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for r in &ds.records {
        out.extend_from_slice(&r.time_index.to_le_bytes());
        put_u32(&mut out, r.target_ue)?;
        out.extend_from_slice(&u32::from(r.flagged).to_le_bytes());
        for v in r.features.iter().chain(&r.labels) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &i in &r.subflow_ap_indices {
            put_u32(&mut out, i)?;
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Parse(format!("dataset truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Parse("not a dataset file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported dataset version {version}")));
    }
    let header = DatasetHeader {
        n_aps: c.u32()? as usize,
        n_ues: c.u32()? as usize,
        n_subflows: c.u32()? as usize,
        seed: c.u64()?,
        norm_max_db: c.f64()?,
        digest: c.take(32)?.try_into().unwrap(),
    };
    header.dims().validate()?;
    let n = c.u64()? as usize;
    let expected = header.record_bytes().checked_mul(n).and_then(|b| b.checked_add(c.pos));
    if expected != Some(bytes.len()) {
        return Err(Error::Parse(format!(
            "dataset declares {n} records but holds {} bytes",
            bytes.len()
        )));
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let time_index = c.u64()?;
        let target_ue = c.u32()? as usize;
        let flagged = match c.u32()? {
            0 => false,
            1 => true,
            f => return Err(Error::Parse(format!("bad flag {f}"))),
        };
        let features = (0..header.feature_len()).map(|_| c.f64()).collect::<Result<_>>()?;
        let labels = (0..header.label_len()).map(|_| c.f64()).collect::<Result<_>>()?;
        let subflow_ap_indices = (0..header.label_len()).map(|_| Ok(c.u32()? as usize)).collect::<Result<_>>()?;
        records.push(Record {
            time_index,
            target_ue,
            flagged,
            features,
            labels,
            subflow_ap_indices,
        });
    }
    let ds = Dataset { header, records };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_p: f64,
    pub seed: u64,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 200,
            dropout_p: 0.5,
            seed: 1,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 for batch norm".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout probability {} not in [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean training-mode minibatch loss over the epoch.
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
}

/// Inputs and labels of a set of records for one model kind.
fn batch_arrays(model: &Model, ds: &Dataset, idx: &[usize]) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    let feats: Vec<&[f64]> = idx.iter().map(|&i| ds.records[i].features.as_slice()).collect();
    let targets: Vec<usize> = idx.iter().map(|&i| ds.records[i].target_ue).collect();
    let inputs = model.input_batch(&feats, &targets)?;
    let labels = match model.kind {
        ModelKind::UserCentric => crate::models::stack_rows(idx.iter().map(|&i| ds.sample(i).label), ds.header.n_subflows)?,
        ModelKind::NetworkCentric => {
            crate::models::stack_rows(idx.iter().map(|&i| ds.records[i].labels.as_slice()), ds.header.label_len())?
        }
    };
    Ok((inputs, labels))
}

const EVAL_CHUNK: usize = 1024;

/// Eval-mode MSE over the unflagged records of `ds`.
pub fn evaluate_mse(model: &Model, ds: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| !ds.records[i].flagged).collect();
    if idx.is_empty() {
        return Err(Error::InvalidInput("no usable records".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (inputs, labels) = batch_arrays(model, ds, chunk)?;
        let pred = model.predict_batch(&inputs)?;
        sum += mse_loss(&pred, &labels)?.0 * labels.len() as f64;
        count += labels.len();
    }
    Ok(sum / count as f64)
}

fn check_compatible(model: &Model, ds: &Dataset, what: &str) -> Result<()> {
    if ds.header.dims() != model.dims {
        return Err(Error::InvalidInput(format!(
            "{what} set dims {:?} do not match the model {:?}",
            ds.header.dims(),
            model.dims
        )));
    }
    ds.validate()
}

/// Minibatch Adam on the MSE with early stopping on the validation loss.
pub fn train(kind: ModelKind, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(kind, train_set.header.dims(), cfg.dropout_p, &mut rng)?;
    model.norm_max_db = train_set.header.norm_max_db;
    check_compatible(&model, train_set, "training")?;
    check_compatible(&model, val_set, "validation")?;
    if train_set.header.digest != val_set.header.digest {
        return Err(Error::InvalidInput("training and validation sets come from different configurations".into()));
    }
    let mut order: Vec<usize> = (0..train_set.len()).filter(|&i| !train_set.records[i].flagged).collect();
    if order.len() < 2 {
        return Err(Error::InvalidInput("training needs at least two usable records".into()));
    }
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &model.network.param_sizes(),
    );

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, model.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let (inputs, labels) = batch_arrays(&model, train_set, batch)?;
            let views: Vec<_> = inputs.iter().map(|a| a.view()).collect();
            let trace = model.network.forward(&views, &mut Mode::Train(&mut rng))?;
            let (loss, grad) = mse_loss(trace.output(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} at epoch {epoch}")));
            }
            let grads = model.network.backward(&trace, &grad)?;
            model.network.commit_running_stats(&trace);
            adam.step(&mut model.network.params_mut(), &grads.tensors())?;
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let train_mse = sum / count as f64;
        let val_mse = evaluate_mse(&model, val_set)?;
        if !val_mse.is_finite() {
            return Err(Error::Diverged(format!("validation loss {val_mse} at epoch {epoch}")));
        }
        debug!("epoch {epoch}: train {train_mse:.6e} val {val_mse:.6e}");
        curve.push(EpochLoss {
            epoch,
            train_mse,
            val_mse,
        });
        if val_mse < best.0 {
            best = (val_mse, epoch, model.clone());
        } else if epoch - best.1 >= cfg.patience {
            info!("early stop at epoch {epoch}, best epoch {}", best.1);
            break;
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        curve,
        best_epoch: best.1,
    })
}

pub const CHECKPOINT_FORMAT: &str = "hlwnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with the provenance needed to match it to other artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Hex digest of the configuration the training data came from.
    pub digest: String,
    pub dataset_seed: u64,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, digest: &Digest, dataset_seed: u64, train: TrainConfig, best_epoch: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            digest: hex::encode(digest),
            dataset_seed,
            train,
            best_epoch,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("not a version {CHECKPOINT_VERSION} checkpoint")));
        }
        ck.model.validate()?;
        Ok(ck)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ck.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}
