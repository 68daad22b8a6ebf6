//! Feature encoding, the user-centric target-condition model, the
//! network-centric baseline and the projection of per-UE outputs onto the
//! per-AP budgets.

use ndarray::{Array2, ArrayView2};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::assoc::Association;
use crate::channel::ChannelState;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, Sequential};
use crate::solver::AllocationMatrix;

pub const DEFAULT_NORM_MAX_DB: f64 = 60.0;
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const TARGET_WIDTHS: [usize; 2] = [8, 4];
pub const CONDITION_WIDTHS: [usize; 4] = [128, 64, 32, 8];
pub const NETWORK_CENTRIC_WIDTHS: [usize; 4] = [256, 128, 64, 32];

/// Encoded features of one UE: SNR in dB clipped to `[0, max]`, masked by the
/// association and divided by `max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetInput(Vec<f64>);

impl TargetInput {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `[x_1, ..., x_Nu]`, the target inputs of every UE back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionInput {
    values: Vec<f64>,
    n_aps: usize,
}

impl ConditionInput {
    /// Wraps features that are already encoded, e.g. read back from a dataset.
    pub fn from_encoded(values: Vec<f64>, n_aps: usize) -> Result<Self> {
        if n_aps == 0 || !values.len().is_multiple_of(n_aps) {
            return Err(Error::InvalidInput(format!("{} features do not split into blocks of {n_aps}", values.len())));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("encoded features must lie in [0, 1]".into()));
        }
        Ok(Self { values, n_aps })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn n_ues(&self) -> usize {
        self.values.len() / self.n_aps
    }

    pub fn block(&self, ue: usize) -> &[f64] {
        &self.values[ue * self.n_aps..(ue + 1) * self.n_aps]
    }

    pub fn target(&self, ue: usize) -> TargetInput {
        TargetInput(self.block(ue).to_vec())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

pub fn encode_target_input(gamma_db: &[f64], chi: &[bool], norm_max_db: f64) -> Result<TargetInput> {
    if !(norm_max_db > 0.0) {
        return Err(Error::Config(format!("normalization bound must be positive, got {norm_max_db}")));
    }
    if gamma_db.len() != chi.len() {
        return Err(Error::dim("association entries", gamma_db.len(), chi.len()));
    }
    Ok(TargetInput(
        gamma_db
            .iter()
            .zip(chi)
            .map(|(&g, &c)| {
                if c && g > 0.0 {
                    g.min(norm_max_db) / norm_max_db
                } else {
                    0.0
                }
            })
            .collect(),
    ))
}

pub fn encode_condition_input(channel: &ChannelState, assoc: &Association, norm_max_db: f64) -> Result<ConditionInput> {
    let (n_a, n_u) = channel.sinr.dim();
    if assoc.chi().dim() != (n_a, n_u) {
        return Err(Error::dim("association UEs", n_u, assoc.n_ues()));
    }
    let mut values = Vec::with_capacity(n_a * n_u);
    for j in 0..n_u {
        let gamma_db: Vec<f64> = channel.sinr.column(j).iter().map(|&s| 10.0 * s.log10()).collect();
        values.extend(encode_target_input(&gamma_db, &assoc.column(j), norm_max_db)?.0);
    }
    Ok(ConditionInput { values, n_aps: n_a })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_aps: usize,
    pub n_ues: usize,
    pub n_subflows: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.n_aps == 0 || self.n_ues == 0 {
            return Err(Error::Config("model needs at least one AP and one UE".into()));
        }
        if self.n_subflows < 2 || self.n_subflows > self.n_aps {
            return Err(Error::Config(format!(
                "subflow count {} outside [2, {}]",
                self.n_subflows, self.n_aps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    UserCentric,
    NetworkCentric,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::UserCentric => "user_centric",
            ModelKind::NetworkCentric => "network_centric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub norm_max_db: f64,
    pub network: Network,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnnOutput {
    pub rho_k: Vec<f64>,
    pub subflow_ap_indices: Vec<usize>,
}

fn fc_bn_relu(specs: &mut Vec<LayerSpec>, from: usize, to: usize) {
    specs.push(LayerSpec::fc(from, to));
    specs.push(LayerSpec::batch_norm(to));
    specs.push(LayerSpec::relu(to));
}

/// Stack of FC+BN+ReLU blocks with dropout before the last block.
fn mlp(input: usize, widths: &[usize], dropout_p: f64) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut from = input;
    for (k, &w) in widths.iter().enumerate() {
        if k + 1 == widths.len() {
            specs.push(LayerSpec::dropout(from, dropout_p));
        }
        fc_bn_relu(&mut specs, from, w);
        from = w;
    }
    specs
}

/// Target, condition and combiner chains of the user-centric model.
pub fn tcnn_specs(dims: ModelDims, dropout_p: f64) -> [Vec<LayerSpec>; 3] {
    let t_out = TARGET_WIDTHS[TARGET_WIDTHS.len() - 1];
    let c_out = CONDITION_WIDTHS[CONDITION_WIDTHS.len() - 1];
    let combiner = vec![
        LayerSpec::concat(t_out, c_out),
        LayerSpec::fc(t_out + c_out, dims.n_subflows),
        LayerSpec::batch_norm(dims.n_subflows),
        LayerSpec::sigmoid(dims.n_subflows),
    ];
    [
        mlp(dims.n_aps, &TARGET_WIDTHS, dropout_p),
        mlp(dims.n_ues * dims.n_aps, &CONDITION_WIDTHS, dropout_p),
        combiner,
    ]
}

pub fn network_centric_specs(dims: ModelDims, dropout_p: f64) -> Vec<LayerSpec> {
    let out = dims.n_ues * dims.n_subflows;
    let last = NETWORK_CENTRIC_WIDTHS[NETWORK_CENTRIC_WIDTHS.len() - 1];
    let mut specs = Vec::new();
    let mut from = dims.n_ues * dims.n_aps;
    for &w in &NETWORK_CENTRIC_WIDTHS {
        fc_bn_relu(&mut specs, from, w);
        from = w;
    }
    specs.extend([
        LayerSpec::dropout(last, dropout_p),
        LayerSpec::fc(last, out),
        LayerSpec::batch_norm(out),
        LayerSpec::sigmoid(out),
    ]);
    specs
}

pub fn build_tcnn(dims: ModelDims, dropout_p: f64, rng: &mut dyn RngCore) -> Result<Model> {
    dims.validate()?;
    let [target, condition, combiner] = tcnn_specs(dims, dropout_p);
    let network = Network::new(
        vec![Sequential::new(&target, rng)?, Sequential::new(&condition, rng)?],
        Some(Sequential::new(&combiner, rng)?),
    )?;
    Ok(Model {
        kind: ModelKind::UserCentric,
        dims,
        norm_max_db: DEFAULT_NORM_MAX_DB,
        network,
    })
}

pub fn build_network_centric(dims: ModelDims, dropout_p: f64, rng: &mut dyn RngCore) -> Result<Model> {
    dims.validate()?;
    let network = Network::new(vec![Sequential::new(&network_centric_specs(dims, dropout_p), rng)?], None)?;
    Ok(Model {
        kind: ModelKind::NetworkCentric,
        dims,
        norm_max_db: DEFAULT_NORM_MAX_DB,
        network,
    })
}

pub fn build_model(kind: ModelKind, dims: ModelDims, dropout_p: f64, rng: &mut dyn RngCore) -> Result<Model> {
    match kind {
        ModelKind::UserCentric => build_tcnn(dims, dropout_p, rng),
        ModelKind::NetworkCentric => build_network_centric(dims, dropout_p, rng),
    }
}

/// Stacks per-sample feature vectors into a `batch x width` matrix.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != width {
            return Err(Error::dim("feature width", width, r.len()));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, width), data).expect("rows checked"))
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.network.validate()?;
        let ModelDims {
            n_aps,
            n_ues,
            n_subflows,
        } = self.dims;
        let (inputs, out) = match self.kind {
            ModelKind::UserCentric => (vec![n_aps, n_ues * n_aps], n_subflows),
            ModelKind::NetworkCentric => (vec![n_ues * n_aps], n_ues * n_subflows),
        };
        if self.network.input_dims() != inputs || self.network.out_dim() != out {
            return Err(Error::Config(format!(
                "{} network does not match dims {:?}",
                self.kind.name(),
                self.dims
            )));
        }
        Ok(())
    }

    /// Network inputs for a batch: condition features of each sample and, for
    /// the user-centric model, the target UE whose block forms the target input.
    pub fn input_batch(&self, features: &[&[f64]], targets: &[usize]) -> Result<Vec<Array2<f64>>> {
        let n_a = self.dims.n_aps;
        let width = self.dims.n_ues * n_a;
        let condition = stack_rows(features.iter().copied(), width)?;
        match self.kind {
            ModelKind::NetworkCentric => Ok(vec![condition]),
            ModelKind::UserCentric => {
                if targets.len() != features.len() {
                    return Err(Error::dim("target indices", features.len(), targets.len()));
                }
                if let Some(&k) = targets.iter().find(|&&k| k >= self.dims.n_ues) {
                    return Err(Error::InvalidInput(format!("target UE {k} out of range")));
                }
                let target = stack_rows(features.iter().zip(targets).map(|(f, &k)| &f[k * n_a..(k + 1) * n_a]), n_a)?;
                Ok(vec![target, condition])
            }
        }
    }

    pub fn predict_batch(&self, inputs: &[Array2<f64>]) -> Result<Array2<f64>> {
        let views: Vec<ArrayView2<f64>> = inputs.iter().map(|a| a.view()).collect();
        self.network.predict(&views)
    }

    /// Eval-mode coefficients of one target UE.
    pub fn tcnn_forward(&self, x_k: &TargetInput, x_c: &ConditionInput, assoc: &Association, target: usize) -> Result<TcnnOutput> {
        if self.kind != ModelKind::UserCentric {
            return Err(Error::InvalidInput("not a user-centric model".into()));
        }
        let rho_k = self.network.infer_one(&[x_k.as_slice(), x_c.as_slice()])?;
        Ok(TcnnOutput {
            rho_k,
            subflow_ap_indices: assoc.aps_of(target),
        })
    }

    /// Per-UE coefficient rows in ascending AP order for a whole drop.
    pub fn predict_rows(&self, x_c: &ConditionInput) -> Result<Vec<Vec<f64>>> {
        let n_u = self.dims.n_ues;
        let n_f = self.dims.n_subflows;
        if x_c.n_ues() != n_u || x_c.n_aps != self.dims.n_aps {
            return Err(Error::dim("condition UEs", n_u, x_c.n_ues()));
        }
        match self.kind {
            ModelKind::UserCentric => (0..n_u)
                .map(|k| self.network.infer_one(&[x_c.block(k), x_c.as_slice()]))
                .collect(),
            ModelKind::NetworkCentric => {
                let out = self.network.infer_one(&[x_c.as_slice()])?;
                Ok(out.chunks(n_f).map(<[f64]>::to_vec).collect())
            }
        }
    }
}

/// Coefficients of each UE on its links, in ascending AP order.
pub fn gather_rows(rho: &Array2<f64>, assoc: &Association) -> Vec<Vec<f64>> {
    (0..assoc.n_ues())
        .map(|j| assoc.aps_of(j).into_iter().map(|i| rho[(i, j)]).collect())
        .collect()
}

/// Scatters per-UE rows onto the association and rescales every AP whose load
/// exceeds 1 so that it is exactly 1.
pub fn project_feasible(rows: &[Vec<f64>], assoc: &Association) -> Result<AllocationMatrix> {
    if rows.len() != assoc.n_ues() {
        return Err(Error::dim("coefficient rows", assoc.n_ues(), rows.len()));
    }
    let mut alloc = AllocationMatrix::zeros(assoc.n_aps(), assoc.n_ues());
    for (j, row) in rows.iter().enumerate() {
        let aps = assoc.aps_of(j);
        if row.len() != aps.len() {
            return Err(Error::dim("coefficients per UE", aps.len(), row.len()));
        }
        for (&i, &v) in aps.iter().zip(row) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("coefficient {v} outside [0, 1]")));
            }
            alloc.rho[(i, j)] = v;
        }
    }
    for mut row in alloc.rho.rows_mut() {
        let load = row.sum();
        if load > 1.0 {
            row.mapv_inplace(|v| v / load);
        }
    }
    Ok(alloc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn encoding_examples() {
        let x = encode_target_input(&[30.0, 40.0, 20.0], &[true, false, true], 60.0).unwrap();
        assert_eq!(x.as_slice()[0], 0.5);
        assert_eq!(x.as_slice()[1], 0.0);
        assert!((x.as_slice()[2] - 1.0 / 3.0).abs() < 1e-15);
        let x = encode_target_input(&[-5.0, 90.0], &[true, true], 60.0).unwrap();
        assert_eq!(x.as_slice(), &[0.0, 1.0]);
        let x = encode_target_input(&[10.0, 20.0], &[false, false], 60.0).unwrap();
        assert_eq!(x.as_slice(), &[0.0, 0.0]);
        assert!(encode_target_input(&[1.0], &[true], 0.0).is_err());
    }

    #[test]
    fn projection_rescales_only_overloaded_aps() {
        let assoc = Association::from_mask(array![[true, true, true, true], [true, false, false, false]]);
        let rows = vec![vec![0.5, 0.3], vec![0.5], vec![0.5], vec![0.5]];
        let a = project_feasible(&rows, &assoc).unwrap();
        assert_eq!(a.rho.row(0).to_vec(), vec![0.25; 4]);
        assert_eq!(a.rho[(1, 0)], 0.3);
        let fine = vec![vec![0.1, 0.2], vec![0.1], vec![0.1], vec![0.1]];
        assert_eq!(gather_rows(&project_feasible(&fine, &assoc).unwrap().rho, &assoc), fine);
    }
}
