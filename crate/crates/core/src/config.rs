//! Run configuration: one TOML file with a section per pipeline stage.
//!
//! Every section and field is optional and falls back to the defaults below;
//! unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::channel::{LiFiRadioParams, WiFiRadioParams};
use crate::data::{Digest, SimConfig, TrainConfig};
use crate::env::{build_topology, MobilityConfig, NetworkTopology, Point3, TopologyConfig};
use crate::error::{Error, Result};
use crate::eval::{EvalPlan, Method};
use crate::models::DEFAULT_NORM_MAX_DB;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomSection {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub lifi_grid: usize,
    pub lifi_separation: f64,
    /// `[x, y, z]` in metres; the room centre at 1 m height when absent.
    pub wifi_position: Option<[f64; 3]>,
}

impl Default for RoomSection {
    fn default() -> Self {
        let t = TopologyConfig::default();
        Self {
            length: t.room_length,
            width: t.room_width,
            height: t.room_height,
            lifi_grid: t.lifi_grid,
            lifi_separation: t.lifi_separation,
            wifi_position: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilitySection {
    pub v_min: f64,
    pub v_max: f64,
    pub ue_height: f64,
}

impl Default for MobilitySection {
    fn default() -> Self {
        let m = MobilityConfig::default();
        Self {
            v_min: m.v_min,
            v_max: m.v_max,
            ue_height: m.ue_height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MptcpSection {
    pub n_f: usize,
}

impl Default for MptcpSection {
    fn default() -> Self {
        Self { n_f: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Simulation period `T`, seconds.
    pub duration: f64,
    /// Sampling period `T_s`, seconds.
    pub sample_period: f64,
    pub n_ue: usize,
    /// Training share of the shuffled records.
    pub split: f64,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let m = MobilityConfig::default();
        Self {
            duration: m.duration,
            sample_period: m.sample_period,
            n_ue: 10,
            split: 0.8,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    /// SNR ceiling in dB for the input normalization.
    pub norm_max_db: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            norm_max_db: DEFAULT_NORM_MAX_DB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub methods: Vec<Method>,
    pub n_ue: Vec<usize>,
    pub n_f: Vec<usize>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            n_ue: vec![10, 20, 30, 40, 50],
            n_f: vec![2, 3, 4],
            episodes: 100,
            seeds: vec![1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub room: RoomSection,
    pub lifi: LiFiRadioParams,
    pub wifi: WiFiRadioParams,
    pub mobility: MobilitySection,
    pub mptcp: MptcpSection,
    pub dataset: DatasetSection,
    pub solver: SolverOptions,
    pub features: FeatureSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `--seed` replaces the collection, training and evaluation seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.eval.seeds = vec![seed];
        self
    }

    pub fn topology_config(&self) -> TopologyConfig {
        TopologyConfig {
            room_length: self.room.length,
            room_width: self.room.width,
            room_height: self.room.height,
            lifi_grid: self.room.lifi_grid,
            lifi_separation: self.room.lifi_separation,
            wifi_position: self.room.wifi_position.map(|[x, y, z]| Point3::new(x, y, z)),
            lifi: self.lifi.clone(),
            wifi: self.wifi.clone(),
        }
    }

    pub fn topology(&self) -> Result<NetworkTopology> {
        build_topology(&self.topology_config())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            topology: self.topology_config(),
            mobility: MobilityConfig {
                v_min: self.mobility.v_min,
                v_max: self.mobility.v_max,
                sample_period: self.dataset.sample_period,
                duration: self.dataset.duration,
                ue_height: self.mobility.ue_height,
                seed: self.dataset.seed,
            },
            solver: self.solver,
            norm_max_db: self.features.norm_max_db,
        }
    }

    pub fn eval_plan(&self) -> EvalPlan {
        EvalPlan {
            methods: self.eval.methods.clone(),
            n_ue: self.eval.n_ue.clone(),
            n_f: self.eval.n_f.clone(),
            episodes: self.eval.episodes,
            seeds: self.eval.seeds.clone(),
        }
    }

    /// SHA-256 over the settings that shape the simulated data: room, radio,
    /// mobility, periods, solver and feature normalization. Seeds, UE and
    /// subflow counts are recorded next to the digest in each artifact instead.
    pub fn digest(&self) -> Digest {
        let mut sim = self.sim_config();
        sim.mobility.seed = 0;
        let bytes = serde_json::to_vec(&sim).expect("config serializes");
        Sha256::digest(&bytes).into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }

    pub fn validate(&self) -> Result<()> {
        let topo = self.topology()?;
        let n_a = topo.n_aps();
        self.sim_config().mobility.validate()?;
        let subflows = |field: &str, n_f: usize| {
            if n_f < 2 || n_f > n_a {
                Err(Error::Config(format!("{field} = {n_f} must lie in [2, {n_a}]")))
            } else {
                Ok(())
            }
        };
        subflows("mptcp.n_f", self.mptcp.n_f)?;
        if self.dataset.n_ue == 0 {
            return Err(Error::Config("dataset.n_ue must be positive".into()));
        }
        if !(self.dataset.split > 0.0 && self.dataset.split < 1.0) {
            return Err(Error::Config(format!("dataset.split = {} not in (0, 1)", self.dataset.split)));
        }
        if !(self.solver.utility_tol > 0.0 && self.solver.kkt_tol > 0.0) || self.solver.max_sweeps == 0 {
            return Err(Error::Config("solver tolerances and max_sweeps must be positive".into()));
        }
        if !(self.features.norm_max_db > 0.0 && self.features.norm_max_db.is_finite()) {
            return Err(Error::Config("features.norm_max_db must be positive".into()));
        }
        self.train.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("train: {msg}")),
            e => e,
        })?;
        let ev = &self.eval;
        if ev.methods.is_empty() || ev.n_ue.is_empty() || ev.n_f.is_empty() || ev.seeds.is_empty() {
            return Err(Error::Config("eval lists must not be empty".into()));
        }
        if ev.episodes == 0 || ev.n_ue.contains(&0) {
            return Err(Error::Config("eval.episodes and eval.n_ue entries must be positive".into()));
        }
        for &n_f in &ev.n_f {
            subflows("eval.n_f", n_f)?;
        }
        Ok(())
    }
}
