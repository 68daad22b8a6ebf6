//! Throughput and fairness metrics, baseline allocators, the method
//! comparison over held-out drops and inference timing.

use std::collections::BTreeMap;
use std::time::Instant;

use log::warn;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::{mptcp_association, sss_association, Association};
use crate::channel::{channel_state, ChannelState};
use crate::data::SimConfig;
use crate::env::{build_topology, init_ues, rwp_step, MobilityConfig, NetworkTopology, Point3};
use crate::error::{Error, Result};
use crate::models::{encode_condition_input, project_feasible, ConditionInput, Model, ModelKind};
use crate::solver::{pf_utility, solve_pf, ue_rates, AllocationMatrix, SolverOptions};

/// `R_j = sum_i rho[i,j] C[i,j]` over the APs of UE `j`.
pub fn ue_throughput(rho: &Array2<f64>, capacity: &Array2<f64>, assoc: &Association, j: usize) -> f64 {
    assoc.aps_of(j).into_iter().map(|i| rho[(i, j)] * capacity[(i, j)]).sum()
}

/// `(sum x)^2 / (n sum x^2)`.
pub fn jain_index(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::InvalidInput("Jain index of an empty rate vector".into()));
    }
    if rates.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::InvalidInput("rates must be non-negative".into()));
    }
    let sum: f64 = rates.iter().sum();
    let sq: f64 = rates.iter().map(|r| r * r).sum();
    if sq == 0.0 {
        return Err(Error::InvalidInput("Jain index of an all-zero rate vector".into()));
    }
    Ok(sum * sum / (rates.len() as f64 * sq))
}

/// Equal share of every AP among its connected UEs.
///
/// Maximizing `sum_(i,j) ln(rho[i,j] C[i,j])` over subflows separates into
/// one problem per AP, `max sum_j ln rho[i,j]` with `sum_j rho[i,j] <= 1`,
/// whose maximizer is `1 / |U_i|` regardless of the capacities.
pub fn heuristic_equal_share(assoc: &Association) -> AllocationMatrix {
    let mut alloc = AllocationMatrix::zeros(assoc.n_aps(), assoc.n_ues());
    for i in 0..assoc.n_aps() {
        let ues = assoc.ues_of(i);
        for &j in &ues {
            alloc.rho[(i, j)] = 1.0 / ues.len() as f64;
        }
    }
    alloc
}

/// Single-AP association by signal strength with the proportional-fair
/// optimum on it: each AP splits evenly among its UEs that have a usable link.
pub fn sss_tcp_allocate(channel: &ChannelState) -> (Association, AllocationMatrix) {
    let assoc = sss_association(channel);
    let mut alloc = AllocationMatrix::zeros(assoc.n_aps(), assoc.n_ues());
    for i in 0..assoc.n_aps() {
        let ues: Vec<usize> = assoc.ues_of(i).into_iter().filter(|&j| channel.capacity[(i, j)] > 0.0).collect();
        for &j in &ues {
            alloc.rho[(i, j)] = 1.0 / ues.len() as f64;
        }
    }
    (assoc, alloc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Optimizer,
    UserCentric,
    NetworkCentric,
    Heuristic,
    SssTcp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Optimizer,
        Method::UserCentric,
        Method::NetworkCentric,
        Method::Heuristic,
        Method::SssTcp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Optimizer => "optimizer",
            Method::UserCentric => "user_centric",
            Method::NetworkCentric => "network_centric",
            Method::Heuristic => "heuristic",
            Method::SssTcp => "sss_tcp",
        }
    }

    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            Method::UserCentric => Some(ModelKind::UserCentric),
            Method::NetworkCentric => Some(ModelKind::NetworkCentric),
            _ => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// One evaluation drop: UE positions, channel and MPTCP association.
#[derive(Debug, Clone)]
pub struct Drop {
    pub seed: u64,
    pub episode: usize,
    pub positions: Vec<Point3>,
    pub channel: ChannelState,
    pub assoc: Association,
}

/// Steps of random-waypoint motion between consecutive drops of an episode run.
pub const DROP_SPACING_STEPS: usize = 100;

fn drop_rng(seed: u64, n_ue: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x6576_616c_0000_0000 | n_ue as u64);
    rng
}

/// UE positions for `episodes` drops: snapshots of a random-waypoint run
/// `DROP_SPACING_STEPS` apart. The RNG stream is disjoint from the one
/// dataset collection uses for the same seed, and the positions depend only on
/// `(seed, n_ue)`, so every subflow count sees the same drops.
pub fn drop_positions(
    topo: &NetworkTopology,
    mobility: &MobilityConfig,
    n_ue: usize,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Vec<Point3>>> {
    mobility.validate()?;
    let mut rng = drop_rng(seed, n_ue);
    let mut ues = init_ues(topo, n_ue, mobility, &mut rng)?;
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        for _ in 0..DROP_SPACING_STEPS {
            for ue in &mut ues {
                *ue = rwp_step(ue, topo, mobility, &mut rng);
            }
        }
        out.push(ues.iter().map(|u| u.position).collect());
    }
    Ok(out)
}

pub fn make_drops(topo: &NetworkTopology, mobility: &MobilityConfig, n_ue: usize, n_f: usize, episodes: usize, seed: u64) -> Result<Vec<Drop>> {
    drop_positions(topo, mobility, n_ue, episodes, seed)?
        .into_iter()
        .enumerate()
        .map(|(episode, positions)| {
            let channel = channel_state(topo, &positions)?;
            let assoc = mptcp_association(&channel, topo, n_f)?;
            Ok(Drop {
                seed,
                episode,
                positions,
                channel,
                assoc,
            })
        })
        .collect()
}

/// Allocation of one method on one drop, with the association it applies to.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub assoc: Association,
    pub allocation: AllocationMatrix,
    pub seconds: f64,
}

pub fn run_method(
    method: Method,
    drop: &Drop,
    model: Option<&Model>,
    solver: &SolverOptions,
    norm_max_db: f64,
) -> Result<MethodOutcome> {
    let start = Instant::now();
    let (assoc, allocation) = match method {
        Method::Optimizer => {
            let report = solve_pf(&drop.channel.capacity, &drop.assoc, solver)?;
            if !report.converged {
                warn!("optimizer did not converge on drop {} (KKT {:e})", drop.episode, report.kkt_residual);
            }
            (drop.assoc.clone(), report.allocation)
        }
        Method::Heuristic => (drop.assoc.clone(), heuristic_equal_share(&drop.assoc)),
        Method::SssTcp => sss_tcp_allocate(&drop.channel),
        Method::UserCentric | Method::NetworkCentric => {
            let model = model.ok_or_else(|| Error::InvalidInput(format!("{} needs a trained model", method.name())))?;
            let x_c = encode_condition_input(&drop.channel, &drop.assoc, norm_max_db)?;
            let rows = model.predict_rows(&x_c)?;
            (drop.assoc.clone(), project_feasible(&rows, &drop.assoc)?)
        }
    };
    Ok(MethodOutcome {
        assoc,
        allocation,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub n_ue: usize,
    pub n_f: usize,
    pub seed: u64,
    pub episode: usize,
    /// Network throughput in bit/s.
    pub throughput: f64,
    pub ue_throughputs: Vec<f64>,
    pub jain: f64,
    pub utility: f64,
    /// Wall-clock time the method took on this drop.
    pub seconds: f64,
}

pub fn metrics_row(method: Method, drop: &Drop, n_f: usize, outcome: &MethodOutcome) -> Result<MetricsRow> {
    let cap = &drop.channel.capacity;
    if !outcome.allocation.is_feasible(&outcome.assoc) {
        return Err(Error::Solver(format!("{} produced an infeasible allocation", method.name())));
    }
    let rates = ue_rates(cap, &outcome.assoc, &outcome.allocation.rho);
    Ok(MetricsRow {
        method,
        n_ue: drop.positions.len(),
        n_f,
        seed: drop.seed,
        episode: drop.episode,
        throughput: rates.iter().sum(),
        jain: jain_index(&rates)?,
        utility: pf_utility(cap, &outcome.assoc, &outcome.allocation.rho),
        ue_throughputs: rates,
        seconds: outcome.seconds,
    })
}

/// Trained models keyed by `(kind, n_ue, n_f)`.
pub type ModelStore = BTreeMap<(ModelKind, usize, usize), Model>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub methods: Vec<Method>,
    pub n_ue: Vec<usize>,
    pub n_f: Vec<usize>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

/// Every method on every drop of every `(n_ue, n_f, seed)`; learned outputs
/// go through [`project_feasible`]. Methods without a model are skipped.
pub fn evaluate_methods(sim: &SimConfig, plan: &EvalPlan, models: &ModelStore) -> Result<Vec<MetricsRow>> {
    let topo = build_topology(&sim.topology)?;
    let mut rows = Vec::new();
    for &n_ue in &plan.n_ue {
        for &n_f in &plan.n_f {
            let methods: Vec<Method> = plan
                .methods
                .iter()
                .copied()
                .filter(|m| match m.model_kind() {
                    Some(kind) if !models.contains_key(&(kind, n_ue, n_f)) => {
                        warn!("no {} checkpoint for N_u = {n_ue}, N_f = {n_f}; skipped", m.name());
                        false
                    }
                    _ => true,
                })
                .collect();
            for &seed in &plan.seeds {
                let drops = make_drops(&topo, &sim.mobility, n_ue, n_f, plan.episodes, seed)?;
                let per_drop: Vec<Vec<MetricsRow>> = drops
                    .par_iter()
                    .map(|drop| {
                        methods
                            .iter()
                            .map(|&m| {
                                let model = m.model_kind().and_then(|k| models.get(&(k, n_ue, n_f)));
                                let out = run_method(m, drop, model, &sim.solver, sim.norm_max_db)?;
                                metrics_row(m, drop, n_f, &out)
                            })
                            .collect()
                    })
                    .collect::<Result<_>>()?;
                rows.extend(per_drop.into_iter().flatten());
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n_ue: usize,
    pub n_f: usize,
    pub drops: usize,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub jain_mean: f64,
    pub jain_std: f64,
    pub utility_mean: f64,
    pub utility_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation per `(method, n_ue, n_f)`.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, usize, Method), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.n_ue, r.n_f, r.method)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((n_ue, n_f, method), rs)| {
            let pick = |f: fn(&MetricsRow) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (throughput_mean, throughput_std) = pick(|r| r.throughput);
            let (jain_mean, jain_std) = pick(|r| r.jain);
            let (utility_mean, utility_std) = pick(|r| r.utility);
            SummaryRow {
                method,
                n_ue,
                n_f,
                drops: rs.len(),
                throughput_mean,
                throughput_std,
                jain_mean,
                jain_std,
                utility_mean,
                utility_std,
            }
        })
        .collect()
}

pub const WARMUP_ITERATIONS: usize = 100;
pub const TIMED_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median: f64,
    pub p95: f64,
    pub repetitions: usize,
}

/// Median and 95th percentile of single-call wall-clock time, in seconds.
pub fn time_inference<T>(mut f: impl FnMut() -> T, warmup: usize, repetitions: usize) -> LatencyStats {
    assert!(repetitions > 0, "at least one timed repetition");
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let mut samples: Vec<f64> = (0..repetitions)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            start.elapsed().as_secs_f64()
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let at = |q: f64| samples[((q * (repetitions - 1) as f64).round() as usize).min(repetitions - 1)];
    LatencyStats {
        median: at(0.5),
        p95: at(0.95),
        repetitions,
    }
}

/// Prepared inputs of one drop for timing a method.
pub struct BenchCase<'a> {
    pub drop: &'a Drop,
    pub x_c: ConditionInput,
    pub solver: SolverOptions,
}

impl<'a> BenchCase<'a> {
    pub fn new(drop: &'a Drop, solver: SolverOptions, norm_max_db: f64) -> Result<Self> {
        Ok(Self {
            x_c: encode_condition_input(&drop.channel, &drop.assoc, norm_max_db)?,
            drop,
            solver,
        })
    }

    /// Latency per inference: one target UE for the user-centric model (its
    /// deployment unit), the whole network for every other method.
    pub fn time(&self, method: Method, model: Option<&Model>, warmup: usize, repetitions: usize) -> Result<LatencyStats> {
        let n_ue = self.drop.positions.len();
        match method {
            Method::UserCentric => {
                let model = model.ok_or_else(|| Error::InvalidInput("user-centric timing needs a model".into()))?;
                let mut k = 0;
                let x_c = self.x_c.as_slice();
                model.network.infer_one(&[self.x_c.block(0), x_c])?;
                Ok(time_inference(
                    || {
                        k = (k + 1) % n_ue;
                        model.network.infer_one(&[self.x_c.block(k), x_c])
                    },
                    warmup,
                    repetitions,
                ))
            }
            Method::NetworkCentric => {
                let model = model.ok_or_else(|| Error::InvalidInput("network-centric timing needs a model".into()))?;
                model.network.infer_one(&[self.x_c.as_slice()])?;
                Ok(time_inference(|| model.network.infer_one(&[self.x_c.as_slice()]), warmup, repetitions))
            }
            Method::Optimizer => Ok(time_inference(
                || solve_pf(&self.drop.channel.capacity, &self.drop.assoc, &self.solver),
                warmup,
                repetitions,
            )),
            Method::Heuristic => Ok(time_inference(|| heuristic_equal_share(&self.drop.assoc), warmup, repetitions)),
            Method::SssTcp => Ok(time_inference(|| sss_tcp_allocate(&self.drop.channel), warmup, repetitions)),
        }
    }

    /// Latency of allocating the whole network. Differs from [`BenchCase::time`]
    /// only for the user-centric model, which runs once per UE here.
    pub fn time_network(&self, method: Method, model: Option<&Model>, warmup: usize, repetitions: usize) -> Result<LatencyStats> {
        if method != Method::UserCentric {
            return self.time(method, model, warmup, repetitions);
        }
        let model = model.ok_or_else(|| Error::InvalidInput("user-centric timing needs a model".into()))?;
        let n_ue = self.drop.positions.len();
        let x_c = self.x_c.as_slice();
        model.network.infer_one(&[self.x_c.block(0), x_c])?;
        Ok(time_inference(
            || {
                for k in 0..n_ue {
                    std::hint::black_box(model.network.infer_one(&[self.x_c.block(k), x_c]).ok());
                }
            },
            warmup,
            repetitions,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn jain_values() {
        assert_eq!(jain_index(&[3.0; 5]).unwrap(), 1.0);
        assert_eq!(jain_index(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.25);
        assert!((jain_index(&[1.0, 2.0, 3.0]).unwrap() - 6.0 / 7.0).abs() <= 1e-12);
        assert!(jain_index(&[0.0, 0.0]).is_err());
        assert!(jain_index(&[]).is_err());
    }

    #[test]
    fn throughput_example() {
        let assoc = Association::from_mask(array![[true], [true]]);
        let rho = array![[0.5], [0.25]];
        let cap = array![[100e6], [200e6]];
        assert_eq!(ue_throughput(&rho, &cap, &assoc, 0), 100e6);
        assert_eq!(ue_throughput(&Array2::zeros((2, 1)), &cap, &assoc, 0), 0.0);
    }

    #[test]
    fn equal_share_examples() {
        let assoc = Association::from_mask(array![[true, true, true, true], [false, true, false, false]]);
        let a = heuristic_equal_share(&assoc);
        assert_eq!(a.rho.row(0).to_vec(), vec![0.25; 4]);
        assert_eq!(a.rho[(1, 1)], 1.0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("tcnn".parse::<Method>().is_err());
    }

    #[test]
    fn timing_statistics_are_ordered() {
        let s = time_inference(|| (0..100).sum::<u64>(), 5, 50);
        assert!(s.median <= s.p95);
        assert_eq!(s.repetitions, 50);
    }
}
