use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use hlwnet::assoc::{mptcp_association, Association};
use hlwnet::channel::{capacity_matrix, channel_state, linear_to_db, ChannelState};
use hlwnet::config::RunConfig;
use hlwnet::data::{
    collect_dataset, load_checkpoint, load_dataset, save_checkpoint, save_dataset, split_dataset, train, Checkpoint,
};
use hlwnet::env::{ApKind, Point3};
use hlwnet::eval::{evaluate_methods, jain_index, make_drops, summarize, BenchCase, Method, ModelStore};
use hlwnet::matrix_csv::{load_matrix, save_matrix, save_table};
use hlwnet::models::{encode_condition_input, project_feasible, Model, ModelKind};
use hlwnet::solver::{pf_utility, solve_pf, ue_rates, AllocationMatrix};
use hlwnet::Error;
use log::info;
use ndarray::Array2;
use serde::Serialize;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MISSING: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }

    pub fn missing(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_MISSING,
            message: msg.into(),
        }
    }

    pub fn other(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_OTHER,
            message: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Incompatible { .. } => EXIT_MISSING,
            Error::Solver(_) => EXIT_SOLVER,
            _ => EXIT_OTHER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::other(e.to_string())
    }
}

type Res = Result<(), Failure>;

pub enum SolveInput<'a> {
    Capacity { capacity: &'a Path, mask: &'a Path },
    Sinr(&'a Path),
    Drop,
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

pub fn dataset_name(n_ue: usize, n_f: usize) -> String {
    format!("dataset_u{n_ue}_f{n_f}.bin")
}

pub fn checkpoint_name(kind: ModelKind, n_ue: usize, n_f: usize) -> String {
    format!("{}_u{n_ue}_f{n_f}.json", kind.name())
}

#[derive(Serialize)]
struct ApRow {
    index: usize,
    kind: &'static str,
    x: f64,
    y: f64,
    z: f64,
    bandwidth_hz: f64,
}

#[derive(Serialize)]
struct EvalRow {
    method: Method,
    n_ue: usize,
    n_f: usize,
    seed: u64,
    throughput_mbps: f64,
    jain: f64,
    utility_nats: f64,
    latency_us_median: f64,
    latency_us_p95: f64,
}

#[derive(Serialize)]
struct BenchRow {
    method: Method,
    n_ue: usize,
    n_f: usize,
    seed: u64,
    latency_us_median: f64,
    latency_us_p95: f64,
    /// Whole-network allocation; the user-centric model runs once per UE.
    network_latency_us_median: f64,
    repetitions: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)]
}

impl Ctx {
    fn digest_hex(&self) -> String {
        self.cfg.digest_hex()
    }

    fn out_dir(&self) -> Result<&Path, Failure> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }

    fn subflows(&self, n_f: Option<usize>) -> Result<usize, Failure> {
        let n_f = n_f.unwrap_or(self.cfg.mptcp.n_f);
        let n_a = self.cfg.topology()?.n_aps();
        if n_f < 2 || n_f > n_a {
            return Err(Failure::config(format!("subflow count {n_f} must lie in [2, {n_a}]")));
        }
        Ok(n_f)
    }

    fn load_model(&self, kind: ModelKind, n_ue: usize, n_f: usize) -> Result<Model, Failure> {
        let path = self.out.join(checkpoint_name(kind, n_ue, n_f));
        if !path.exists() {
            return Err(Failure::missing(format!(
                "checkpoint {} not found; run `hlwnet collect --n-ue {n_ue} --n-f {n_f}` and \
                 `hlwnet train --kind {} --n-ue {n_ue} --n-f {n_f}` with the same --config and --out",
                path.display(),
                kind.name().replace('_', "-")
            )));
        }
        let ck: Checkpoint = load_checkpoint(&path)?;
        let incompatible = |reason: String| Error::Incompatible {
            path: path.clone(),
            reason,
        };
        if ck.digest != self.digest_hex() {
            return Err(incompatible(format!("trained under config digest {}, current is {}", ck.digest, self.digest_hex())).into());
        }
        let d = ck.model.dims;
        if ck.model.kind != kind || d.n_ues != n_ue || d.n_subflows != n_f || d.n_aps != self.cfg.topology()?.n_aps() {
            return Err(incompatible(format!("holds a {} model with dims {d:?}", ck.model.kind.name())).into());
        }
        Ok(ck.model)
    }

    fn load_models(&self, methods: &[Method], n_ues: &[usize], n_fs: &[usize]) -> Result<ModelStore, Failure> {
        let mut store = ModelStore::new();
        for kind in methods.iter().filter_map(|m| m.model_kind()) {
            for &n_ue in n_ues {
                for &n_f in n_fs {
                    store.insert((kind, n_ue, n_f), self.load_model(kind, n_ue, n_f)?);
                }
            }
        }
        Ok(store)
    }

    fn load_sinr(&self, path: &Path) -> Result<Array2<f64>, Failure> {
        self.load_ap_matrix(path, "SNR", true)
    }

    /// Reads a matrix of finite non-negative entries, optionally one row per
    /// AP of the configured topology.
    fn load_ap_matrix(&self, path: &Path, what: &str, topology_rows: bool) -> Result<Array2<f64>, Failure> {
        if !path.exists() {
            return Err(Failure::missing(format!("{what} file {} not found", path.display())));
        }
        let (digest, sinr) = load_matrix(path)?;
        if let Some(d) = digest {
            if d != self.digest_hex() {
                return Err(Error::Incompatible {
                    path: path.into(),
                    reason: format!("written under config digest {d}, current is {}", self.digest_hex()),
                }
                .into());
            }
        }
        let n_a = self.cfg.topology()?.n_aps();
        if topology_rows && sinr.nrows() != n_a {
            return Err(Failure::other(format!("{} has {} rows, the topology has {n_a} APs", path.display(), sinr.nrows())));
        }
        if sinr.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Failure::other(format!("{}: {what} values must be finite and non-negative", path.display())));
        }
        Ok(sinr)
    }

    fn report_allocation(&self, capacity: &Array2<f64>, assoc: &Association, alloc: &AllocationMatrix, name: &str) -> Res {
        let path = self.out_dir()?.join(name);
        save_matrix(&path, &self.digest_hex(), &alloc.rho)?;
        let rates = ue_rates(capacity, assoc, &alloc.rho);
        let jain = jain_index(&rates).map(|j| format!("{j:.6}")).unwrap_or_else(|_| "n/a".into());
        println!("throughput_mbps={:.6}", rates.iter().sum::<f64>() / 1e6);
        println!("jain={jain}");
        println!("utility_nats={:.6}", pf_utility(capacity, assoc, &alloc.rho));
        println!("wrote {}", path.display());
        Ok(())
    }

    pub fn topo(&self, grid: Option<usize>) -> Res {
        let topo = self.cfg.topology()?;
        if grid == Some(0) {
            return Err(Failure::config("--grid must be at least 1"));
        }
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        writeln!(lock, "# digest={}", self.digest_hex())?;
        let mut w = csv::Writer::from_writer(lock);
        for (index, ap) in topo.aps().iter().enumerate() {
            w.serialize(ApRow {
                index,
                kind: match ap.kind {
                    ApKind::LiFi => "lifi",
                    ApKind::WiFi => "wifi",
                },
                x: ap.position.x,
                y: ap.position.y,
                z: ap.position.z,
                bandwidth_hz: ap.bandwidth,
            })
            .map_err(|e| Failure::other(e.to_string()))?;
        }
        w.flush()?;
        drop(w);

        let Some(n) = grid else { return Ok(()) };
        let h = self.cfg.mobility.ue_height;
        let points: Vec<Point3> = (0..n)
            .flat_map(|r| {
                (0..n).map(move |c| {
                    Point3::new((c as f64 + 0.5) * topo.room_length / n as f64, (r as f64 + 0.5) * topo.room_width / n as f64, h)
                })
            })
            .collect();
        let ch = channel_state(&topo, &points)?;
        let path = self.out_dir()?.join("heatmap.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "# digest={}", self.digest_hex())?;
        let mut w = csv::Writer::from_writer(f);
        let n_a = topo.n_aps();
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((0..n_a).map(|i| format!("snr_db_{i}")));
        header.extend((0..n_a).map(|i| format!("capacity_mbps_{i}")));
        let csv_err = |e: csv::Error| Failure::other(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for (j, p) in points.iter().enumerate() {
            let mut rec = vec![p.x.to_string(), p.y.to_string()];
            rec.extend((0..n_a).map(|i| linear_to_db(ch.sinr[(i, j)]).to_string()));
            rec.extend((0..n_a).map(|i| (ch.capacity[(i, j)] / 1e6).to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }

    pub fn collect(&self, n_ue: Option<usize>, n_f: Option<usize>) -> Res {
        let n_ue = n_ue.unwrap_or(self.cfg.dataset.n_ue);
        if n_ue == 0 {
            return Err(Failure::config("--n-ue must be positive"));
        }
        let n_f = self.subflows(n_f)?;
        let ds = collect_dataset(&self.cfg.sim_config(), n_ue, n_f, self.cfg.dataset.seed, self.cfg.digest())?;
        let path = self.out_dir()?.join(dataset_name(n_ue, n_f));
        save_dataset(&ds, &path)?;
        println!("wrote {} ({} records, {} flagged)", path.display(), ds.len(), ds.n_flagged());
        Ok(())
    }

    pub fn train(&self, kinds: &[ModelKind], n_ue: Option<usize>, n_f: Option<usize>) -> Res {
        let n_ue = n_ue.unwrap_or(self.cfg.dataset.n_ue);
        let n_f = self.subflows(n_f)?;
        let path = self.out.join(dataset_name(n_ue, n_f));
        if !path.exists() {
            return Err(Failure::missing(format!(
                "dataset {} not found; run `hlwnet collect --n-ue {n_ue} --n-f {n_f}` first",
                path.display()
            )));
        }
        let ds = load_dataset(&path)?;
        if ds.header.digest != self.cfg.digest() {
            return Err(Error::Incompatible {
                path,
                reason: format!(
                    "collected under config digest {}, current is {}",
                    hex::encode(ds.header.digest),
                    self.digest_hex()
                ),
            }
            .into());
        }
        let (tr, va) = split_dataset(&ds, self.cfg.dataset.split, ds.header.seed)?;
        for &kind in kinds {
            info!("training {} on {} records", kind.name(), tr.len());
            let outcome = train(kind, &tr, &va, &self.cfg.train)?;
            let ck = Checkpoint::new(outcome.model, &ds.header.digest, ds.header.seed, self.cfg.train, outcome.best_epoch);
            let ck_path = self.out.join(checkpoint_name(kind, n_ue, n_f));
            save_checkpoint(&ck, &ck_path)?;
            let loss_path = self.out.join(format!("loss_{}_u{n_ue}_f{n_f}.csv", kind.name()));
            save_table(&loss_path, &self.digest_hex(), &outcome.curve)?;
            let best = &outcome.curve[outcome.best_epoch - 1];
            println!(
                "{}: best epoch {} train_mse={:.6e} val_mse={:.6e}; wrote {} and {}",
                kind.name(),
                outcome.best_epoch,
                best.train_mse,
                best.val_mse,
                ck_path.display(),
                loss_path.display()
            );
        }
        Ok(())
    }

    pub fn eval(&self) -> Res {
        let plan = self.cfg.eval_plan();
        let models = self.load_models(&plan.methods, &plan.n_ue, &plan.n_f)?;
        let rows = evaluate_methods(&self.cfg.sim_config(), &plan, &models)?;
        let mut groups: BTreeMap<(usize, usize, u64, Method), Vec<&hlwnet::eval::MetricsRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry((r.n_ue, r.n_f, r.seed, r.method)).or_default().push(r);
        }
        let table: Vec<EvalRow> = groups
            .into_iter()
            .map(|((n_ue, n_f, seed, method), rs)| {
                let n = rs.len() as f64;
                let mut secs: Vec<f64> = rs.iter().map(|r| r.seconds).collect();
                secs.sort_by(f64::total_cmp);
                EvalRow {
                    method,
                    n_ue,
                    n_f,
                    seed,
                    throughput_mbps: rs.iter().map(|r| r.throughput).sum::<f64>() / n / 1e6,
                    jain: rs.iter().map(|r| r.jain).sum::<f64>() / n,
                    utility_nats: rs.iter().map(|r| r.utility).sum::<f64>() / n,
                    latency_us_median: quantile(&secs, 0.5) * 1e6,
                    latency_us_p95: quantile(&secs, 0.95) * 1e6,
                }
            })
            .collect();
        let dir = self.out_dir()?;
        let path = dir.join("eval.csv");
        save_table(&path, &self.digest_hex(), &table)?;
        let summary = summarize(&rows);
        let summary_path = dir.join("eval_summary.csv");
        save_table(&summary_path, &self.digest_hex(), &summary)?;
        for s in &summary {
            println!(
                "{:>16} n_ue={:<3} n_f={} throughput_mbps={:.3} jain={:.4} utility={:.4}",
                s.method.name(),
                s.n_ue,
                s.n_f,
                s.throughput_mean / 1e6,
                s.jain_mean,
                s.utility_mean
            );
        }
        println!("wrote {} and {}", path.display(), summary_path.display());
        Ok(())
    }

    pub fn bench(&self, reps: usize, warmup: usize) -> Res {
        if reps == 0 {
            return Err(Failure::config("--reps must be positive"));
        }
        let plan = self.cfg.eval_plan();
        let models = self.load_models(&plan.methods, &plan.n_ue, &plan.n_f)?;
        let topo = self.cfg.topology()?;
        let sim = self.cfg.sim_config();
        let seed = plan.seeds[0];
        let mut table = Vec::new();
        for &n_ue in &plan.n_ue {
            for &n_f in &plan.n_f {
                let drops = make_drops(&topo, &sim.mobility, n_ue, n_f, 1, seed)?;
                let case = BenchCase::new(&drops[0], sim.solver, sim.norm_max_db)?;
                for &m in &plan.methods {
                    let model = m.model_kind().map(|k| &models[&(k, n_ue, n_f)]);
                    let s = case.time(m, model, warmup, reps)?;
                    let net_median = match m {
                        Method::UserCentric => case.time_network(m, model, warmup, reps)?.median,
                        _ => s.median,
                    };
                    println!(
                        "{:>16} n_ue={:<3} n_f={} median_us={:.3} p95_us={:.3} network_median_us={:.3}",
                        m.name(),
                        n_ue,
                        n_f,
                        s.median * 1e6,
                        s.p95 * 1e6,
                        net_median * 1e6
                    );
                    table.push(BenchRow {
                        method: m,
                        n_ue,
                        n_f,
                        seed,
                        latency_us_median: s.median * 1e6,
                        latency_us_p95: s.p95 * 1e6,
                        network_latency_us_median: net_median * 1e6,
                        repetitions: s.repetitions,
                    });
                }
            }
        }
        let path = self.out_dir()?.join("bench.csv");
        save_table(&path, &self.digest_hex(), &table)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    pub fn solve(&self, input: SolveInput<'_>, n_ue: Option<usize>, n_f: Option<usize>) -> Res {
        let topo = self.cfg.topology()?;
        let (capacity, assoc) = match input {
            SolveInput::Capacity { capacity, mask } => {
                let capacity = self.load_ap_matrix(capacity, "capacity", false)?;
                let mask = self.load_ap_matrix(mask, "mask", false)?;
                if mask.dim() != capacity.dim() {
                    return Err(Failure::other(format!(
                        "mask is {:?} but capacity is {:?}",
                        mask.dim(),
                        capacity.dim()
                    )));
                }
                if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
                    return Err(Failure::other("mask entries must be 0 or 1"));
                }
                (capacity, Association::from_mask(mask.mapv(|m| m == 1.0)))
            }
            SolveInput::Sinr(path) => {
                let n_f = self.subflows(n_f)?;
                let sinr = self.load_sinr(path)?;
                let capacity = capacity_matrix(&topo, &sinr)?;
                let channel = ChannelState { sinr, capacity };
                let assoc = mptcp_association(&channel, &topo, n_f)?;
                (channel.capacity, assoc)
            }
            SolveInput::Drop => {
                let n_f = self.subflows(n_f)?;
                let n_ue = n_ue.unwrap_or(self.cfg.dataset.n_ue);
                if n_ue == 0 {
                    return Err(Failure::config("--n-ue must be positive"));
                }
                let sim = self.cfg.sim_config();
                let drop = make_drops(&topo, &sim.mobility, n_ue, n_f, 1, self.cfg.dataset.seed)?.remove(0);
                let path = self.out_dir()?.join("sinr.csv");
                save_matrix(&path, &self.digest_hex(), &drop.channel.sinr)?;
                println!("wrote {}", path.display());
                (drop.channel.capacity, drop.assoc)
            }
        };
        let report = solve_pf(&capacity, &assoc, &self.cfg.solver)?;
        println!("sweeps={}", report.iterations);
        println!("kkt_residual={:e}", report.kkt_residual);
        println!("converged={}", report.converged);
        if !report.converged {
            return Err(Failure {
                code: EXIT_SOLVER,
                message: format!(
                    "solver stopped after {} sweeps at KKT residual {:e}",
                    report.iterations, report.kkt_residual
                ),
            });
        }
        self.report_allocation(&capacity, &assoc, &report.allocation, "allocation.csv")
    }

    pub fn predict(&self, sinr: &Path, kind: ModelKind, n_f: Option<usize>) -> Res {
        let topo = self.cfg.topology()?;
        let n_f = self.subflows(n_f)?;
        let sinr = self.load_sinr(sinr)?;
        let n_ue = sinr.ncols();
        let model = self.load_model(kind, n_ue, n_f)?;
        let capacity = capacity_matrix(&topo, &sinr)?;
        let channel = ChannelState { sinr, capacity };
        let assoc = mptcp_association(&channel, &topo, n_f)?;
        let x_c = encode_condition_input(&channel, &assoc, model.norm_max_db)?;
        let alloc = project_feasible(&model.predict_rows(&x_c)?, &assoc)?;
        self.report_allocation(&channel.capacity, &assoc, &alloc, &format!("allocation_{}.csv", kind.name()))
    }
}
