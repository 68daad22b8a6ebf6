//! Proportional-fair time allocation under a fixed association.
//!
//! Maximizes `sum_j ln(sum_i rho[i,j] * C[i,j])` subject to per-AP budgets
//! `sum_j rho[i,j] <= 1` and `0 <= rho <= 1`. The solver sweeps over APs; with
//! every other AP held fixed, AP `i` faces
//!
//! ```text
//! max sum_j ln(a_j + rho_j C_j)   s.t.  sum_j rho_j <= 1,  0 <= rho_j <= 1
//! ```
//!
//! whose KKT conditions give the water-filling form
//! `rho_j = clamp(1/nu - a_j / C_j, 0, 1)` with `nu` set so the budget binds.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::assoc::Association;
use crate::error::{Error, Result};

/// Time-resource coefficients `rho[(i, j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    pub rho: Array2<f64>,
}

pub const BUDGET_SLACK: f64 = 1e-9;

impl AllocationMatrix {
    pub fn zeros(n_aps: usize, n_ues: usize) -> Self {
        Self {
            rho: Array2::zeros((n_aps, n_ues)),
        }
    }

    pub fn ap_load(&self, ap: usize) -> f64 {
        self.rho.row(ap).sum()
    }

    /// Checks box constraints, the per-AP budget and zero coefficients off the association.
    pub fn is_feasible(&self, assoc: &Association) -> bool {
        if self.rho.dim() != assoc.chi().dim() {
            return false;
        }
        let boxed = self
            .rho
            .indexed_iter()
            .all(|((i, j), &r)| (0.0..=1.0).contains(&r) && (assoc.is_connected(i, j) || r == 0.0));
        boxed && (0..self.rho.nrows()).all(|i| self.ap_load(i) <= 1.0 + BUDGET_SLACK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Stop once a sweep improves the utility by less than this (nats).
    pub utility_tol: f64,
    /// ... and the KKT residual is at most this.
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            utility_tol: 1e-8,
            kkt_tol: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub allocation: AllocationMatrix,
    /// Sum of natural logs of the rates of the included UEs.
    pub utility: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// UEs with no positive-capacity link; they are left out of the objective
    /// and get all-zero coefficients.
    pub excluded_ues: Vec<usize>,
    /// Utility after initialization and after each sweep.
    pub utility_trace: Vec<f64>,
}

fn check_shapes(capacity: &Array2<f64>, assoc: &Association) -> Result<()> {
    if capacity.nrows() != assoc.n_aps() {
        return Err(Error::dim("capacity rows (APs)", assoc.n_aps(), capacity.nrows()));
    }
    if capacity.ncols() != assoc.n_ues() {
        return Err(Error::dim("capacity columns (UEs)", assoc.n_ues(), capacity.ncols()));
    }
    if capacity.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(Error::InvalidInput("capacities must be finite and non-negative".into()));
    }
    Ok(())
}

/// UEs without any connected positive-capacity link.
pub fn excluded_ues(capacity: &Array2<f64>, assoc: &Association) -> Vec<usize> {
    (0..assoc.n_ues())
        .filter(|&j| (0..assoc.n_aps()).all(|i| !assoc.is_connected(i, j) || capacity[(i, j)] <= 0.0))
        .collect()
}

/// `R_j = sum_i rho[i,j] C[i,j]` over connected links.
pub fn ue_rates(capacity: &Array2<f64>, assoc: &Association, rho: &Array2<f64>) -> Vec<f64> {
    (0..assoc.n_ues())
        .map(|j| {
            (0..assoc.n_aps())
                .filter(|&i| assoc.is_connected(i, j))
                .map(|i| rho[(i, j)] * capacity[(i, j)])
                .sum()
        })
        .collect()
}

/// Proportional-fair utility over the UEs that have a usable link. `-inf` when
/// such a UE ends up with zero rate.
pub fn pf_utility(capacity: &Array2<f64>, assoc: &Association, rho: &Array2<f64>) -> f64 {
    let excluded = excluded_ues(capacity, assoc);
    ue_rates(capacity, assoc, rho)
        .iter()
        .enumerate()
        .filter(|(j, _)| !excluded.contains(j))
        .map(|(_, r)| r.ln())
        .sum()
}

/// Largest violation of the optimality conditions of the PF program at `rho`.
///
/// Primal terms are box, budget and off-association violations. For each AP,
/// with marginals `m_j = C[i,j] / R_j`, stationarity requires a level `nu`
/// with `m_j <= nu` wherever `rho < 1` and `m_j >= nu` wherever `rho > 0`;
/// the relative gap `(lo - hi) / lo` between those bounds is the dual term. An
/// AP with spare budget must have every coefficient with positive marginal at 1;
/// the spare budget it could still hand out is the complementarity term.
pub fn kkt_residual(capacity: &Array2<f64>, assoc: &Association, rho: &Array2<f64>) -> f64 {
    let (n_a, n_u) = rho.dim();
    let mut included = vec![true; n_u];
    for j in excluded_ues(capacity, assoc) {
        included[j] = false;
    }
    let rates = ue_rates(capacity, assoc, rho);
    let mut res: f64 = 0.0;
    for i in 0..n_a {
        let mut load = 0.0;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut unsaturated_gap: f64 = 0.0;
        for j in 0..n_u {
            let r = rho[(i, j)];
            res = res.max(-r).max(r - 1.0);
            load += r;
            if !assoc.is_connected(i, j) || !included[j] {
                res = res.max(r.abs());
                continue;
            }
            if rates[j] <= 0.0 {
                res = res.max(1.0);
                continue;
            }
            let m = capacity[(i, j)] / rates[j];
            if r < 1.0 {
                lo = lo.max(m);
                if m > 0.0 {
                    unsaturated_gap = unsaturated_gap.max(1.0 - r);
                }
            }
            if r > 0.0 {
                hi = hi.min(m);
            }
        }
        res = res.max(load - 1.0);
        if load < 1.0 {
            res = res.max((1.0 - load).min(unsaturated_gap));
        }
        if lo > hi && lo > 0.0 {
            res = res.max((lo - hi) / lo);
        }
    }
    res
}

/// Solves one AP's water-filling subproblem in place.
///
/// `offsets[k] = a_k / C_k >= 0` for the AP's participating links; writes the
/// coefficients `clamp(t - offsets[k], 0, 1)` where the level `t = 1/nu` makes
/// the budget bind. The load `g(t) = sum_k clamp(t - offsets[k], 0, 1)` is
/// piecewise linear and non-decreasing with kinks at `offsets[k]` and
/// `offsets[k] + 1`, so the level is found exactly by walking the sorted kinks.
fn water_fill(offsets: &[f64], out: &mut [f64]) {
    let n = offsets.len();
    if n == 0 {
        return;
    }
    if n == 1 {
        // budget cannot bind with a single link: nu -> 0+
        out[0] = 1.0;
        return;
    }
    let mut kinks: Vec<f64> = offsets.iter().flat_map(|&b| [b, b + 1.0]).collect();
    kinks.sort_by(f64::total_cmp);
    let load = |t: f64| -> f64 { offsets.iter().map(|b| (t - b).clamp(0.0, 1.0)).sum() };

    // g(min offset) = 0 and g(max offset + 1) = n >= 2, so a crossing exists.
    let mut level = kinks[kinks.len() - 1];
    let mut prev_t = kinks[0];
    let mut prev_g = 0.0;
    for &t in &kinks[1..] {
        let g = load(t);
        if g >= 1.0 {
            level = if g > prev_g {
                prev_t + (1.0 - prev_g) * (t - prev_t) / (g - prev_g)
            } else {
                t
            };
            break;
        }
        prev_t = t;
        prev_g = g;
    }

    // Re-solve on the active piece to cancel interpolation rounding.
    let (mut n_int, mut n_full, mut sum_int) = (0usize, 0usize, 0.0);
    for &b in offsets {
        let v = level - b;
        if v >= 1.0 {
            n_full += 1;
        } else if v > 0.0 {
            n_int += 1;
            sum_int += b;
        }
    }
    if n_int > 0 {
        let exact = (1.0 - n_full as f64 + sum_int) / n_int as f64;
        if (load(exact) - 1.0).abs() <= (load(level) - 1.0).abs() {
            level = exact;
        }
    }
    for (o, &b) in out.iter_mut().zip(offsets) {
        *o = (level - b).clamp(0.0, 1.0);
    }
    let total: f64 = out.iter().sum();
    if total > 1.0 {
        for o in out.iter_mut() {
            *o /= total;
        }
    }
}

/// Participating links (included UE, connected, positive capacity).
struct Links {
    by_ap: Vec<Vec<(usize, f64)>>,
    by_ue: Vec<Vec<(usize, f64)>>,
    included: Vec<bool>,
}

impl Links {
    fn new(capacity: &Array2<f64>, assoc: &Association, excluded: &[usize]) -> Self {
        let (n_a, n_u) = capacity.dim();
        let mut included = vec![true; n_u];
        for &j in excluded {
            included[j] = false;
        }
        let mut by_ap = vec![Vec::new(); n_a];
        let mut by_ue = vec![Vec::new(); n_u];
        for i in 0..n_a {
            for j in 0..n_u {
                let c = capacity[(i, j)];
                if included[j] && assoc.is_connected(i, j) && c > 0.0 {
                    by_ap[i].push((j, c));
                    by_ue[j].push((i, c));
                }
            }
        }
        Self { by_ap, by_ue, included }
    }

    fn rates(&self, rho: &Array2<f64>) -> Vec<f64> {
        self.by_ue
            .iter()
            .enumerate()
            .map(|(j, links)| links.iter().map(|&(i, c)| rho[(i, j)] * c).sum())
            .collect()
    }

    fn utility(&self, rho: &Array2<f64>) -> f64 {
        self.rates(rho)
            .iter()
            .zip(&self.included)
            .filter(|(_, &inc)| inc)
            .map(|(r, _)| r.ln())
            .sum()
    }
}

const MAX_EXTRAPOLATION: f64 = 1024.0;

/// Block-coordinate water-filling for the proportional-fair program.
///
/// Starts from an equal split of each AP over its usable links. Each sweep
/// re-solves every AP's subproblem exactly; the sweep is followed by a
/// safeguarded extrapolation along the sweep's net displacement, accepted only
/// when it stays feasible and raises the utility, so the utility never
/// decreases from one sweep to the next.
pub fn solve_pf(capacity: &Array2<f64>, assoc: &Association, opts: &SolverOptions) -> Result<SolveReport> {
    check_shapes(capacity, assoc)?;
    let (n_a, n_u) = capacity.dim();
    let excluded = excluded_ues(capacity, assoc);
    let links = Links::new(capacity, assoc, &excluded);

    let mut rho = Array2::<f64>::zeros((n_a, n_u));
    for (i, ues) in links.by_ap.iter().enumerate() {
        let share = 1.0 / ues.len().max(1) as f64;
        for &(j, _) in ues {
            rho[(i, j)] = share;
        }
    }

    let mut utility = links.utility(&rho);
    let mut trace = vec![utility];
    let mut converged = false;
    let mut sweeps = 0;
    let mut kkt = kkt_residual(capacity, assoc, &rho);
    let mut offsets = Vec::new();
    let mut fresh = Vec::new();
    let mut accel = 1.0;

    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let start = rho.clone();
        let mut rates = links.rates(&rho);
        for (i, ues) in links.by_ap.iter().enumerate() {
            if ues.is_empty() {
                continue;
            }
            offsets.clear();
            for &(j, c) in ues {
                let others = (rates[j] - rho[(i, j)] * c).max(0.0);
                offsets.push(others / c);
            }
            fresh.resize(ues.len(), 0.0);
            water_fill(&offsets, &mut fresh);
            for (&(j, c), &r) in ues.iter().zip(fresh.iter()) {
                rates[j] += (r - rho[(i, j)]) * c;
                rho[(i, j)] = r;
            }
        }
        cancel_cycles(&links, capacity, &mut rho);
        let mut next = links.utility(&rho);
        if let Some((candidate, value)) = extrapolate(&links, &start, &rho, accel) {
            if value > next {
                rho = candidate;
                next = value;
                accel = (accel * 2.0).min(MAX_EXTRAPOLATION);
            } else {
                accel = (accel / 2.0).max(1.0);
            }
        }
        let gain = next - utility;
        utility = next;
        trace.push(utility);
        kkt = kkt_residual(capacity, assoc, &rho);
        if gain < opts.utility_tol && kkt <= opts.kkt_tol {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        allocation: AllocationMatrix { rho },
        utility,
        kkt_residual: kkt,
        iterations: sweeps,
        converged,
        excluded_ues: excluded,
        utility_trace: trace,
    })
}

const MAX_CYCLE_PUSHES: usize = 256;
const DEGENERATE_GAIN: f64 = 1e-12;

fn find_root(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Path between two nodes of a forest given as adjacency lists.
fn forest_path(adj: &[Vec<usize>], from: usize, to: usize) -> Vec<usize> {
    let mut prev = vec![usize::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::from([from]);
    prev[from] = from;
    while let Some(v) = queue.pop_front() {
        if v == to {
            break;
        }
        for &w in &adj[v] {
            if prev[w] == usize::MAX {
                prev[w] = v;
                queue.push_back(w);
            }
        }
    }
    let mut path = vec![to];
    let mut v = to;
    while v != from {
        v = prev[v];
        path.push(v);
    }
    path.reverse();
    path
}

/// Removes cycles from the support of `rho` (links with positive share).
///
/// For a cycle `A1 - U1 - A2 - U2 - ... - Ak - Uk - A1`, moving time `x` from
/// `Uk` to `U1` on `A1`, compensating each `Um` on `A(m+1)` so its rate stays
/// put, changes only `Uk`'s rate, by `x * C[A1,Uk] * (g - 1)` with gain
/// `g = prod_m C[Am,Um] / C[A(m+1),Um]`. Pushing in the direction with `g > 1`
/// until a share hits zero strictly raises the utility and breaks the cycle.
/// Block-coordinate sweeps otherwise crawl along such cycles when `g` is
/// close to 1.
fn cancel_cycles(links: &Links, capacity: &Array2<f64>, rho: &mut Array2<f64>) -> usize {
    let n_a = links.by_ap.len();
    let n_nodes = n_a + links.by_ue.len();
    let mut pushes = 0;
    'restart: while pushes < MAX_CYCLE_PUSHES {
        let mut parent: Vec<usize> = (0..n_nodes).collect();
        let mut adj = vec![Vec::new(); n_nodes];
        for (i, ues) in links.by_ap.iter().enumerate() {
            for &(j, _) in ues {
                if rho[(i, j)] <= 0.0 {
                    continue;
                }
                let (ri, rj) = (find_root(&mut parent, i), find_root(&mut parent, n_a + j));
                if ri != rj {
                    parent[ri] = rj;
                    adj[i].push(n_a + j);
                    adj[n_a + j].push(i);
                    continue;
                }
                // cycle: A1 = i, U1 = j, then the forest path from j back to i
                let path = forest_path(&adj, n_a + j, i);
                let mut aps = vec![i];
                let mut ues_c = vec![j];
                for pair in path[1..path.len() - 1].chunks(2) {
                    aps.push(pair[0]);
                    ues_c.push(pair[1] - n_a);
                }
                let k = aps.len();
                let gain: f64 = (0..k)
                    .map(|m| capacity[(aps[m], ues_c[m])] / capacity[(aps[(m + 1) % k], ues_c[m])])
                    .product();
                if (gain - 1.0).abs() <= DEGENERATE_GAIN {
                    continue;
                }
                if gain < 1.0 {
                    // traverse the other way round: A1, Uk, Ak, U(k-1), ..., A2, U1
                    let rev_aps: Vec<usize> = std::iter::once(aps[0]).chain(aps[1..].iter().rev().copied()).collect();
                    let rev_ues: Vec<usize> = ues_c.iter().rev().copied().collect();
                    aps = rev_aps;
                    ues_c = rev_ues;
                }
                // per unit of x: increases on (Am, Um) by f[m], decreases on
                // (A(m+1), Um) by f[m+1] for m < k and on (A1, Uk) by 1
                let mut f = vec![1.0; k];
                for m in 1..k {
                    f[m] = f[m - 1] * capacity[(aps[m - 1], ues_c[m - 1])] / capacity[(aps[m], ues_c[m - 1])];
                }
                let mut step = rho[(aps[0], ues_c[k - 1])];
                let mut binding = (aps[0], ues_c[k - 1]);
                for m in 0..k - 1 {
                    let limit = rho[(aps[m + 1], ues_c[m])] / f[m + 1];
                    if limit < step {
                        step = limit;
                        binding = (aps[m + 1], ues_c[m]);
                    }
                }
                if step <= 0.0 {
                    continue;
                }
                for m in 0..k {
                    rho[(aps[m], ues_c[m])] += step * f[m];
                }
                for m in 0..k - 1 {
                    let e = (aps[m + 1], ues_c[m]);
                    rho[e] = (rho[e] - step * f[m + 1]).max(0.0);
                }
                let e = (aps[0], ues_c[k - 1]);
                rho[e] = (rho[e] - step).max(0.0);
                rho[binding] = 0.0;
                pushes += 1;
                continue 'restart;
            }
        }
        break;
    }
    pushes
}

/// Projected extrapolation `P(current + beta * (current - start))`: each
/// coefficient is clamped to `[0, 1]` and any AP whose load then exceeds 1 is
/// scaled back onto its budget. `None` when the sweep did not move.
fn extrapolate(links: &Links, start: &Array2<f64>, current: &Array2<f64>, beta: f64) -> Option<(Array2<f64>, f64)> {
    let mut candidate = current.clone();
    let mut moved = false;
    for (i, ues) in links.by_ap.iter().enumerate() {
        let mut load = 0.0;
        for &(j, _) in ues {
            let d = current[(i, j)] - start[(i, j)];
            moved |= d != 0.0;
            let v = (current[(i, j)] + beta * d).clamp(0.0, 1.0);
            candidate[(i, j)] = v;
            load += v;
        }
        if load > 1.0 {
            for &(j, _) in ues {
                candidate[(i, j)] /= load;
            }
        }
    }
    if !moved {
        return None;
    }
    let value = links.utility(&candidate);
    Some((candidate, value))
}

/// Upper bound on points enumerated by one pass of the exhaustive search.
const BRUTE_FORCE_COARSE_POINTS: f64 = 2.0e5;

/// Exhaustive grid search over per-AP allocations, for cross-checking [`solve_pf`]
/// on instances with at most 3 APs and 3 UEs.
///
/// Because the objective never decreases when a coefficient grows, each AP's
/// allocation is searched on the face `sum_j rho[i,j] = 1` of its simplex,
/// sampled at multiples of `grid_step` (the last coefficient takes the
/// remainder). A full grid at `grid_step` is too large beyond a couple of
/// free coordinates, so the search enumerates the whole simplex grid at the
/// finest power-of-two multiple of `grid_step` that fits the point budget,
/// then repeatedly enumerates a full window of `+-W` cells around the best
/// point while halving the cell size down to `grid_step`, and finally repeats
/// the finest window until the best point stops moving.
pub fn brute_force_pf(capacity: &Array2<f64>, assoc: &Association, grid_step: f64) -> Result<SolveReport> {
    check_shapes(capacity, assoc)?;
    let (n_a, n_u) = capacity.dim();
    if n_a > 3 || n_u > 3 {
        return Err(Error::InvalidInput(format!(
            "brute force is limited to 3 APs x 3 UEs, got {n_a} x {n_u}"
        )));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidInput(format!("grid_step must lie in (0, 1], got {grid_step}")));
    }
    let excluded = excluded_ues(capacity, assoc);
    let units = (1.0 / grid_step + 1e-9).floor() as i64;
    let blocks: Vec<Vec<usize>> = (0..n_a)
        .map(|i| (0..n_u).filter(|&j| assoc.is_connected(i, j) && !excluded.contains(&j)).collect())
        .collect();
    // free coordinates: all but the last UE of each block
    let free: Vec<(usize, usize)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(i, ues)| ues.iter().take(ues.len().saturating_sub(1)).map(move |&j| (i, j)))
        .collect();
    let dims = free.len();

    let to_rho = |point: &[i64]| -> Option<Array2<f64>> {
        let mut rho = Array2::<f64>::zeros((n_a, n_u));
        let mut used = vec![0i64; n_a];
        for (&(i, j), &u) in free.iter().zip(point) {
            if u < 0 {
                return None;
            }
            used[i] += u;
            rho[(i, j)] = u as f64 * grid_step;
        }
        for (i, ues) in blocks.iter().enumerate() {
            if used[i] > units {
                return None;
            }
            if let Some(&last) = ues.last() {
                rho[(i, last)] = 1.0 - used[i] as f64 * grid_step;
            }
        }
        Some(rho)
    };
    let score = |point: &[i64]| -> Option<(f64, Array2<f64>)> {
        let rho = to_rho(point)?;
        Some((pf_utility(capacity, assoc, &rho), rho))
    };

    let mut coarse = 1i64;
    while ((units / coarse + 1) as f64).powi(dims as i32) > BRUTE_FORCE_COARSE_POINTS {
        coarse *= 2;
    }

    let mut best_point = vec![0i64; dims];
    let mut best = score(&best_point).expect("origin is feasible");
    let mut evaluated = 1usize;
    let mut consider = |p: &[i64], best: &mut (f64, Array2<f64>), best_point: &mut Vec<i64>| {
        if let Some(s) = score(p) {
            evaluated += 1;
            if s.0 > best.0 {
                *best = s;
                best_point.copy_from_slice(p);
            }
        }
    };

    // full simplex grid at the coarse cell size
    let per_axis = units / coarse + 1;
    let mut idx = vec![0i64; dims];
    let mut p = vec![0i64; dims];
    'outer: loop {
        for (d, &k) in idx.iter().enumerate() {
            p[d] = k * coarse;
        }
        consider(&p, &mut best, &mut best_point);
        for i in idx.iter_mut() {
            *i += 1;
            if *i < per_axis {
                continue 'outer;
            }
            *i = 0;
        }
        break;
    }

    let radius: i64 = if dims <= 4 { 3 } else { 2 };
    let mut cell = coarse;
    let mut stable_passes = 0;
    while cell > 1 || stable_passes < 64 {
        if cell > 1 {
            cell /= 2;
        }
        let center = best_point.clone();
        let before = best.0;
        let span = 2 * radius + 1;
        let mut off = vec![0i64; dims];
        'win: loop {
            for d in 0..dims {
                p[d] = center[d] + (off[d] - radius) * cell;
            }
            consider(&p, &mut best, &mut best_point);
            for o in off.iter_mut() {
                *o += 1;
                if *o < span {
                    continue 'win;
                }
                *o = 0;
            }
            break;
        }
        if cell == 1 {
            if best.0 <= before {
                break;
            }
            stable_passes += 1;
        }
    }

    let (utility, rho) = best;
    let kkt = kkt_residual(capacity, assoc, &rho);
    Ok(SolveReport {
        allocation: AllocationMatrix { rho },
        utility,
        kkt_residual: kkt,
        iterations: evaluated,
        converged: true,
        excluded_ues: excluded,
        utility_trace: vec![utility],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn full(n_a: usize, n_u: usize) -> Association {
        Association::from_mask(Array2::from_elem((n_a, n_u), true))
    }

    #[test]
    fn single_ap_equal_split() {
        let c = array![[100e6, 50e6]];
        let r = solve_pf(&c, &full(1, 2), &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.allocation.rho[(0, 0)] - 0.5).abs() < 1e-9);
        assert!((r.allocation.rho[(0, 1)] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn lone_ue_gets_every_budget() {
        let c = array![[30e6], [70e6]];
        let r = solve_pf(&c, &full(2, 1), &SolverOptions::default()).unwrap();
        assert_eq!(r.allocation.rho, array![[1.0], [1.0]]);
    }

    #[test]
    fn symmetric_two_by_two() {
        let c = Array2::from_elem((2, 2), 80e6);
        let r = solve_pf(&c, &full(2, 2), &SolverOptions::default()).unwrap();
        for &v in r.allocation.rho.iter() {
            assert!((v - 0.5).abs() < 1e-9);
        }
        assert!(r.kkt_residual <= 1e-9);
    }

    #[test]
    fn near_degenerate_cycle_converges_fast() {
        let c = array![[424.7e6, 428.85e6, 300e6], [123.9e6, 125.09e6, 10e6], [5e6, 140e6, 90e6]];
        let r = solve_pf(&c, &full(3, 3), &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.iterations < 200, "{} sweeps", r.iterations);
        assert!(r.kkt_residual <= 1e-6);
    }

    #[test]
    fn cycle_push_keeps_budgets_and_raises_utility() {
        let c = array![[3.0, 1.0], [1.0, 2.0]];
        let assoc = full(2, 2);
        let links = Links::new(&c, &assoc, &[]);
        let mut rho = Array2::from_elem((2, 2), 0.5);
        let before = links.utility(&rho);
        assert_eq!(cancel_cycles(&links, &c, &mut rho), 1);
        assert!(links.utility(&rho) > before);
        for i in 0..2 {
            assert!((rho.row(i).sum() - 1.0).abs() < 1e-12);
        }
        assert!(rho.iter().any(|&v| v == 0.0));
    }

    #[test]
    fn zero_capacity_ue_is_excluded() {
        let c = array![[100e6, 0.0], [50e6, 0.0]];
        let r = solve_pf(&c, &full(2, 2), &SolverOptions::default()).unwrap();
        assert_eq!(r.excluded_ues, vec![1]);
        assert_eq!(r.allocation.rho[(0, 1)], 0.0);
        assert_eq!(r.allocation.rho[(1, 1)], 0.0);
        assert!(r.utility.is_finite());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let c = array![[100e6, 20e6, 60e6], [10e6, 90e6, 40e6]];
        let opts = SolverOptions { max_sweeps: 1, utility_tol: 0.0, kkt_tol: 0.0 };
        let r = solve_pf(&c, &full(2, 3), &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let c = array![[1.0, 2.0]];
        assert!(solve_pf(&c, &full(2, 2), &SolverOptions::default()).is_err());
    }

    #[test]
    fn kkt_flags_infeasible_budget() {
        let c = array![[100e6, 50e6]];
        let rho = array![[0.75, 0.75]];
        assert!(kkt_residual(&c, &full(1, 2), &rho) >= 0.5);
    }

    #[test]
    fn kkt_flags_perturbed_optimum() {
        let c = array![[100e6, 20e6, 60e6], [10e6, 90e6, 40e6]];
        let assoc = full(2, 3);
        let r = solve_pf(&c, &assoc, &SolverOptions::default()).unwrap();
        for delta in [0.1, -0.1] {
            let mut rho = r.allocation.rho.clone();
            rho[(0, 2)] = (rho[(0, 2)] + delta).clamp(0.0, 1.0);
            assert!(kkt_residual(&c, &assoc, &rho) > 1e-3);
        }
    }

    #[test]
    fn brute_force_coarse_enumeration() {
        let c = array![[100e6, 50e6]];
        let r = brute_force_pf(&c, &full(1, 2), 0.5).unwrap();
        assert_eq!(r.allocation.rho, array![[0.5, 0.5]]);
        let r = brute_force_pf(&c, &full(1, 2), 0.01).unwrap();
        assert!((r.allocation.rho[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn brute_force_dimension_guard() {
        let c = Array2::from_elem((4, 2), 1.0);
        assert!(brute_force_pf(&c, &full(4, 2), 0.1).is_err());
    }

    #[test]
    fn water_fill_respects_budget_and_box() {
        let mut out = vec![0.0; 4];
        water_fill(&[0.0, 0.1, 2.0, 0.05], &mut out);
        let total: f64 = out.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(out[2], 0.0);
        // interior coefficients share one level
        let level = out[0] + 0.0;
        assert!((out[1] + 0.1 - level).abs() < 1e-12);
        assert!((out[3] + 0.05 - level).abs() < 1e-12);
    }

    fn bisection_level(offsets: &[f64]) -> f64 {
        let load = |t: f64| -> f64 { offsets.iter().map(|b| (t - b).clamp(0.0, 1.0)).sum() };
        let mut lo = offsets.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if load(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    proptest::proptest! {
        #[test]
        fn water_fill_matches_bisection(offsets in proptest::collection::vec(0.0f64..5.0, 2..12)) {
            let mut out = vec![0.0; offsets.len()];
            water_fill(&offsets, &mut out);
            let level = bisection_level(&offsets);
            for (b, x) in offsets.iter().zip(&out) {
                proptest::prop_assert!((x - (level - b).clamp(0.0, 1.0)).abs() < 1e-9);
            }
        }
    }
}
