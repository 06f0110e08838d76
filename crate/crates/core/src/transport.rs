//! Exact discrete optimal transport via the transportation simplex.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::distributions::DiscreteDistribution;
use crate::{Error, Result};

/// Largest |p|·|q| accepted by [`wasserstein_bruteforce`].
pub const BRUTEFORCE_MAX_CELLS: usize = 64;
/// Basis enumeration is used while the number of candidate cell subsets stays below this.
const ENUMERATION_LIMIT: f64 = 2.0e5;
const MARGINAL_TOL: f64 = 1e-9;

/// Optimal coupling between two discrete distributions, stored sparsely.
#[derive(Debug, Clone, Serialize)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    /// (source index, target index, mass, unit cost) for every positive entry.
    entries: Vec<(usize, usize, f64, f64)>,
    cost: f64,
    min_reduced_cost: f64,
}

impl TransportPlan {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64, f64)] {
        &self.entries
    }

    /// Σ γ_ij ‖c_i − c̃_j‖^ρ.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Smallest reduced cost at termination, relative to the largest unit cost.
    pub fn min_reduced_cost(&self) -> f64 {
        self.min_reduced_cost
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.rows, self.cols);
        for &(i, j, mass, _) in &self.entries {
            g[(i, j)] += mass;
        }
        g
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, mass, _) in &self.entries {
            s[i] += mass;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, mass, _) in &self.entries {
            s[j] += mass;
        }
        s
    }

    /// CSV dump with columns i, j, mass, cost.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "mass", "cost"])?;
        for &(i, j, mass, c) in &self.entries {
            w.write_record([i.to_string(), j.to_string(), format!("{mass:.16e}"), format!("{c:.16e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ‖x − y‖^ρ, avoiding the square root for even ρ.
pub fn ground_cost(x: &DVector<f64>, y: &DVector<f64>, rho: u32) -> f64 {
    let sq = (x - y).norm_squared();
    match rho {
        2 => sq,
        r if r % 2 == 0 => sq.powi((r / 2) as i32),
        1 => sq.sqrt(),
        r => sq.sqrt().powi(r as i32),
    }
}

fn check_pair(p: &DiscreteDistribution, q: &DiscreteDistribution, rho: u32) -> Result<()> {
    if rho < 1 {
        return Err(Error::InvalidArgument("Wasserstein order must be at least 1".into()));
    }
    if p.is_empty() || q.is_empty() {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    Ok(())
}

/// Exact ρ-Wasserstein distance between discrete distributions and an optimal plan.
pub fn wasserstein_discrete(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    rho: u32,
) -> Result<(f64, TransportPlan)> {
    check_pair(p, q, rho)?;
    let rows: Vec<usize> = (0..p.len()).filter(|&i| p.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..q.len()).filter(|&j| q.weights()[j] > 0.0).collect();
    let cost = DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
        ground_cost(&p.locations()[rows[a]], &q.locations()[cols[b]], rho)
    });
    let supply: Vec<f64> = rows.iter().map(|&i| p.weights()[i]).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| q.weights()[j]).collect();
    let mut plan = solve_transport(&supply, &demand, &cost)?;
    plan.rows = p.len();
    plan.cols = q.len();
    for e in &mut plan.entries {
        e.0 = rows[e.0];
        e.1 = cols[e.1];
    }
    let distance = plan.cost.max(0.0).powf(1.0 / f64::from(rho));
    Ok((distance, plan))
}

/// Solves min Σ c_ij x_ij subject to row sums `supply`, column sums `demand`, x ≥ 0.
///
/// Primal network simplex on the bipartite graph with an artificial root,
/// block-search pricing and a strongly feasible spanning tree (ties on the
/// leaving arc are broken so that zero-flow tree arcs point away from the
/// root), which rules out cycling.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> Result<TransportPlan> {
    let (n, m) = (supply.len(), demand.len());
    if n == 0 || m == 0 {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    if cost.nrows() != n || cost.ncols() != m {
        return Err(Error::DimensionMismatch { expected: n * m, got: cost.len() });
    }
    if supply.iter().chain(demand).any(|w| !(w.is_finite() && *w >= 0.0)) || cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("transport data must be finite and nonnegative".into()));
    }
    let (sa, sb): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (sa - sb).abs() > MARGINAL_TOL * sa.max(sb).max(1.0) {
        return Err(Error::InvalidDistribution(format!("marginal totals differ: {sa} vs {sb}")));
    }
    let scale = cost.max().max(f64::MIN_POSITIVE);
    // Balance the demand side exactly against the supply total.
    let demand: Vec<f64> = demand.iter().map(|b| b * sa / sb.max(f64::MIN_POSITIVE)).collect();
    let mut ns = NetworkSimplex::new(supply, &demand, cost, scale);
    ns.run()?;
    let min_rc = ns.min_reduced_cost();
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let x = ns.flow[i * m + j];
            if x > 0.0 {
                entries.push((i, j, x, cost[(i, j)]));
            }
        }
    }
    let total = entries.iter().map(|e| e.2 * e.3).sum();
    Ok(TransportPlan { rows: n, cols: m, entries, cost: total, min_reduced_cost: min_rc })
}

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;
const NONE: usize = usize::MAX;
/// Flows below this fraction of the total mass are rounding residue and are set to zero.
const SNAP: f64 = 1e-14;

/// Uncapacitated network simplex over supply nodes 0..n, demand nodes
/// n..n+m and a root node n+m. Arc `i*m + j` joins supply i to demand j;
/// arc `n*m + u` is the artificial arc between node u and the root.
struct NetworkSimplex {
    node_num: usize,
    search_arcs: usize,
    source: Vec<u32>,
    target: Vec<u32>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,
    block_size: usize,
    next_arc: usize,
    eps: f64,
    snap: f64,
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

impl NetworkSimplex {
    fn new(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>, scale: f64) -> Self {
        let (n, m) = (supply.len(), demand.len());
        let node_num = n + m;
        let search_arcs = n * m;
        let all_arcs = search_arcs + node_num;
        let root = node_num;
        let mut source = Vec::with_capacity(all_arcs);
        let mut target = Vec::with_capacity(all_arcs);
        let mut c = Vec::with_capacity(all_arcs);
        for i in 0..n {
            for j in 0..m {
                source.push(i as u32);
                target.push((n + j) as u32);
                c.push(cost[(i, j)] / scale);
            }
        }
        let art_cost = 2.0 * (node_num as f64 + 1.0);
        let mut s = Self {
            node_num,
            search_arcs,
            source,
            target,
            cost: c,
            flow: vec![0.0; all_arcs],
            state: vec![STATE_LOWER; all_arcs],
            pi: vec![0.0; node_num + 1],
            parent: vec![root; node_num + 1],
            pred: vec![NONE; node_num + 1],
            pred_dir: vec![DIR_UP; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![1; node_num + 1],
            last_succ: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            block_size: ((search_arcs as f64).sqrt() as usize).max(10),
            next_arc: 0,
            eps: (1e-14 * art_cost).max(1e-11),
            snap: SNAP * supply.iter().sum::<f64>(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
        };
        for u in 0..node_num {
            let e = search_arcs + u;
            s.parent[u] = root;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state[e] = STATE_TREE;
            if u < n {
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.source.push(u as u32);
                s.target.push(root as u32);
                s.flow[e] = supply[u];
                s.cost.push(0.0);
            } else {
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art_cost;
                s.source.push(root as u32);
                s.target.push(u as u32);
                s.flow[e] = demand[u - n];
                s.cost.push(art_cost);
            }
        }
        s.parent[root] = NONE;
        s.pred[root] = NONE;
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = node_num + 1;
        s.last_succ[root] = root - 1;
        s
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.source[e] as usize] - self.pi[self.target[e] as usize]
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.eps;
        let mut found = false;
        let mut cnt = self.block_size;
        let total = self.search_arcs;
        let mut e = self.next_arc;
        for _ in 0..total {
            if self.state[e] == STATE_LOWER {
                let c = self.reduced(e);
                if c < min {
                    min = c;
                    self.in_arc = e;
                    found = true;
                }
            }
            e += 1;
            if e == total {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    break;
                }
                cnt = self.block_size;
            }
        }
        self.next_arc = e;
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc] as usize;
        let mut v = self.target[self.in_arc] as usize;
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Leaving arc: the last blocking arc met when walking the cycle in the
    /// direction of the entering arc, starting from the join node.
    fn find_leaving_arc(&mut self) -> bool {
        let first = self.source[self.in_arc] as usize;
        let second = self.target[self.in_arc] as usize;
        self.delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc] as usize;
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * val;
                if self.flow[e] < self.snap {
                    self.flow[e] = 0.0;
                }
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc] as usize;
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * val;
                if self.flow[e] < self.snap {
                    self.flow[e] = 0.0;
                }
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        self.flow[out] = 0.0;
        self.state[out] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let (u_in, v_in, u_out, join) = (self.u_in, self.v_in, self.u_out, self.join);
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] as usize { DIR_UP } else { DIR_DOWN };
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue =
                if old_rev_thread == v_in { self.thread[old_last_succ] } else { self.thread[v_in] };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;
            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for idx in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[idx];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }
            let mut tmp_sc = 0isize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] as isize - self.succ_num[p] as isize;
                self.succ_num[u] = tmp_sc as usize;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] as usize { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }
        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let (u_in, v_in) = (self.u_in, self.v_in);
        let sigma = self.pi[v_in] - self.pi[u_in] - f64::from(self.pred_dir[u_in]) * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self) -> Result<()> {
        let max_iter = 50 * (self.search_arcs + self.node_num) + 100_000;
        for _ in 0..max_iter {
            if !self.find_entering_arc() {
                let residual: f64 = self.flow[self.search_arcs..].iter().sum();
                if residual > 1e-9 * (1.0 + self.snap / SNAP) {
                    return Err(Error::Numerical(format!("transport left {residual} mass on artificial arcs")));
                }
                return Ok(());
            }
            self.find_join_node();
            if !self.find_leaving_arc() || !self.delta.is_finite() {
                return Err(Error::Numerical("unbounded transport pivot".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
        }
        Err(Error::Numerical("transport simplex did not converge".into()))
    }

    /// Smallest reduced cost over the real arcs, in units of the largest cost.
    fn min_reduced_cost(&self) -> f64 {
        (0..self.search_arcs).map(|e| self.reduced(e)).fold(f64::INFINITY, f64::min)
    }
}

/// Reference solver for small instances, independent of [`wasserstein_discrete`].
///
/// Enumerates every spanning-tree basis of the transportation polytope when
/// that is cheap, otherwise runs a dense two-phase tableau simplex with
/// Bland's rule.
pub fn wasserstein_bruteforce(p: &DiscreteDistribution, q: &DiscreteDistribution, rho: u32) -> Result<f64> {
    check_pair(p, q, rho)?;
    let (n, m) = (p.len(), q.len());
    if n * m > BRUTEFORCE_MAX_CELLS {
        return Err(Error::TooLarge(format!("{n}x{m} exceeds {BRUTEFORCE_MAX_CELLS} cells")));
    }
    let cost: Vec<f64> = (0..n * m)
        .map(|idx| ground_cost(&p.locations()[idx / m], &q.locations()[idx % m], rho))
        .collect();
    let total = if log_binomial(n * m, n + m - 1) <= ENUMERATION_LIMIT.ln() {
        enumerate_bases(p.weights(), q.weights(), &cost)
    } else {
        dense_simplex(p.weights(), q.weights(), &cost)?
    };
    Ok(total.max(0.0).powf(1.0 / f64::from(rho)))
}

fn log_binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

fn enumerate_bases(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let k = n + m - 1;
    let cells = n * m;
    let mut best = f64::INFINITY;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        if let Some(flow) = tree_flow(a, b, &pick, m) {
            let c: f64 = pick.iter().zip(&flow).map(|(&idx, x)| cost[idx] * x).sum();
            best = best.min(c);
        }
        // next combination
        let mut pos = k;
        loop {
            if pos == 0 {
                return best;
            }
            pos -= 1;
            if pick[pos] < cells - k + pos {
                break;
            }
            if pos == 0 && pick[0] >= cells - k {
                return best;
            }
        }
        pick[pos] += 1;
        for t in pos + 1..k {
            pick[t] = pick[t - 1] + 1;
        }
    }
}

/// Flows on a candidate basis, or `None` if the cells do not form a spanning
/// tree or the flows are infeasible.
fn tree_flow(a: &[f64], b: &[f64], pick: &[usize], m: usize) -> Option<Vec<f64>> {
    let n = a.len();
    let nodes = n + m;
    let mut uf: Vec<usize> = (0..nodes).collect();
    fn find(uf: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while uf[r] != r {
            r = uf[r];
        }
        let mut y = x;
        while uf[y] != r {
            let next = uf[y];
            uf[y] = r;
            y = next;
        }
        r
    }
    for &idx in pick {
        let (ra, rb) = (find(&mut uf, idx / m), find(&mut uf, n + idx % m));
        if ra == rb {
            return None;
        }
        uf[ra] = rb;
    }
    let mut residual: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut degree = vec![0usize; nodes];
    for &idx in pick {
        degree[idx / m] += 1;
        degree[n + idx % m] += 1;
    }
    let mut flow = vec![f64::NAN; pick.len()];
    let mut done = vec![false; pick.len()];
    for _ in 0..pick.len() {
        let (e, leaf) = pick.iter().enumerate().filter(|(e, _)| !done[*e]).find_map(|(e, &idx)| {
            let (r, c) = (idx / m, n + idx % m);
            if degree[r] == 1 {
                Some((e, r))
            } else if degree[c] == 1 {
                Some((e, c))
            } else {
                None
            }
        })?;
        let idx = pick[e];
        let (r, c) = (idx / m, n + idx % m);
        let other = if leaf == r { c } else { r };
        let x = residual[leaf];
        if x < -1e-12 {
            return None;
        }
        flow[e] = x.max(0.0);
        residual[leaf] = 0.0;
        residual[other] -= x;
        degree[r] -= 1;
        degree[c] -= 1;
        done[e] = true;
    }
    Some(flow)
}

/// Two-phase dense tableau simplex with Bland's rule on the transportation LP.
fn dense_simplex(a: &[f64], b: &[f64], cost: &[f64]) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    let vars = n * m;
    let rows = n + m;
    let width = vars + rows + 1;
    // Tableau rows: constraints; columns: x, artificials, rhs.
    let mut t = vec![vec![0.0; width]; rows];
    for i in 0..n {
        for j in 0..m {
            t[i][i * m + j] = 1.0;
            t[n + j][i * m + j] = 1.0;
        }
    }
    for r in 0..rows {
        t[r][vars + r] = 1.0;
        t[r][width - 1] = if r < n { a[r] } else { b[r - n] };
    }
    let mut basic: Vec<usize> = (vars..vars + rows).collect();

    let pivot = |t: &mut Vec<Vec<f64>>, r: usize, col: usize| {
        let p = t[r][col];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = t[r].clone();
        for (k, row) in t.iter_mut().enumerate() {
            if k != r && row[col] != 0.0 {
                let f = row[col];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    };

    let optimize = |t: &mut Vec<Vec<f64>>, basic: &mut Vec<usize>, obj: &[f64], allowed: usize| -> Result<()> {
        for _ in 0..100_000 {
            let reduced = |col: usize, t: &Vec<Vec<f64>>, basic: &Vec<usize>| {
                obj[col] - basic.iter().enumerate().map(|(r, &bv)| obj[bv] * t[r][col]).sum::<f64>()
            };
            let Some(col) = (0..allowed).find(|&c| !basic.contains(&c) && reduced(c, t, basic) < -1e-12) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..t.len() {
                if t[r][col] > 1e-12 {
                    let ratio = t[r][width - 1] / t[r][col];
                    let better = match leave {
                        None => true,
                        Some((lr, lv)) => ratio < lv - 1e-15 || (ratio <= lv + 1e-15 && basic[r] < basic[lr]),
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let (r, _) = leave.ok_or_else(|| Error::Numerical("unbounded transport LP".into()))?;
            pivot(t, r, col);
            basic[r] = col;
        }
        Err(Error::Numerical("dense simplex did not converge".into()))
    };

    let mut phase1 = vec![0.0; vars + rows];
    phase1[vars..].iter_mut().for_each(|v| *v = 1.0);
    optimize(&mut t, &mut basic, &phase1, vars + rows)?;
    // Drive zero-level artificials out of the basis; drop redundant rows.
    let mut r = 0;
    while r < t.len() {
        if basic[r] >= vars {
            if t[r][width - 1].abs() > 1e-9 {
                return Err(Error::Numerical("transport LP infeasible".into()));
            }
            if let Some(col) = (0..vars).find(|&c| t[r][c].abs() > 1e-12) {
                pivot(&mut t, r, col);
                basic[r] = col;
            } else {
                t.remove(r);
                basic.remove(r);
                continue;
            }
        }
        r += 1;
    }
    let mut phase2 = cost.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, rows));
    optimize(&mut t, &mut basic, &phase2, vars)?;
    Ok(basic.iter().enumerate().filter(|(_, &bv)| bv < vars).map(|(r, &bv)| cost[bv] * t[r][width - 1]).sum())
}
