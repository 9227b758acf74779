//! Depth-first branch-and-bound over the columns of `A`.
//!
//! Column `k` is a one-hot choice among its adjacency-feasible rows; columns
//! are branched in ascending order with the keep option first. Every leaf is
//! scored by [`MilpModel::evaluate`], so the returned objective is computed by
//! the same arithmetic as any other evaluation of that assignment.

use std::time::Instant;

use super::model::MilpModel;
use super::{objective_value, ReductionDecision, SolverStatus};
use crate::error::{Error, Result};
use crate::kron::Assignment;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BuiltinStats {
    pub nodes: u64,
    pub leaves: u64,
    pub greedy_objective: Option<f64>,
    pub timed_out: bool,
    pub node_limited: bool,
}

const UNDECIDED: usize = usize::MAX;

struct Search<'a> {
    model: &'a MilpModel,
    n: usize,
    ns: usize,
    w: f64,
    gamma: f64,
    eps: f64,
    prune_tol_rel: f64,
    /// Rows other than `k` that may take column `k`'s current.
    reduce_opts: Vec<Vec<usize>>,
    /// `effect[k][o]`: change of `Ṽ` when column `k` moves to `reduce_opts[k][o]`.
    effect: Vec<Vec<Vec<f64>>>,
    effect_min: Vec<Vec<f64>>,
    effect_max: Vec<Vec<f64>>,
    cur: Vec<f64>,
    pend_min: Vec<f64>,
    pend_max: Vec<f64>,
    target: Vec<usize>,
    forced: Vec<u32>,
    reductions: usize,
    best: Option<(f64, Assignment, f64)>,
    upper: f64,
    started: Instant,
    limit: std::time::Duration,
    node_limit: u64,
    stats: BuiltinStats,
    scratch: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(model: &'a MilpModel) -> Self {
        let n = model.n;
        let ns = model.scenarios();
        let len = ns * n * 2;
        let mut cur = vec![0.0; len];
        let mut scale = 0.0_f64;
        for s in 0..ns {
            let v = model.tilde_voltages(&Assignment::identity(n), s);
            for i in 0..n {
                cur[(s * n + i) * 2] = v[i].re;
                cur[(s * n + i) * 2 + 1] = v[i].im;
                let row: f64 = (0..n)
                    .map(|j| model.zbus[(i, j)].norm() * model.currents[s][j].norm())
                    .sum();
                scale = scale.max(row).max(v[i].norm());
            }
        }
        let mut reduce_opts = Vec::with_capacity(n);
        let mut effect = Vec::with_capacity(n);
        let mut effect_min = Vec::with_capacity(n);
        let mut effect_max = Vec::with_capacity(n);
        for k in 0..n {
            let opts: Vec<usize> = if model.protected[k] {
                vec![]
            } else {
                model.candidates[k]
                    .iter()
                    .copied()
                    .filter(|&r| r != k)
                    .collect()
            };
            let mut lo = vec![0.0_f64; len];
            let mut hi = vec![0.0_f64; len];
            let mut per_opt = Vec::with_capacity(opts.len());
            for &r in &opts {
                let mut e = vec![0.0; len];
                for s in 0..ns {
                    let ik = model.currents[s][k];
                    for i in 0..n {
                        let d = (model.zbus[(i, r)] - model.zbus[(i, k)]) * ik;
                        let b = (s * n + i) * 2;
                        e[b] = d.re;
                        e[b + 1] = d.im;
                    }
                }
                for x in 0..len {
                    lo[x] = lo[x].min(e[x]);
                    hi[x] = hi[x].max(e[x]);
                }
                per_opt.push(e);
            }
            reduce_opts.push(opts);
            effect.push(per_opt);
            effect_min.push(lo);
            effect_max.push(hi);
        }
        let mut pend_min = vec![0.0; len];
        let mut pend_max = vec![0.0; len];
        for k in 0..n {
            for x in 0..len {
                pend_min[x] += effect_min[k][x];
                pend_max[x] += effect_max[k][x];
            }
        }
        Search {
            model,
            n,
            ns,
            w: model.config.alpha / n as f64,
            gamma: model.config.gamma,
            eps: 64.0 * f64::EPSILON * (n as f64 + 1.0) * scale.max(1.0),
            prune_tol_rel: model.config.mip_gap,
            reduce_opts,
            effect,
            effect_min,
            effect_max,
            cur,
            pend_min,
            pend_max,
            target: vec![UNDECIDED; n],
            forced: vec![0; n],
            reductions: 0,
            best: None,
            upper: f64::INFINITY,
            started: Instant::now(),
            limit: model.config.time_limit(),
            node_limit: model.config.node_limit,
            stats: BuiltinStats::default(),
            scratch: Vec::new(),
        }
    }

    /// Lower bound on the deviation of pair `(t, k)` given the current
    /// interval of `Ṽ_t`.
    fn pair_bound(&self, t: usize, k: usize) -> f64 {
        let mut b = 0.0_f64;
        for s in 0..self.ns {
            let r = self.model.range(s, k);
            let x = (s * self.n + t) * 2;
            for (c, (mn, mx)) in [(r[0], r[1]), (r[2], r[3])].into_iter().enumerate() {
                let lo = self.cur[x + c] + self.pend_min[x + c];
                let hi = self.cur[x + c] + self.pend_max[x + c];
                b = b.max(lo - mn).max(mx - hi).max(0.5 * (mx - mn));
            }
        }
        b
    }

    fn reduce_allowed(&self, depth: usize, r: usize) -> bool {
        r >= depth || self.target[r] == r
    }

    /// Lower bound on any completion of the current partial assignment, or
    /// `None` when no completion can satisfy `δ ≤ γ`.
    fn lower_bound(&mut self, depth: usize) -> Option<f64> {
        let cap = self.gamma + self.eps;
        let mut base = 0.0_f64;
        for j in 0..depth {
            base = base.max(self.pair_bound(self.target[j], j));
        }
        if base > cap {
            return None;
        }
        let mut reds = std::mem::take(&mut self.scratch);
        reds.clear();
        for k in depth..self.n {
            let keep = self.pair_bound(k, k);
            let mut red = f64::INFINITY;
            if self.forced[k] == 0 {
                for &r in &self.reduce_opts[k] {
                    if self.reduce_allowed(depth, r) {
                        let c = self.pair_bound(r, k);
                        if c <= cap {
                            red = red.min(c);
                        }
                    }
                }
            }
            let keep = if keep <= cap { keep } else { f64::INFINITY };
            let any = keep.min(red);
            if !any.is_finite() {
                self.scratch = reds;
                return None;
            }
            base = base.max(any);
            if red.is_finite() {
                reds.push(red);
            }
        }
        reds.sort_by(|a, b| a.total_cmp(b));
        let remaining = self
            .model
            .budget
            .saturating_sub(self.reductions)
            .min(reds.len());
        let mut lb = base - self.w * self.reductions as f64;
        for m in 1..=remaining {
            let v = base.max(reds[m - 1]) - self.w * (self.reductions + m) as f64;
            lb = lb.min(v);
        }
        self.scratch = reds;
        Some(lb)
    }

    fn prune(&self, lb: f64) -> bool {
        if lb > self.upper + self.eps {
            return true;
        }
        match &self.best {
            None => false,
            Some((best, _, _)) => {
                let tol = if self.prune_tol_rel == 0.0 {
                    -self.eps
                } else {
                    (self.prune_tol_rel * best.abs()).max(self.eps)
                };
                lb >= best - tol
            }
        }
    }

    fn stopped(&mut self) -> bool {
        if self.stats.timed_out || self.stats.node_limited {
            return true;
        }
        if self.stats.nodes > self.node_limit {
            self.stats.node_limited = true;
        } else if self.stats.nodes.is_multiple_of(256) && self.started.elapsed() >= self.limit {
            self.stats.timed_out = true;
        }
        self.stats.timed_out || self.stats.node_limited
    }

    fn leaf(&mut self) {
        self.stats.leaves += 1;
        let a = Assignment::from_targets(self.target.clone()).expect("targets in range");
        let eval = match self.model.evaluate(&a) {
            Ok(e) => e,
            Err(_) => return,
        };
        if !eval.feasible {
            return;
        }
        let better = match &self.best {
            None => true,
            Some((best, b, _)) => {
                eval.objective < *best
                    || (eval.objective == *best && self.order_key(&a) < self.order_key(b))
            }
        };
        if better {
            self.best = Some((eval.objective, a, eval.delta));
        }
    }

    /// Position of each column's choice in branching order (keep first).
    fn order_key(&self, a: &Assignment) -> Vec<usize> {
        (0..self.n)
            .map(|k| match a.target(k) {
                t if t == k => 0,
                t => {
                    1 + self.reduce_opts[k]
                        .iter()
                        .position(|&r| r == t)
                        .unwrap_or(usize::MAX - 1)
                }
            })
            .collect()
    }

    fn dfs(&mut self, depth: usize) {
        self.stats.nodes += 1;
        if self.stopped() {
            return;
        }
        if depth == self.n {
            self.leaf();
            return;
        }
        match self.lower_bound(depth) {
            None => return,
            Some(lb) if self.prune(lb) => return,
            Some(_) => {}
        }
        let k = depth;
        let saved = (
            self.cur.clone(),
            self.pend_min.clone(),
            self.pend_max.clone(),
        );
        let len = self.cur.len();

        // keep
        for x in 0..len {
            self.pend_min[x] -= self.effect_min[k][x];
            self.pend_max[x] -= self.effect_max[k][x];
        }
        self.target[k] = k;
        self.dfs(depth + 1);
        self.target[k] = UNDECIDED;

        let can_reduce = self.forced[k] == 0 && self.reductions < self.model.budget;
        if can_reduce {
            for o in 0..self.reduce_opts[k].len() {
                if self.stats.timed_out || self.stats.node_limited {
                    break;
                }
                let r = self.reduce_opts[k][o];
                if !self.reduce_allowed(depth, r) {
                    continue;
                }
                self.cur.copy_from_slice(&saved.0);
                for x in 0..len {
                    self.cur[x] += self.effect[k][o][x];
                }
                self.target[k] = r;
                if r > k {
                    self.forced[r] += 1;
                }
                self.reductions += 1;
                self.dfs(depth + 1);
                self.reductions -= 1;
                if r > k {
                    self.forced[r] -= 1;
                }
                self.target[k] = UNDECIDED;
            }
        }
        self.cur = saved.0;
        self.pend_min = saved.1;
        self.pend_max = saved.2;
    }

    /// Incumbent heuristic. For each candidate deviation level it accepts
    /// single moves cheapest first while the level holds, then keeps adding
    /// moves one at a time while the objective improves.
    fn heuristic(&self) -> Option<(f64, Assignment, f64)> {
        let n = self.n;
        let identity: Vec<usize> = (0..n).collect();
        let mut moves = Vec::new();
        let mut trial = vec![0.0; self.cur.len()];
        let mut target = identity.clone();
        for k in 0..n {
            for (o, &r) in self.reduce_opts[k].iter().enumerate() {
                for x in 0..trial.len() {
                    trial[x] = self.cur[x] + self.effect[k][o][x];
                }
                target[k] = r;
                let c = self.active_delta(&trial, &target);
                target[k] = k;
                if c <= self.gamma {
                    moves.push((c, k, o));
                }
            }
        }
        moves.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut levels: Vec<f64> = moves.iter().map(|m| m.0).collect();
        levels.dedup();

        let d0 = self.active_delta(&self.cur, &identity);
        let mut best = (d0, identity.clone(), self.cur.clone(), 0usize);
        let score = |d: f64, r: usize| d - self.w * r as f64;
        for &level in &levels {
            let mut target = identity.clone();
            let mut receivers = vec![0usize; n];
            let mut v = self.cur.clone();
            let mut reductions = 0;
            for &(c, k, o) in &moves {
                if c > level || reductions == self.model.budget {
                    break;
                }
                let r = self.reduce_opts[k][o];
                if target[k] != k || receivers[k] > 0 || target[r] != r {
                    continue;
                }
                for x in 0..v.len() {
                    trial[x] = v[x] + self.effect[k][o][x];
                }
                target[k] = r;
                if self.active_delta(&trial, &target) <= level {
                    std::mem::swap(&mut v, &mut trial);
                    receivers[r] += 1;
                    reductions += 1;
                } else {
                    target[k] = k;
                }
            }
            let d = self.active_delta(&v, &target);
            if score(d, reductions) < score(best.0, best.3) {
                best = (d, target, v, reductions);
            }
        }
        let (_, target, v, reductions) = best;
        let target = self.improve(target, v, reductions);
        let a = Assignment::from_targets(target).ok()?;
        let eval = self.model.evaluate(&a).ok()?;
        eval.feasible.then_some((eval.objective, a, eval.delta))
    }

    /// Adds one elimination at a time while the objective improves.
    fn improve(
        &self,
        mut target: Vec<usize>,
        mut v: Vec<f64>,
        mut reductions: usize,
    ) -> Vec<usize> {
        let n = self.n;
        let mut receivers = vec![0usize; n];
        for k in 0..n {
            if target[k] != k {
                receivers[target[k]] += 1;
            }
        }
        let mut current = self.active_delta(&v, &target);
        let mut trial = vec![0.0; v.len()];
        while reductions < self.model.budget {
            let mut pick: Option<(f64, usize, usize)> = None;
            for k in 0..n {
                if target[k] != k || receivers[k] > 0 {
                    continue;
                }
                for (o, &r) in self.reduce_opts[k].iter().enumerate() {
                    if target[r] != r {
                        continue;
                    }
                    for x in 0..v.len() {
                        trial[x] = v[x] + self.effect[k][o][x];
                    }
                    target[k] = r;
                    let d = self.active_delta(&trial, &target);
                    target[k] = k;
                    if d > self.gamma {
                        continue;
                    }
                    let obj = d - self.w * (reductions + 1) as f64;
                    if pick.is_none_or(|(best, _, _)| obj < best) {
                        pick = Some((obj, k, o));
                    }
                }
            }
            let Some((obj, k, o)) = pick else { break };
            if obj >= current - self.w * reductions as f64 {
                break;
            }
            for x in 0..v.len() {
                v[x] += self.effect[k][o][x];
            }
            let r = self.reduce_opts[k][o];
            target[k] = r;
            receivers[r] += 1;
            reductions += 1;
            current = obj + self.w * reductions as f64;
        }
        target
    }

    fn active_delta(&self, v: &[f64], target: &[usize]) -> f64 {
        let mut d = 0.0_f64;
        for (k, &t) in target.iter().enumerate() {
            for s in 0..self.ns {
                let x = (s * self.n + t) * 2;
                let r = self.model.range(s, k);
                d = d
                    .max(v[x] - r[0])
                    .max(r[1] - v[x])
                    .max(v[x + 1] - r[2])
                    .max(r[3] - v[x + 1]);
            }
        }
        d
    }
}

pub fn builtin_exact_solver(model: &MilpModel) -> Result<ReductionDecision> {
    builtin_solve_with_stats(model).map(|(d, _)| d)
}

/// Branch-and-bound with search statistics.
pub fn builtin_solve_with_stats(model: &MilpModel) -> Result<(ReductionDecision, BuiltinStats)> {
    let binaries = model.num_binaries();
    if binaries > model.config.binary_cap {
        return Err(Error::SolverCapExceeded {
            binaries,
            cap: model.config.binary_cap,
        });
    }
    let decision = |a: Assignment, delta: f64, status| ReductionDecision {
        objective: objective_value(delta, a.reductions(), model.config.alpha, model.n),
        assignment: a,
        delta,
        status,
        backend: "builtin".into(),
    };
    if model.budget == 0 {
        let a = Assignment::identity(model.n);
        let eval = model.evaluate(&a)?;
        if !eval.feasible {
            return Err(Error::Infeasible(format!(
                "identity has deviation {:.3e} above gamma {:.3e}",
                eval.delta, model.config.gamma
            )));
        }
        return Ok((
            decision(a, eval.delta, SolverStatus::Optimal),
            BuiltinStats::default(),
        ));
    }

    let mut search = Search::new(model);
    let incumbent = search.heuristic();
    if let Some((obj, _, _)) = &incumbent {
        search.upper = *obj;
        search.stats.greedy_objective = Some(*obj);
    }
    search.best = incumbent;
    search.dfs(0);
    let stats = search.stats;
    log::debug!(
        "branch-and-bound: {} nodes, {} leaves, {:.3}s{}",
        stats.nodes,
        stats.leaves,
        search.started.elapsed().as_secs_f64(),
        if stats.timed_out {
            " (time limit)"
        } else if stats.node_limited {
            " (node limit)"
        } else {
            ""
        }
    );
    let stopped = stats.timed_out || stats.node_limited;
    let found = search.best.take();
    match found {
        Some((_, a, delta)) => {
            let status = if stats.timed_out {
                SolverStatus::Timeout
            } else if stats.node_limited {
                SolverStatus::Feasible
            } else {
                SolverStatus::Optimal
            };
            Ok((decision(a, delta, status), stats))
        }
        None if stopped => Err(Error::Timeout),
        None => Err(Error::Infeasible(format!(
            "no assignment keeps the deviation below gamma = {}",
            model.config.gamma
        ))),
    }
}
