use std::fmt::Write as _;

use num_complex::Complex64;

use super::model::MilpModel;
use crate::error::{Error, Result};
use crate::kron::Assignment;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
    pub kind: VarKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub cmp: Comparison,
    pub rhs: f64,
}

/// Engine-neutral minimization problem handed to external backends.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearProgram {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Constant added to the objective.
    pub offset: f64,
}

impl LinearProgram {
    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        bounds: (f64, f64),
        objective: f64,
        kind: VarKind,
    ) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower: bounds.0,
            upper: bounds.1,
            objective,
            kind,
        });
        self.variables.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(usize, f64)>,
        cmp: Comparison,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            cmp,
            rhs,
        });
    }

    pub fn num_binaries(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.offset
            + self
                .variables
                .iter()
                .zip(x)
                .map(|(v, x)| v.objective * x)
                .sum::<f64>()
    }

    /// Largest violation of any bound or constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (v, &x) in self.variables.iter().zip(x) {
            worst = worst.max(v.lower - x).max(x - v.upper);
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(j, a)| a * x[j]).sum();
            let viol = match c.cmp {
                Comparison::Le => lhs - c.rhs,
                Comparison::Ge => c.rhs - lhs,
                Comparison::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// CPLEX LP text format.
    pub fn to_lp_string(&self) -> String {
        let mut out = String::new();
        let term = |out: &mut String, first: bool, a: f64, name: &str| {
            let sign = if a < 0.0 {
                "-"
            } else if first {
                ""
            } else {
                "+"
            };
            let _ = write!(out, " {sign} {:e} {name}", a.abs());
        };
        out.push_str("\\ reduction program\nMinimize\n obj:");
        let mut first = true;
        for v in &self.variables {
            if v.objective != 0.0 {
                term(&mut out, first, v.objective, &v.name);
                first = false;
            }
        }
        if first {
            out.push_str(" 0");
        }
        if self.offset != 0.0 {
            let _ = write!(
                out,
                " {} {:e}",
                if self.offset < 0.0 { "-" } else { "+" },
                self.offset.abs()
            );
        }
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            let _ = write!(out, " {}:", c.name);
            for (k, &(j, a)) in c.terms.iter().enumerate() {
                term(&mut out, k == 0, a, &self.variables[j].name);
            }
            if c.terms.is_empty() {
                out.push_str(" 0");
            }
            let op = match c.cmp {
                Comparison::Le => "<=",
                Comparison::Ge => ">=",
                Comparison::Eq => "=",
            };
            let _ = writeln!(out, " {op} {:e}", c.rhs);
        }
        out.push_str("Bounds\n");
        let bound = |x: f64| {
            if x == f64::INFINITY {
                "+inf".to_string()
            } else if x == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                format!("{x:e}")
            }
        };
        for v in &self.variables {
            if v.kind == VarKind::Continuous {
                let _ = writeln!(
                    out,
                    " {} <= {} <= {}",
                    bound(v.lower),
                    v.name,
                    bound(v.upper)
                );
            } else if v.lower == v.upper {
                let _ = writeln!(out, " {} = {}", v.name, bound(v.lower));
            }
        }
        let binaries: Vec<&str> = self
            .variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .map(|v| v.name.as_str())
            .collect();
        if !binaries.is_empty() {
            out.push_str("Binary\n");
            for chunk in binaries.chunks(8) {
                let _ = writeln!(out, " {}", chunk.join(" "));
            }
        }
        out.push_str("End\n");
        out
    }
}

/// Variable layout of the assembled reduction program.
#[derive(Clone, Debug)]
pub(crate) struct ProgramLayout {
    /// Index of the binary for each `(t, k)` pair, in `MilpModel::pairs` order.
    pub pairs: Vec<(usize, usize, usize)>,
    pub delta: usize,
}

impl MilpModel {
    /// Assembles the big-M program with auxiliary `Ṽ` variables per
    /// scenario, node and component.
    pub fn to_linear_program(&self) -> LinearProgram {
        self.assemble().0
    }

    pub(crate) fn assemble(&self) -> (LinearProgram, ProgramLayout) {
        let n = self.n;
        let cfg = &self.config;
        let mut lp = LinearProgram::default();
        let w = cfg.alpha / n as f64;

        let mut pair_var = vec![Vec::new(); n];
        let mut pairs = Vec::new();
        for (t, k) in self.pairs() {
            let fixed = self.protected[k] && t == k;
            let blocked = self.protected[k] && t != k;
            let bounds = if fixed {
                (1.0, 1.0)
            } else if blocked {
                (0.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            let obj = if t == k { w } else { 0.0 };
            let j = lp.add_var(format!("a_{t}_{k}"), bounds, obj, VarKind::Binary);
            pair_var[k].push((t, j));
            pairs.push((t, k, j));
        }
        // objective δ − (α/n)Σ(1 − A_kk) = δ + (α/n)ΣA_kk − α
        lp.offset = -w * n as f64;
        let delta = lp.add_var("delta", (0.0, cfg.gamma), 1.0, VarKind::Continuous);
        let diag = |k: usize| {
            pair_var[k]
                .iter()
                .find(|(t, _)| *t == k)
                .map(|&(_, j)| j)
                .expect("diagonal pair")
        };

        for k in 0..n {
            let terms = pair_var[k].iter().map(|&(_, j)| (j, 1.0)).collect();
            lp.add_constraint(format!("col_{k}"), terms, Comparison::Eq, 1.0);
        }
        for t in 0..n {
            let mut terms: Vec<(usize, f64)> = pairs
                .iter()
                .filter(|&&(r, k, _)| r == t && k != t)
                .map(|&(_, _, j)| (j, 1.0))
                .collect();
            if terms.is_empty() {
                continue;
            }
            terms.push((diag(t), -(n as f64)));
            lp.add_constraint(format!("gate_{t}"), terms, Comparison::Le, 0.0);
        }
        let budget_terms = (0..n).map(|k| (diag(k), -1.0)).collect();
        lp.add_constraint(
            "budget",
            budget_terms,
            Comparison::Le,
            self.budget as f64 - n as f64,
        );

        let m = cfg.big_m;
        for s in 0..self.scenarios() {
            let vr: Vec<usize> = (0..n)
                .map(|i| {
                    lp.add_var(
                        format!("vr_{s}_{i}"),
                        (f64::NEG_INFINITY, f64::INFINITY),
                        0.0,
                        VarKind::Continuous,
                    )
                })
                .collect();
            let vi: Vec<usize> = (0..n)
                .map(|i| {
                    lp.add_var(
                        format!("vi_{s}_{i}"),
                        (f64::NEG_INFINITY, f64::INFINITY),
                        0.0,
                        VarKind::Continuous,
                    )
                })
                .collect();
            for i in 0..n {
                // Ṽ_i = Σ_t Z_it Σ_k A_tk I_k
                let mut re_terms = vec![(vr[i], 1.0)];
                let mut im_terms = vec![(vi[i], 1.0)];
                for &(t, k, j) in &pairs {
                    let c: Complex64 = self.zbus[(i, t)] * self.currents[s][k];
                    if c.re != 0.0 {
                        re_terms.push((j, -c.re));
                    }
                    if c.im != 0.0 {
                        im_terms.push((j, -c.im));
                    }
                }
                lp.add_constraint(format!("vr_def_{s}_{i}"), re_terms, Comparison::Eq, 0.0);
                lp.add_constraint(format!("vi_def_{s}_{i}"), im_terms, Comparison::Eq, 0.0);
            }
            for &(t, k, j) in &pairs {
                let r = *self.range(s, k);
                for (c, var, lo, hi) in [("r", vr[t], r[0], r[1]), ("i", vi[t], r[2], r[3])] {
                    // Ṽ − min ≤ δ + M(1 − A),  max − Ṽ ≤ δ + M(1 − A)
                    lp.add_constraint(
                        format!("dev{c}_hi_{s}_{t}_{k}"),
                        vec![(var, 1.0), (delta, -1.0), (j, m)],
                        Comparison::Le,
                        m + lo,
                    );
                    lp.add_constraint(
                        format!("dev{c}_lo_{s}_{t}_{k}"),
                        vec![(var, -1.0), (delta, -1.0), (j, m)],
                        Comparison::Le,
                        m - hi,
                    );
                }
            }
        }
        (lp, ProgramLayout { pairs, delta })
    }

    /// Reads an assignment back from a solution vector of [`Self::to_linear_program`].
    pub(crate) fn decode(&self, layout: &ProgramLayout, x: &[f64]) -> Result<(Assignment, f64)> {
        let mut target = vec![usize::MAX; self.n];
        for &(t, k, j) in &layout.pairs {
            if x[j] > 0.5 {
                if target[k] != usize::MAX {
                    return Err(Error::InfeasibleAssignment(format!(
                        "column {k} has two ones"
                    )));
                }
                target[k] = t;
            }
        }
        if let Some(k) = target.iter().position(|&t| t == usize::MAX) {
            return Err(Error::InfeasibleAssignment(format!(
                "column {k} has no one"
            )));
        }
        Ok((Assignment::from_targets(target)?, x[layout.delta].max(0.0)))
    }
}
