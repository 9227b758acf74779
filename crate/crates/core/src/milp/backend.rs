use std::time::Duration;

use super::linear::LinearProgram;
use super::model::MilpModel;
use super::{builtin, objective_value, ReductionDecision, SolverStatus};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpOutcome {
    Optimal,
    Feasible,
    Infeasible,
    Timeout,
}

/// What an adapter hands back: status, primal values and the best bound
/// when the engine reports one.
#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpOutcome,
    pub values: Vec<f64>,
    pub objective: f64,
    pub bound: Option<f64>,
}

/// Solver contract. External engines implement [`MilpBackend::solve_lp`];
/// the default [`MilpBackend::solve_model`] assembles the program, calls it
/// and decodes the assignment.
pub trait MilpBackend: Send + Sync {
    fn name(&self) -> &str;

    fn solve_lp(
        &self,
        lp: &LinearProgram,
        mip_gap: f64,
        time_limit: Duration,
    ) -> Result<LpSolution>;

    fn solve_model(&self, model: &MilpModel) -> Result<ReductionDecision> {
        let (lp, layout) = model.assemble();
        let sol = self.solve_lp(&lp, model.config.mip_gap, model.config.time_limit())?;
        let status = match sol.status {
            LpOutcome::Optimal => SolverStatus::Optimal,
            LpOutcome::Feasible => SolverStatus::Feasible,
            LpOutcome::Infeasible => {
                return Err(Error::Infeasible(format!(
                    "{} reports the reduction program infeasible",
                    self.name()
                )))
            }
            LpOutcome::Timeout if sol.values.is_empty() => return Err(Error::Timeout),
            LpOutcome::Timeout => SolverStatus::Timeout,
        };
        let (assignment, delta) = model.decode(&layout, &sol.values)?;
        model.check_assignment(&assignment)?;
        Ok(ReductionDecision {
            objective: objective_value(delta, assignment.reductions(), model.config.alpha, model.n),
            assignment,
            delta,
            status,
            backend: self.name().to_string(),
        })
    }
}

/// The in-crate branch-and-bound. It only understands reduction models.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuiltinBackend;

impl MilpBackend for BuiltinBackend {
    fn name(&self) -> &str {
        "builtin"
    }

    fn solve_lp(
        &self,
        _lp: &LinearProgram,
        _mip_gap: f64,
        _time_limit: Duration,
    ) -> Result<LpSolution> {
        Err(Error::Backend {
            backend: "builtin".into(),
            message: "the built-in solver only accepts reduction models".into(),
        })
    }

    fn solve_model(&self, model: &MilpModel) -> Result<ReductionDecision> {
        builtin::builtin_exact_solver(model)
    }
}

/// Adapter for the pure-Rust `microlp` engine.
#[cfg(feature = "microlp")]
#[derive(Clone, Copy, Debug, Default)]
pub struct MicrolpBackend;

#[cfg(feature = "microlp")]
impl MilpBackend for MicrolpBackend {
    fn name(&self) -> &str {
        "microlp"
    }

    fn solve_lp(
        &self,
        lp: &LinearProgram,
        mip_gap: f64,
        time_limit: Duration,
    ) -> Result<LpSolution> {
        use super::linear::{Comparison, VarKind};
        use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOptions, SolveOutcome};

        let backend_err = |e: microlp::Error| Error::Backend {
            backend: "microlp".into(),
            message: e.to_string(),
        };
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let mut vars = Vec::with_capacity(lp.variables.len());
        for v in &lp.variables {
            let var = match v.kind {
                VarKind::Binary => {
                    let var = problem.add_binary_var(v.objective);
                    if v.lower > 0.0 || v.upper < 1.0 {
                        if v.lower > v.upper {
                            return Ok(infeasible());
                        }
                        problem.add_constraint([(var, 1.0)], ComparisonOp::Ge, v.lower.max(0.0));
                        problem.add_constraint([(var, 1.0)], ComparisonOp::Le, v.upper.min(1.0));
                    }
                    var
                }
                VarKind::Continuous => problem.add_var(v.objective, (v.lower, v.upper)),
            };
            vars.push(var);
        }
        for c in &lp.constraints {
            let op = match c.cmp {
                Comparison::Le => ComparisonOp::Le,
                Comparison::Ge => ComparisonOp::Ge,
                Comparison::Eq => ComparisonOp::Eq,
            };
            let terms: Vec<_> = c.terms.iter().map(|&(j, a)| (vars[j], a)).collect();
            problem.add_constraint(terms, op, c.rhs);
        }
        let mut options = SolveOptions::default();
        options.time_limit = Some(time_limit);
        options.mip_gap = mip_gap;
        match problem.solve_with(options) {
            Ok(SolveOutcome::Solution(sol)) => {
                let values: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
                let status = match sol.status() {
                    microlp::SolutionStatus::Optimal => LpOutcome::Optimal,
                    microlp::SolutionStatus::Feasible => LpOutcome::Feasible,
                };
                Ok(LpSolution {
                    status,
                    objective: sol.objective() + lp.offset,
                    bound: sol.gap().map(|g| sol.objective() + lp.offset - g.abs()),
                    values,
                })
            }
            Ok(SolveOutcome::Interrupted(_)) => Ok(LpSolution {
                status: LpOutcome::Timeout,
                values: vec![],
                objective: f64::NAN,
                bound: None,
            }),
            Err(microlp::Error::Infeasible) => Ok(infeasible()),
            Err(e) => Err(backend_err(e)),
        }
    }
}

#[cfg(feature = "microlp")]
fn infeasible() -> LpSolution {
    LpSolution {
        status: LpOutcome::Infeasible,
        values: vec![],
        objective: f64::NAN,
        bound: None,
    }
}

/// Wraps a backend and re-solves every model by exhaustive enumeration,
/// failing when the objectives differ by more than the configured gap.
pub struct OracleChecked<'a> {
    pub inner: &'a dyn MilpBackend,
}

impl MilpBackend for OracleChecked<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn solve_lp(
        &self,
        lp: &LinearProgram,
        mip_gap: f64,
        time_limit: Duration,
    ) -> Result<LpSolution> {
        self.inner.solve_lp(lp, mip_gap, time_limit)
    }

    fn solve_model(&self, model: &MilpModel) -> Result<ReductionDecision> {
        let decision = self.inner.solve_model(model)?;
        let oracle = super::enumeration_oracle(model)?;
        let slack = model.config.mip_gap * oracle.objective.abs();
        if (decision.objective - oracle.objective).abs() > slack {
            return Err(Error::Backend {
                backend: "oracle-check".into(),
                message: format!(
                    "{} objective {:e} differs from enumeration {:e}",
                    self.inner.name(),
                    decision.objective,
                    oracle.objective
                ),
            });
        }
        Ok(decision)
    }
}

/// Looks a backend up by name (`builtin`, `microlp`).
pub fn backend_by_name(name: &str) -> Result<Box<dyn MilpBackend>> {
    match name {
        "builtin" => Ok(Box::new(BuiltinBackend)),
        #[cfg(feature = "microlp")]
        "microlp" => Ok(Box::new(MicrolpBackend)),
        other => Err(Error::InvalidConfig(format!("unknown backend '{other}'"))),
    }
}

#[cfg(all(test, feature = "microlp"))]
mod tests {
    use super::*;
    use crate::milp::linear::{Comparison, VarKind};

    #[test]
    fn binary_toy_round_trip() {
        // max x  s.t. x <= 1, x binary  (as min −x)
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", (0.0, 1.0), -1.0, VarKind::Binary);
        lp.add_constraint("cap", vec![(x, 1.0)], Comparison::Le, 1.0);
        let sol = MicrolpBackend
            .solve_lp(&lp, 0.0, Duration::from_secs(5))
            .unwrap();
        assert_eq!(sol.status, LpOutcome::Optimal);
        assert_eq!(sol.values[x], 1.0);
        assert_eq!(sol.objective, -1.0);
    }

    #[test]
    fn infeasible_toy() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(
            "x",
            (f64::NEG_INFINITY, f64::INFINITY),
            1.0,
            VarKind::Continuous,
        );
        lp.add_constraint("lo", vec![(x, 1.0)], Comparison::Ge, 1.0);
        lp.add_constraint("hi", vec![(x, 1.0)], Comparison::Le, 0.0);
        let sol = MicrolpBackend
            .solve_lp(&lp, 0.0, Duration::from_secs(5))
            .unwrap();
        assert_eq!(sol.status, LpOutcome::Infeasible);
    }

    #[test]
    fn three_variable_milp() {
        // min −x − 2y − 3z, x + y + z <= 2, all binary → y = z = 1
        let mut lp = LinearProgram::default();
        let v: Vec<usize> = (1..=3)
            .map(|c| lp.add_var(format!("x{c}"), (0.0, 1.0), -(c as f64), VarKind::Binary))
            .collect();
        lp.add_constraint(
            "sum",
            v.iter().map(|&j| (j, 1.0)).collect(),
            Comparison::Le,
            2.0,
        );
        let sol = MicrolpBackend
            .solve_lp(&lp, 0.0, Duration::from_secs(5))
            .unwrap();
        assert_eq!(sol.values, vec![0.0, 1.0, 1.0]);
        assert_eq!(sol.objective, -5.0);
    }

    #[test]
    fn unknown_backend_name() {
        assert!(backend_by_name("gurobi").is_err());
        assert_eq!(backend_by_name("builtin").unwrap().name(), "builtin");
    }
}
