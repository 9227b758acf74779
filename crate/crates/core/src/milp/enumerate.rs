use super::model::MilpModel;
use super::verify::certified_delta;
use super::{objective_value, ReductionDecision, SolverStatus};
use crate::error::{Error, Result};
use crate::kron::Assignment;

const ENUMERATION_LIMIT: f64 = 5e6;

/// Every structurally feasible assignment (adjacency, row gating, protected
/// buses, budget), columns ascending with the keep option first.
pub fn enumerate_decisions(model: &MilpModel) -> Result<Vec<Assignment>> {
    let size: f64 = model.candidates.iter().map(|c| c.len() as f64).product();
    if size > ENUMERATION_LIMIT {
        return Err(Error::SolverCapExceeded {
            binaries: model.num_binaries(),
            cap: model.num_binaries().min(model.config.binary_cap),
        });
    }
    let mut out = Vec::new();
    let mut target = vec![0usize; model.n];
    walk(model, 0, 0, &mut target, &mut out);
    Ok(out)
}

fn walk(
    model: &MilpModel,
    k: usize,
    reductions: usize,
    target: &mut Vec<usize>,
    out: &mut Vec<Assignment>,
) {
    if k == model.n {
        let a = Assignment::from_targets(target.clone()).expect("targets in range");
        if a.check_structure().is_ok() {
            out.push(a);
        }
        return;
    }
    for &t in &model.candidates[k] {
        if t != k && (model.protected[k] || reductions == model.budget) {
            continue;
        }
        // an earlier column may not point at a bus that was already reduced
        if t < k && target[t] != t {
            continue;
        }
        target[k] = t;
        walk(model, k + 1, reductions + usize::from(t != k), target, out);
    }
}

/// Exhaustive minimization of the unrelaxed program: deviations from the
/// Kron voltages `S Z S A I` over active pairs only.
pub fn enumeration_oracle(model: &MilpModel) -> Result<ReductionDecision> {
    let mut best: Option<(f64, Assignment, f64)> = None;
    for a in enumerate_decisions(model)? {
        let delta = certified_delta(model, &a)?;
        if delta > model.config.gamma {
            continue;
        }
        let obj = objective_value(delta, a.reductions(), model.config.alpha, model.n);
        if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
            best = Some((obj, a, delta));
        }
    }
    let (objective, assignment, delta) =
        best.ok_or_else(|| Error::Infeasible("no enumerated assignment satisfies gamma".into()))?;
    Ok(ReductionDecision {
        assignment,
        delta,
        objective,
        status: SolverStatus::Optimal,
        backend: "enumeration".into(),
    })
}
