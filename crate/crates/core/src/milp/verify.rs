use num_complex::Complex64;

use super::model::MilpModel;
use super::ReductionDecision;
use crate::error::{Error, Result};
use crate::kron::{kron_voltages, Assignment};
use crate::tolerances::Tolerances;

/// Worst componentwise gap between each super node's Kron voltage
/// `S Z S A I` and the references of every member of its cluster, recomputed
/// from scratch.
pub fn certified_delta(model: &MilpModel, a: &Assignment) -> Result<f64> {
    model.check_assignment(a)?;
    let keep = a.keep();
    let mut delta = 0.0_f64;
    for s in 0..model.scenarios() {
        let vk = kron_voltages(&model.zbus, &keep, a, &model.currents[s])?;
        let reference = &model.reference[s];
        for k in 0..model.n {
            let v = vk[a.target(k)];
            for &u in &model.members[k] {
                let d: Complex64 = v - reference[u];
                delta = delta.max(d.re.abs()).max(d.im.abs());
            }
        }
    }
    Ok(delta)
}

/// Recomputes the deviation of `decision` without trusting solver values and
/// checks that dropping `S` leaves super-node voltages unchanged. Returns the
/// certified deviation.
pub fn verify_decision(
    model: &MilpModel,
    decision: &ReductionDecision,
    tol: &Tolerances,
) -> Result<f64> {
    let a = &decision.assignment;
    let certified = certified_delta(model, a)?;
    let keep = a.keep();
    for s in 0..model.scenarios() {
        let masked = kron_voltages(&model.zbus, &keep, a, &model.currents[s])?;
        let unmasked = model.tilde_voltages(a, s);
        for k in a.kept_indices() {
            if masked[k] != unmasked[k] {
                return Err(Error::InfeasibleAssignment(format!(
                    "selection changes the voltage of super node {k} in scenario {s}"
                )));
            }
        }
    }
    if !((certified - decision.delta).abs() <= tol.certificate_match) {
        return Err(Error::BigMViolation {
            solver: decision.delta,
            certified,
        });
    }
    Ok(certified)
}
