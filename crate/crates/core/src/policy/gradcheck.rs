use crate::env::{EnvSpec, Trajectory};
use crate::objectives::{batch_loss, batch_loss_value, ObjectiveKind};
use crate::policy::PolicyParams;
use crate::Result;

const STEP: f64 = 1e-5;

fn scalar_mut(params: &mut PolicyParams, mut k: usize) -> &mut f64 {
    for (_, t) in params.tensors_mut() {
        if k < t.len() {
            return &mut t[k];
        }
        k -= t.len();
    }
    panic!("scalar index out of range");
}

/// Largest relative error between the analytic batch gradient and a
/// central finite difference, over every parameter:
/// `|analytic - numeric| / (|analytic| + 1e-8)`.
pub fn gradient_check(params: &PolicyParams, env: &EnvSpec, kind: ObjectiveKind, batch: &[Trajectory]) -> Result<f64> {
    let analytic = batch_loss(params, env, kind, batch)?.grads;
    let flat: alloc::vec::Vec<f64> = analytic.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (k, &a) in flat.iter().enumerate() {
        let orig = *scalar_mut(&mut probe, k);
        *scalar_mut(&mut probe, k) = orig + STEP;
        let up = batch_loss_value(&probe, env, kind, batch)?;
        *scalar_mut(&mut probe, k) = orig - STEP;
        let down = batch_loss_value(&probe, env, kind, batch)?;
        *scalar_mut(&mut probe, k) = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max((a - numeric).abs() / (a.abs() + 1e-8));
    }
    Ok(worst)
}
