use super::tensor::ParamSet;
use crate::Result;

/// Heavy-ball SGD: `v ← momentum·v + g`, then `θ ← θ − lr·v`.
pub fn sgd_update(
    params: &mut ParamSet,
    grads: &ParamSet,
    lr: f64,
    momentum: f64,
    velocity: &mut ParamSet,
) -> Result<()> {
    params.check_compatible(grads, "sgd_update (params vs grads)")?;
    params.check_compatible(velocity, "sgd_update (params vs velocity)")?;
    for (((_, p), (_, g)), (_, v)) in params.iter_mut().zip(grads.iter()).zip(velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}
