use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{NodeId, Tape};

/// Scalar loss components of one adversarial step.
/// `g_total == g_adv_loss + lambda * g_l1_loss` holds exactly (same
/// arithmetic, same order).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub d_loss: f64,
    pub g_adv_loss: f64,
    pub g_l1_loss: f64,
    pub g_total: f64,
    pub lambda: f64,
}

/// Least-squares discriminator loss with (1, 0) binary coding:
/// 0.5 * mean[(D(y,c) - 1)^2] + 0.5 * mean[D(yhat,c)^2].
pub fn d_loss<T: Scalar>(tape: &mut Tape<T>, d_real: NodeId, d_fake: NodeId) -> Result<NodeId> {
    let r = tape.add_const(d_real, -1.0)?;
    let r = tape.square(r)?;
    let r = tape.mean_all(r)?;
    let r = tape.scale(r, 0.5)?;
    let f = tape.square(d_fake)?;
    let f = tape.mean_all(f)?;
    let f = tape.scale(f, 0.5)?;
    tape.add(r, f)
}

/// Generator loss graph: adversarial term, L1 term and their combination.
pub struct GLossNodes {
    pub adv: NodeId,
    pub l1: NodeId,
    pub total: NodeId,
}

/// 0.5 * mean[(D(yhat,c) - 1)^2] + lambda * mean|yhat - y|, with the
/// components exposed separately.
pub fn g_loss<T: Scalar>(
    tape: &mut Tape<T>,
    d_fake: NodeId,
    y_hat: NodeId,
    y: NodeId,
    lambda: f64,
) -> Result<GLossNodes> {
    if lambda < 0.0 {
        return Err(crate::error::Error::contract(format!("g_loss: lambda must be >= 0, got {lambda}")));
    }
    let a = tape.add_const(d_fake, -1.0)?;
    let a = tape.square(a)?;
    let a = tape.mean_all(a)?;
    let adv = tape.scale(a, 0.5)?;
    let diff = tape.sub(y_hat, y)?;
    let diff = tape.abs(diff)?;
    let l1 = tape.mean_all(diff)?;
    let scaled = tape.scale(l1, lambda)?;
    let total = tape.add(adv, scaled)?;
    Ok(GLossNodes { adv, l1, total })
}
