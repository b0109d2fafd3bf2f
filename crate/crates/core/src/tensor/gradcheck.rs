use std::collections::BTreeSet;

use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scalar::Scalar;

use super::tape::{NodeId, Tape};
use super::Tensor;

/// Central-difference step rule: h = FD_STEP_SCALE * max(1, |x|).
pub const FD_STEP_SCALE: f64 = 1e-5;

/// A scalar loss that can be built at any precision, so the reverse-mode
/// gradient under test (f32 or f64) is always compared against a 64-bit
/// finite-difference reference.
pub trait CheckedLoss {
    fn build<T: Scalar>(&self, tape: &mut Tape<T>, inputs: &[NodeId]) -> Result<NodeId>;
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    /// max over checked elements of |analytic - fd| / max(|analytic|, |fd|, grad_scale)
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// inf-norm of the analytic gradient of this input
    pub grad_scale: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

/// Compares the reverse-mode gradient of `loss` w.r.t. every input against
/// central finite differences with the default step rule.
pub fn grad_check<T: Scalar, L: CheckedLoss>(
    loss: &L,
    inputs: &[(&str, Tensor<T>)],
    tolerance: f64,
    max_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    grad_check_with_step(loss, inputs, tolerance, max_per_tensor, seed, FD_STEP_SCALE)
}

/// [`grad_check`] with an explicit step scale (h = h_scale * max(1, |x|)).
///
/// The analytic gradient is computed at precision `T`; the finite-difference
/// reference is always evaluated in 64-bit (exact for f32-cast points), which
/// keeps the difference quotient meaningful even when the path under test is
/// 32-bit. Deep compositions with kinked ops (|.|, leaky-ReLU, max-pool)
/// want a step well below the default so the difference never straddles a
/// kink or flips an argmax. Failures are reported, not thrown: the caller
/// decides what to do with the report.
///
/// `max_per_tensor` caps how many elements of each input are probed
/// (0 = all); the subset is drawn deterministically from `seed`.
pub fn grad_check_with_step<T: Scalar, L: CheckedLoss>(
    loss: &L,
    inputs: &[(&str, Tensor<T>)],
    tolerance: f64,
    max_per_tensor: usize,
    seed: u64,
    h_scale: f64,
) -> Result<GradCheckReport> {
    // Analytic pass at precision T.
    let mut tape = Tape::<T>::new();
    let ids: Vec<NodeId> = inputs.iter().map(|(_, t)| tape.leaf_grad(t)).collect();
    let loss_node = loss.build(&mut tape, &ids)?;
    tape.backward(loss_node)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(id, (_, t))| match tape.grad(*id) {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; t.numel()],
        })
        .collect();

    // 64-bit evaluation point.
    let points64: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.cast_to::<f64>()).collect();
    let eval = |points: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let ids: Vec<NodeId> = points.iter().map(|t| tape.leaf_const(t)).collect();
        let node = loss.build(&mut tape, &ids)?;
        Ok(tape.scalar_value(node))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(inputs.len());
    for (ti, (name, t)) in inputs.iter().enumerate() {
        let numel = t.numel();
        let indices: Vec<usize> = if max_per_tensor == 0 || numel <= max_per_tensor {
            (0..numel).collect()
        } else {
            let mut set = BTreeSet::new();
            while set.len() < max_per_tensor {
                set.insert(rng.random_range(0..numel));
            }
            set.into_iter().collect()
        };

        let grad_scale = analytic[ti].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut points = points64.clone();
        for &i in &indices {
            let x = points[ti].data()[i];
            let h = h_scale * x.abs().max(1.0);
            points[ti].data_mut()[i] = x + h;
            let lp = eval(&points)?;
            points[ti].data_mut()[i] = x - h;
            let lm = eval(&points)?;
            points[ti].data_mut()[i] = x;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[ti][i];
            let abs_err = (a - fd).abs();
            let denom = a.abs().max(fd.abs()).max(grad_scale).max(1e-12);
            max_abs = max_abs.max(abs_err);
            max_rel = max_rel.max(abs_err / denom);
        }
        entries.push(GradCheckEntry {
            name: name.to_string(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            grad_scale,
            checked: indices.len(),
        });
    }
    Ok(GradCheckReport { entries, tolerance })
}
