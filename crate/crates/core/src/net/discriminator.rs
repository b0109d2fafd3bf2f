use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{NodeId, ParamStore};

use super::{init_bias, init_bn, init_weight, LayerCtx, NetConfig, AUDIO_IN, DISC_FILTERS};

/// Conditional least-squares discriminator: the candidate and the noisy
/// condition stack as two channels, pass a 4-layer strided conv ladder
/// (batch-norm from the second layer on) and a linear head to one
/// unbounded scalar per batch item.
#[derive(Debug, Clone, Copy)]
pub struct Discriminator {
    pub cfg: NetConfig,
}

impl Discriminator {
    pub fn new(cfg: NetConfig) -> Self {
        Discriminator { cfg }
    }

    fn flat_width(&self) -> usize {
        let mut hw = AUDIO_IN;
        for _ in 0..4 {
            hw = (hw.0.div_ceil(2), hw.1.div_ceil(2));
        }
        self.cfg.ch(DISC_FILTERS[3]) * hw.0 * hw.1
    }

    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        let mut in_ch = 2;
        for (i, &full) in DISC_FILTERS.iter().enumerate() {
            let out = self.cfg.ch(full);
            let layer = i + 1;
            init_weight(store, &format!("d.conv{layer}.w"), &[out, in_ch, 4, 4], in_ch * 16, seed);
            init_bias(store, &format!("d.conv{layer}.b"), out);
            if layer > 1 {
                init_bn(store, &format!("d.bn{layer}"), out);
            }
            in_ch = out;
        }
        let flat = self.flat_width();
        init_weight(store, "d.fc.w", &[1, flat], flat, seed);
        init_bias(store, "d.fc.b", 1);
    }

    /// candidate, condition: [N,1,80,20] -> scores [N].
    pub fn forward<T: Scalar>(&self, ctx: &mut LayerCtx<T>, candidate: NodeId, condition: NodeId) -> Result<NodeId> {
        for (what, id) in [("candidate", candidate), ("condition", condition)] {
            let d = ctx.tape.dims_of(id);
            if d.len() != 4 || d[1] != 1 || (d[2], d[3]) != AUDIO_IN {
                return Err(Error::contract(format!(
                    "discriminator: {what} must be [N,1,{},{}], got {d:?}",
                    AUDIO_IN.0, AUDIO_IN.1
                )));
            }
        }
        if ctx.tape.dims_of(candidate)[0] != ctx.tape.dims_of(condition)[0] {
            return Err(Error::contract("discriminator: candidate/condition batch mismatch"));
        }
        let mut h = ctx.tape.concat(&[candidate, condition], 1)?;
        for layer in 1..=4 {
            h = ctx.conv(&format!("d.conv{layer}"), h, (2, 2))?;
            if layer > 1 {
                h = ctx.bn(&format!("d.bn{layer}"), h)?;
            }
            h = ctx.lrelu(h)?;
        }
        let flat = ctx.tape.flatten(h)?;
        let score = ctx.linear("d.fc", flat)?;
        let n = ctx.tape.dims_of(score)[0];
        ctx.tape.reshape(score, &[n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Mode, NetBinding};
    use crate::tensor::{Tape, Tensor};

    fn setup() -> (Discriminator, ParamStore<f32>) {
        let d = Discriminator::new(NetConfig::with_width_scale(2));
        let mut store = ParamStore::new();
        d.init_params(&mut store, 5);
        (d, store)
    }

    #[test]
    fn emits_one_scalar_per_item() {
        let (d, store) = setup();
        let mut tape = Tape::new();
        let bind = NetBinding::bind(&mut tape, &store, &[]);
        let mut ctx = LayerCtx::new(&mut tape, &bind, Mode::Eval);
        let cand = ctx.tape.leaf(&Tensor::rand_uniform(&[3, 1, 80, 20], -1.0, 1.0, 1));
        let cond = ctx.tape.leaf(&Tensor::rand_uniform(&[3, 1, 80, 20], -1.0, 1.0, 2));
        let s = d.forward(&mut ctx, cand, cond).unwrap();
        assert_eq!(ctx.tape.dims_of(s), &[3]);

        let bad = ctx.tape.leaf(&Tensor::rand_uniform(&[3, 1, 40, 20], -1.0, 1.0, 3));
        assert!(d.forward(&mut ctx, bad, cond).is_err());
    }

    #[test]
    fn eval_mode_is_deterministic_and_asymmetric_in_inputs() {
        let (d, store) = setup();
        let cand = Tensor::rand_uniform(&[2, 1, 80, 20], -1.0, 1.0, 4);
        let cond = Tensor::rand_uniform(&[2, 1, 80, 20], -1.0, 1.0, 5);
        let run = |a: &Tensor<f32>, b: &Tensor<f32>| {
            let mut tape = Tape::new();
            let bind = NetBinding::bind(&mut tape, &store, &[]);
            let mut ctx = LayerCtx::new(&mut tape, &bind, Mode::Eval);
            let (ai, bi) = (ctx.tape.leaf(a), ctx.tape.leaf(b));
            let s = d.forward(&mut ctx, ai, bi).unwrap();
            ctx.tape.value(s).to_vec()
        };
        let fwd = run(&cand, &cond);
        assert_eq!(fwd, run(&cand, &cond), "eval mode must be deterministic");
        let swapped = run(&cond, &cand);
        assert_ne!(fwd, swapped, "swapping candidate and condition must change the score");
    }

    #[test]
    fn gradient_wrt_candidate_matches_finite_differences() {
        use crate::tensor::{grad_check, CheckedLoss};

        struct Probe;
        impl CheckedLoss for Probe {
            fn build<T: Scalar>(&self, tape: &mut Tape<T>, inputs: &[NodeId]) -> crate::error::Result<NodeId> {
                let d = Discriminator::new(NetConfig::with_width_scale(4));
                let mut store = ParamStore::<T>::new();
                d.init_params(&mut store, 77);
                let bind = NetBinding::bind(tape, &store, &[]);
                let mut ctx = LayerCtx::new(tape, &bind, Mode::Eval);
                let s = d.forward(&mut ctx, inputs[0], inputs[1])?;
                ctx.tape.sum_all(s)
            }
        }

        let cand = Tensor::<f64>::rand_uniform(&[1, 1, 80, 20], -0.9, 0.9, 6);
        let cond = Tensor::<f64>::rand_uniform(&[1, 1, 80, 20], -0.9, 0.9, 7);
        let report = grad_check(&Probe, &[("candidate", cand), ("condition", cond)], 1e-6, 24, 8).unwrap();
        assert!(report.passed(), "worst rel err {}", report.worst());
    }
}
