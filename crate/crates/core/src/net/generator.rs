use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{NodeId, ParamStore};

use super::{
    init_bias, init_bn, init_weight, LayerCtx, NetConfig, AUDIO_FILTERS, AUDIO_STRIDES, FILTER_SIZES, VIDEO_POOLS,
};

/// Generator: 10-layer audio and video encoders whose per-stage features are
/// fused into decoder skip connections, an embedding bottleneck joining the
/// deepest features, and a 10-layer transposed-convolution decoder with a
/// tanh head.
#[derive(Debug, Clone, Copy)]
pub struct Generator {
    pub cfg: NetConfig,
}

impl Generator {
    pub fn new(cfg: NetConfig) -> Self {
        Generator { cfg }
    }

    /// Channels flowing into 1-based encoder layer `i`.
    fn enc_in(&self, i: usize, first: usize) -> usize {
        if i == 1 {
            first
        } else {
            self.cfg.ch(AUDIO_FILTERS[i - 2])
        }
    }

    /// (in, out, kernel, stride) of 1-based decoder layer `j`; odd layers
    /// take the skip concat, layer 10 emits the single enhanced channel.
    fn dec_layer(&self, j: usize) -> (usize, usize, (usize, usize), (usize, usize)) {
        let e = 11 - j; // encoder layer this one inverts
        let in_ch = self.cfg.ch(AUDIO_FILTERS[e - 1]) * if j % 2 == 1 { 2 } else { 1 };
        let out_ch = if e == 1 { 1 } else { self.cfg.ch(AUDIO_FILTERS[e - 2]) };
        (in_ch, out_ch, FILTER_SIZES[e - 1], AUDIO_STRIDES[e - 1])
    }

    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        for i in 1..=10 {
            let out = self.cfg.ch(AUDIO_FILTERS[i - 1]);
            let (kh, kw) = FILTER_SIZES[i - 1];

            let a_in = self.enc_in(i, self.cfg.audio_in_channels());
            init_weight(store, &format!("g.aenc.conv{i}.w"), &[out, a_in, kh, kw], a_in * kh * kw, seed);
            init_bias(store, &format!("g.aenc.conv{i}.b"), out);
            init_bn(store, &format!("g.aenc.bn{i}"), out);

            let v_in = self.enc_in(i, 5);
            init_weight(store, &format!("g.venc.conv{i}.w"), &[out, v_in, kh, kw], v_in * kh * kw, seed);
            init_bias(store, &format!("g.venc.conv{i}.b"), out);
            init_bn(store, &format!("g.venc.bn{i}"), out);
        }
        for k in 1..=5 {
            let c = self.cfg.ch(AUDIO_FILTERS[2 * k - 1]);
            init_weight(store, &format!("g.fuse{k}.conv.w"), &[c, 2 * c, 3, 3], 2 * c * 9, seed);
            init_bias(store, &format!("g.fuse{k}.conv.b"), c);
            init_bn(store, &format!("g.fuse{k}.bn"), c);
        }
        let w = self.cfg.embedding_width();
        init_weight(store, "g.emb.fc1.w", &[w, 2 * w], 2 * w, seed);
        init_bias(store, "g.emb.fc1.b", w);
        init_weight(store, "g.emb.fc2.w", &[w, w], w, seed);
        init_bias(store, "g.emb.fc2.b", w);
        for j in 1..=10 {
            let (in_ch, out_ch, (kh, kw), _) = self.dec_layer(j);
            init_weight(store, &format!("g.dec.deconv{j}.w"), &[in_ch, out_ch, kh, kw], in_ch * kh * kw, seed);
            init_bias(store, &format!("g.dec.deconv{j}.b"), out_ch);
            if j < 10 {
                init_bn(store, &format!("g.dec.bn{j}"), out_ch);
            }
        }
    }

    /// Strided conv + unit-stride conv, each with batch-norm and leaky-ReLU.
    pub(crate) fn audio_stage<T: Scalar>(&self, ctx: &mut LayerCtx<T>, stage: usize, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for i in [2 * stage - 1, 2 * stage] {
            h = ctx.conv(&format!("g.aenc.conv{i}"), h, AUDIO_STRIDES[i - 1])?;
            h = ctx.bn(&format!("g.aenc.bn{i}"), h)?;
            h = ctx.lrelu(h)?;
        }
        Ok(h)
    }

    /// Two unit-stride convs (batch-norm + leaky-ReLU), then the stage's two
    /// max-pool windows.
    pub(crate) fn video_stage<T: Scalar>(&self, ctx: &mut LayerCtx<T>, stage: usize, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for i in [2 * stage - 1, 2 * stage] {
            h = ctx.conv(&format!("g.venc.conv{i}"), h, (1, 1))?;
            h = ctx.bn(&format!("g.venc.bn{i}"), h)?;
            h = ctx.lrelu(h)?;
        }
        for i in [2 * stage - 1, 2 * stage] {
            let pool = VIDEO_POOLS[i - 1];
            if pool != (1, 1) {
                h = ctx.tape.maxpool2d(h, pool)?;
            }
        }
        Ok(h)
    }

    /// Channel-concat of the equal-dim audio/video features, 3x3 conv from
    /// 2C to C channels, batch-norm, leaky-ReLU. The output is this stage's
    /// decoder skip tensor.
    pub(crate) fn fusion_block<T: Scalar>(
        &self,
        ctx: &mut LayerCtx<T>,
        stage: usize,
        a: NodeId,
        v: NodeId,
    ) -> Result<NodeId> {
        if ctx.tape.dims_of(a) != ctx.tape.dims_of(v) {
            return Err(Error::contract(format!(
                "fusion stage {stage}: audio dims {:?} != video dims {:?}",
                ctx.tape.dims_of(a),
                ctx.tape.dims_of(v)
            )));
        }
        let cat = ctx.tape.concat(&[a, v], 1)?;
        let h = ctx.conv(&format!("g.fuse{stage}.conv"), cat, (1, 1))?;
        let h = ctx.bn(&format!("g.fuse{stage}.bn"), h)?;
        ctx.lrelu(h)
    }

    /// Flatten both deepest streams, concatenate, two fully connected layers
    /// with leaky-ReLU, reshape back to [N, C5, 5, 1].
    pub(crate) fn embedding_bottleneck<T: Scalar>(
        &self,
        ctx: &mut LayerCtx<T>,
        a5: NodeId,
        v5: NodeId,
    ) -> Result<NodeId> {
        let c5 = self.cfg.ch(AUDIO_FILTERS[9]);
        let n = ctx.tape.dims_of(a5)[0];
        for (what, id) in [("audio", a5), ("video", v5)] {
            if ctx.tape.dims_of(id) != [n, c5, 5, 1] {
                return Err(Error::contract(format!(
                    "embedding bottleneck: {what} stream must be [{n},{c5},5,1], got {:?}",
                    ctx.tape.dims_of(id)
                )));
            }
        }
        let fa = ctx.tape.flatten(a5)?;
        let fv = ctx.tape.flatten(v5)?;
        let cat = ctx.tape.concat(&[fa, fv], 1)?;
        let h = ctx.linear("g.emb.fc1", cat)?;
        let h = ctx.lrelu(h)?;
        let h = ctx.linear("g.emb.fc2", h)?;
        let h = ctx.lrelu(h)?;
        ctx.tape.reshape(h, &[n, c5, 5, 1])
    }

    /// Skip concat, then the transposed-conv pair inverting encoder stage
    /// (6 - k); the final layer swaps batch-norm + leaky-ReLU for tanh.
    pub(crate) fn decoder_stage<T: Scalar>(
        &self,
        ctx: &mut LayerCtx<T>,
        stage: usize,
        h: NodeId,
        skip: NodeId,
    ) -> Result<NodeId> {
        if ctx.tape.dims_of(h) != ctx.tape.dims_of(skip) {
            return Err(Error::contract(format!(
                "decoder stage {stage}: input dims {:?} != skip dims {:?}",
                ctx.tape.dims_of(h),
                ctx.tape.dims_of(skip)
            )));
        }
        let mut x = ctx.tape.concat(&[h, skip], 1)?;
        for j in [2 * stage - 1, 2 * stage] {
            let (_, _, _, stride) = self.dec_layer(j);
            x = ctx.deconv(&format!("g.dec.deconv{j}"), x, stride)?;
            if j < 10 {
                x = ctx.bn(&format!("g.dec.bn{j}"), x)?;
                x = ctx.lrelu(x)?;
            } else {
                x = ctx.tape.tanh(x)?;
            }
        }
        Ok(x)
    }

    /// Full enhancement pass: audio [N,Cin,80,20] + video [N,5,80,80] ->
    /// [N,1,80,20] in [-1,1]. Encoder streams propagate stage-to-stage;
    /// fusion outputs only feed the decoder skips, and the stage-5 encoder
    /// outputs feed the bottleneck.
    pub fn forward<T: Scalar>(&self, ctx: &mut LayerCtx<T>, audio: NodeId, video: NodeId) -> Result<NodeId> {
        let plan = super::encoder_plan(&self.cfg);
        let mut a = audio;
        let mut v = video;
        let mut skips = Vec::with_capacity(5);
        for stage in 1..=5 {
            a = self.audio_stage(ctx, stage, a)?;
            v = self.video_stage(ctx, stage, v)?;
            let want = plan[stage - 1];
            let a_dims = ctx.tape.dims_of(a);
            if a_dims[1] != want.channels || (a_dims[2], a_dims[3]) != want.audio_hw {
                return Err(Error::contract(format!(
                    "encoder stage {stage}: audio dims {a_dims:?} do not match plan {want:?}"
                )));
            }
            if ctx.tape.dims_of(a) != ctx.tape.dims_of(v) {
                return Err(Error::contract(format!(
                    "encoder stage {stage}: audio dims {:?} != video dims {:?}",
                    ctx.tape.dims_of(a),
                    ctx.tape.dims_of(v)
                )));
            }
            skips.push(self.fusion_block(ctx, stage, a, v)?);
        }
        let mut h = self.embedding_bottleneck(ctx, a, v)?;
        for stage in 1..=5 {
            h = self.decoder_stage(ctx, stage, h, skips[5 - stage])?;
        }
        Ok(h)
    }
}


#[cfg(test)]
mod linearity_tests {
    use super::*;
    use crate::net::{Mode, NetBinding, NetConfig};
    use crate::tensor::{ParamKind, ParamStore, Tape, Tensor};

    #[test]
    fn fusion_conv_is_linear_in_its_inputs() {
        // zero streams with a zero bias give a zero pre-activation map
        let cfg = NetConfig::with_width_scale(4);
        let c = cfg.ch(1024);
        let mut store = ParamStore::<f32>::new();
        store.insert(
            "g.fuse5.conv.w",
            Tensor::rand_uniform(&[c, 2 * c, 3, 3], -0.5, 0.5, 1),
            ParamKind::Trainable,
        );
        store.insert("g.fuse5.conv.b", Tensor::zeros(&[c]), ParamKind::Trainable);
        let mut tape = Tape::new();
        let bind = NetBinding::bind(&mut tape, &store, &[]);
        let mut ctx = LayerCtx::new(&mut tape, &bind, Mode::Eval);
        let a = ctx.tape.leaf(&Tensor::zeros(&[1, c, 5, 1]));
        let v = ctx.tape.leaf(&Tensor::zeros(&[1, c, 5, 1]));
        let cat = ctx.tape.concat(&[a, v], 1).unwrap();
        let pre = ctx.conv("g.fuse5.conv", cat, (1, 1)).unwrap();
        assert!(ctx.tape.value(pre).iter().all(|&x| x == 0.0));
    }
}
