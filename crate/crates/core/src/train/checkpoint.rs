use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{AdamState, ParamStore};

use super::records::{read_container, write_container, TensorRecord};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VSGN";

/// Everything needed to resume a run exactly: the master seed, the loop
/// counters and both optimizers' step counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RngState {
    pub master_seed: u64,
    pub next_epoch: u64,
    pub global_step: u64,
    pub adam_g_steps: u64,
    pub adam_d_steps: u64,
}

impl RngState {
    fn to_bytes(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40);
        for v in [self.master_seed, self.next_epoch, self.global_step, self.adam_g_steps, self.adam_d_steps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 40 {
            return Err(Error::integrity(format!("rng state must be 40 bytes, got {}", bytes.len())));
        }
        let mut vals = [0u64; 5];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = u64::from_le_bytes(bytes[i * 8..(i + 1) * 8].try_into().unwrap());
        }
        Ok(RngState {
            master_seed: vals[0],
            next_epoch: vals[1],
            global_step: vals[2],
            adam_g_steps: vals[3],
            adam_d_steps: vals[4],
        })
    }
}

/// On-disk training snapshot: the config JSON verbatim, every parameter,
/// buffer and Adam moment as tensor records, and the rng/loop state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_json: String,
    pub records: Vec<TensorRecord>,
    pub rng: RngState,
}

impl Checkpoint {
    /// Collects model parameters, batch-norm buffers and Adam moments.
    /// Record order is canonical (sorted store, then sorted moments), so
    /// save -> load -> save is byte-identical.
    pub fn from_model<T: Scalar>(
        config_json: String,
        store: &ParamStore<T>,
        adam_g: &AdamState<T>,
        adam_d: &AdamState<T>,
        rng: RngState,
    ) -> Self {
        let mut records = Vec::with_capacity(store.len() * 3);
        for (name, tensor, _) in store.iter() {
            records.push(TensorRecord::from_tensor(name, tensor));
        }
        for adam in [adam_g, adam_d] {
            for name in adam.registered() {
                let (m, v) = adam.moments(name).expect("registered moments exist");
                let dims = store.get(name).expect("moment matches a parameter").dims().to_vec();
                records.push(TensorRecord::from_slice(format!("adam_m.{name}"), &dims, m));
                records.push(TensorRecord::from_slice(format!("adam_v.{name}"), &dims, v));
            }
        }
        Checkpoint { config_json, records, rng }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_container(path, CHECKPOINT_MAGIC, &self.config_json, &self.records, &self.rng.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config_json, records, tail) = read_container(path, CHECKPOINT_MAGIC)?;
        Ok(Checkpoint { config_json, records, rng: RngState::from_bytes(&tail)? })
    }

    /// Applies parameter and moment records onto an initialized model,
    /// validating the shape of every record against its destination.
    pub fn apply_to<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        adam_g: &mut AdamState<T>,
        adam_d: &mut AdamState<T>,
    ) -> Result<()> {
        let mut seen = 0usize;
        for r in &self.records {
            if let Some(name) = r.name.strip_prefix("adam_m.") {
                let m = r.to_vec::<T>()?;
                let v_rec = self
                    .records
                    .iter()
                    .find(|x| x.name == format!("adam_v.{name}"))
                    .ok_or_else(|| Error::integrity(format!("checkpoint: missing adam_v for {name}")))?;
                let v = v_rec.to_vec::<T>()?;
                let adam = if name.starts_with("g.") { &mut *adam_g } else { &mut *adam_d };
                adam.set_moments(name, m, v)?;
            } else if r.name.starts_with("adam_v.") {
                // consumed with its adam_m partner
            } else {
                if !store.contains(&r.name) {
                    return Err(Error::contract(format!(
                        "checkpoint parameter {} does not exist in this model configuration",
                        r.name
                    )));
                }
                let want = store.get(&r.name)?.dims().to_vec();
                if want != r.dims {
                    return Err(Error::contract(format!(
                        "parameter {}: checkpoint shape {:?} does not match model shape {want:?}",
                        r.name, r.dims
                    )));
                }
                store.set_data(&r.name, r.to_vec::<T>()?)?;
                seen += 1;
            }
        }
        if seen != store.len() {
            return Err(Error::integrity(format!(
                "checkpoint covers {seen} of {} model parameters",
                store.len()
            )));
        }
        adam_g.set_step_count(self.rng.adam_g_steps);
        adam_d.set_step_count(self.rng.adam_d_steps);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamKind, Tensor};

    fn sample_checkpoint() -> Checkpoint {
        let mut store = ParamStore::<f32>::new();
        store.insert("d.w", Tensor::rand_uniform(&[3, 2], -1.0, 1.0, 1), ParamKind::Trainable);
        store.insert("g.w", Tensor::rand_uniform(&[4], -1.0, 1.0, 2), ParamKind::Trainable);
        store.insert("g.bn.rmean", Tensor::zeros(&[4]), ParamKind::Buffer);
        let adam_g = AdamState::for_prefix(&store, "g.");
        let adam_d = AdamState::for_prefix(&store, "d.");
        let rng = RngState { master_seed: 7, next_epoch: 3, global_step: 120, adam_g_steps: 120, adam_d_steps: 120 };
        Checkpoint::from_model("{\"lr\":1e-4}".to_string(), &store, &adam_g, &adam_d, rng)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = std::env::temp_dir().join("vsegan_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.vsgn");
        let p2 = dir.join("b.vsgn");
        let ck = sample_checkpoint();
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(b1, b2);
        std::fs::remove_file(&p1).ok();
        std::fs::remove_file(&p2).ok();
    }

    #[test]
    fn flipped_byte_is_rejected() {
        let dir = std::env::temp_dir().join("vsegan_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.vsgn");
        sample_checkpoint().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&p).unwrap_err(), Error::Integrity(_)));
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn shape_mismatch_names_the_parameter() {
        let ck = sample_checkpoint();
        // model with a different width for g.w
        let mut store = ParamStore::<f32>::new();
        store.insert("d.w", Tensor::zeros(&[3, 2]), ParamKind::Trainable);
        store.insert("g.w", Tensor::zeros(&[8]), ParamKind::Trainable);
        store.insert("g.bn.rmean", Tensor::zeros(&[4]), ParamKind::Buffer);
        let mut adam_g = AdamState::for_prefix(&store, "g.");
        let mut adam_d = AdamState::for_prefix(&store, "d.");
        let err = ck.apply_to(&mut store, &mut adam_g, &mut adam_d).unwrap_err();
        assert!(err.to_string().contains("g.w"), "error names the parameter: {err}");
    }
}
