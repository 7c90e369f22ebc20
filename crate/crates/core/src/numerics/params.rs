use super::graph::{Gradients, ParamId};
use super::tensor::Tensor;
use super::NumericsError;

/// Named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.tensors
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (t, n))| (ParamId(i), n.as_str(), t))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NumericsError> {
        if flat.len() != self.num_scalars() {
            return Err(NumericsError::Shape(format!(
                "flat parameter vector has {} values, store holds {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Flattened gradient in store order; parameters the pass never touched
    /// get zeros.
    pub fn flat_grad(&self, grads: &Gradients) -> Vec<f64> {
        let per = self.grads_by_param(grads);
        per.into_iter().flatten().collect()
    }

    /// Per-tensor gradients in store order.
    pub fn grads_by_param(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        for (id, g) in grads.param_grads() {
            if let (Some(slot), Some(g)) = (out.get_mut(id.0), g) {
                slot.copy_from_slice(g);
            }
        }
        out
    }

    /// Stores `grads` into each tensor's gradient buffer.
    pub fn attach_grads(&mut self, grads: &Gradients) {
        let per = self.grads_by_param(grads);
        for (t, g) in self.tensors.iter_mut().zip(per) {
            t.set_grad(g).expect("gradient length matches");
        }
    }

    /// Order-sensitive 64-bit FNV-1a digest of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.values() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
