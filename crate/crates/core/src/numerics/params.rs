use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// How a freshly registered parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform {
        fan_in: usize,
    },
    Constant(f64),
}

/// Named trainable parameters with one gradient accumulator each.
///
/// Ids are assigned in registration order; name iteration is lexicographic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
    index: BTreeMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; values are rounded onto the `f32` grid so that
    /// checkpoints round-trip exactly.
    pub fn add<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let count: usize = shape.iter().product();
        let data = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..count)
                    .map(|_| to_f32_grid(rng.gen_range(-bound..bound)))
                    .collect()
            }
            Init::Constant(c) => vec![to_f32_grid(c); count],
        };
        self.insert(name, Tensor::new(shape, data)?)
    }

    /// Registers a parameter with explicit values.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.values.len());
        self.grads.push(vec![0.0; value.len()]);
        self.values.push(value.with_grad(true));
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn split_mut(&mut self) -> (&[Tensor], &mut [Vec<f64>]) {
        (&self.values, &mut self.grads)
    }

    /// Ids in lexicographic name order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.index.values().copied()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.ids()
            .flat_map(|id| self.grads[id.0].iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Plain gradient descent with global-norm clipping. Updated values are
    /// kept on the `f32` grid.
    pub fn sgd_step(&mut self, learning_rate: f64, clip_norm: f64) {
        let norm = self.grad_norm();
        let scale = if clip_norm > 0.0 && norm > clip_norm {
            clip_norm / norm
        } else {
            1.0
        };
        for (value, grad) in self.values.iter_mut().zip(&self.grads) {
            for (v, g) in value.data_mut().iter_mut().zip(grad) {
                *v = to_f32_grid(*v - learning_rate * scale * g);
            }
        }
    }

    /// Adds `other`'s accumulated gradients into this set's accumulators.
    pub fn merge_grads(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape(
                "merging gradients of different parameter sets",
            ));
        }
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

pub fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        ps.add("a", vec![2], Init::Constant(0.0), &mut rng).unwrap();
        assert!(ps.add("a", vec![2], Init::Constant(0.0), &mut rng).is_err());
    }

    #[test]
    fn ids_iterate_lexicographically() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        for n in ["z.b", "a.c", "m"] {
            ps.add(n, vec![1], Init::Constant(1.0), &mut rng).unwrap();
        }
        let names: Vec<_> = ps.ids().map(|id| ps.name(id).to_string()).collect();
        assert_eq!(names, ["a.c", "m", "z.b"]);
    }

    #[test]
    fn uniform_init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let id = ps
            .add("w", vec![10, 10], Init::Uniform { fan_in: 16 }, &mut rng)
            .unwrap();
        assert!(ps.value(id).data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn clipping_limits_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        let id = ps.add("w", vec![2], Init::Constant(0.0), &mut rng).unwrap();
        ps.grads[id.0] = vec![30.0, 40.0];
        ps.sgd_step(1.0, 5.0);
        assert_eq!(ps.value(id).data(), &[-3.0, -4.0]);
    }
}
