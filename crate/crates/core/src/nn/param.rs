use std::collections::HashMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::{Error, Result};

/// Handle to one entry of a [`ParamSet`]. Stays valid across clones of the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

/// Named, ordered parameter arrays with same-shape gradient slots.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
    pub step_count: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter with a zeroed gradient.
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let grad = ArrayD::zeros(value.raw_dim());
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Param { name, value, grad });
        Ok(ParamId(id))
    }

    /// Adds a parameter initialised uniformly in `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            if bound > 0.0 {
                rng.random_range(-bound..=bound)
            } else {
                0.0
            }
        });
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    /// Euclidean norm of all gradients taken together.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Copies values (not gradients) from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::dim(
                "ParamSet copy",
                self.entries.len(),
                other.entries.len(),
            ));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::dim(
                    format!("ParamSet copy `{}`", dst.name),
                    format!("{} {:?}", dst.name, dst.value.shape()),
                    format!("{} {:?}", src.name, src.value.shape()),
                ));
            }
            dst.value.assign(&src.value);
        }
        Ok(())
    }

    /// A value-only clone with zeroed gradients.
    pub fn detached_clone(&self) -> ParamSet {
        let mut out = self.clone();
        out.zero_grads();
        out
    }

    /// Flat coordinate `(entry, offset)` view used by the gradient checker.
    pub(crate) fn coordinates(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .enumerate()
            .flat_map(|(i, p)| (0..p.value.len()).map(move |j| (i, j)))
            .collect()
    }

    pub(crate) fn value_at_mut(&mut self, coord: (usize, usize)) -> &mut f64 {
        let p = &mut self.entries[coord.0];
        p.value
            .as_slice_mut()
            .expect("parameter arrays are stored contiguously")
            .get_mut(coord.1)
            .expect("coordinate in range")
    }

    pub(crate) fn grad_at(&self, coord: (usize, usize)) -> f64 {
        self.entries[coord.0].grad.as_slice().expect("contiguous")[coord.1]
    }

    pub(crate) fn name_at(&self, coord: (usize, usize)) -> &str {
        &self.entries[coord.0].name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.add("w", ArrayD::zeros(IxDyn(&[2, 2]))).unwrap();
        assert!(matches!(
            ps.add("w", ArrayD::zeros(IxDyn(&[1]))),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn grads_match_shapes_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let a = ps.add_uniform("a", &[3, 4], 0.5, &mut rng).unwrap();
        ps.add_uniform("b", &[4], 0.5, &mut rng).unwrap();
        for p in ps.iter() {
            assert_eq!(p.grad.shape(), p.value.shape());
        }
        ps.get_mut(a).grad.fill(2.0);
        ps.zero_grads();
        assert!(ps.iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
        assert!(ps.get(a).value.iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn copy_requires_same_layout() {
        let mut a = ParamSet::new();
        a.add("x", ArrayD::zeros(IxDyn(&[2]))).unwrap();
        let mut b = ParamSet::new();
        b.add("x", ArrayD::zeros(IxDyn(&[3]))).unwrap();
        assert!(a.copy_values_from(&b).is_err());
    }
}
