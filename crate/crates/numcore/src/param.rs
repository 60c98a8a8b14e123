use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NumError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named, ordered collection of trainable tensors.
///
/// Insertion order is preserved and is the order parameters are written
/// to checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        let id = self.params.len();
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Re-initializes every weight uniformly in `[-scale, scale]`.
    ///
    /// Draws happen in f64 so the same seed yields the same weights
    /// (up to rounding) in either precision.
    pub fn init_uniform(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = T::from_f64_lossy(rng.gen_range(-scale..=scale));
            }
        }
    }

    /// Copies every value into a store of another precision. Gradients
    /// are reset.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.cast())
                .expect("names are unique in the source store");
        }
        out
    }

    /// Overwrites values from `other`, which must hold the same names and
    /// shapes in the same order.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        check_compatible(self, other)?;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Checks that two stores hold identical names and shapes, listing every
/// difference found.
pub fn check_compatible<A: Scalar, B: Scalar>(left: &ParamStore<A>, right: &ParamStore<B>) -> Result<()> {
    let mut diffs = Vec::new();
    for p in &left.params {
        match right.by_name(&p.name) {
            None => diffs.push(format!("missing `{}`", p.name)),
            Some(q) if q.value.shape() != p.value.shape() => diffs.push(format!(
                "`{}` shape {:?} vs {:?}",
                p.name,
                p.value.shape(),
                q.value.shape()
            )),
            _ => {}
        }
    }
    for q in &right.params {
        if left.by_name(&q.name).is_none() {
            diffs.push(format!("unexpected `{}`", q.name));
        }
    }
    if diffs.is_empty() {
        let same_order = left
            .params
            .iter()
            .zip(&right.params)
            .all(|(a, b)| a.name == b.name);
        if !same_order {
            diffs.push("parameter order differs".into());
        }
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(NumError::Format(format!(
            "incompatible parameters: {}",
            diffs.join("; ")
        )))
    }
}
