use autodiff::{Real, Tensor};
use rand::Rng;

/// Named, ordered model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    /// Uniform in `±bound`.
    pub(crate) fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> usize {
        let t = Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-bound..=bound)));
        self.add(name, t)
    }

    pub(crate) fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> usize {
        self.add(name, Tensor::full(shape.to_vec(), T::lit(value)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Replaces every tensor, keeping names; shapes must match.
    pub fn replace_all(&mut self, tensors: Vec<Tensor<T>>) -> bool {
        if tensors.len() != self.tensors.len()
            || tensors.iter().zip(&self.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return false;
        }
        self.tensors = tensors;
        true
    }
}
