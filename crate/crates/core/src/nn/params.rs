use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Mat;
use crate::scalar::Real;

/// Named parameters in a fixed registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Mat<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn push(&mut self, name: impl Into<String>, value: Mat<T>) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat<T>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Mat<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Mat::is_finite)
    }

    pub fn fill(&mut self, v: T) {
        self.values.iter_mut().for_each(|m| m.data.iter_mut().for_each(|x| *x = v));
    }
}

/// Glorot-uniform draw for a `fan_in × fan_out` weight.
pub(crate) fn xavier<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Mat<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::lit(rng.gen_range(-limit..limit))).collect();
    Mat { rows: fan_in, cols: fan_out, data }
}
