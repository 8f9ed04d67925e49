use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::Scalar;

/// Dense row-major tensor. Rank 1 or 2 in practice; shape is kept as a vec so
/// checkpoints round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} wants {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (rows, cols) view of the shape: rank-1 tensors are 1×n rows.
    pub fn as_2d(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(Error::shape(
                "as_2d",
                format!("rank {} tensor has no 2-D view", self.shape.len()),
            )),
        }
    }

    pub fn map_into<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::cast_from(v.cast_f64())).collect(),
        }
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named parameter collection. A `BTreeMap` so that every iteration —
/// checkpoint serialization, optimizer sweeps, norm computation — visits
/// parameters in one canonical (lexicographic) order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// Iterate in canonical (sorted-name) order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// A store with the same names/shapes, all zeros. Gradient accumulators
    /// and optimizer moments start from this.
    pub fn zeros_like(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in self.iter() {
            out.insert(name.clone(), Tensor::zeros(t.shape.clone()));
        }
        out
    }

    /// Elementwise `self += other`. Shapes and names must match exactly.
    pub fn add_assign(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(
                "param_add",
                format!("{} vs {} parameters", self.len(), other.len()),
            ));
        }
        for ((an, at), (bn, bt)) in self.map.iter_mut().zip(other.iter()) {
            if an != bn || at.shape != bt.shape {
                return Err(Error::shape(
                    "param_add",
                    format!("mismatched entry {an} vs {bn}"),
                ));
            }
            for (a, b) in at.data.iter_mut().zip(&bt.data) {
                *a += *b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for (_, t) in self.iter_mut() {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    pub fn global_sq_norm(&self) -> T {
        self.map.values().map(|t| t.sq_norm()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|t| t.all_finite())
    }

    pub fn map_into<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, t) in self.iter() {
            out.insert(name.clone(), t.map_into());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_validation() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn store_iterates_sorted() {
        let mut p = ParamStore::<f32>::new();
        p.insert("zeta", Tensor::zeros(vec![1]));
        p.insert("alpha", Tensor::zeros(vec![1]));
        p.insert("mid", Tensor::zeros(vec![1]));
        let names: Vec<_> = p.names().cloned().collect();
        assert_eq!(names, vec!["alpha", "mid", "zeta"]);
    }

    #[test]
    fn add_assign_rejects_mismatch() {
        let mut a = ParamStore::<f32>::new();
        a.insert("w", Tensor::zeros(vec![2]));
        let mut b = ParamStore::<f32>::new();
        b.insert("v", Tensor::zeros(vec![2]));
        assert!(a.add_assign(&b).is_err());
    }

    #[test]
    fn global_norm_sums_all_entries() {
        let mut p = ParamStore::<f64>::new();
        p.insert("a", Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        p.insert("b", Tensor::new(vec![1], vec![12.0]).unwrap());
        // 9 + 16 + 144 = 169
        assert!((p.global_sq_norm() - 169.0).abs() < 1e-12);
    }
}
