use std::collections::BTreeMap;

use super::tensor::{Real, Tensor};
use super::{GradError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named trainable tensors with paired gradient accumulators. Iteration is
/// ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<T> {
    entries: BTreeMap<String, Parameter<T>>,
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(GradError::DuplicateParameter(name));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name, Parameter { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| GradError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| GradError::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.value)
    }

    /// Replace a value; the shape must not change.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(GradError::Mismatch {
                op: "set_value",
                axis: "shape",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Parameter {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut p = ParameterSet::<f64>::new();
        p.insert("b", Tensor::zeros(&[2])).unwrap();
        p.insert("a", Tensor::zeros(&[3, 1])).unwrap();
        assert!(matches!(p.insert("a", Tensor::zeros(&[1])), Err(GradError::DuplicateParameter(_))));
        let names: Vec<_> = p.names().collect();
        assert_eq!(names, ["a", "b"]);
        for (_, param) in p.iter() {
            assert_eq!(param.value.shape(), param.grad.shape());
        }
    }

    #[test]
    fn set_value_keeps_shape() {
        let mut p = ParameterSet::<f32>::new();
        p.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(p.set_value("w", Tensor::zeros(&[4])).is_err());
        assert!(p.set_value("w", Tensor::full(&[2, 2], 1.0)).is_ok());
        assert!(p.value("missing").is_err());
    }
}
