//! Named, ordered parameter storage.
//!
//! Parameters live outside any tape as plain value buffers; each training
//! step registers them on a fresh tape and reads the gradients back. Order
//! is fixed at construction so optimizer state, gradient vectors, and RNG
//! draws all line up deterministically.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Param {
        let name = name.into();
        assert_eq!(
            values.len(),
            shape.iter().product::<usize>(),
            "param {name}: value/shape mismatch"
        );
        Param {
            name,
            shape,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { params: Vec::new() }
    }

    /// Appends a parameter; names must be unique.
    pub fn add(&mut self, param: Param) -> usize {
        assert!(
            self.index_of(&param.name).is_none(),
            "duplicate parameter name {}",
            param.name
        );
        self.params.push(param);
        self.params.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn at(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Removes a parameter by name, preserving the order of the rest.
    pub fn remove(&mut self, name: &str) -> Option<Param> {
        let idx = self.index_of(name)?;
        Some(self.params.remove(idx))
    }
}
