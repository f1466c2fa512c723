//! Named parameter storage.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::InvalidArgument(format!("unknown precision {other:?}"))),
        }
    }

    /// Rounds every value to the nearest representable one.
    pub fn round(self, t: &mut Tensor) {
        if self == Precision::F32 {
            t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
    index: BTreeMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            trainable: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Adds a parameter, or returns the index of an existing one with the
    /// same name.
    pub fn add(&mut self, name: &str, t: Tensor) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.into());
        self.tensors.push(t);
        self.trainable.push(true);
        self.index.insert(name.into(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.into()))?;
        if slot.shape() != t.shape() {
            return Err(crate::error::shape_err(
                format!("{:?}", slot.shape()),
                format!("{:?}", t.shape()),
            ));
        }
        *slot = t;
        Ok(())
    }

    pub fn trainable(&self, idx: usize) -> bool {
        self.trainable[idx]
    }

    /// Marks exactly the parameters accepted by `pred` as trainable.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for (i, n) in self.names.iter().enumerate() {
            self.trainable[i] = pred(n);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn round_to(&mut self, p: Precision) {
        self.tensors.iter_mut().for_each(|t| p.round(t));
    }
}

/// Normal init with standard deviation `1/√fan_in`.
pub fn lecun_normal(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let std = 1.0 / crate::float::sqrt(fan_in as f64);
    let data = rng::normal_vec(rng, fan_in * fan_out).into_iter().map(|x| x * std).collect();
    Tensor::from_vec(fan_in, fan_out, data).expect("sized")
}

pub fn normal(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = rng::normal_vec(rng, rows * cols).into_iter().map(|x| x * std).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

pub fn uniform(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng::uniform(rng, -bound, bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}
