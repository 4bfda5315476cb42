use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Mat;

/// How a tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

/// Named tensors in a fixed order. Also used to hold gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Mat<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Each tensor draws from its own stream keyed by name, so a tensor's
    /// initial value does not depend on which other tensors exist.
    pub fn init(layout: &[TensorSpec], seed: u64) -> Result<Self> {
        let mut store = Self::new();
        for spec in layout {
            let (r, c) = spec.shape;
            let m = match spec.init {
                Init::Zeros => Mat::zeros(r, c),
                Init::Ones => Mat::filled(r, c, T::one()),
                Init::Uniform { fan_in } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(fnv1a(&spec.name));
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    Mat::from_fn(r, c, |_, _| T::lit(rng.random_range(-bound..bound)))
                }
            };
            store.insert(&spec.name, m)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, m: Mat<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} defined twice")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(m);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Mat<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat<T>> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Mat<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Mat::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// First tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, m)| !m.all_finite()).map(|(n, _)| n)
    }

    pub fn global_norm(&self) -> T {
        self.tensors.iter().fold(T::zero(), |a, m| a + m.sum_sq()).sqrt()
    }

    /// Checks names and shapes against `layout`, in order.
    pub fn check_layout(&self, layout: &[TensorSpec]) -> Result<()> {
        if self.len() != layout.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, configuration needs {}",
                self.len(),
                layout.len()
            )));
        }
        for ((name, m), spec) in self.iter().zip(layout) {
            if name != spec.name || m.shape() != spec.shape {
                return Err(Error::Config(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    m.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}
