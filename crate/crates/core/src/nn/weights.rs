use std::fmt;

use super::{NnError, Tensor};

pub const LENET_MNIST_V1: &str = "lenet-mnist-v1";

/// Shape and Glorot fan of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub shape: &'static [usize],
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// Convolution kernels are stored [kh, kw, in, out]; the dense kernel [in, out].
const LENET_PARAMS: [ParamSpec; 6] = [
    ParamSpec {
        name: "conv1.w",
        shape: &[5, 5, 1, 8],
        fan_in: 25,
        fan_out: 200,
        is_bias: false,
    },
    ParamSpec {
        name: "conv1.b",
        shape: &[8],
        fan_in: 25,
        fan_out: 200,
        is_bias: true,
    },
    ParamSpec {
        name: "conv2.w",
        shape: &[5, 5, 8, 16],
        fan_in: 200,
        fan_out: 400,
        is_bias: false,
    },
    ParamSpec {
        name: "conv2.b",
        shape: &[16],
        fan_in: 200,
        fan_out: 400,
        is_bias: true,
    },
    ParamSpec {
        name: "dense1.w",
        shape: &[256, 10],
        fan_in: 256,
        fan_out: 10,
        is_bias: false,
    },
    ParamSpec {
        name: "dense1.b",
        shape: &[10],
        fan_in: 256,
        fan_out: 10,
        is_bias: true,
    },
];

/// The supported model architectures.
///
/// `lenet-mnist-v1`: conv(5x5, 8) → relu → maxpool 2 → conv(5x5, 16) → relu →
/// maxpool 2 → flatten → dense(10), valid padding throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelSpec {
    #[default]
    LenetMnistV1,
}

impl ModelSpec {
    pub fn from_id(id: &str) -> Result<Self, NnError> {
        match id {
            LENET_MNIST_V1 => Ok(ModelSpec::LenetMnistV1),
            other => Err(NnError::Config(format!("unknown architecture_id {other:?}"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::LenetMnistV1 => LENET_MNIST_V1,
        }
    }

    pub fn params(&self) -> &'static [ParamSpec] {
        match self {
            ModelSpec::LenetMnistV1 => &LENET_PARAMS,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(ParamSpec::len).sum()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [28, 28, 1]
    }

    pub fn num_classes(&self) -> usize {
        10
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// The full parameter vector of a model as an ordered list of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsBundle {
    tensors: Vec<NamedTensor>,
}

impl WeightsBundle {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        Self { tensors }
    }

    /// Convenience constructor from `(name, shape, data)` triples.
    pub fn from_parts<I, S>(parts: I) -> Result<Self, NnError>
    where
        I: IntoIterator<Item = (S, Vec<usize>, Vec<f32>)>,
        S: Into<String>,
    {
        let tensors = parts
            .into_iter()
            .map(|(name, shape, data)| {
                Ok(NamedTensor {
                    name: name.into(),
                    tensor: Tensor::new(shape, data)?,
                })
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        Ok(Self { tensors })
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            tensors: spec
                .params()
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.to_string(),
                    tensor: Tensor::zeros(p.shape.to_vec()),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.len()).sum()
    }

    /// All coordinates in bundle order.
    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.tensors.iter().flat_map(|t| t.tensor.data().iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f32> + '_ {
        self.tensors
            .iter_mut()
            .flat_map(|t| t.tensor.data_mut().iter_mut())
    }

    pub fn to_flat(&self) -> Vec<f32> {
        self.values().collect()
    }

    /// Same names, shapes and order.
    pub fn same_structure(&self, other: &WeightsBundle) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape())
    }

    pub fn check_same_structure(&self, other: &WeightsBundle) -> Result<(), NnError> {
        if self.same_structure(other) {
            Ok(())
        } else {
            Err(NnError::Dimension(
                "weight bundles differ in tensor names or shapes".into(),
            ))
        }
    }

    /// Verifies names, shapes and order against an architecture.
    pub fn check_conforms(&self, spec: ModelSpec) -> Result<(), NnError> {
        let params = spec.params();
        if self.tensors.len() != params.len() {
            return Err(NnError::Dimension(format!(
                "{spec} has {} tensors, bundle has {}",
                params.len(),
                self.tensors.len()
            )));
        }
        for (t, p) in self.tensors.iter().zip(params) {
            if t.name != p.name || t.tensor.shape() != p.shape {
                return Err(NnError::Dimension(format!(
                    "expected {} {:?}, found {} {:?}",
                    p.name,
                    p.shape,
                    t.name,
                    t.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.tensor.is_finite())
    }

    /// Bit-level equality, distinguishing -0.0 from 0.0 and comparing NaN payloads.
    pub fn bit_eq(&self, other: &WeightsBundle) -> bool {
        self.same_structure(other)
            && self
                .values()
                .zip(other.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Elementwise map into a bundle of identical structure.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> WeightsBundle {
        let mut out = self.clone();
        for v in out.values_mut() {
            *v = f(*v);
        }
        out
    }

    /// Replaces every coordinate, in bundle order, from `values`.
    pub fn with_values(&self, values: &[f32]) -> Result<WeightsBundle, NnError> {
        if values.len() != self.num_params() {
            return Err(NnError::Dimension(format!(
                "bundle holds {} values, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut out = self.clone();
        for (dst, src) in out.values_mut().zip(values) {
            *dst = *src;
        }
        Ok(out)
    }
}
