use serde::{Deserialize, Serialize};

use super::NumError;

/// Dense row-major `f64` tensor of rank 1 or 2.
///
/// Construction rejects zero extents, length mismatches and non-finite values,
/// so every `Tensor` in circulation is finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return Err(NumError::BadShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::LengthMismatch { shape, len: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFiniteValue {
                index: pos,
                value: data[pos],
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor without the finiteness scan. Callers check the result
    /// themselves (the graph flags non-finite outputs per node).
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(value: f64) -> Result<Self, NumError> {
        Tensor::new(vec![1], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, NumError> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` view; a rank-1 tensor of length `n` reads as `(1, n)`.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor, NumError> {
        Tensor::new(shape, self.data.clone())
    }
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    /// Little-endian IEEE-754 bits, hex encoded, so files round-trip exactly.
    data: String,
}

impl From<Tensor> for RawTensor {
    fn from(t: Tensor) -> Self {
        let mut bytes = Vec::with_capacity(t.data.len() * 8);
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        RawTensor {
            shape: t.shape,
            data: hex::encode(bytes),
        }
    }
}

impl TryFrom<RawTensor> for Tensor {
    type Error = NumError;

    fn try_from(raw: RawTensor) -> Result<Self, Self::Error> {
        let bytes = hex::decode(&raw.data).map_err(|e| NumError::Decode(e.to_string()))?;
        if bytes.len() % 8 != 0 {
            return Err(NumError::Decode("tensor payload is not a multiple of 8 bytes".into()));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Tensor::new(raw.shape, data)
    }
}
