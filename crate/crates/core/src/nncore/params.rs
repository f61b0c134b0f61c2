use crate::{Error, Result};

/// Flat vector holding every parameter of a model.
///
/// Points on a line (`theta0`), gradients and directions all live in this
/// representation; the layout is fixed by the model architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::spec(format!(
                "parameter length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    /// Dot product, summed in index order.
    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        let mut acc = 0.0;
        for (a, b) in self.0.iter().zip(&other.0) {
            acc += a * b;
        }
        Ok(acc)
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.0 {
            acc += v * v;
        }
        acc.sqrt()
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Little-endian f64 encoding of the raw array.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() * 8);
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<ParamVector> {
        if bytes.len() % 8 != 0 {
            return Err(Error::Format {
                offset: (bytes.len() - bytes.len() % 8) as u64,
                message: format!("length {} is not a multiple of 8", bytes.len()),
            });
        }
        Ok(ParamVector(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// The point `origin + s * direction`.
pub fn axpy_point(origin: &ParamVector, s: f64, direction: &ParamVector) -> Result<ParamVector> {
    origin.check_len(direction)?;
    if s == 0.0 {
        return Ok(origin.clone());
    }
    Ok(ParamVector(
        origin
            .0
            .iter()
            .zip(&direction.0)
            .map(|(o, d)| o + s * d)
            .collect(),
    ))
}
