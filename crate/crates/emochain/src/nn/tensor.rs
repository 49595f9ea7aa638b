use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Dense `(channels, height, width)` map. Height is the time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    /// Checked constructor: the length must match the shape and every entry
    /// must be finite.
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!("tensor entry {i} is {}", data[i])));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn raw(shape: [usize; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self::raw(shape, vec![0.0; shape.iter().product()])
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for c in 0..shape[0] {
            for h in 0..shape[1] {
                for w in 0..shape[2] {
                    data.push(f(c, h, w));
                }
            }
        }
        Self::raw(shape, data)
    }

    /// Single-channel tensor holding a feature matrix (rows along time).
    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        Self::raw([1, m.rows(), m.cols()], m.data().to_vec())
    }

    pub fn to_matrix(&self) -> Result<FeatureMatrix> {
        if self.shape[0] != 1 {
            return Err(Error::Shape(format!(
                "only single-channel tensors convert to matrices, got {:?}",
                self.shape
            )));
        }
        FeatureMatrix::new(self.shape[1], self.shape[2], self.data.clone())
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[(c * self.shape[1] + h) * self.shape[2] + w]
    }

    pub(crate) fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape[1] * self.shape[2];
        &self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Joins two tensors side by side along the width axis.
    pub fn concat_width(&self, other: &Tensor) -> Result<Tensor> {
        let [c, h, w1] = self.shape;
        let [c2, h2, w2] = other.shape;
        if c != c2 || h != h2 {
            return Err(Error::Shape(format!(
                "cannot join {:?} and {:?} along width",
                self.shape, other.shape
            )));
        }
        let mut data = Vec::with_capacity(self.len() + other.len());
        for ci in 0..c {
            for hi in 0..h {
                let a = (ci * h + hi) * w1;
                let b = (ci * h + hi) * w2;
                data.extend_from_slice(&self.data[a..a + w1]);
                data.extend_from_slice(&other.data[b..b + w2]);
            }
        }
        Ok(Tensor::raw([c, h, w1 + w2], data))
    }

    /// Inverse of [`Tensor::concat_width`]: columns `[0, at)` and `[at, width)`.
    pub fn split_width(&self, at: usize) -> Result<(Tensor, Tensor)> {
        let [c, h, w] = self.shape;
        if at > w {
            return Err(Error::Shape(format!("split at {at} beyond width {w}")));
        }
        let mut left = Vec::with_capacity(c * h * at);
        let mut right = Vec::with_capacity(c * h * (w - at));
        for row in self.data.chunks(w) {
            left.extend_from_slice(&row[..at]);
            right.extend_from_slice(&row[at..]);
        }
        Ok((Tensor::raw([c, h, at], left), Tensor::raw([c, h, w - at], right)))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}
