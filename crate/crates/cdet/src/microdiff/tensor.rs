//! Dense value + gradient buffers with a small fixed-rank shape.

/// A dense array of f64 values with a gradient buffer of identical shape.
/// Rank 1 holds biases and scales, rank 3 holds (channels, height, width)
/// activations, rank 4 holds convolution kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        let len = data.len();
        Tensor {
            shape: shape.to_vec(),
            data,
            grad: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (channels, height, width) of a rank-3 tensor.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected rank 3, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    /// (out, in, kh, kw) of a rank-4 kernel tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected rank 4, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
