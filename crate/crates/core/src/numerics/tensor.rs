use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major `f64` tensor of rank 0, 1 or 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn scale_in_place(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }
}

pub(crate) fn shape_error(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W v` for a `rows x cols` matrix and a `cols` vector.
pub fn matvec(w: &Tensor, v: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || v.rank() != 1 || w.cols() != v.len() {
        return Err(shape_error("matvec", w, v));
    }
    let out = (0..w.rows()).map(|r| dot(w.row(r), &v.data)).collect();
    Ok(Tensor::vector(out))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(shape_error("matmul", a, b));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, bv) in out[i * m..(i + 1) * m].iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::matrix(n, m, out)
}

/// Softmax restricted to the positions where `valid` is true. Masked entries
/// are exactly zero and do not take part in the max used for stabilization.
pub fn masked_softmax(scores: &[f64], valid: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != valid.len() {
        return Err(Error::Shape {
            op: "masked_softmax",
            left: vec![scores.len()],
            right: vec![valid.len()],
        });
    }
    let max = scores
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoValidPosition("every position is masked"));
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(valid)
        .map(|(&s, &ok)| if ok { libm::exp(s - max) } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// `log softmax(scores)[index]` over the valid positions (all positions when
/// `valid` is `None`).
pub fn log_softmax_at(scores: &[f64], valid: Option<&[bool]>, index: usize) -> Result<f64> {
    let ok = |i: usize| valid.map_or(true, |m| m[i]);
    if let Some(m) = valid {
        if m.len() != scores.len() {
            return Err(Error::Shape {
                op: "log_softmax_at",
                left: vec![scores.len()],
                right: vec![m.len()],
            });
        }
    }
    if index >= scores.len() {
        return Err(Error::Index {
            index,
            len: scores.len(),
        });
    }
    if !ok(index) {
        return Err(Error::NoValidPosition("selected position is masked"));
    }
    let max = (0..scores.len())
        .filter(|&i| ok(i))
        .map(|i| scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = (0..scores.len())
        .filter(|&i| ok(i))
        .map(|i| libm::exp(scores[i] - max))
        .sum();
    Ok(scores[index] - max - libm::log(sum))
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn identity_matvec() {
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let v = Tensor::vector(vec![0.5, -2.0, 7.0]);
        assert_eq!(matvec(&eye, &v).unwrap(), v);
    }

    #[test]
    fn matvec_shape_error_names_both_shapes() {
        let w = Tensor::zeros(&[2, 3]);
        let v = Tensor::zeros(&[2]);
        match matvec(&w, &v) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn masked_softmax_examples() {
        let p = masked_softmax(&[5.0, 5.0, 5.0], &[true; 3]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = masked_softmax(&[9.0, 2.0, 7.0], &[false, true, false]).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
        // e^0 / (e^0 + 3)
        let p = masked_softmax(&[0.0, libm::log(3.0)], &[true, true]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert!(matches!(
            masked_softmax(&[1.0, 2.0], &[false, false]),
            Err(Error::NoValidPosition(_))
        ));
    }

    #[test]
    fn log_softmax_at_matches_softmax() {
        let s = [0.3, -1.2, 2.0, 0.7];
        let m = [true, false, true, true];
        let p = masked_softmax(&s, &m).unwrap();
        for i in [0, 2, 3] {
            let lp = log_softmax_at(&s, Some(&m), i).unwrap();
            assert!((lp - libm::log(p[i])).abs() < 1e-14);
        }
        assert!(log_softmax_at(&s, Some(&m), 1).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::matrix(2, 1, vec![1., 1.]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }
}
