//! Dense row-major `f64` arrays.
//!
//! Only the handful of kernels the solvers and MLPs need: elementwise maps,
//! linear combinations, and the dense affine map `x · Wᵀ + b` together with
//! the two products its adjoint requires.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Config(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// One-dimensional array holding `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::vector(vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros_like(other: &Array) -> Self {
        Self::zeros(&other.shape)
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

    /// The single value of a one-element array.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Interprets the array as a matrix of rows. A 1-D array of length `d`
    /// is a single row; higher ranks fold every leading axis into rows.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [d] => (1, *d),
            [.., last] => (self.data.len() / last.max(&1), *last),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Contract(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array, f: impl Fn(f64, f64) -> f64) -> Result<Array> {
        self.check_same_shape(other)?;
        Ok(Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Array) -> Result<Array> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Array) -> Result<Array> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Array) -> Result<Array> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Array {
        self.map(|v| c * v)
    }

    /// `self += c · other`
    pub fn axpy(&mut self, c: f64, other: &Array) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Array) -> Result<()> {
        self.axpy(1.0, other)
    }

    /// `base + Σ cᵢ · termsᵢ`, accumulated left to right.
    pub fn lincomb(base: &Array, terms: &[(f64, &Array)]) -> Result<Array> {
        let mut out = base.clone();
        for (c, term) in terms {
            if *c != 0.0 {
                out.axpy(*c, term)?;
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &Array) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Appends a constant column to a row matrix: `[n, d] -> [n, d + 1]`.
    pub fn append_column(&self, value: f64) -> Array {
        let (n, d) = self.rows_cols();
        let mut data = Vec::with_capacity(n * (d + 1));
        for row in self.data.chunks(d.max(1)).take(n) {
            data.extend_from_slice(&row[..d]);
            data.push(value);
        }
        let shape = if self.shape.len() <= 1 {
            vec![d + 1]
        } else {
            let mut s = self.shape.clone();
            *s.last_mut().unwrap() = d + 1;
            s
        };
        Array { shape, data }
    }

    /// Drops the last column of a row matrix: `[n, d + 1] -> [n, d]`.
    pub fn drop_last_column(&self) -> Array {
        let (n, d) = self.rows_cols();
        let mut data = Vec::with_capacity(n * (d - 1));
        for row in self.data.chunks(d) {
            data.extend_from_slice(&row[..d - 1]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = d - 1;
        Array { shape, data }
    }

    /// Column `j` of a row matrix as an `[n, 1]` array.
    pub fn column(&self, j: usize) -> Result<Array> {
        let (n, d) = self.rows_cols();
        if j >= d {
            return Err(Error::Contract(format!("column {j} out of range for width {d}")));
        }
        let data = self.data.chunks(d).map(|row| row[j]).collect();
        Ok(Array {
            shape: vec![n, 1],
            data,
        })
    }

    /// Concatenates row matrices with equal row counts along the columns.
    pub fn concat_columns(parts: &[&Array]) -> Result<Array> {
        let n = parts
            .first()
            .ok_or_else(|| Error::Contract("nothing to concatenate".into()))?
            .rows_cols()
            .0;
        let widths: Vec<usize> = parts.iter().map(|p| p.rows_cols().1).collect();
        if parts.iter().any(|p| p.rows_cols().0 != n) {
            return Err(Error::Contract("row counts differ in concat".into()));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Ok(Array {
            shape: vec![n, total],
            data,
        })
    }

    /// Dense affine map `x · wᵀ + b` for `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(x: &Array, w: &Array, b: Option<&Array>) -> Result<Array> {
        let (n, din) = x.rows_cols();
        let (dout, win) = w.rows_cols();
        if din != win {
            return Err(Error::Config(format!(
                "input width {din} does not match weight shape {:?}",
                w.shape
            )));
        }
        if let Some(b) = b {
            if b.len() != dout {
                return Err(Error::Config(format!(
                    "bias length {} does not match output width {dout}",
                    b.len()
                )));
            }
        }
        let mut out = Vec::with_capacity(n * dout);
        for row in x.data.chunks(din.max(1)).take(n) {
            for (o, wrow) in w.data.chunks(din.max(1)).enumerate().take(dout) {
                let mut acc = b.map_or(0.0, |b| b.data[o]);
                for (xi, wi) in row.iter().zip(wrow) {
                    acc += xi * wi;
                }
                out.push(acc);
            }
        }
        let shape = if x.shape.len() <= 1 {
            vec![dout]
        } else {
            vec![n, dout]
        };
        Ok(Array { shape, data: out })
    }

    /// `g · w` for `g: [n, out]`, `w: [out, in]`; the input adjoint of [`Array::linear`].
    pub fn linear_input_grad(g: &Array, w: &Array, x_shape: &[usize]) -> Array {
        let (n, dout) = g.rows_cols();
        let (_, din) = w.rows_cols();
        let mut out = vec![0.0; n * din];
        for (grow, orow) in g.data.chunks(dout).zip(out.chunks_mut(din)) {
            for (gi, wrow) in grow.iter().zip(w.data.chunks(din)) {
                if *gi == 0.0 {
                    continue;
                }
                for (o, wv) in orow.iter_mut().zip(wrow) {
                    *o += gi * wv;
                }
            }
        }
        Array {
            shape: x_shape.to_vec(),
            data: out,
        }
    }

    /// Accumulates `gᵀ · x` into `acc: [out, in]`; the weight adjoint of [`Array::linear`].
    pub fn accumulate_weight_grad(acc: &mut Array, g: &Array, x: &Array) {
        let (_, dout) = g.rows_cols();
        let (_, din) = x.rows_cols();
        for (grow, xrow) in g.data.chunks(dout).zip(x.data.chunks(din)) {
            for (gi, arow) in grow.iter().zip(acc.data.chunks_mut(din)) {
                if *gi == 0.0 {
                    continue;
                }
                for (a, xv) in arow.iter_mut().zip(xrow) {
                    *a += gi * xv;
                }
            }
        }
    }

    /// Accumulates the column sums of `g: [n, out]` into `acc: [out]`.
    pub fn accumulate_bias_grad(acc: &mut Array, g: &Array) {
        let (_, dout) = g.rows_cols();
        for grow in g.data.chunks(dout) {
            for (a, gi) in acc.data.iter_mut().zip(grow) {
                *a += gi;
            }
        }
    }

    fn check_same_shape(&self, other: &Array) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Contract(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Array::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Array::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn linear_matches_manual_product() {
        let x = Array::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Array::from_vec(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Array::vector(vec![0.5, -0.5, 0.0]);
        let y = Array::linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.data(), &[1.5, 1.5, 3.0, 3.5, 3.5, 7.0]);
    }

    #[test]
    fn linear_rejects_width_mismatch() {
        let x = Array::vector(vec![1.0, 2.0, 3.0]);
        let w = Array::zeros(&[1, 2]);
        assert!(matches!(Array::linear(&x, &w, None), Err(Error::Config(_))));
    }

    #[test]
    fn column_helpers_round_trip() {
        let x = Array::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let wide = x.append_column(9.0);
        assert_eq!(wide.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 9.0]);
        assert_eq!(wide.drop_last_column(), x);
        let c1 = x.column(1).unwrap();
        let c0 = x.column(0).unwrap();
        assert_eq!(Array::concat_columns(&[&c0, &c1]).unwrap(), x);
    }

    #[test]
    fn lincomb_skips_zero_coefficients() {
        let a = Array::vector(vec![1.0, 1.0]);
        let b = Array::vector(vec![f64::NAN, 2.0]);
        let c = Array::vector(vec![1.0, -1.0]);
        let out = Array::lincomb(&a, &[(0.0, &b), (2.0, &c)]).unwrap();
        assert_eq!(out.data(), &[3.0, -1.0]);
    }
}
