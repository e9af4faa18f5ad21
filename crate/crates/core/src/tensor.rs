//! Dense row-major containers shared by every stage of the pipeline.
//!
//! Two shapes are enough: a [`Matrix`] (weights, attribute tables) and a
//! square spatial [`FeatureMap`] of `side × side` locations with `depth`
//! channels each, stored as (row, column, channel).

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element usable by the forward/backward code.
///
/// Production runs use `f32`; gradient checks run the same code in `f64`.
pub trait Scalar: Float + Sum + Debug + Send + Sync + 'static {
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// `self · x` for a vector of length `cols`.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · y` for a vector of length `rows`.
    pub fn tr_mul_vec(&self, y: &[T]) -> Vec<T> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o = *o + yr * a;
            }
        }
        out
    }

    /// Multiplies every entry by `alpha`.
    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * alpha).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A `side × side × depth` grid, row-major over (row, column, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T = f32> {
    side: usize,
    depth: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(side: usize, depth: usize, data: Vec<T>) -> Result<Self> {
        if side == 0 || depth == 0 {
            return Err(Error::Shape(format!(
                "feature map dimensions must be positive, got side={side} depth={depth}"
            )));
        }
        if data.len() != side * side * depth {
            return Err(Error::Shape(format!(
                "{side}x{side}x{depth} map needs {} values, got {}",
                side * side * depth,
                data.len()
            )));
        }
        Ok(Self { side, depth, data })
    }

    pub fn zeros(side: usize, depth: usize) -> Self {
        Self {
            side,
            depth,
            data: vec![T::zero(); side * side * depth],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn locations(&self) -> usize {
        self.side * self.side
    }

    /// Channel vector at flat spatial index `loc = row * side + col`.
    pub fn at(&self, loc: usize) -> &[T] {
        &self.data[loc * self.depth..(loc + 1) * self.depth]
    }

    pub fn at_mut(&mut self, loc: usize) -> &mut [T] {
        &mut self.data[loc * self.depth..(loc + 1) * self.depth]
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        self.data[(row * self.side + col) * self.depth + channel]
    }

    /// One channel as a `side × side` grid in flat spatial order.
    pub fn channel(&self, k: usize) -> Vec<T> {
        (0..self.locations()).map(|loc| self.at(loc)[k]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            side: self.side,
            depth: self.depth,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
