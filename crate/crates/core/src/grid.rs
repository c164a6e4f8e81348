//! Dense row-major grids of `f64` values.
//!
//! A grid is `height × width × channels`, stored with the channel index
//! fastest. Complex grids use two interleaved channels (real, imaginary).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { height: 1, width: 1, channels: 1 };

    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape { height, width, channels }
    }

    /// A flat vector of `n` values.
    pub const fn flat(n: usize) -> Self {
        Shape { height: 1, width: 1, channels: n }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub const fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: Shape,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(shape.len(), data.len(), "grid data length does not match shape {shape}");
        Grid { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Grid { shape, data: vec![0.0; shape.len()] }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Grid { shape, data: vec![value; shape.len()] }
    }

    pub fn scalar(value: f64) -> Self {
        Grid { shape: Shape::SCALAR, data: vec![value] }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Grid { shape: Shape::flat(values.len()), data: values }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Grid { shape, data }
    }

    /// Interleave real and imaginary single-channel grids into a complex grid.
    pub fn complex(re: &Grid, im: &Grid) -> Self {
        assert_eq!(re.shape, im.shape);
        assert_eq!(re.shape.channels, 1);
        let mut data = Vec::with_capacity(re.data.len() * 2);
        for (a, b) in re.data.iter().zip(&im.data) {
            data.push(*a);
            data.push(*b);
        }
        Grid { shape: Shape::new(re.shape.height, re.shape.width, 2), data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.shape.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.shape.index(y, x, c);
        self.data[i] = v;
    }

    /// Value of a single-element grid.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on grid of shape {}", self.shape);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Shape) -> Self {
        assert_eq!(shape.len(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn channel(&self, c: usize) -> Grid {
        let s = self.shape;
        Grid::from_fn(Shape::new(s.height, s.width, 1), |y, x, _| self.get(y, x, c))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Swap the row and column axes.
    pub fn transposed(&self) -> Grid {
        let s = self.shape;
        Grid::from_fn(Shape::new(s.width, s.height, s.channels), |y, x, c| self.get(x, y, c))
    }

    /// Rotate by 90 degrees counter-clockwise.
    pub fn rotated90(&self) -> Grid {
        let s = self.shape;
        Grid::from_fn(Shape::new(s.width, s.height, s.channels), |y, x, c| {
            self.get(x, s.width - 1 - y, c)
        })
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
