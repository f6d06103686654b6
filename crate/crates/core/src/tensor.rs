//! Dense rank-4 `f64` tensor in `(n, c, h, w)` row-major order.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::shape_err;
use crate::Result;

/// Extent of a [`Tensor4`]: batch, channels, rows, columns.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one `(h, w)` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch entry.
    pub const fn sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(shape_err!("all dimensions must be >= 1, got {:?}", self));
        }
        Ok(())
    }

    pub const fn with_channels(self, c: usize) -> Self {
        Shape4 { c, ..self }
    }
}

impl fmt::Debug for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape4 {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Shape4 { n, c, h, w }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn full(shape: impl Into<Shape4>, value: f64) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        Ok(Tensor4 {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn zeros(shape: impl Into<Shape4>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(shape_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                shape.len(),
                data.len()
            ));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        debug_assert!(n < s.n && c < s.c && h < s.h && w < s.w);
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f64) {
        let i = self.offset(n, c, h, w);
        self.data[i] = value;
    }

    /// Contiguous `(c, h, w)` block of batch entry `n`.
    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.shape.sample();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.sample();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Contiguous `(h, w)` plane of channel `c` in batch entry `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let len = self.shape.plane();
        let start = (n * self.shape.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let len = self.shape.plane();
        let start = (n * self.shape.c + c) * len;
        &mut self.data[start..start + len]
    }

    fn check_same_shape(&self, other: &Tensor4, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("{op}: shapes differ, {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Result<Tensor4> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Tensor4 {
        self.map(|v| alpha * v)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates tensors with equal `(n, h, w)` along the channel axis.
    pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("concat_channels: no inputs"))?
            .shape;
        let mut c_total = 0;
        for p in parts {
            let s = p.shape;
            if s.n != first.n || s.h != first.h || s.w != first.w {
                return Err(shape_err!("concat_channels: {:?} incompatible with {:?}", s, first));
            }
            c_total += s.c;
        }
        let shape = first.with_channels(c_total);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for p in parts {
                data.extend_from_slice(p.sample(n));
            }
        }
        Ok(Tensor4 { shape, data })
    }

    /// Splits along the channel axis into consecutive groups of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor4>> {
        let total: usize = sizes.iter().sum();
        if total != self.shape.c || sizes.contains(&0) {
            return Err(shape_err!(
                "split_channels: sizes {:?} do not partition {} channels",
                sizes,
                self.shape.c
            ));
        }
        let plane = self.shape.plane();
        let mut out: Vec<Tensor4> = sizes
            .iter()
            .map(|&c| Tensor4 {
                shape: self.shape.with_channels(c),
                data: Vec::with_capacity(self.shape.n * c * plane),
            })
            .collect();
        for n in 0..self.shape.n {
            let sample = self.sample(n);
            let mut start = 0;
            for (t, &c) in out.iter_mut().zip(sizes) {
                t.data.extend_from_slice(&sample[start * plane..(start + c) * plane]);
                start += c;
            }
        }
        Ok(out)
    }
}

impl fmt::Debug for Tensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("data", &DataPreview(&self.data))
            .finish()
    }
}

struct DataPreview<'a>(&'a [f64]);

impl fmt::Debug for DataPreview<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let mut list = f.debug_list();
        list.entries(self.0.iter().take(SHOWN));
        if self.0.len() > SHOWN {
            list.entry(&format_args!("... {} more", self.0.len() - SHOWN));
        }
        list.finish()
    }
}
