use std::fmt;

use crate::error::{FlameError, Result};

use super::Element;

/// Dense `N x H x W x C` array, channels fastest.
#[derive(Clone, PartialEq)]
pub struct Tensor4<F> {
    shape: [usize; 4],
    data: Vec<F>,
}

impl<F: fmt::Debug> fmt::Debug for Tensor4<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor4{:?}", self.shape)
    }
}

impl<F: Element> Tensor4<F> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], v: F) -> Self {
        Tensor4 {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<F>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(FlameError::shape(format!(
                "{} values cannot fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> F) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for h in 0..shape[1] {
                for w in 0..shape[2] {
                    for c in 0..shape[3] {
                        data.push(f([n, h, w, c]));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    /// `N x 1 x 1 x D` view of a batch of row vectors.
    pub fn from_rows(rows: usize, dim: usize, data: Vec<F>) -> Result<Self> {
        Self::from_vec([rows, 1, 1, dim], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    pub fn height(&self) -> usize {
        self.shape[1]
    }
    pub fn width(&self) -> usize {
        self.shape[2]
    }
    pub fn channels(&self) -> usize {
        self.shape[3]
    }
    /// Elements per batch entry.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[F] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn offset(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.shape[1] + idx[1]) * self.shape[2] + idx[2]) * self.shape[3] + idx[3]
    }
    pub fn at(&self, idx: [usize; 4]) -> F {
        self.data[self.offset(idx)]
    }
    pub fn set(&mut self, idx: [usize; 4], v: F) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn sample(&self, n: usize) -> &[F] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor4<F>) -> Result<Self> {
        self.expect_shape(other.shape, "elementwise add")?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor4<F>) -> Result<()> {
        self.expect_shape(other.shape, "elementwise add")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: [usize; 4], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(FlameError::shape(format!(
                "{what}: expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Element>(&self) -> Tensor4<G> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| G::from_f64(v.as_f64())).collect(),
        }
    }

    /// Channel concatenation `[a | b]`; all other dimensions must agree.
    pub fn concat_channels(a: &Tensor4<F>, b: &Tensor4<F>) -> Result<Self> {
        let [n, h, w, ca] = a.shape;
        let cb = b.shape[3];
        if b.shape[..3] != a.shape[..3] {
            return Err(FlameError::shape(format!(
                "channel concat of {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        for (ra, rb) in a.data.chunks(ca.max(1)).zip(b.data.chunks(cb.max(1))) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        if ca == 0 {
            data = b.data.clone();
        } else if cb == 0 {
            data = a.data.clone();
        }
        Ok(Tensor4 {
            shape: [n, h, w, ca + cb],
            data,
        })
    }

    /// Inverse of [`Tensor4::concat_channels`].
    pub fn split_channels(&self, first: usize) -> Result<(Self, Self)> {
        let [n, h, w, c] = self.shape;
        if first > c {
            return Err(FlameError::shape(format!(
                "cannot split {c} channels at {first}"
            )));
        }
        let mut a = Vec::with_capacity(n * h * w * first);
        let mut b = Vec::with_capacity(n * h * w * (c - first));
        if c > 0 {
            for row in self.data.chunks(c) {
                a.extend_from_slice(&row[..first]);
                b.extend_from_slice(&row[first..]);
            }
        }
        Ok((
            Tensor4 {
                shape: [n, h, w, first],
                data: a,
            },
            Tensor4 {
                shape: [n, h, w, c - first],
                data: b,
            },
        ))
    }

    /// Batch concatenation along N.
    pub fn stack(parts: &[Tensor4<F>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| FlameError::shape("stack of zero tensors"))?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(FlameError::shape(format!(
                    "stack of {:?} and {:?}",
                    first.shape, p.shape
                )));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 {
            shape: [n, first.shape[1], first.shape[2], first.shape[3]],
            data,
        })
    }
}
