//! Banded LU factorisation with partial pivoting, and the ring ordering that
//! turns periodic element coupling into a narrow band.

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Rows are stored with room for the `kl` extra super-diagonals created by
/// row interchanges during factorisation.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Accumulate into entry `(i, j)`. Panics if `(i, j)` lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band kl={} ku={}", self.kl, self.ku);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku + 1).min(self.n);
                (lo..hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Factorise in place.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let scale = self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..n {
            let last_row = (k + kl + 1).min(n);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..last_row {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || best <= scale * 1e-300 {
                return Err(Error::Singular(format!("zero pivot in column {k}")));
            }
            piv[k] = p;
            let last_col = (k + kl + ku + 1).min(n);
            if p != k {
                for j in k..last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                let row_k = self.idx(k, k + 1);
                let row_i = self.idx(i, k + 1);
                let len = last_col - (k + 1);
                for t in 0..len {
                    self.data[row_i + t] -= l * self.data[row_k + t];
                }
            }
        }
        Ok(BandLu { a: self, piv })
    }
}

/// Factorised band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn size(&self) -> usize {
        self.a.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.a;
        let n = a.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..(k + a.kl + 1).min(n) {
                    b[i] -= a.data[a.idx(i, k)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let hi = (i + a.kl + a.ku + 1).min(n);
            let base = a.idx(i, i);
            let mut s = b[i];
            for (t, j) in (i + 1..hi).enumerate() {
                s -= a.data[base + 1 + t] * b[j];
            }
            b[i] = s / a.data[base];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Ordering of `m` cyclically coupled groups so that ring neighbours sit at
/// most two positions apart: 0, m-1, 1, m-2, 2, ...
#[derive(Debug, Clone)]
pub struct RingOrder {
    position: Vec<usize>,
}

impl RingOrder {
    pub fn new(m: usize) -> Self {
        let mut position = vec![0; m];
        for k in 0..m {
            let g = if k % 2 == 0 { k / 2 } else { m - 1 - k / 2 };
            position[g] = k;
        }
        Self { position }
    }

    /// Position of group `g` in the ordering.
    #[inline]
    pub fn position(&self, g: usize) -> usize {
        self.position[g]
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// Band half-width for blocks of size `block` where each group couples to its ring neighbours.
    pub fn half_bandwidth(&self, block: usize) -> usize {
        let reach = if self.len() <= 2 { self.len().saturating_sub(1) } else { 2 };
        (reach + 1) * block - 1
    }
}
