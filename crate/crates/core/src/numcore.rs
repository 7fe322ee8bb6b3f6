//! Dense row-major tensors, activations and the seeded RNG every layer is
//! built on. Everything is `f64`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Tensor1D = Vec<f64>;

/// Row-major `rows x cols` matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2D({}x{})", self.rows, self.cols)
    }
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor2D::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Glorot/Xavier uniform: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self::from_fn(rows, cols, |_, _| rng.uniform(-limit, limit))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Tensor2D {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    /// `W^T x` for `W: in x out`, accumulated into `out` (length `out`).
    pub(crate) fn tmatvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += xv * w;
            }
        }
    }

    /// `W y` for `W: in x out`, accumulated into `out` (length `in`).
    pub(crate) fn matvec_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), y);
        }
    }

    /// `self += x y^T`.
    pub(crate) fn add_outer(&mut self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (g, yv) in self.row_mut(r).iter_mut().zip(y) {
                *g += xv * yv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W^T x + b` where `W` is `in x out`.
pub fn affine(w: &Tensor2D, x: &[f64], b: &[f64]) -> Result<Tensor1D> {
    if w.rows != x.len() {
        return Err(Error::shape(
            "affine",
            format!("W {}", w.shape_str()),
            format!("x len {}", x.len()),
        ));
    }
    if w.cols != b.len() {
        return Err(Error::shape(
            "affine",
            format!("W {}", w.shape_str()),
            format!("b len {}", b.len()),
        ));
    }
    let mut out = b.to_vec();
    w.tmatvec_acc(x, &mut out);
    Ok(out)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Result<Tensor1D> {
    if z.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn tanh_act(z: f64) -> f64 {
    z.tanh()
}

pub fn sigmoid_vec(z: &[f64]) -> Tensor1D {
    z.iter().map(|&v| sigmoid(v)).collect()
}

pub fn tanh_vec(z: &[f64]) -> Tensor1D {
    z.iter().map(|v| v.tanh()).collect()
}

/// Seeded, platform-independent generator (ChaCha8).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        mean + std * z
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    pub fn vec_uniform(&mut self, n: usize, lo: f64, hi: f64) -> Tensor1D {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Rng;
    use proptest::prelude::*;

    fn naive_affine(w: &Tensor2D, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.cols()];
        for j in 0..w.cols() {
            let mut acc = 0.0;
            for i in 0..w.rows() {
                acc += w.get(i, j) * x[i];
            }
            out[j] = acc + b[j];
        }
        out
    }

    #[test]
    fn affine_identity_and_zero() {
        let y = affine(&Tensor2D::identity(2), &[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![3.0, 4.0]);
        let y = affine(&Tensor2D::zeros(2, 2), &[7.0, -9.0], &[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn affine_matches_naive_loop() {
        let mut rng = Rng::new(42);
        let w = Tensor2D::from_fn(7, 5, |_, _| rng.normal(0.0, 1.0));
        let x = rng.vec_uniform(7, -2.0, 2.0);
        let b = rng.vec_uniform(5, -1.0, 1.0);
        let got = affine(&w, &x, &b).unwrap();
        for (g, e) in got.iter().zip(naive_affine(&w, &x, &b)) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let err = affine(&Tensor2D::zeros(3, 2), &[1.0, 2.0], &[0.0, 0.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3x2") && msg.contains("x len 2"), "{msg}");
        assert!(affine(&Tensor2D::zeros(2, 2), &[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0; 4]).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (v, e) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(softmax(&[1000.0, 1000.0]).unwrap(), vec![0.5, 0.5]);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh_act(0.0), 0.0);
    }

    #[test]
    fn sigmoid_symmetry_over_draws() {
        let mut rng = Rng::new(3);
        for _ in 0..1000 {
            let x = rng.normal(0.0, 10.0);
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rng_reproducible() {
        let mut a = Rng::new(9);
        let mut b = Rng::new(9);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
            assert_eq!(a.normal(0.0, 1.0).to_bits(), b.normal(0.0, 1.0).to_bits());
        }
    }

    proptest! {
        #[test]
        fn affine_is_linear(seed in 0u64..1000, a in -5.0f64..5.0) {
            let mut rng = Rng::new(seed);
            let w = Tensor2D::from_fn(4, 3, |_, _| rng.normal(0.0, 1.0));
            let x = rng.vec_uniform(4, -3.0, 3.0);
            let y = rng.vec_uniform(4, -3.0, 3.0);
            let zero = vec![0.0; 3];
            let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + yi).collect();
            let lhs = affine(&w, &combo, &zero).unwrap();
            let fx = affine(&w, &x, &zero).unwrap();
            let fy = affine(&w, &y, &zero).unwrap();
            for j in 0..3 {
                prop_assert!((lhs[j] - (a * fx[j] + fy[j])).abs() < 1e-10);
            }
        }

        #[test]
        fn softmax_shift_invariant(z in prop::collection::vec(-30.0f64..30.0, 1..20), c in -100.0f64..100.0) {
            let p = softmax(&z).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }
}
