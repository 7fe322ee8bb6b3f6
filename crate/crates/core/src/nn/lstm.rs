//! LSTM cell over the concatenation `[h_{t-1}, x_t]` and the bidirectional
//! encoder built from two of them.
//!
//! ```text
//! i = sigmoid(W_i^T z + b_i)    f = sigmoid(W_f^T z + b_f)
//! o = sigmoid(W_o^T z + b_o)    q = tanh(W_q^T z + b_q)
//! c = f * c_prev + i * q        h = o * tanh(c)
//! ```

use super::params::{join, Block, BlockMut, ParamSet};
use crate::error::{Error, Result};
use crate::numcore::{sigmoid, Rng, Tensor1D, Tensor2D};

/// Gate weights are `(hidden + input) x hidden`; the first `hidden` rows act
/// on `h_{t-1}`, the rest on `x_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w_i: Tensor2D,
    pub w_f: Tensor2D,
    pub w_o: Tensor2D,
    pub w_q: Tensor2D,
    pub b_i: Tensor1D,
    pub b_f: Tensor1D,
    pub b_o: Tensor1D,
    pub b_q: Tensor1D,
}

pub type LstmGrads = LstmCell;

#[derive(Clone, Debug)]
pub struct LstmStepCache {
    z: Tensor1D,
    i: Tensor1D,
    f: Tensor1D,
    o: Tensor1D,
    q: Tensor1D,
    c_prev: Tensor1D,
    tanh_c: Tensor1D,
}

impl LstmStepCache {
    pub fn gates(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.i, &self.f, &self.o, &self.q)
    }
}

fn gate(w: &Tensor2D, b: &[f64], z: &[f64], act: fn(f64) -> f64) -> Tensor1D {
    let mut pre = b.to_vec();
    w.tmatvec_acc(z, &mut pre);
    pre.iter_mut().for_each(|v| *v = act(*v));
    pre
}

impl LstmCell {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let rows = input_dim + hidden_dim;
        Self {
            w_i: Tensor2D::zeros(rows, hidden_dim),
            w_f: Tensor2D::zeros(rows, hidden_dim),
            w_o: Tensor2D::zeros(rows, hidden_dim),
            w_q: Tensor2D::zeros(rows, hidden_dim),
            b_i: vec![0.0; hidden_dim],
            b_f: vec![0.0; hidden_dim],
            b_o: vec![0.0; hidden_dim],
            b_q: vec![0.0; hidden_dim],
        }
    }

    /// Glorot-uniform gate weights, zero biases except the forget gate (+1).
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let rows = input_dim + hidden_dim;
        Self {
            w_i: Tensor2D::glorot_uniform(rows, hidden_dim, rng),
            w_f: Tensor2D::glorot_uniform(rows, hidden_dim, rng),
            w_o: Tensor2D::glorot_uniform(rows, hidden_dim, rng),
            w_q: Tensor2D::glorot_uniform(rows, hidden_dim, rng),
            b_i: vec![0.0; hidden_dim],
            b_f: vec![1.0; hidden_dim],
            b_o: vec![0.0; hidden_dim],
            b_q: vec![0.0; hidden_dim],
        }
    }

    pub fn zeros_like(&self) -> LstmGrads {
        Self::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_i.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_i.rows() - self.hidden_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.w_i.shape();
        let h = shape.1;
        for (name, w) in [("w_f", &self.w_f), ("w_o", &self.w_o), ("w_q", &self.w_q)] {
            if w.shape() != shape {
                return Err(Error::shape("LstmCell", format!("w_i {shape:?}"), format!("{name} {:?}", w.shape())));
            }
        }
        if shape.0 <= h {
            return Err(Error::shape("LstmCell", format!("w_i {shape:?}"), "rows must exceed hidden dim"));
        }
        for (name, b) in [("b_i", &self.b_i), ("b_f", &self.b_f), ("b_o", &self.b_o), ("b_q", &self.b_q)] {
            if b.len() != h {
                return Err(Error::shape("LstmCell", format!("hidden {h}"), format!("{name} len {}", b.len())));
            }
        }
        Ok(())
    }

    pub fn step(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> Result<(Tensor1D, Tensor1D, LstmStepCache)> {
        let h = self.hidden_dim();
        if h_prev.len() != h || c_prev.len() != h || x.len() != self.input_dim() {
            return Err(Error::shape(
                "lstm_step",
                format!("cell input {} hidden {}", self.input_dim(), h),
                format!("h_prev {} c_prev {} x {}", h_prev.len(), c_prev.len(), x.len()),
            ));
        }
        let mut z = Vec::with_capacity(h + x.len());
        z.extend_from_slice(h_prev);
        z.extend_from_slice(x);
        let i = gate(&self.w_i, &self.b_i, &z, sigmoid);
        let f = gate(&self.w_f, &self.b_f, &z, sigmoid);
        let o = gate(&self.w_o, &self.b_o, &z, sigmoid);
        let q = gate(&self.w_q, &self.b_q, &z, f64::tanh);
        let c: Tensor1D = (0..h).map(|k| f[k] * c_prev[k] + i[k] * q[k]).collect();
        let tanh_c: Tensor1D = c.iter().map(|v| v.tanh()).collect();
        let h_t: Tensor1D = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
        let cache = LstmStepCache {
            z,
            i,
            f,
            o,
            q,
            c_prev: c_prev.to_vec(),
            tanh_c,
        };
        Ok((h_t, c, cache))
    }

    /// Backward through one step. `dh` and `dc` are the gradients arriving at
    /// `h_t` and `c_t`. Returns `(dh_prev, dc_prev, dx)`; parameter gradients
    /// are added into `grads`.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmGrads,
    ) -> Result<(Tensor1D, Tensor1D, Tensor1D)> {
        let h = self.hidden_dim();
        if dh.len() != h || dc.len() != h || cache.z.len() != self.w_i.rows() {
            return Err(Error::shape(
                "lstm_step_backward",
                format!("hidden {h}"),
                format!("dh {} dc {} cached z {}", dh.len(), dc.len(), cache.z.len()),
            ));
        }
        let mut d_i = vec![0.0; h];
        let mut d_f = vec![0.0; h];
        let mut d_o = vec![0.0; h];
        let mut d_q = vec![0.0; h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let (i, f, o, q, t) = (cache.i[k], cache.f[k], cache.o[k], cache.q[k], cache.tanh_c[k]);
            let dc_total = dc[k] + dh[k] * o * (1.0 - t * t);
            d_o[k] = dh[k] * t * o * (1.0 - o);
            d_i[k] = dc_total * q * i * (1.0 - i);
            d_f[k] = dc_total * cache.c_prev[k] * f * (1.0 - f);
            d_q[k] = dc_total * i * (1.0 - q * q);
            dc_prev[k] = dc_total * f;
        }
        let mut dz = vec![0.0; cache.z.len()];
        for (w, gw, gb, d) in [
            (&self.w_i, &mut grads.w_i, &mut grads.b_i, &d_i),
            (&self.w_f, &mut grads.w_f, &mut grads.b_f, &d_f),
            (&self.w_o, &mut grads.w_o, &mut grads.b_o, &d_o),
            (&self.w_q, &mut grads.w_q, &mut grads.b_q, &d_q),
        ] {
            gw.add_outer(&cache.z, d);
            gb.iter_mut().zip(d.iter()).for_each(|(g, v)| *g += v);
            w.matvec_acc(d, &mut dz);
        }
        let dx = dz.split_off(h);
        Ok((dz, dc_prev, dx))
    }
}

impl ParamSet for LstmCell {
    fn blocks(&self, prefix: &str) -> Vec<Block<'_>> {
        let mut out = Vec::with_capacity(8);
        for (name, w) in [("w_i", &self.w_i), ("w_f", &self.w_f), ("w_o", &self.w_o), ("w_q", &self.w_q)] {
            out.push(Block {
                name: join(prefix, name),
                shape: w.shape(),
                data: w.data(),
            });
        }
        for (name, b) in [("b_i", &self.b_i), ("b_f", &self.b_f), ("b_o", &self.b_o), ("b_q", &self.b_q)] {
            out.push(Block {
                name: join(prefix, name),
                shape: (1, b.len()),
                data: b,
            });
        }
        out
    }

    fn blocks_mut(&mut self, prefix: &str) -> Vec<BlockMut<'_>> {
        let mut out = Vec::with_capacity(8);
        for (name, w) in [
            ("w_i", &mut self.w_i),
            ("w_f", &mut self.w_f),
            ("w_o", &mut self.w_o),
            ("w_q", &mut self.w_q),
        ] {
            let shape = w.shape();
            out.push(BlockMut {
                name: join(prefix, name),
                shape,
                data: w.data_mut(),
            });
        }
        for (name, b) in [
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_o", &mut self.b_o),
            ("b_q", &mut self.b_q),
        ] {
            out.push(BlockMut {
                name: join(prefix, name),
                shape: (1, b.len()),
                data: b.as_mut_slice(),
            });
        }
        out
    }
}

/// Forward and time-reversed LSTMs; output row `t` is `[h_fwd_t, h_bwd_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmEncoder {
    pub forward_cell: LstmCell,
    pub backward_cell: LstmCell,
}

pub type BiLstmGrads = BiLstmEncoder;

#[derive(Clone, Debug)]
pub struct BiLstmCache {
    fwd: Vec<LstmStepCache>,
    bwd: Vec<LstmStepCache>,
}

impl BiLstmEncoder {
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let forward_cell = LstmCell::init(input_dim, hidden_dim, rng);
        let backward_cell = LstmCell::init(input_dim, hidden_dim, rng);
        Self {
            forward_cell,
            backward_cell,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            forward_cell: LstmCell::zeros(input_dim, hidden_dim),
            backward_cell: LstmCell::zeros(input_dim, hidden_dim),
        }
    }

    pub fn zeros_like(&self) -> BiLstmGrads {
        Self::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward_cell.hidden_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.forward_cell.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.forward_cell.validate()?;
        self.backward_cell.validate()?;
        if self.forward_cell.w_i.shape() != self.backward_cell.w_i.shape() {
            return Err(Error::shape(
                "BiLstmEncoder",
                format!("forward {:?}", self.forward_cell.w_i.shape()),
                format!("backward {:?}", self.backward_cell.w_i.shape()),
            ));
        }
        Ok(())
    }

    /// Runs both directions over every row of `x` (`T x input_dim`), padding
    /// included.
    pub fn forward(&self, x: &Tensor2D) -> Result<(Tensor2D, BiLstmCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "bilstm_forward",
                format!("input_dim {}", self.input_dim()),
                format!("sequence {}x{}", x.rows(), x.cols()),
            ));
        }
        let (t_len, h) = (x.rows(), self.hidden_dim());
        let mut out = Tensor2D::zeros(t_len, 2 * h);
        let mut fwd = Vec::with_capacity(t_len);
        let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
        for t in 0..t_len {
            let (h_t, c_t, cache) = self.forward_cell.step(&hs, &cs, x.row(t))?;
            out.row_mut(t)[..h].copy_from_slice(&h_t);
            fwd.push(cache);
            hs = h_t;
            cs = c_t;
        }
        let mut bwd: Vec<LstmStepCache> = Vec::with_capacity(t_len);
        let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
        for t in (0..t_len).rev() {
            let (h_t, c_t, cache) = self.backward_cell.step(&hs, &cs, x.row(t))?;
            out.row_mut(t)[h..].copy_from_slice(&h_t);
            bwd.push(cache);
            hs = h_t;
            cs = c_t;
        }
        bwd.reverse();
        Ok((out, BiLstmCache { fwd, bwd }))
    }

    /// BPTT for both directions. `d_out` is `T x 2h`; returns `dX` (`T x d`).
    pub fn backward_into(&self, cache: &BiLstmCache, d_out: &Tensor2D, grads: &mut BiLstmGrads) -> Result<Tensor2D> {
        let (t_len, h) = (cache.fwd.len(), self.hidden_dim());
        if d_out.shape() != (t_len, 2 * h) {
            return Err(Error::shape(
                "bilstm_backward",
                format!("expected {}x{}", t_len, 2 * h),
                format!("upstream {}x{}", d_out.rows(), d_out.cols()),
            ));
        }
        let mut dx = Tensor2D::zeros(t_len, self.input_dim());

        let (mut dh_next, mut dc_next) = (vec![0.0; h], vec![0.0; h]);
        for t in (0..t_len).rev() {
            let dh: Tensor1D = d_out.row(t)[..h].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dh_prev, dc_prev, dx_t) =
                self.forward_cell
                    .step_backward(&cache.fwd[t], &dh, &dc_next, &mut grads.forward_cell)?;
            dx.row_mut(t).iter_mut().zip(&dx_t).for_each(|(a, b)| *a += b);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        let (mut dh_next, mut dc_next) = (vec![0.0; h], vec![0.0; h]);
        for t in 0..t_len {
            let dh: Tensor1D = d_out.row(t)[h..].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dh_prev, dc_prev, dx_t) =
                self.backward_cell
                    .step_backward(&cache.bwd[t], &dh, &dc_next, &mut grads.backward_cell)?;
            dx.row_mut(t).iter_mut().zip(&dx_t).for_each(|(a, b)| *a += b);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(dx)
    }

    pub fn backward(&self, cache: &BiLstmCache, d_out: &Tensor2D) -> Result<(Tensor2D, BiLstmGrads)> {
        let mut grads = self.zeros_like();
        let dx = self.backward_into(cache, d_out, &mut grads)?;
        Ok((dx, grads))
    }
}

impl BiLstmCache {
    pub fn forward_steps(&self) -> &[LstmStepCache] {
        &self.fwd
    }

    pub fn backward_steps(&self) -> &[LstmStepCache] {
        &self.bwd
    }
}

impl ParamSet for BiLstmEncoder {
    fn blocks(&self, prefix: &str) -> Vec<Block<'_>> {
        let mut out = self.forward_cell.blocks(&join(prefix, "forward"));
        out.extend(self.backward_cell.blocks(&join(prefix, "backward")));
        out
    }

    fn blocks_mut(&mut self, prefix: &str) -> Vec<BlockMut<'_>> {
        let mut out = self.forward_cell.blocks_mut(&join(prefix, "forward"));
        out.extend(self.backward_cell.blocks_mut(&join(prefix, "backward")));
        out
    }
}
