use ndarray::{s, Array1, Array2, ArrayView1, Zip};
use rand::Rng;

use crate::opcount;

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-scale..=scale))
}

/// `m += a ⊗ b`
pub(crate) fn add_outer(m: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    Zip::from(m.rows_mut()).and(a).for_each(|mut row, &ai| {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    });
}

/// Single-layer LSTM cell. Gate blocks in `w`, `u`, `b` are stacked in the
/// order input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `4H × input`
    pub w: Array2<f64>,
    /// `4H × H`
    pub u: Array2<f64>,
    /// `4H`
    pub b: Array1<f64>,
}

/// Everything the backward pass of one step needs.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub o: Array1<f64>,
    pub tanh_c: Array1<f64>,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((4 * hidden, input)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn random(input: usize, hidden: usize, rng: &mut impl Rng, scale: f64) -> Self {
        Self {
            w: uniform(rng, (4 * hidden, input), scale),
            u: uniform(rng, (4 * hidden, hidden), scale),
            b: Array1::from_shape_simple_fn(4 * hidden, || rng.random_range(-scale..=scale)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn input(&self) -> usize {
        self.w.ncols()
    }

    fn gates(&self, x: ArrayView1<'_, f64>, h: ArrayView1<'_, f64>) -> [Array1<f64>; 4] {
        let hd = self.hidden();
        opcount::add(4 * hd * (self.input() + hd));
        let z = self.w.dot(&x) + self.u.dot(&h) + &self.b;
        let i = z.slice(s![..hd]).mapv(sigmoid);
        let f = z.slice(s![hd..2 * hd]).mapv(sigmoid);
        let g = z.slice(s![2 * hd..3 * hd]).mapv(f64::tanh);
        let o = z.slice(s![3 * hd..]).mapv(sigmoid);
        [i, f, g, o]
    }

    /// One step; returns the new `(h, c)`.
    pub fn step(&self, x: ArrayView1<'_, f64>, h: ArrayView1<'_, f64>, c: ArrayView1<'_, f64>) -> (Array1<f64>, Array1<f64>) {
        let [i, f, g, o] = self.gates(x, h);
        let c_new = &f * &c + &i * &g;
        let h_new = &o * &c_new.mapv(f64::tanh);
        (h_new, c_new)
    }

    pub(crate) fn step_cached(
        &self,
        x: ArrayView1<'_, f64>,
        h: ArrayView1<'_, f64>,
        c: ArrayView1<'_, f64>,
    ) -> (Array1<f64>, Array1<f64>, LstmCache) {
        let [i, f, g, o] = self.gates(x, h);
        let c_new = &f * &c + &i * &g;
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &o * &tanh_c;
        let cache = LstmCache {
            x: x.to_owned(),
            h_prev: h.to_owned(),
            c_prev: c.to_owned(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        (h_new, c_new, cache)
    }

    /// Backpropagates `(dh, dc)` through one step, accumulating parameter
    /// gradients into `grad`. Returns `(dx, dh_prev, dc_prev)`.
    pub(crate) fn backward(
        &self,
        cache: &LstmCache,
        dh: &Array1<f64>,
        dc: &Array1<f64>,
        grad: &mut Lstm,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let hd = self.hidden();
        let LstmCache {
            x,
            h_prev,
            c_prev,
            i,
            f,
            g,
            o,
            tanh_c,
        } = cache;

        let d_o = dh * tanh_c;
        let dc = dc + &(dh * o * &tanh_c.mapv(|t| 1.0 - t * t));
        let d_i = &dc * g;
        let d_g = &dc * i;
        let d_f = &dc * c_prev;
        let dc_prev = &dc * f;

        let mut dz = Array1::zeros(4 * hd);
        dz.slice_mut(s![..hd]).assign(&(&d_i * &i.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![hd..2 * hd]).assign(&(&d_f * &f.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![2 * hd..3 * hd]).assign(&(&d_g * &g.mapv(|v| 1.0 - v * v)));
        dz.slice_mut(s![3 * hd..]).assign(&(&d_o * &o.mapv(|v| v * (1.0 - v))));

        add_outer(&mut grad.w, dz.view(), x.view());
        add_outer(&mut grad.u, dz.view(), h_prev.view());
        grad.b += &dz;
        let dx = self.w.t().dot(&dz);
        let dh_prev = self.u.t().dot(&dz);
        (dx, dh_prev, dc_prev)
    }
}
