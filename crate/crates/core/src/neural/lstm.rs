//! LSTM cell with optional layer normalization over the stacked gate
//! pre-activations, plus the dense helpers the rest of the network uses.
//!
//! Gate layout inside the `4h` pre-activation: input, forget, output, cell.

use crate::scalar::{axpy, dot, sigmoid, Scalar};

use super::params::{LstmIds, PolicyParams};

pub const LN_EPS: f64 = 1e-5;

/// `out += W x` for a row-major `W` with `x.len()` columns.
#[inline]
pub fn matvec_add<T: Scalar>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `dx += W^T dy`
#[inline]
pub fn matvec_t_add<T: Scalar>(w: &[T], dy: &[T], dx: &mut [T]) {
    let cols = dx.len();
    for (&g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if g != T::zero() {
            axpy(g, row, dx);
        }
    }
}

/// `dW += dy x^T`
#[inline]
pub fn outer_add<T: Scalar>(dw: &mut [T], dy: &[T], x: &[T]) {
    let cols = x.len();
    for (&g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if g != T::zero() {
            axpy(g, x, row);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Normalized pre-activations (raw pre-activations without layer norm).
    zhat: Vec<T>,
    inv_std: T,
    /// Activated gates: i, f, o (sigmoid) and g (tanh).
    gates: Vec<T>,
    tanh_c: Vec<T>,
    pub c: Vec<T>,
    pub h: Vec<T>,
}

pub fn lstm_forward<T: Scalar>(
    p: &PolicyParams<T>,
    ids: &LstmIds,
    layer_norm: bool,
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
) -> LstmCache<T> {
    let h = h_prev.len();
    let mut z = p.get(ids.bias).to_vec();
    matvec_add(p.get(ids.w_x), x, &mut z);
    matvec_add(p.get(ids.w_h), h_prev, &mut z);

    let (zhat, inv_std, y) = if layer_norm {
        let m = T::of(z.len() as f64);
        let mean = z.iter().copied().sum::<T>() / m;
        let var = z.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
        let inv_std = T::one() / (var + T::of(LN_EPS)).sqrt();
        let zhat: Vec<T> = z.iter().map(|&v| (v - mean) * inv_std).collect();
        let y = zhat
            .iter()
            .zip(p.get(ids.ln_gain))
            .zip(p.get(ids.ln_offset))
            .map(|((&zh, &g), &b)| g * zh + b)
            .collect();
        (zhat, inv_std, y)
    } else {
        (z.clone(), T::one(), z)
    };

    let mut gates = y;
    for v in &mut gates[..3 * h] {
        *v = sigmoid(*v);
    }
    for v in &mut gates[3 * h..] {
        *v = v.tanh();
    }
    let mut c = vec![T::zero(); h];
    let mut tanh_c = vec![T::zero(); h];
    let mut hn = vec![T::zero(); h];
    for k in 0..h {
        let (i, f, o, g) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        hn[k] = o * tanh_c[k];
    }
    LstmCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        zhat,
        inv_std,
        gates,
        tanh_c,
        c,
        h: hn,
    }
}

/// Backpropagates `dh`, `dc` (gradients w.r.t. this step's outputs) into
/// the parameter gradient. Returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_backward<T: Scalar>(
    p: &PolicyParams<T>,
    grad: &mut PolicyParams<T>,
    ids: &LstmIds,
    layer_norm: bool,
    cache: &LstmCache<T>,
    dh: &[T],
    dc: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let h = dh.len();
    let one = T::one();
    let g = &cache.gates;
    let mut dy = vec![T::zero(); 4 * h];
    let mut dc_prev = vec![T::zero(); h];
    for k in 0..h {
        let (i, f, o, gg) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
        let tc = cache.tanh_c[k];
        let d_o = dh[k] * tc;
        let dct = dc[k] + dh[k] * o * (one - tc * tc);
        let di = dct * gg;
        let df = dct * cache.c_prev[k];
        let dg = dct * i;
        dc_prev[k] = dct * f;
        dy[k] = di * i * (one - i);
        dy[h + k] = df * f * (one - f);
        dy[2 * h + k] = d_o * o * (one - o);
        dy[3 * h + k] = dg * (one - gg * gg);
    }

    let dz = if layer_norm {
        let gain = p.get(ids.ln_gain);
        {
            let dgain = grad.get_mut(ids.ln_gain);
            for ((dgn, &d), &zh) in dgain.iter_mut().zip(&dy).zip(&cache.zhat) {
                *dgn += d * zh;
            }
        }
        axpy(one, &dy, grad.get_mut(ids.ln_offset));
        let dzhat: Vec<T> = dy.iter().zip(gain).map(|(&d, &g)| d * g).collect();
        let m = T::of(dzhat.len() as f64);
        let mean_d = dzhat.iter().copied().sum::<T>() / m;
        let mean_dz = dzhat.iter().zip(&cache.zhat).map(|(&d, &z)| d * z).sum::<T>() / m;
        dzhat
            .iter()
            .zip(&cache.zhat)
            .map(|(&d, &z)| cache.inv_std * (d - mean_d - z * mean_dz))
            .collect()
    } else {
        dy
    };

    axpy(one, &dz, grad.get_mut(ids.bias));
    outer_add(grad.get_mut(ids.w_x), &dz, &cache.x);
    outer_add(grad.get_mut(ids.w_h), &dz, &cache.h_prev);
    let mut dx = vec![T::zero(); cache.x.len()];
    matvec_t_add(p.get(ids.w_x), &dz, &mut dx);
    let mut dh_prev = vec![T::zero(); h];
    matvec_t_add(p.get(ids.w_h), &dz, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}
