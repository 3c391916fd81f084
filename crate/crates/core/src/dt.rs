//! Lower-envelope distance transforms for sampled functions under a squared
//! Euclidean penalty, `out(p) = min_q f(q) + w·(p − q)²`.
//!
//! Used for min-convolution messages on the displacement lattice and for the
//! exact Euclidean distance transform of boundary masks.

#[cfg(test)]
use alloc::vec;
use alloc::vec::Vec;

/// Scratch buffers for [`transform_1d`], reusable across calls.
#[derive(Default)]
pub struct Scratch {
    sites: Vec<usize>,
    bounds: Vec<f64>,
    line: Vec<f64>,
    out: Vec<f64>,
}

/// One-dimensional transform with weight `w > 0`. Infinite entries of `f`
/// are not sites; if every entry is infinite the output is all infinite.
pub fn transform_1d(f: &[f64], w: f64, out: &mut [f64], scratch: &mut Scratch) {
    let n = f.len();
    debug_assert_eq!(out.len(), n);
    let Scratch { sites, bounds, .. } = scratch;
    sites.clear();
    bounds.clear();
    let key = |q: usize| f[q] + w * (q * q) as f64;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let Some(&v) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let s = (key(q) - key(v)) / (2.0 * w * (q - v) as f64);
            if s <= *bounds.last().unwrap() {
                sites.pop();
                bounds.pop();
                continue;
            }
            sites.push(q);
            bounds.push(s);
            break;
        }
    }
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < sites.len() && bounds[k + 1] < p as f64 {
            k += 1;
        }
        let d = p as f64 - sites[k] as f64;
        *o = f[sites[k]] + w * d * d;
    }
}

/// Separable transform over a 3-D lattice (axis 0 fastest) with per-axis
/// weights. `w[a] == 0` on an axis reduces that pass to a plain minimum.
pub fn transform_3d(values: &mut [f64], dims: [usize; 3], w: [f64; 3], scratch: &mut Scratch) {
    let strides = [1, dims[0], dims[0] * dims[1]];
    let total = dims[0] * dims[1] * dims[2];
    debug_assert_eq!(values.len(), total);
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        let mut line = core::mem::take(&mut scratch.line);
        let mut out = core::mem::take(&mut scratch.out);
        line.resize(n, 0.0);
        out.resize(n, 0.0);
        for start in 0..total {
            if start / stride % n != 0 {
                continue;
            }
            for (t, l) in line.iter_mut().enumerate() {
                *l = values[start + t * stride];
            }
            if w[axis] > 0.0 {
                transform_1d(&line, w[axis], &mut out, scratch);
            } else {
                let m = line.iter().cloned().fold(f64::INFINITY, f64::min);
                out.iter_mut().for_each(|o| *o = m);
            }
            for (t, o) in out.iter().enumerate() {
                values[start + t * stride] = *o;
            }
        }
        scratch.line = line;
        scratch.out = out;
    }
}

/// Brute-force reference used by tests in this crate.
#[cfg(test)]
pub(crate) fn brute_3d(values: &[f64], dims: [usize; 3], w: [f64; 3]) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; values.len()];
    let idx = |o: usize| [o % dims[0], o / dims[0] % dims[1], o / (dims[0] * dims[1])];
    for (p, o) in out.iter_mut().enumerate() {
        let pi = idx(p);
        for (q, &f) in values.iter().enumerate() {
            let qi = idx(q);
            let mut d = f;
            for a in 0..3 {
                let t = pi[a] as f64 - qi[a] as f64;
                d += w[a] * t * t;
            }
            *o = o.min(d);
        }
    }
    out
}
