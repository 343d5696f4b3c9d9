//! Convolution between feature maps of arbitrary sizes.
//!
//! A filter of `|out - in| + 1` taps per dimension maps `in` cells onto
//! `out` cells. When the map shrinks every output cell sees a window of the
//! input (`i = o + k`); when it grows every input cell is spread over a
//! window of the output (`o = i + k`), which is the transposed form of the
//! same filter.

use super::scalar::Scalar;

/// One `(output, input, tap)` index triple along a single dimension.
pub(crate) type Tap = (u32, u32, u32);

/// All index triples for one dimension.
pub(crate) fn taps(input: usize, output: usize) -> Vec<Tap> {
    let f = input.abs_diff(output) + 1;
    let mut out = Vec::new();
    if output <= input {
        for o in 0..output {
            for k in 0..f {
                out.push((o as u32, (o + k) as u32, k as u32));
            }
        }
    } else {
        for i in 0..input {
            for k in 0..f {
                out.push(((i + k) as u32, i as u32, k as u32));
            }
        }
    }
    out
}

#[inline]
fn axpy<S: Scalar>(a: S, x: &[S], y: &mut [S]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

#[inline]
fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    let mut acc = S::ZERO;
    for (a, b) in x.iter().zip(y) {
        acc += *a * *b;
    }
    acc
}

/// Precomputed geometry of one convolutional edge.
#[derive(Debug, Clone)]
pub(crate) struct ConvGeometry {
    pub in_x: usize,
    pub out_x: usize,
    pub filter_x: usize,
    pub tx: Vec<Tap>,
    pub ty: Vec<Tap>,
}

impl ConvGeometry {
    pub fn new(in_dims: (usize, usize), out_dims: (usize, usize)) -> Self {
        ConvGeometry {
            in_x: in_dims.0,
            out_x: out_dims.0,
            filter_x: in_dims.0.abs_diff(out_dims.0) + 1,
            tx: taps(in_dims.0, out_dims.0),
            ty: taps(in_dims.1, out_dims.1),
        }
    }

    /// `out += filter * input` with `[position][batch]` buffers.
    pub fn forward<S: Scalar>(&self, input: &[S], filter: &[S], out: &mut [S], batch: usize) {
        for &(oy, iy, ky) in &self.ty {
            let (oy, iy, ky) = (oy as usize, iy as usize, ky as usize);
            for &(ox, ix, kx) in &self.tx {
                let w = filter[ky * self.filter_x + kx as usize];
                let o = oy * self.out_x + ox as usize;
                let i = iy * self.in_x + ix as usize;
                axpy(
                    w,
                    &input[i * batch..(i + 1) * batch],
                    &mut out[o * batch..(o + 1) * batch],
                );
            }
        }
    }

    /// Accumulates the filter gradient and, when requested, the input delta.
    pub fn backward<S: Scalar>(
        &self,
        input: &[S],
        filter: &[S],
        delta: &[S],
        grad_filter: &mut [S],
        mut grad_input: Option<&mut [S]>,
        batch: usize,
    ) {
        for &(oy, iy, ky) in &self.ty {
            let (oy, iy, ky) = (oy as usize, iy as usize, ky as usize);
            for &(ox, ix, kx) in &self.tx {
                let k = ky * self.filter_x + kx as usize;
                let o = oy * self.out_x + ox as usize;
                let i = iy * self.in_x + ix as usize;
                let d = &delta[o * batch..(o + 1) * batch];
                grad_filter[k] += dot(d, &input[i * batch..(i + 1) * batch]);
                if let Some(gi) = grad_input.as_deref_mut() {
                    axpy(filter[k], d, &mut gi[i * batch..(i + 1) * batch]);
                }
            }
        }
    }
}
