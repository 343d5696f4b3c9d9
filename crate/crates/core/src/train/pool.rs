//! Fractional max pooling between arbitrarily sized feature maps.
//!
//! Each dimension of length `n` is cut into `m` non-overlapping windows
//! whose sizes differ by at most one; the window order is reshuffled on
//! every forward pass.

use rand::seq::SliceRandom;
use rand::Rng;

use super::scalar::Scalar;

/// Window sizes for pooling `n` cells down to `m`, in random order.
/// Returns `None` when `m` is zero or larger than `n`.
pub fn pooling_partition<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Option<Vec<usize>> {
    if m == 0 || m > n {
        return None;
    }
    let small = n / m;
    let large = n % m;
    let mut sizes: Vec<usize> = (0..m).map(|i| if i < large { small + 1 } else { small }).collect();
    sizes.shuffle(rng);
    Some(sizes)
}

/// Start offset of every window plus the total.
pub(crate) fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

/// Pooling geometry of one edge for one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct PoolWindows {
    pub in_x: usize,
    pub row_offsets: Vec<usize>,
    pub col_offsets: Vec<usize>,
}

impl PoolWindows {
    pub fn new(in_dims: (usize, usize), rows: &[usize], cols: &[usize]) -> Self {
        PoolWindows {
            in_x: in_dims.0,
            row_offsets: offsets(rows),
            col_offsets: offsets(cols),
        }
    }

    fn out_x(&self) -> usize {
        self.col_offsets.len() - 1
    }

    /// `out += scale * max(window)` for a `[positions][batch]` layout,
    /// recording the winning input position per output cell and sample.
    pub fn forward<S: Scalar>(&self, input: &[S], out: &mut [S], argmax: &mut [u32], scale: S, batch: usize) {
        let out_x = self.out_x();
        for (oy, rows) in self.row_offsets.windows(2).enumerate() {
            for (ox, cols) in self.col_offsets.windows(2).enumerate() {
                let o = oy * out_x + ox;
                let best = &mut argmax[o * batch..(o + 1) * batch];
                let first = rows[0] * self.in_x + cols[0];
                best.fill(first as u32);
                for iy in rows[0]..rows[1] {
                    for ix in cols[0]..cols[1] {
                        let p = iy * self.in_x + ix;
                        if p == first {
                            continue;
                        }
                        let cand = &input[p * batch..(p + 1) * batch];
                        for (b, slot) in best.iter_mut().enumerate() {
                            if cand[b] > input[*slot as usize * batch + b] {
                                *slot = p as u32;
                            }
                        }
                    }
                }
                let dst = &mut out[o * batch..(o + 1) * batch];
                for (b, slot) in best.iter().enumerate() {
                    dst[b] += scale * input[*slot as usize * batch + b];
                }
            }
        }
    }

    /// Routes `delta` to the winning inputs (scaled) and returns the
    /// gradient of the scale.
    pub fn backward<S: Scalar>(
        &self,
        input: &[S],
        delta: &[S],
        argmax: &[u32],
        scale: S,
        grad_input: Option<&mut [S]>,
        batch: usize,
    ) -> S {
        let mut grad_scale = S::ZERO;
        let cells = argmax.len() / batch;
        for o in 0..cells {
            for b in 0..batch {
                let p = argmax[o * batch + b] as usize;
                grad_scale += input[p * batch + b] * delta[o * batch + b];
            }
        }
        if let Some(gi) = grad_input {
            for o in 0..cells {
                for b in 0..batch {
                    let p = argmax[o * batch + b] as usize;
                    gi[p * batch + b] += scale * delta[o * batch + b];
                }
            }
        }
        grad_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = pooling_partition(14, 4, &mut rng).unwrap();
        p.sort();
        assert_eq!(p, vec![3, 3, 4, 4]);
        assert_eq!(pooling_partition(10, 5, &mut rng).unwrap(), vec![2; 5]);
        assert_eq!(pooling_partition(7, 7, &mut rng).unwrap(), vec![1; 7]);
        assert_eq!(pooling_partition(3, 4, &mut rng), None);
        assert_eq!(pooling_partition(3, 0, &mut rng), None);
    }

    #[test]
    fn window_max_matches_direct_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (ix, iy, ox, oy, batch) = (7usize, 5usize, 3usize, 2usize, 4usize);
        let input: Vec<f64> = (0..ix * iy * batch).map(|_| rng.random::<f64>() - 0.5).collect();
        let rows = pooling_partition(iy, oy, &mut rng).unwrap();
        let cols = pooling_partition(ix, ox, &mut rng).unwrap();
        let w = PoolWindows::new((ix, iy), &rows, &cols);
        let mut out = vec![0.0; ox * oy * batch];
        let mut arg = vec![0u32; ox * oy * batch];
        w.forward(&input, &mut out, &mut arg, 1.5, batch);
        let ro = offsets(&rows);
        let co = offsets(&cols);
        for b in 0..batch {
            for y in 0..oy {
                for x in 0..ox {
                    let mut m = f64::NEG_INFINITY;
                    for yy in ro[y]..ro[y + 1] {
                        for xx in co[x]..co[x + 1] {
                            m = m.max(input[(yy * ix + xx) * batch + b]);
                        }
                    }
                    assert_eq!(out[(y * ox + x) * batch + b], 1.5 * m);
                }
            }
        }
    }
}
