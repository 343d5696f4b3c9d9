//! Plain multinomial logistic regression, used to sanity-check what a
//! linear classifier reaches on a split.

use evocnn::dataset::ImageSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Linear {
    dim: usize,
    classes: usize,
    w: Vec<f32>,
    b: Vec<f32>,
}

impl Linear {
    fn scores(&self, x: &[f32], out: &mut [f32]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.w[c * self.dim..(c + 1) * self.dim];
            *o = self.b[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>();
        }
    }

    fn softmax(&self, x: &[f32]) -> Vec<f32> {
        let mut s = vec![0.0; self.classes];
        self.scores(x, &mut s);
        let max = s.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0;
        for v in s.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        s.iter_mut().for_each(|v| *v /= total);
        s
    }

    pub fn accuracy(&self, set: &ImageSet) -> f64 {
        let correct = (0..set.len())
            .filter(|&i| {
                let p = self.softmax(set.image(i));
                let guess = (0..self.classes).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
                guess == set.labels[i] as usize
            })
            .count();
        correct as f64 / set.len() as f64
    }
}

/// Mini-batch gradient descent on mean cross-entropy from zero weights,
/// with a learning rate decayed by `decay` per epoch.
pub fn train_linear(set: &ImageSet, epochs: usize, batch: usize, rate: f32, decay: f32, seed: u64) -> Linear {
    let dim = set.image_len();
    let classes = set.classes;
    let mut m = Linear {
        dim,
        classes,
        w: vec![0.0; dim * classes],
        b: vec![0.0; classes],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut lr = rate;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(batch) {
            let mut gw = vec![0.0f32; dim * classes];
            let mut gb = vec![0.0f32; classes];
            for &i in chunk {
                let x = set.image(i);
                let mut p = m.softmax(x);
                p[set.labels[i] as usize] -= 1.0;
                for c in 0..classes {
                    gb[c] += p[c];
                    let row = &mut gw[c * dim..(c + 1) * dim];
                    row.iter_mut().zip(x).for_each(|(g, v)| *g += p[c] * v);
                }
            }
            let step = lr / batch as f32;
            m.w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
            m.b.iter_mut().zip(&gb).for_each(|(b, g)| *b -= step * g);
        }
        lr *= decay;
    }
    m
}
