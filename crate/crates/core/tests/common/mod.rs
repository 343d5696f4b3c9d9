#![allow(dead_code)]

pub mod baseline;
pub mod faults;
pub mod oracle;

use std::path::PathBuf;

use evocnn::dataset::ImageSet;
use evocnn::genome::{EdgeKind, EdgeWeights, Genome};
use evocnn::mutation::{ops, InnovationRegistry, OperatorConfig};
use evocnn::train::{he_initialize, HeVariance, Mode, NetConfig, Phenotype};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Directory holding the MNIST IDX files, if present.
pub fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("EVOCNN_MNIST_DIR").map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")),
        Some(PathBuf::from("/root/data/mnist")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|d| d.join("train-images-idx3-ubyte").is_file())
}

pub fn random_set(dims: (usize, usize), classes: usize, n: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..n * dims.0 * dims.1).map(|_| rng.random::<f32>()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes) as u8).collect();
    ImageSet::new(dims.0, dims.1, classes, pixels, labels).unwrap()
}

/// Images whose class is visible as a bright square at a class-specific
/// position, plus noise; small networks learn it in a few epochs.
pub fn toy_set(n: usize, seed: u64) -> ImageSet {
    let (w, h, classes) = (8, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * w * h);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..classes);
        let (cx, cy) = [(1, 1), (5, 2), (2, 5)][c];
        for y in 0..h {
            for x in 0..w {
                let on = (cx..cx + 2).contains(&x) && (cy..cy + 2).contains(&y);
                pixels.push(if on { 0.8 } else { 0.0 } + rng.random_range(0.0..0.3));
            }
        }
        labels.push(c as u8);
    }
    ImageSet::new(w, h, classes, pixels, labels).unwrap()
}

/// A small random genome with at most `max_nodes` enabled nodes and, when
/// possible, both edge kinds; weights and batch-norm parameters randomized.
pub fn random_small_genome(seed: u64, max_nodes: usize) -> Genome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 2;
    let dims = (rng.random_range(5..=9), rng.random_range(5..=9));
    let cfg = OperatorConfig::new(true, true);
    loop {
        let mut reg = InnovationRegistry::for_minimal(classes);
        let mut g = Genome::minimal(dims, classes);
        for _ in 0..rng.random_range(2..12) {
            let op = cfg.sample_operator(&mut rng);
            if let Ok(c) = ops::apply(op, &g, &mut reg, &cfg, &mut rng) {
                if c.validate().is_ok() && c.enabled_node_count() <= max_nodes {
                    g = c;
                }
            }
        }
        let hidden = g.nodes.iter().filter(|n| n.is_hidden() && n.enabled).count();
        if hidden == 0 {
            continue;
        }
        he_initialize(&mut g, HeVariance::Standard, &mut rng);
        for e in g.edges.iter_mut() {
            if let EdgeWeights::Pooling { scale } = &mut e.weights {
                *scale = rng.random_range(0.5..1.5);
            }
        }
        for n in g.nodes.iter_mut().filter(|n| n.is_hidden()) {
            n.bn.gamma = rng.random_range(0.5..1.5);
            n.bn.beta = rng.random_range(-0.5..0.5);
        }
        return g;
    }
}

pub fn has_pooling(g: &Genome) -> bool {
    g.enabled_edges().any(|e| e.kind() == EdgeKind::Pooling)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub failures: usize,
    /// Worst error of the plain central difference at `eps`, for reference.
    pub worst_plain: f64,
    pub failures_plain: usize,
}

/// Compares every analytic gradient against central finite differences of
/// the mean cross-entropy. The judged estimate is the Richardson
/// combination of the steps `eps` and `eps / 2`, which cancels the
/// second-order truncation term that batch-norm curvature makes visible at
/// this step size. Parameters whose perturbation moves the network onto a
/// different linear piece (activation segment or pooling winner) are
/// skipped, since the loss is not differentiable across those seams.
pub fn finite_difference_check(genome: &Genome, batch: usize, eps: f64, tol: f64, floor: f64, seed: u64) -> GradCheck {
    let set = random_set(genome.input_dims(), genome.num_classes(), batch, seed);
    let mut net = Phenotype::<f64>::compile(genome, NetConfig::default(), seed).unwrap();
    net.load_batch(&set, &(0..batch).collect::<Vec<_>>()).unwrap();
    net.forward(Mode::Probe);
    net.freeze_pooling(true);
    net.forward(Mode::Probe);
    let base = net.region_signature();
    net.backward();
    let mut out = GradCheck::default();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    for p in net.params() {
        let analytic = net.grad(p);
        let v = net.param(p);
        let mut central = [0.0; 2];
        let mut smooth = true;
        for (slot, h) in [eps, eps / 2.0].into_iter().enumerate() {
            net.set_param(p, v + h);
            net.forward(Mode::Probe);
            let (plus, sig_plus) = (net.mean_loss(), net.region_signature());
            net.set_param(p, v - h);
            net.forward(Mode::Probe);
            let (minus, sig_minus) = (net.mean_loss(), net.region_signature());
            smooth &= sig_plus == base && sig_minus == base;
            central[slot] = (plus - minus) / (2.0 * h);
        }
        net.set_param(p, v);
        if !smooth {
            out.skipped += 1;
            continue;
        }
        let extrapolated = (4.0 * central[1] - central[0]) / 3.0;
        let (judged, plain) = (rel(analytic, extrapolated), rel(analytic, central[0]));
        out.checked += 1;
        out.worst = out.worst.max(judged);
        out.worst_plain = out.worst_plain.max(plain);
        out.failures += usize::from(judged >= tol);
        out.failures_plain += usize::from(plain >= tol);
    }
    out
}
