//! Genome compilation and stochastic-gradient training.

mod conv;
pub mod init;
pub mod phenotype;
pub mod pool;
pub mod scalar;

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{batches, ImageSet};
use crate::genome::{Fitness, Genome};
pub use init::{epigenetic_initialize, fan_in, he_initialize, HeVariance};
pub use phenotype::{Mode, NetConfig, ParamKind, ParamRef, Phenotype, PhenotypeError};
pub use pool::pooling_partition;
pub use scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub epochs: usize,
    pub bn_alpha: f64,
    pub bn_eps: f64,
    pub relu_max: f64,
    pub relu_leak: f64,
    pub mu: f64,
    pub mu_delta: f64,
    pub mu_max: f64,
    pub eta: f64,
    pub eta_delta: f64,
    pub eta_min: f64,
    pub lambda: f64,
    pub lambda_delta: f64,
    pub lambda_min: f64,
    pub he_variance: HeVariance,
    pub loss_reduction: LossReduction,
    /// Score the validation split after every epoch instead of only the last.
    pub validate_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            eval_batch_size: 500,
            epochs: 10,
            bn_alpha: 0.1,
            bn_eps: 1e-5,
            relu_max: 5.5,
            relu_leak: 0.1,
            mu: 0.5,
            mu_delta: 0.95,
            mu_max: 0.99,
            eta: 0.0125,
            eta_delta: 0.95,
            eta_min: 1e-4,
            lambda: 5e-4,
            lambda_delta: 0.95,
            lambda_min: 1e-5,
            he_variance: HeVariance::Standard,
            loss_reduction: LossReduction::Mean,
            validate_every_epoch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid training configuration: {0}")]
pub struct TrainConfigError(pub String);

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainConfigError> {
        let positive = [
            ("bn_alpha", self.bn_alpha),
            ("bn_eps", self.bn_eps),
            ("relu_max", self.relu_max),
            ("relu_leak", self.relu_leak),
            ("mu", self.mu),
            ("mu_delta", self.mu_delta),
            ("mu_max", self.mu_max),
            ("eta", self.eta),
            ("eta_delta", self.eta_delta),
            ("eta_min", self.eta_min),
            ("lambda", self.lambda),
            ("lambda_delta", self.lambda_delta),
            ("lambda_min", self.lambda_min),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainConfigError(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 || self.epochs == 0 {
            return Err(TrainConfigError("batch sizes and epochs must be positive".into()));
        }
        if self.mu > self.mu_max || self.mu_max >= 1.0 {
            return Err(TrainConfigError("need mu <= mu_max < 1".into()));
        }
        if self.eta_min > self.eta || self.lambda_min > self.lambda {
            return Err(TrainConfigError("floors must not exceed initial values".into()));
        }
        Ok(())
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            bn_alpha: self.bn_alpha,
            bn_eps: self.bn_eps,
            relu_max: self.relu_max,
            relu_leak: self.relu_leak,
        }
    }
}

/// How per-example cross-entropy gradients combine over a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Averaged over the batch.
    #[default]
    Mean,
    /// Summed over the batch, so `eta` is a per-example rate.
    Sum,
}

/// Where a genome's starting weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Fresh He-style draws for every weight.
    He,
    /// Keep the weights the genome already carries from its parents.
    #[default]
    Epigenetic,
}

/// Per-epoch hyperparameter decay.
pub fn schedule_step(mu: f64, eta: f64, lambda: f64, config: &TrainConfig) -> (f64, f64, f64) {
    (
        config.mu_max - (config.mu_max - mu) * config.mu_delta,
        (eta * config.eta_delta).max(config.eta_min),
        (lambda * config.lambda_delta).max(config.lambda_min),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Summed cross-entropy over the set.
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count.max(1) as f64
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss / self.count.max(1) as f64
    }
}

/// Inference-mode loss and accuracy over a whole set.
pub fn evaluate<S: Scalar>(
    phenotype: &mut Phenotype<S>,
    set: &ImageSet,
    eval_batch_size: usize,
) -> Result<Evaluation, PhenotypeError> {
    let mut out = Evaluation {
        loss: 0.0,
        correct: 0,
        count: set.len(),
    };
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(eval_batch_size.max(1)) {
        phenotype.load_batch(set, chunk)?;
        phenotype.forward(Mode::Infer);
        let (loss, correct) = phenotype.loss_and_correct();
        out.loss += loss;
        out.correct += correct;
    }
    Ok(out)
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub mu: f64,
    pub eta: f64,
    pub lambda: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy,mu,eta,lambda";

/// Renders epoch logs as CSV, header included.
pub fn epoch_log_csv(rows: &[EpochLog]) -> String {
    let mut s = String::from(EPOCH_LOG_HEADER);
    s.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_accuracy),
            r.mu,
            r.eta,
            r.lambda
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The genome with trained weights and its fitness filled in.
    pub genome: Genome,
    pub validation: Evaluation,
    /// Loss became non-finite; fitness is the worst representable value.
    pub diverged: bool,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn fitness(&self) -> Fitness {
        self.genome.fitness
    }
}

/// Trains `genome` for `config.epochs` epochs on `train_set` and scores it
/// by total cross-entropy on `validation`.
pub fn train(
    genome: &Genome,
    train_set: &ImageSet,
    validation: &ImageSet,
    config: &TrainConfig,
    init: InitStrategy,
    seed: u64,
) -> Result<TrainOutcome, PhenotypeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut genome = genome.clone();
    if init == InitStrategy::He {
        he_initialize(&mut genome, config.he_variance, &mut rng);
    }
    let mut net = Phenotype::<f32>::compile(&genome, config.net(), rng.next_u64())?;
    let (mut mu, mut eta, mut lambda) = (config.mu, config.eta, config.lambda);
    let mut log = Vec::with_capacity(config.epochs);
    let mut diverged = false;
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in batches(train_set.len(), config.batch_size, rng.next_u64()) {
            net.load_batch(train_set, &batch)?;
            net.forward(Mode::Train);
            let (loss, _) = net.loss_and_correct();
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            total += loss;
            seen += batch.len();
            net.backward();
            // backward yields mean gradients; weight decay stays at eta * lambda
            let k = match config.loss_reduction {
                LossReduction::Sum => batch.len() as f64,
                LossReduction::Mean => 1.0,
            };
            net.sgd_step(mu, eta * k, lambda / k);
        }
        if diverged {
            break;
        }
        let last = epoch + 1 == config.epochs;
        let val = if config.validate_every_epoch && !last {
            Some(evaluate(&mut net, validation, config.eval_batch_size)?)
        } else {
            None
        };
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss: total / seen.max(1) as f64,
            val_loss: val.map(|v| v.mean_loss()),
            val_accuracy: val.map(|v| v.accuracy()),
            mu,
            eta,
            lambda,
        });
        (mu, eta, lambda) = schedule_step(mu, eta, lambda, config);
    }
    let mut evaluation = Evaluation {
        loss: f64::MAX,
        correct: 0,
        count: validation.len(),
    };
    if !diverged {
        evaluation = evaluate(&mut net, validation, config.eval_batch_size)?;
        diverged = !evaluation.loss.is_finite();
        if let Some(last) = log.last_mut() {
            last.val_loss = Some(evaluation.mean_loss());
            last.val_accuracy = Some(evaluation.accuracy());
        }
    }
    if diverged {
        evaluation.loss = f64::MAX;
    } else {
        net.write_back(&mut genome);
    }
    genome.fitness = Fitness::Value(evaluation.loss);
    Ok(TrainOutcome {
        genome,
        validation: evaluation,
        diverged,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let c = TrainConfig::default();
        let (mu, eta, _) = schedule_step(0.5, 0.0125, 5e-4, &c);
        assert!((mu - 0.5245).abs() < 1e-12);
        assert!((eta - 0.011875).abs() < 1e-15);
        let (_, eta, lambda) = schedule_step(0.9, c.eta_min, c.lambda_min, &c);
        assert_eq!((eta, lambda), (c.eta_min, c.lambda_min));
    }

    #[test]
    fn schedules_are_monotone() {
        let c = TrainConfig::default();
        let (mut mu, mut eta, mut lambda) = (c.mu, c.eta, c.lambda);
        for _ in 0..500 {
            let (m, e, l) = schedule_step(mu, eta, lambda, &c);
            assert!(m >= mu && m <= c.mu_max);
            assert!(e <= eta && e >= c.eta_min);
            assert!(l <= lambda && l >= c.lambda_min);
            (mu, eta, lambda) = (m, e, l);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            mu: 0.995,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            eta_min: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn filters(g: &Genome) -> Vec<f64> {
        g.edges
            .iter()
            .flat_map(|e| match &e.weights {
                crate::genome::EdgeWeights::Convolutional { filter, .. } => filter.clone(),
                crate::genome::EdgeWeights::Pooling { scale } => vec![*scale],
            })
            .collect()
    }

    #[test]
    fn summed_gradients_scale_the_step_by_the_batch() {
        let pixels: Vec<f32> = (0..10 * 16).map(|i| ((i * 37) % 11) as f32 / 10.0).collect();
        let labels: Vec<u8> = (0..10).map(|i| (i % 3) as u8).collect();
        let set = ImageSet::new(4, 4, 3, pixels, labels).unwrap();
        let mut g = Genome::minimal((4, 4), 3);
        he_initialize(&mut g, HeVariance::Standard, &mut ChaCha8Rng::seed_from_u64(1));
        let step = |reduction| {
            let config = TrainConfig {
                batch_size: 10,
                epochs: 1,
                lambda: 1e-3,
                lambda_min: 1e-5,
                loss_reduction: reduction,
                ..TrainConfig::default()
            };
            let out = train(&g, &set, &set, &config, InitStrategy::Epigenetic, 5).unwrap();
            filters(&out.genome)
        };
        let (w0, mean, sum) = (filters(&g), step(LossReduction::Mean), step(LossReduction::Sum));
        let eta_lambda = 0.0125 * 1e-3;
        for ((w, m), s) in w0.iter().zip(&mean).zip(&sum) {
            let (dm, ds) = (m - w + eta_lambda * w, s - w + eta_lambda * w);
            assert!((ds - 10.0 * dm).abs() < 1e-5 * (1.0 + ds.abs()), "{dm} {ds}");
        }
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let row = EpochLog {
            epoch: 1,
            train_loss: 0.5,
            val_loss: None,
            val_accuracy: Some(0.9),
            mu: 0.5,
            eta: 0.01,
            lambda: 0.001,
        };
        let csv = epoch_log_csv(&[row]);
        assert_eq!(csv, format!("{EPOCH_LOG_HEADER}\n1,0.5,,0.9,0.5,0.01,0.001\n"));
    }
}
