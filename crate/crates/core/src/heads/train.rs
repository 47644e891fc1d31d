use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Head, HeadError};
use crate::embedding::LabeledSet;

/// Minimum validation-loss decrease that counts as an improvement.
const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            optimizer: OptimizerKind::adam(),
            batch_size: 32,
            max_epochs: 50,
            early_stop_patience: 5,
            seed: 0,
            l2_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), HeadError> {
        let bad = |m: &str| Err(HeadError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return bad("l2_penalty must be >= 0");
        }
        if let OptimizerKind::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 {
                return bad("adam needs 0 <= beta < 1 and epsilon > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_metric: Vec<f64>,
    /// Best validation loss seen up to and including each epoch.
    pub best_val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam { beta1, beta2, epsilon } => Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for j in 0..params.len() {
                    let g = grad[j];
                    m[j] = *beta1 * m[j] + (1.0 - *beta1) * g;
                    v[j] = *beta2 * v[j] + (1.0 - *beta2) * g * g;
                    let m_hat = m[j] / c1;
                    let v_hat = v[j] / c2;
                    params[j] -= lr * m_hat / (v_hat.sqrt() + *epsilon);
                }
            }
        }
    }
}

/// Minibatch training with per-epoch seeded shuffling and early stopping on
/// validation loss. Returns the best-validation-epoch parameters, rounded to
/// `f32` precision.
pub fn train_head(
    mut head: Head,
    train: &LabeledSet,
    validation: &LabeledSet,
    config: &TrainConfig,
) -> Result<(Head, TrainHistory), HeadError> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(HeadError::EmptyBatch);
    }
    head.check_set(train)?;
    head.check_set(validation)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optimizer, head.param_count());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_all: Vec<usize> = (0..validation.len()).collect();

    let mut history = TrainHistory::default();
    let mut best_loss = f64::INFINITY;
    let mut patience_ref = f64::INFINITY;
    let mut best_params = head.params.clone();
    let mut waited = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grad) = head.loss_and_gradient(train, batch, config.l2_penalty)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(HeadError::NonFiniteLoss { epoch, batch: b });
            }
            weighted += loss * batch.len() as f64;
            opt.step(&mut head.params, &grad, config.learning_rate);
            if head.params.iter().any(|p| !p.is_finite()) {
                return Err(HeadError::NonFiniteLoss { epoch, batch: b });
            }
        }
        let val_loss = head.loss(validation, &val_all, config.l2_penalty)?;
        if !val_loss.is_finite() {
            return Err(HeadError::NonFiniteLoss { epoch, batch: 0 });
        }
        history.train_loss.push(weighted / train.len() as f64);
        history.val_loss.push(val_loss);
        history.val_metric.push(head.evaluate(validation)?.value);
        history.stopped_epoch = epoch;

        // Patience resets only on a significant improvement; the returned
        // parameters are those of the lowest validation loss regardless.
        if val_loss < patience_ref - MIN_IMPROVEMENT {
            patience_ref = val_loss;
            waited = 0;
        } else {
            waited += 1;
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best_params.copy_from_slice(&head.params);
            history.best_epoch = epoch;
        }
        history.best_val_loss.push(best_loss);
        if waited >= config.early_stop_patience.max(1) {
            log::debug!("early stop at epoch {epoch} (best {})", history.best_epoch);
            break;
        }
    }

    head.params = best_params;
    head.quantize();
    Ok((head, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{TaskKind, Targets};
    use crate::heads::HeadKind;

    fn regression_set(xs: &[f64], y: f64) -> LabeledSet {
        LabeledSet {
            ids: (0..xs.len()).map(|i| i.to_string()).collect(),
            dim: 1,
            features: xs.to_vec(),
            targets: Targets::Values(vec![y; xs.len()]),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { max_epochs: 0, ..TrainConfig::default() },
        ];
        assert!(bad.iter().all(|c| c.validate().is_err()));
    }

    #[test]
    fn history_lengths_consistent() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let train = regression_set(&xs, 0.3);
        let head = Head::init(HeadKind::Linear, 1, 1, TaskKind::Regression, 1).unwrap();
        let cfg = TrainConfig::default();
        let (_, h) = train_head(head, &train, &train, &cfg).unwrap();
        assert_eq!(h.train_loss.len(), h.stopped_epoch);
        assert_eq!(h.val_loss.len(), h.stopped_epoch);
        assert_eq!(h.best_val_loss.len(), h.stopped_epoch);
        assert!(h.stopped_epoch <= cfg.max_epochs);
        assert!(h.best_val_loss.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn sgd_converges_on_constant_target() {
        let xs: Vec<f64> = (0..64).map(|i| (i as f64 / 64.0) - 0.5).collect();
        let train = regression_set(&xs, 0.8);
        let head = Head::init(HeadKind::Linear, 1, 1, TaskKind::Regression, 3).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.2,
            max_epochs: 200,
            early_stop_patience: 50,
            ..TrainConfig::default()
        };
        let (trained, _) = train_head(head, &train, &train, &cfg).unwrap();
        assert!((trained.forward(&[0.1]).unwrap()[0] - 0.8).abs() < 1e-2);
    }

    #[test]
    fn divergence_is_reported() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 * 1e3).collect();
        let train = regression_set(&xs, 1.0);
        let head = Head::init(HeadKind::Linear, 1, 1, TaskKind::Regression, 3).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e3,
            early_stop_patience: 100,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_head(head, &train, &train, &cfg),
            Err(HeadError::NonFiniteLoss { .. })
        ));
    }
}
