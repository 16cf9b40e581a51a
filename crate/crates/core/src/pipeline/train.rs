use rand::Rng;
use serde::{Deserialize, Serialize};

use super::classes::ClassMap;
use crate::error::{Error, Result};
use crate::nn::{Network, Optimizer, OptimizerKind, Tensor4};
use crate::rng;
use crate::volume::{
    augmentation_angles, resample, resample_labels, rotate, rotate_labels, window_normalize,
    Axis, Interpolation, LabelMap, Volume, WindowSpec,
};

/// Trailing-window relative-change rule for declaring a loss curve stable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Convergence {
    /// Number of trailing epoch losses inspected.
    pub window: usize,
    /// Largest allowed relative change between consecutive losses.
    pub tolerance: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            window: 10,
            tolerance: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Draw rotated copies of the training volumes.
    pub augment: bool,
    pub window: WindowSpec,
    pub convergence: Convergence,
    /// End training at the first epoch where the convergence rule holds.
    pub stop_on_convergence: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 800,
            steps_per_epoch: 35,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            augment: true,
            window: WindowSpec::new(100.0).expect("positive"),
            convergence: Convergence::default(),
            stop_on_convergence: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.steps_per_epoch < 1 {
            return Err(Error::InvalidParameter(
                "epochs and steps per epoch must be >= 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bad learning rate {}",
                self.learning_rate
            )));
        }
        self.optimizer.validate()
    }
}

/// Per-epoch mean training loss and validation loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    /// Empty when no validation set was given.
    pub val: Vec<f64>,
}

/// A windowed, network-sized training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Normalized to `[0, 1]`; air is 0.
    pub input: Volume,
    /// Class indices (not organ indices).
    pub target: LabelMap,
}

/// Windows a raw volume, resamples both grids to `dims` and maps organ
/// labels to class indices.
pub fn prepare(
    volume: &Volume,
    labels: &LabelMap,
    window: WindowSpec,
    classes: &ClassMap,
    dims: [usize; 3],
) -> Result<Sample> {
    volume.same_grid(labels)?;
    let input = resample(&window_normalize(volume, window)?, dims)?;
    let target = classes.to_classes(&resample_labels(labels, dims)?);
    Ok(Sample { input, target })
}

/// True when every consecutive pair among the last `window` losses changes
/// by less than `tol` relative to the earlier value.
pub fn is_converged(history: &[f64], window: usize, tol: f64) -> bool {
    if window < 2 || history.len() < window {
        return false;
    }
    history[history.len() - window..]
        .windows(2)
        .all(|p| (p[1] - p[0]).abs() / p[0].abs().max(f64::EPSILON) < tol)
}

fn augmented(sample: &Sample, variant: usize, angles: &[f64]) -> (Volume, LabelMap) {
    if variant == 0 {
        return (sample.input.clone(), sample.target.clone());
    }
    let axis = Axis::ALL[(variant - 1) / angles.len()];
    let angle = angles[(variant - 1) % angles.len()];
    (
        rotate(&sample.input, axis, angle, Interpolation::Trilinear, 0.0),
        rotate_labels(&sample.target, axis, angle, 0),
    )
}

fn mean_loss(net: &Network, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let trace = net.forward_trace(&Tensor4::from_volume(&s.input), None)?;
        total += net.loss(&trace, &s.target)?;
    }
    Ok(total / samples.len() as f64)
}

/// Single-sample gradient steps, `epochs x steps_per_epoch` of them.
///
/// Every step draws, uniformly with replacement, one training volume and one
/// of its variants: the original or a rotation about one axis by one of the
/// augmentation angles. Deterministic in `cfg.seed`.
pub fn train(
    mut net: Network,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Network, LossHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    let angles = augmentation_angles();
    let variants = if cfg.augment { 1 + 3 * angles.len() } else { 1 };
    let mut pick = rng::stream(cfg.seed, "augment");
    let mut dropout = rng::stream(cfg.seed, "dropout");
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut history = LossHistory::default();
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let draw = pick.random_range(0..train_set.len() * variants);
            let (vol, target) = augmented(&train_set[draw / variants], draw % variants, &angles);
            let diverged = |e| Error::Diverged {
                epoch,
                step,
                source: Box::new(e),
            };
            let trace = net
                .forward_trace(&Tensor4::from_volume(&vol), Some(&mut dropout))
                .map_err(diverged)?;
            let (loss, grads) = net.backward(trace, &target).map_err(diverged)?;
            opt.step(&mut net, &grads);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    source: Box::new(Error::NonFiniteTraining {
                        layer: "loss".into(),
                        what: "loss",
                    }),
                });
            }
            sum += loss;
        }
        history.train.push(sum / cfg.steps_per_epoch as f64);
        if !val_set.is_empty() {
            history.val.push(mean_loss(&net, val_set)?);
        }
        let c = cfg.convergence;
        if cfg.stop_on_convergence && is_converged(&history.train, c.window, c.tolerance) {
            break;
        }
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkConfig;

    #[test]
    fn convergence_rule() {
        assert!(is_converged(&[3.0; 12], 10, 0.1));
        assert!(is_converged(&[10.0, 9.5], 2, 0.1));
        assert!(!is_converged(&[10.0, 5.0], 2, 0.1));
        assert!(!is_converged(&[10.0], 2, 0.1));
        assert!(!is_converged(&[10.0, 9.5], 3, 0.1));
        // only the trailing window matters
        assert!(is_converged(&[100.0, 1.0, 1.05, 1.0], 3, 0.1));
    }

    fn toy_samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let input = Volume::from_fn([8, 8, 8], [1.0; 3], |x, y, z| {
                    if (x + y + z + i) % 5 == 0 { 0.9 } else { 0.1 }
                })
                .unwrap();
                let target = input.map(|v| (v > 0.5) as u8).unwrap();
                Sample { input, target }
            })
            .collect()
    }

    fn small_net() -> Network {
        Network::build(NetworkConfig { num_classes: 2, depth: 1, base_channels: 2, dropout: 0.2, ..NetworkConfig::toy() }).unwrap()
    }

    #[test]
    fn zero_lr_keeps_weights() {
        let net = small_net();
        let cfg = TrainConfig { epochs: 1, steps_per_epoch: 3, learning_rate: 0.0, ..TrainConfig::default() };
        let (after, h) = train(net.clone(), &toy_samples(2), &[], &cfg).unwrap();
        assert_eq!(after, net);
        assert_eq!(h.train.len(), 1);
        assert!(h.val.is_empty());
    }

    #[test]
    fn deterministic_and_descending() {
        let cfg = TrainConfig { epochs: 12, steps_per_epoch: 6, learning_rate: 0.1, ..TrainConfig::default() };
        let data = toy_samples(3);
        let (a, ha) = train(small_net(), &data, &data[..1], &cfg).unwrap();
        let (b, hb) = train(small_net(), &data, &data[..1], &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(ha.val.len(), 12);
        assert!(ha.train.last().unwrap() < ha.train.first().unwrap());
    }

    #[test]
    fn adam_run_descends() {
        let cfg = TrainConfig { epochs: 8, steps_per_epoch: 6, learning_rate: 0.01, optimizer: OptimizerKind::adam(), ..TrainConfig::default() };
        let (_, h) = train(small_net(), &toy_samples(3), &[], &cfg).unwrap();
        assert!(h.train.last().unwrap() < h.train.first().unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train(small_net(), &toy_samples(1), &[], &cfg).is_err());
        assert!(train(small_net(), &[], &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_reports_context() {
        let cfg = TrainConfig { epochs: 3, steps_per_epoch: 5, learning_rate: 1e300, ..TrainConfig::default() };
        match train(small_net(), &toy_samples(2), &[], &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|(_, h)| h)),
        }
    }
}
