//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use serde::Serialize;

use super::network::{Gradients, Network};
use super::tensor::Tensor4;
use crate::error::Result;
use crate::volume::LabelMap;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Above this many parameters a seeded random subset of this size is checked.
    pub max_params: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so parameters whose
    /// true gradient is zero are judged by absolute error.
    pub floor: f64,
    /// When `±step` flips a ReLU or a pooling winner the difference straddles
    /// a kink. A one-sided difference is used if either side stays put,
    /// otherwise the step is divided by ten, down to this.
    pub min_step: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_params: 10_000,
            seed: 0,
            floor: 1e-6,
            min_step: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
    pub total: usize,
    /// Parameters whose central difference straddled a kink.
    pub refined: usize,
}

/// Compares backpropagated gradients with central differences, dropout off.
pub fn gradient_check(
    net: &Network,
    x: &Tensor4,
    target: &LabelMap,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let trace = net.forward_trace(x, None)?;
    let (_, grads) = net.backward(trace, target)?;
    compare_gradients(net, x, target, &grads, opts)
}

/// Compares a supplied gradient (possibly tampered with) against central
/// differences of the loss.
pub fn compare_gradients(
    net: &Network,
    x: &Tensor4,
    target: &LabelMap,
    analytic: &Gradients,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
    let mut index = Vec::new();
    for (a, (_, view)) in net.params().iter().enumerate() {
        index.extend((0..view.data.len()).map(|e| (a, e)));
    }
    let total = index.len();
    let chosen: Vec<usize> = if total > opts.max_params {
        let mut rng = crate::rng::stream(opts.seed, "gradcheck");
        let mut s = sample(&mut rng, total, opts.max_params).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..total).collect()
    };
    let flat = analytic.flat();

    let reference = net.forward_trace(x, None)?;
    let base = net.loss(&reference, target)?;
    let mut probe = net.clone();
    let mut eval = |array: usize, elem: usize, value: f64| -> Result<(f64, bool)> {
        probe.params_mut()[array][elem] = value;
        let trace = probe.forward_trace(x, None)?;
        Ok((probe.loss(&trace, target)?, trace.same_pieces(&reference)))
    };

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut refined = 0;
    for &i in &chosen {
        let (array, elem) = index[i];
        let w = net.params()[array].1.data[elem];
        let mut step = opts.step;
        let mut kink = false;
        let numeric = loop {
            let (plus, smooth_plus) = eval(array, elem, w + step)?;
            let (minus, smooth_minus) = eval(array, elem, w - step)?;
            if (smooth_plus && smooth_minus) || step / 10.0 < opts.min_step {
                break (plus - minus) / (2.0 * step);
            }
            kink = true;
            // One side stays on the current piece: second-order one-sided
            // difference there instead of shrinking into rounding noise.
            let side = if smooth_plus { Some((1.0, plus)) } else if smooth_minus { Some((-1.0, minus)) } else { None };
            if let Some((dir, near)) = side {
                let (far, smooth_far) = eval(array, elem, w + dir * 2.0 * step)?;
                if smooth_far {
                    break dir * (4.0 * near - far - 3.0 * base) / (2.0 * step);
                }
            }
            step /= 10.0;
        };
        eval(array, elem, w)?;
        refined += usize::from(kink);
        let a = flat[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if rel > max_rel || worst.is_empty() {
            max_rel = max_rel.max(rel);
            worst = format!("{}[{elem}]", names[array]);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_param: worst,
        checked: chosen.len(),
        total,
        refined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv3d, Layer, NetworkConfig, Op, Shape};
    use rand::Rng;

    fn data(net: &Network, seed: u64) -> (Tensor4, LabelMap) {
        let mut r = crate::rng::stream(seed, "gradcheck-test");
        let shape = net.input_shape();
        let x = Tensor4::new(shape.channels, shape.dims, (0..shape.len()).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let c = net.config().num_classes as u8;
        let t = LabelMap::from_fn(shape.dims, [1.0; 3], |_, _, _| r.random_range(0..c)).unwrap();
        (x, t)
    }

    #[test]
    fn single_conv_is_nearly_exact() {
        let cfg = NetworkConfig { num_classes: 3, input_dims: [4, 3, 5], ..NetworkConfig::toy() };
        let mut conv = Conv3d::zeros(1, 3, 3);
        let mut r = crate::rng::stream(1, "w");
        conv.weight.iter_mut().for_each(|w| *w = r.random_range(-0.5..0.5));
        let input = Shape { channels: 1, dims: cfg.input_dims };
        let output = Shape { channels: 3, dims: cfg.input_dims };
        let net = Network::from_layers(cfg, vec![Layer { name: "only".into(), op: Op::Conv(conv), input, output }]).unwrap();
        let (x, t) = data(&net, 2);
        let rep = gradient_check(&net, &x, &t, GradCheckOptions { step: 1e-5, ..Default::default() }).unwrap();
        assert!(rep.max_rel_error < 1e-8, "{rep:?}");
        assert_eq!(rep.refined, 0);
    }

    #[test]
    fn toy_net_subset() {
        let net = Network::build(NetworkConfig { seed: 3, ..NetworkConfig::toy() }).unwrap();
        let (x, t) = data(&net, 4);
        let rep = gradient_check(&net, &x, &t, GradCheckOptions { max_params: 300, ..Default::default() }).unwrap();
        assert_eq!(rep.checked, 300);
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let cfg = NetworkConfig { depth: 1, base_channels: 2, input_dims: [4; 3], seed: 3, ..NetworkConfig::toy() };
        let net = Network::build(cfg).unwrap();
        let (x, t) = data(&net, 4);
        let (_, mut g) = net.backward(net.forward_trace(&x, None).unwrap(), &t).unwrap();
        let clean = compare_gradients(&net, &x, &t, &g, GradCheckOptions::default()).unwrap();
        assert!(clean.max_rel_error < 1e-4, "{clean:?}");
        g.convs[1].0[5] += 1e-2;
        let bad = compare_gradients(&net, &x, &t, &g, GradCheckOptions::default()).unwrap();
        assert_eq!(bad.checked, bad.total);
        assert!(bad.max_rel_error > 1e-2, "{bad:?}");
        assert!(bad.worst_param.ends_with("weight[5]"), "{bad:?}");
    }
}
