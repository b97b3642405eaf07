//! Training loop: random crops, L1 (+ optional gradient surrogate) loss,
//! Adam with cosine restarts.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::formation::TrainingPair;
use crate::image::{Image, CHANNELS};

use super::graph::{Graph, NodeId};
use super::network::{build_network, forward, ForwardOptions, NetworkParams};
use super::optim::{cosine_lr, Adam};
use super::tensor::Tensor;
use super::NetworkConfig;

/// Extra loss term on top of L1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PercepMode {
    #[default]
    Off,
    /// L1 distance between finite-difference image gradients, standing in
    /// for a pretrained perceptual loss.
    GradSurrogate,
}

impl FromStr for PercepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(PercepMode::Off),
            "grad-surrogate" => Ok(PercepMode::GradSurrogate),
            other => Err(Error::InvalidArgument(format!(
                "percep_mode must be off or grad-surrogate, got {other}"
            ))),
        }
    }
}

impl std::fmt::Display for PercepMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PercepMode::Off => "off",
            PercepMode::GradSurrogate => "grad-surrogate",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    /// Iterations between learning-rate restarts.
    pub restart_period: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    /// Crop side; reduced to fit the smallest image and floored to a
    /// multiple of 4.
    pub patch: usize,
    pub iters: u64,
    pub seed: u64,
    pub lambda_percep: f64,
    pub percep_mode: PercepMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 2e-4,
            lr_min: 1e-7,
            restart_period: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 4,
            patch: 64,
            iters: 1000,
            seed: 0,
            lambda_percep: 0.01,
            percep_mode: PercepMode::Off,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lr_min >= 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite(),
            "need 0 <= lr_min < lr_max, got {} and {}",
            self.lr_min,
            self.lr_max
        );
        ensure!(self.restart_period > 0, "restart_period must be positive");
        ensure!(self.batch >= 1, "batch must be at least 1");
        ensure!(
            self.patch >= 4,
            "patch must be at least 4, got {}",
            self.patch
        );
        ensure!(
            self.lambda_percep >= 0.0,
            "lambda_percep must be non-negative"
        );
        Ok(())
    }
}

/// One row of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: u64,
    pub lr: f64,
    pub l1: f64,
    /// Unweighted surrogate term (0 when disabled).
    pub surrogate: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iter,lr,l1,surrogate,total";

    pub fn csv(log: &[LossRecord]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in log {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e}",
                r.iter, r.lr, r.l1, r.surrogate, r.total
            );
        }
        out
    }
}

pub struct TrainResult {
    pub params: NetworkParams,
    pub log: Vec<LossRecord>,
}

/// Mean L1 over the first and last `window` records.
pub fn smoothed_l1(log: &[LossRecord], window: usize) -> Option<(f64, f64)> {
    let w = window.min(log.len());
    if w == 0 {
        return None;
    }
    let mean = |s: &[LossRecord]| s.iter().map(|r| r.l1).sum::<f64>() / s.len() as f64;
    Some((mean(&log[..w]), mean(&log[log.len() - w..])))
}

/// Copy a `side`x`side` window into `dst` (planar channels).
fn crop_into(img: &Image, x0: usize, y0: usize, side: usize, dst: &mut [f32]) {
    for c in 0..CHANNELS {
        let plane = img.channel(c);
        for y in 0..side {
            let row = &plane[(y0 + y) * img.width() + x0..][..side];
            let out = &mut dst[(c * side + y) * side..][..side];
            out.iter_mut().zip(row).for_each(|(o, &v)| *o = v as f32);
        }
    }
}

/// Network input tensors for a batch of crops.
pub(crate) struct Batch {
    pub degraded: Tensor<f32>,
    pub target: Tensor<f32>,
    pub maps: Tensor<f32>,
}

pub(crate) fn assemble_batch(
    pairs: &[TrainingPair],
    picks: &[(usize, usize, usize)],
    side: usize,
    code_dim: usize,
) -> Result<Batch> {
    let n = picks.len();
    let plane = side * side;
    let mut degraded = Tensor::zeros([n, 3, side, side]);
    let mut target = Tensor::zeros([n, 3, side, side]);
    let mut maps = Tensor::zeros([n, code_dim, side, side]);
    for (i, &(idx, x0, y0)) in picks.iter().enumerate() {
        let pair = &pairs[idx];
        crop_into(
            &pair.degraded,
            x0,
            y0,
            side,
            &mut degraded.data_mut()[i * 3 * plane..(i + 1) * 3 * plane],
        );
        crop_into(
            &pair.target,
            x0,
            y0,
            side,
            &mut target.data_mut()[i * 3 * plane..(i + 1) * 3 * plane],
        );
        if pair.code.dim() != code_dim {
            return Err(Error::Shape(format!(
                "pair {idx} has a {}-dimensional code, network expects {code_dim}",
                pair.code.dim()
            )));
        }
        for (j, &c) in pair.code.as_slice().iter().enumerate() {
            let start = (i * code_dim + j) * plane;
            maps.data_mut()[start..start + plane]
                .iter_mut()
                .for_each(|v| *v = c as f32);
        }
    }
    Ok(Batch {
        degraded,
        target,
        maps,
    })
}

/// Largest usable crop side for the dataset.
fn crop_side(pairs: &[TrainingPair], patch: usize) -> Result<usize> {
    let min_dim = pairs
        .iter()
        .map(|p| p.degraded.width().min(p.degraded.height()))
        .min()
        .unwrap_or(0);
    let side = patch.min(min_dim) / 4 * 4;
    ensure!(
        side >= 4,
        "training images must be at least 4x4, smallest side is {min_dim}"
    );
    Ok(side)
}

/// Record the loss graph for one batch. Returns (total, l1, surrogate).
pub(crate) fn loss_graph(
    g: &mut Graph<f32>,
    params: &NetworkParams,
    batch: &Batch,
    tc: &TrainConfig,
) -> Result<(NodeId, NodeId, Option<NodeId>, super::network::ParamNodes)> {
    let nodes = params.bind(g, true);
    let x = g.leaf(batch.degraded.clone(), false);
    let m = g.leaf(batch.maps.clone(), false);
    let t = g.leaf(batch.target.clone(), false);
    let trace = forward(g, &nodes, params.config(), x, m, ForwardOptions::default())?;
    let l1 = g.l1(trace.output, t)?;
    match tc.percep_mode {
        PercepMode::Off => Ok((l1, l1, None, nodes)),
        PercepMode::GradSurrogate => {
            let s = g.gradient_l1(trace.output, t)?;
            let ws = g.scale(s, tc.lambda_percep)?;
            let total = g.add(l1, ws)?;
            Ok((total, l1, Some(s), nodes))
        }
    }
}

/// Train a fresh network on `pairs`.
pub fn train(pairs: &[TrainingPair], net: &NetworkConfig, tc: &TrainConfig) -> Result<TrainResult> {
    let params = build_network(net, tc.seed)?;
    train_from(params, pairs, tc)
}

/// Continue training `params` on `pairs`.
pub fn train_from(
    mut params: NetworkParams,
    pairs: &[TrainingPair],
    tc: &TrainConfig,
) -> Result<TrainResult> {
    tc.validate()?;
    ensure!(!pairs.is_empty(), "training set is empty");
    for (i, p) in pairs.iter().enumerate() {
        p.degraded
            .check_same_shape(&p.target)
            .map_err(|e| match e {
                Error::Shape(m) => Error::Shape(format!("pair {i}: {m}")),
                other => other,
            })?;
    }
    let side = crop_side(pairs, tc.patch)?;
    let code_dim = params.config().code_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_da7a);
    let mut adam = Adam::new(tc.beta1, tc.beta2, tc.eps)?;
    let mut log = Vec::with_capacity(tc.iters as usize);

    for iter in 0..tc.iters {
        let picks: Vec<_> = (0..tc.batch)
            .map(|_| {
                let idx = rng.random_range(0..pairs.len());
                let img = &pairs[idx].degraded;
                let x0 = rng.random_range(0..=img.width() - side);
                let y0 = rng.random_range(0..=img.height() - side);
                (idx, x0, y0)
            })
            .collect();
        let batch = assemble_batch(pairs, &picks, side, code_dim)?;
        let lr = cosine_lr(iter, tc.restart_period, tc.lr_min, tc.lr_max);

        let at_iter = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("iteration {iter}: {m}")),
            other => other,
        };
        let mut g = Graph::new();
        let (total, l1, surrogate, nodes) =
            loss_graph(&mut g, &params, &batch, tc).map_err(at_iter)?;
        let record = LossRecord {
            iter,
            lr,
            l1: g.value(l1).item() as f64,
            surrogate: surrogate.map_or(0.0, |s| g.value(s).item() as f64),
            total: g.value(total).item() as f64,
        };
        if !record.total.is_finite() {
            return Err(Error::Numeric(format!(
                "iteration {iter}: loss is {}",
                record.total
            )));
        }
        let mut grads = g.backward(total)?;

        adam.advance();
        for (name, node) in nodes.iter() {
            let grad = grads.take(node).ok_or_else(|| {
                Error::Numeric(format!("iteration {iter}: no gradient reached {name}"))
            })?;
            if !grad.is_finite() {
                return Err(Error::Numeric(format!(
                    "iteration {iter}: gradient of {name} is not finite"
                )));
            }
            let p = params
                .tensors_mut()
                .get_mut(name)
                .expect("bound from params");
            adam.update(name, p, grad.data(), lr)?;
        }
        if iter % 50 == 0 || iter + 1 == tc.iters {
            log::info!(
                "iter {iter}: lr {lr:.3e} l1 {:.5} total {:.5}",
                record.l1,
                record.total
            );
        }
        log.push(record);
    }
    Ok(TrainResult { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_code::KernelCode;

    fn pair(w: usize, h: usize, v: f64) -> TrainingPair {
        TrainingPair {
            degraded: Image::filled(w, h, v),
            target: Image::filled(w, h, v * 0.5),
            code: KernelCode(vec![0.1, -0.2]),
            angle_deg: 0.0,
        }
    }

    fn tiny() -> (NetworkConfig, TrainConfig) {
        let net = NetworkConfig {
            base_channels: 2,
            code_dim: 2,
            filter_size: 3,
            ..NetworkConfig::default()
        };
        let tc = TrainConfig {
            iters: 3,
            batch: 2,
            patch: 8,
            ..TrainConfig::default()
        };
        (net, tc)
    }

    #[test]
    fn crop_side_fits_smallest_image() {
        let pairs = vec![pair(30, 22, 0.5), pair(40, 40, 0.5)];
        assert_eq!(crop_side(&pairs, 64).unwrap(), 20);
        assert_eq!(crop_side(&pairs, 8).unwrap(), 8);
        assert!(crop_side(&[pair(3, 3, 0.1)], 64).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (net, tc) = tiny();
        assert!(train(&[], &net, &tc).is_err());
        let mut wrong_code = pair(8, 8, 0.3);
        wrong_code.code = KernelCode(vec![0.0; 5]);
        assert!(train(&[wrong_code], &net, &tc).is_err());
        let bad_lr = TrainConfig {
            lr_min: 1.0,
            ..tc.clone()
        };
        assert!(train(&[pair(8, 8, 0.3)], &net, &bad_lr).is_err());
    }

    #[test]
    fn log_has_one_row_per_iteration() {
        let (net, tc) = tiny();
        let res = train(&[pair(12, 12, 0.4)], &net, &tc).unwrap();
        assert_eq!(res.log.len(), 3);
        assert_eq!(res.log[0].lr, tc.lr_max);
        let csv = LossRecord::csv(&res.log);
        assert!(csv.starts_with("iter,lr,l1,surrogate,total\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn surrogate_is_logged() {
        let (net, mut tc) = tiny();
        tc.percep_mode = PercepMode::GradSurrogate;
        let mut p = pair(12, 12, 0.4);
        // non-constant target so the gradient term is non-zero
        p.target.set(0, 3, 3, 0.9);
        let res = train(&[p], &net, &tc).unwrap();
        let r = &res.log[0];
        assert!(r.surrogate > 0.0);
        assert!((r.total - (r.l1 + 0.01 * r.surrogate)).abs() < 1e-5);
    }

    #[test]
    fn percep_mode_parses() {
        assert_eq!("off".parse::<PercepMode>().unwrap(), PercepMode::Off);
        assert_eq!(
            "grad-surrogate".parse::<PercepMode>().unwrap(),
            PercepMode::GradSurrogate
        );
        assert!("vgg".parse::<PercepMode>().is_err());
    }

    #[test]
    fn smoothing_windows() {
        let log: Vec<_> = (0..10)
            .map(|i| LossRecord {
                iter: i,
                lr: 0.0,
                l1: i as f64,
                surrogate: 0.0,
                total: i as f64,
            })
            .collect();
        assert_eq!(smoothed_l1(&log, 3), Some((1.0, 8.0)));
        assert_eq!(smoothed_l1(&[], 3), None);
    }
}
