//! Layer plan, parameter initialization and the forward pass.
//!
//! Parameter names follow the layer plan: `enc{n}`, `cond{n}` and `gen{n}`
//! for the three scales (1 is the finest), `dec2`, `dec1` and `head`.
//! Convolution weights end in `.w` (`[cout, cin, k, k]`), biases in `.b`.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Error, Result};

use super::graph::{Graph, NodeId};
use super::tensor::{Real, Tensor};
use super::NetworkConfig;

/// Residual-branch weights are shrunk by this factor at initialization so
/// each block starts close to the identity.
const RESIDUAL_INIT_SCALE: f64 = 0.1;

/// Ordered `(name, shape)` list of every parameter tensor.
pub fn layer_plan(cfg: &NetworkConfig) -> Vec<(String, [usize; 4])> {
    let mut plan = Vec::new();
    let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
        plan.push((format!("{name}.w"), [cout, cin, k, k]));
        plan.push((format!("{name}.b"), [1, 1, 1, cout]));
    };
    let c = |n: usize| cfg.channels(n);
    let s2 = cfg.filter_size * cfg.filter_size;

    for (prefix, first_in) in [("enc", 3), ("cond", 3 + cfg.code_dim)] {
        for n in 0..3 {
            let cin = if n == 0 { first_in } else { c(n - 1) };
            let name = format!("{prefix}{}", n + 1);
            conv(format!("{name}.conv"), cin, c(n), 3);
            for r in 0..2 {
                conv(format!("{name}.res{r}.conv1"), c(n), c(n), 3);
                conv(format!("{name}.res{r}.conv2"), c(n), c(n), 3);
            }
        }
    }
    for n in 0..3 {
        let name = format!("gen{}", n + 1);
        conv(format!("{name}.conv"), c(n), c(n), 3);
        for r in 0..2 {
            conv(format!("{name}.res{r}.conv1"), c(n), c(n), 3);
            conv(format!("{name}.res{r}.conv2"), c(n), c(n), 3);
        }
        conv(format!("{name}.expand"), c(n), c(n) * s2, 1);
    }
    for n in [1, 0] {
        let name = format!("dec{}", n + 1);
        conv(format!("{name}.up"), c(n + 1), c(n), 3);
        conv(format!("{name}.fuse"), 2 * c(n), c(n), 3);
        for r in 0..2 {
            conv(format!("{name}.res{r}.conv1"), c(n), c(n), 3);
            conv(format!("{name}.res{r}.conv2"), c(n), c(n), 3);
        }
    }
    conv("head".into(), c(0), 3, 3);
    plan
}

/// Total number of scalar parameters for `cfg`.
pub fn param_count(cfg: &NetworkConfig) -> usize {
    layer_plan(cfg)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

/// Named parameter tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    cfg: NetworkConfig,
    tensors: IndexMap<String, Tensor<f32>>,
}

/// Deterministic Kaiming-normal initialization.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = (2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope)).sqrt();
    let mut tensors = IndexMap::new();
    for (name, shape) in layer_plan(cfg) {
        let len = shape.iter().product();
        let data = if name.ends_with(".b") {
            vec![0.0f32; len]
        } else {
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let mut std = gain / fan_in.sqrt();
            if name.contains(".res") {
                std *= RESIDUAL_INIT_SCALE;
            }
            (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * std) as f32
                })
                .collect()
        };
        tensors.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(NetworkParams {
        cfg: cfg.clone(),
        tensors,
    })
}

impl NetworkParams {
    /// Assemble from loaded tensors, checking names and shapes against the
    /// layer plan.
    pub fn from_tensors(
        cfg: NetworkConfig,
        tensors: IndexMap<String, Tensor<f32>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let plan = layer_plan(&cfg);
        if plan.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                plan.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &plan {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))?;
            if t.shape() != *shape {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("parameter {name} is not finite")));
            }
        }
        Ok(NetworkParams { cfg, tensors })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn tensors(&self) -> &IndexMap<String, Tensor<f32>> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.get(name)
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut IndexMap<String, Tensor<f32>> {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(|t| t.is_finite())
    }

    /// Record every parameter as a leaf of `g`.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, requires_grad: bool) -> ParamNodes {
        let nodes = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), g.leaf(t.cast(), requires_grad)))
            .collect();
        ParamNodes { nodes }
    }
}

/// Graph nodes of the bound parameters, by name.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    nodes: IndexMap<String, NodeId>,
}

impl ParamNodes {
    pub fn get(&self, name: &str) -> Option<NodeId> {
        self.nodes.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn node(&self, name: &str) -> Result<NodeId> {
        self.get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("parameter {name} is not bound")))
    }
}

/// Bind parameters from leaves created by the caller, e.g. perturbed
/// copies for finite-difference checks.
impl FromIterator<(String, NodeId)> for ParamNodes {
    fn from_iter<I: IntoIterator<Item = (String, NodeId)>>(iter: I) -> Self {
        ParamNodes {
            nodes: iter.into_iter().collect(),
        }
    }
}

/// Switches for diagnostics.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Replace every generated filter by a one-hot centre tap.
    pub identity_filters: bool,
}

/// Output node plus the intermediate nodes worth inspecting.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: NodeId,
    /// Encoder features `E_n`, finest first.
    pub encoder: [NodeId; 3],
    /// Condition-encoder features `H_n`.
    pub condition: [NodeId; 3],
    /// Generated filters `F_n`.
    pub filters: [NodeId; 3],
    /// Refined features `R_n`.
    pub refined: [NodeId; 3],
}

struct Builder<'a, T> {
    g: &'a mut Graph<T>,
    p: &'a ParamNodes,
    slope: f64,
}

impl<T: Real> Builder<'_, T> {
    fn conv(&mut self, x: NodeId, name: &str, stride: usize) -> Result<NodeId> {
        let w = self.p.node(&format!("{name}.w"))?;
        let b = self.p.node(&format!("{name}.b"))?;
        self.g.conv2d(x, w, Some(b), stride)
    }

    fn conv_act(&mut self, x: NodeId, name: &str, stride: usize) -> Result<NodeId> {
        let y = self.conv(x, name, stride)?;
        self.g.leaky_relu(y, self.slope)
    }

    fn res(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let h = self.conv_act(x, &format!("{name}.conv1"), 1)?;
        let h = self.conv(h, &format!("{name}.conv2"), 1)?;
        self.g.add(x, h)
    }

    fn res_pair(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let x = self.res(x, &format!("{name}.res0"))?;
        self.res(x, &format!("{name}.res1"))
    }

    fn encoder(&mut self, x: NodeId, prefix: &str) -> Result<[NodeId; 3]> {
        let mut out = [x; 3];
        let mut cur = x;
        for (n, slot) in out.iter_mut().enumerate() {
            let name = format!("{prefix}{}", n + 1);
            let stride = if n == 0 { 1 } else { 2 };
            cur = self.conv_act(cur, &format!("{name}.conv"), stride)?;
            cur = self.res_pair(cur, &name)?;
            *slot = cur;
        }
        Ok(out)
    }

    fn decoder_block(&mut self, deeper: NodeId, skip: NodeId, name: &str) -> Result<NodeId> {
        let u = self.g.upsample2x(deeper)?;
        let u = self.conv_act(u, &format!("{name}.up"), 1)?;
        let cat = self.g.concat(&[u, skip])?;
        let f = self.conv_act(cat, &format!("{name}.fuse"), 1)?;
        self.res_pair(f, name)
    }
}

/// One-hot centre filters for `[n, c * s * s, h, w]`.
fn identity_filters<T: Real>(shape: [usize; 4], s: usize) -> Tensor<T> {
    let [n, cs2, h, w] = shape;
    let c = cs2 / (s * s);
    let mut t = Tensor::zeros(shape);
    let centre = (s / 2) * s + s / 2;
    let plane = h * w;
    for b in 0..n {
        for m in 0..c {
            let start = ((b * c + m) * s * s + centre) * plane;
            t.data_mut()[start..start + plane]
                .iter_mut()
                .for_each(|v| *v = T::one());
        }
    }
    t
}

/// Record the network on `g`. `degraded` is `[n, 3, h, w]`, `maps` is
/// `[n, b, h, w]`; `h` and `w` must be multiples of 4. The output is the
/// degraded image plus the head's residual, unclamped.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    params: &ParamNodes,
    cfg: &NetworkConfig,
    degraded: NodeId,
    maps: NodeId,
    opts: ForwardOptions,
) -> Result<ForwardTrace> {
    let [n, c, h, w] = g.shape(degraded);
    let [mn, mb, mh, mw] = g.shape(maps);
    if c != 3 {
        return Err(Error::Shape(format!(
            "degraded input needs 3 channels, got {c}"
        )));
    }
    if (mn, mh, mw) != (n, h, w) || mb != cfg.code_dim {
        return Err(Error::Shape(format!(
            "degradation maps {:?} do not match input {:?} with code_dim {}",
            g.shape(maps),
            g.shape(degraded),
            cfg.code_dim
        )));
    }
    ensure!(
        h % 4 == 0 && w % 4 == 0 && h > 0 && w > 0,
        "spatial size {h}x{w} must be a positive multiple of 4"
    );
    let s = cfg.filter_size;
    let mut b = Builder {
        g,
        p: params,
        slope: cfg.leaky_slope,
    };

    let encoder = b.encoder(degraded, "enc")?;
    let cond_in = b.g.concat(&[degraded, maps])?;
    let condition = b.encoder(cond_in, "cond")?;

    let mut filters = encoder;
    let mut refined = encoder;
    for i in 0..3 {
        let name = format!("gen{}", i + 1);
        let f = if opts.identity_filters {
            let [fn_, fc, fh, fw] = b.g.shape(encoder[i]);
            let t = identity_filters([fn_, fc * s * s, fh, fw], s);
            b.g.leaf(t, false)
        } else {
            let f = b.conv_act(condition[i], &format!("{name}.conv"), 1)?;
            let f = b.res_pair(f, &name)?;
            b.conv(f, &format!("{name}.expand"), 1)?
        };
        filters[i] = f;
        refined[i] = b.g.dynamic_conv(encoder[i], f, s)?;
    }

    let d2 = b.decoder_block(refined[2], refined[1], "dec2")?;
    let d1 = b.decoder_block(d2, refined[0], "dec1")?;
    let residual = b.conv(d1, "head", 1)?;
    let output = b.g.add(degraded, residual)?;
    Ok(ForwardTrace {
        output,
        encoder,
        condition,
        filters,
        refined,
    })
}
