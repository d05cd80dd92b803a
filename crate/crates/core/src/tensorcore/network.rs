use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{col2im, conv_out, gemm, im2col, ConvGeom};
use super::{LayerSpec, Mode, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDesc {
    pub name: String,
    pub layer: LayerSpec,
    pub inputs: Vec<NodeId>,
}

/// Self-describing architecture, stored next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub format: String,
    pub nodes: Vec<NodeDesc>,
}

pub const ARCH_FORMAT: &str = "ferroscope-arch/1";

impl ArchDescriptor {
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let d: ArchDescriptor = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("architecture descriptor: {e}")))?;
        if d.format != ARCH_FORMAT {
            return Err(Error::Format(format!(
                "architecture descriptor version `{}`, expected `{ARCH_FORMAT}`",
                d.format
            )));
        }
        Ok(d)
    }
}

/// Learnable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone)]
struct Node {
    desc: NodeDesc,
    /// Per-sample output shape `[c, h, w]`.
    shape: [usize; 3],
    params: Vec<usize>,
}

/// Output of every node for one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub values: Vec<Tensor>,
    mode: Mode,
    masks: Vec<Option<Vec<f32>>>,
    argmax: Vec<Option<Vec<u32>>>,
}

impl Activations {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn output(&self) -> &Tensor {
        self.values.last().expect("network has nodes")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Branch pattern of every piecewise node: sign of the input for
    /// ReLU/PReLU/ELU, selected index for max-pooling. Two passes with the
    /// same pattern evaluate the same smooth piece of the network.
    pub(crate) fn branch_pattern(&self, net: &Network) -> Vec<u64> {
        let mut out = Vec::new();
        for (i, node) in net.nodes.iter().enumerate() {
            match node.desc.layer {
                LayerSpec::Relu | LayerSpec::Prelu { .. } | LayerSpec::Elu { .. } => {
                    let x = &self.values[node.desc.inputs[0]];
                    out.extend(x.data().chunks(64).map(|ch| {
                        ch.iter()
                            .enumerate()
                            .fold(0u64, |acc, (j, &v)| acc | (u64::from(v > 0.0) << j))
                    }));
                }
                LayerSpec::MaxPool2 => {
                    if let Some(a) = &self.argmax[i] {
                        out.extend(a.iter().map(|&v| u64::from(v)));
                    }
                }
                _ => {}
            }
        }
        out
    }
}

/// Incrementally assembles a validated network graph.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    nodes: Vec<Node>,
}

impl NetworkBuilder {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        NetworkBuilder {
            nodes: vec![Node {
                desc: NodeDesc {
                    name: "input".into(),
                    layer: LayerSpec::Input {
                        channels,
                        height,
                        width,
                    },
                    inputs: vec![],
                },
                shape: [channels, height, width],
                params: vec![],
            }],
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, id: NodeId) -> [usize; 3] {
        self.nodes[id].shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node after checking it against its inputs' shapes.
    pub fn add(&mut self, name: &str, layer: LayerSpec, inputs: Vec<NodeId>) -> Result<NodeId> {
        let id = self.nodes.len();
        if self.nodes.iter().any(|n| n.desc.name == name) {
            return Err(Error::shape(name, "duplicate node name"));
        }
        if inputs.iter().any(|&i| i >= id) {
            return Err(Error::shape(name, "inputs must precede the node"));
        }
        let one = |inputs: &[NodeId]| -> Result<[usize; 3]> {
            match inputs {
                [i] => Ok(self.nodes[*i].shape),
                _ => Err(Error::shape(name, format!("expects 1 input, got {}", inputs.len()))),
            }
        };
        let shape = match &layer {
            LayerSpec::Input { .. } => {
                return Err(Error::shape(name, "only node 0 may be an input"));
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = one(&inputs)?;
                if c != *in_channels {
                    return Err(Error::shape(
                        name,
                        format!("input has {c} channels, layer expects {in_channels}"),
                    ));
                }
                if *stride == 0 || *kernel == 0 || *out_channels == 0 {
                    return Err(Error::shape(name, "kernel, stride and channels must be >= 1"));
                }
                let oh = conv_out(h, *kernel, *stride, *padding);
                let ow = conv_out(w, *kernel, *stride, *padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => [*out_channels, oh, ow],
                    _ => {
                        return Err(Error::shape(
                            name,
                            format!("kernel {kernel} does not fit {h}x{w} with padding {padding}"),
                        ))
                    }
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let [c, h, w] = one(&inputs)?;
                if c * h * w != *in_features {
                    return Err(Error::shape(
                        name,
                        format!("input has {} features, layer expects {in_features}", c * h * w),
                    ));
                }
                if *out_features == 0 {
                    return Err(Error::shape(name, "zero output features"));
                }
                [*out_features, 1, 1]
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::shape(name, format!("dropout rate {rate} outside [0, 1)")));
                }
                one(&inputs)?
            }
            LayerSpec::Elu { .. } | LayerSpec::Prelu { .. } | LayerSpec::Relu | LayerSpec::Sigmoid => {
                one(&inputs)?
            }
            LayerSpec::Upsample2x => {
                let [c, h, w] = one(&inputs)?;
                [c, 2 * h, 2 * w]
            }
            LayerSpec::MaxPool2 => {
                let [c, h, w] = one(&inputs)?;
                if h < 2 || w < 2 {
                    return Err(Error::shape(name, format!("cannot pool {h}x{w}")));
                }
                [c, h / 2, w / 2]
            }
            LayerSpec::Concat => {
                if inputs.len() < 2 {
                    return Err(Error::shape(name, "concat needs at least 2 inputs"));
                }
                let [_, h, w] = self.nodes[inputs[0]].shape;
                let mut c = 0;
                for &i in &inputs {
                    let s = self.nodes[i].shape;
                    if s[1] != h || s[2] != w {
                        return Err(Error::shape(
                            name,
                            format!("spatial mismatch {}x{} vs {h}x{w}", s[1], s[2]),
                        ));
                    }
                    c += s[0];
                }
                [c, h, w]
            }
        };
        self.nodes.push(Node {
            desc: NodeDesc {
                name: name.to_string(),
                layer,
                inputs,
            },
            shape,
            params: vec![],
        });
        Ok(id)
    }

    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let in_channels = self.nodes[x].shape[0];
        self.add(
            name,
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
            vec![x],
        )
    }

    pub fn dense(&mut self, name: &str, x: NodeId, out_features: usize) -> Result<NodeId> {
        let [c, h, w] = self.nodes[x].shape;
        self.add(
            name,
            LayerSpec::Dense {
                in_features: c * h * w,
                out_features,
            },
            vec![x],
        )
    }

    pub fn unary(&mut self, name: &str, x: NodeId, layer: LayerSpec) -> Result<NodeId> {
        self.add(name, layer, vec![x])
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId> {
        self.add(name, LayerSpec::Concat, xs.to_vec())
    }

    /// Finalises the graph, initialising weights He-uniform from `seed`.
    pub fn build(mut self, seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for node in &mut self.nodes {
            let name = &node.desc.name;
            let mut push = |suffix: &str, value: Tensor| {
                node.params.push(params.len());
                let grad = Tensor::zeros(value.shape());
                params.push(Param {
                    name: format!("{name}.{suffix}"),
                    value,
                    grad,
                });
            };
            match node.desc.layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let w = he_uniform(&mut rng, fan_in, out_channels * fan_in);
                    push(
                        "weight",
                        Tensor::new(vec![out_channels, in_channels, kernel, kernel], w).unwrap(),
                    );
                    push("bias", Tensor::zeros(&[out_channels]));
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let w = he_uniform(&mut rng, in_features, in_features * out_features);
                    push(
                        "weight",
                        Tensor::new(vec![out_features, in_features], w).unwrap(),
                    );
                    push("bias", Tensor::zeros(&[out_features]));
                }
                LayerSpec::Prelu { init_slope } => {
                    push("slope", Tensor::filled(&[1], init_slope));
                }
                _ => {}
            }
        }
        Network {
            nodes: self.nodes,
            params,
            dropout_seed: splitmix64(seed ^ 0xD5A6_1266_F0C9_392C),
            step: 0,
            cache: None,
        }
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f32> {
    let limit = (6.0 / fan_in as f64).sqrt() as f32;
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform in [0, 1) keyed by (seed, step, node, element).
fn dropout_uniform(seed: u64, step: u64, node: usize, idx: usize) -> f32 {
    let h = splitmix64(splitmix64(splitmix64(seed ^ step) ^ node as u64) ^ idx as u64);
    (h >> 40) as f32 / (1u64 << 24) as f32
}

/// A layer graph with parameters, gradient buffers and a forward cache.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    params: Vec<Param>,
    dropout_seed: u64,
    step: u64,
    cache: Option<Activations>,
}

impl Network {
    /// Rebuilds the graph described by `desc` with fresh weights.
    pub fn from_descriptor(desc: &ArchDescriptor, seed: u64) -> Result<Network> {
        let first = desc
            .nodes
            .first()
            .ok_or_else(|| Error::Format("empty architecture".into()))?;
        let LayerSpec::Input {
            channels,
            height,
            width,
        } = first.layer
        else {
            return Err(Error::Format("first node must be the input".into()));
        };
        let mut b = NetworkBuilder::new(channels, height, width);
        for n in &desc.nodes[1..] {
            b.add(&n.name, n.layer.clone(), n.inputs.clone())?;
        }
        Ok(b.build(seed))
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor {
            format: ARCH_FORMAT.into(),
            nodes: self.nodes.iter().map(|n| n.desc.clone()).collect(),
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.nodes[0].shape
    }

    pub fn node_shape(&self, id: NodeId) -> [usize; 3] {
        self.nodes[id].shape
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.desc.name == name)
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id].desc.name
    }

    pub fn node_layer(&self, id: NodeId) -> &LayerSpec {
        &self.nodes[id].desc.layer
    }

    pub fn node_inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].desc.inputs
    }

    pub fn output_id(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node count per layer kind.
    pub fn layer_census(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.desc.layer.kind_name()).or_insert(0) += 1;
        }
        m
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Dropout counter; masks depend on (seed, step, node, element).
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn advance_step(&mut self) {
        self.step += 1;
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Runs the network and caches the activations for [`Network::backward`].
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<&Activations> {
        let acts = self.run(input, mode, self.step)?;
        self.cache = Some(acts);
        Ok(self.cache.as_ref().unwrap())
    }

    /// Pure evaluation-mode pass; safe on a shared network.
    pub fn infer(&self, input: &Tensor) -> Result<Activations> {
        self.run(input, Mode::Eval, 0)
    }

    pub(crate) fn run(&self, input: &Tensor, mode: Mode, step: u64) -> Result<Activations> {
        self.run_inner(input, mode, mode == Mode::Train, step)
    }

    /// Train-tagged pass (so it can be back-propagated) with dropout disabled.
    pub(crate) fn forward_without_dropout(&mut self, input: &Tensor) -> Result<&Activations> {
        let acts = self.run_inner(input, Mode::Train, false, self.step)?;
        self.cache = Some(acts);
        Ok(self.cache.as_ref().unwrap())
    }

    fn run_inner(
        &self,
        input: &Tensor,
        mode: Mode,
        dropout: bool,
        step: u64,
    ) -> Result<Activations> {
        let [c, h, w] = self.input_shape();
        let s = input.shape();
        if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w || s[0] == 0 {
            return Err(Error::shape(
                "input",
                format!("got {s:?}, expected [batch, {c}, {h}, {w}]"),
            ));
        }
        let batch = s[0];
        let n = self.nodes.len();
        let mut values: Vec<Tensor> = Vec::with_capacity(n);
        let mut masks = vec![None; n];
        let mut argmax = vec![None; n];
        values.push(input.clone());
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            let [oc, oh, ow] = node.shape;
            let mut out = Tensor::zeros(&[batch, oc, oh, ow]);
            let x = &values[node.desc.inputs[0]];
            match node.desc.layer {
                LayerSpec::Input { .. } => unreachable!(),
                LayerSpec::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let [ic, ih, iw] = self.nodes[node.desc.inputs[0]].shape;
                    let g = ConvGeom {
                        c: ic,
                        h: ih,
                        w: iw,
                        k: kernel,
                        stride,
                        pad: padding,
                        oh,
                        ow,
                    };
                    let wt = &self.params[node.params[0]].value;
                    let bias = &self.params[node.params[1]].value;
                    conv_forward(x, &g, wt.data(), bias.data(), oc, out.data_mut());
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let wt = self.params[node.params[0]].value.data();
                    let bias = self.params[node.params[1]].value.data();
                    let y = out.data_mut();
                    gemm(batch, in_features, out_features, x.data(), false, wt, true, 0.0, y);
                    for row in y.chunks_exact_mut(out_features) {
                        for (v, b) in row.iter_mut().zip(bias) {
                            *v += b;
                        }
                    }
                }
                LayerSpec::Elu { alpha } => {
                    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                        *o = if v > 0.0 { v } else { alpha * (v.exp() - 1.0) };
                    }
                }
                LayerSpec::Prelu { .. } => {
                    let a = self.params[node.params[0]].value.data()[0];
                    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                        *o = if v > 0.0 { v } else { a * v };
                    }
                }
                LayerSpec::Relu => {
                    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                        *o = v.max(0.0);
                    }
                }
                LayerSpec::Sigmoid => {
                    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                        *o = sigmoid(v);
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if dropout && rate > 0.0 {
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f32> = (0..x.len())
                            .map(|j| {
                                if dropout_uniform(self.dropout_seed, step, i, j) < rate {
                                    0.0
                                } else {
                                    keep
                                }
                            })
                            .collect();
                        for ((o, &v), m) in out.data_mut().iter_mut().zip(x.data()).zip(&mask) {
                            *o = v * m;
                        }
                        masks[i] = Some(mask);
                    } else {
                        out.data_mut().copy_from_slice(x.data());
                    }
                }
                LayerSpec::Upsample2x => {
                    let (ih, iw) = (oh / 2, ow / 2);
                    let y = out.data_mut();
                    for (p, plane) in x.data().chunks_exact(ih * iw).enumerate() {
                        let dst = &mut y[p * oh * ow..(p + 1) * oh * ow];
                        for yy in 0..oh {
                            for xx in 0..ow {
                                dst[yy * ow + xx] = plane[(yy / 2) * iw + xx / 2];
                            }
                        }
                    }
                }
                LayerSpec::MaxPool2 => {
                    let [_, ih, iw] = self.nodes[node.desc.inputs[0]].shape;
                    let mut idx = vec![0u32; out.len()];
                    let y = out.data_mut();
                    for p in 0..batch * oc {
                        let base = p * ih * iw;
                        for yy in 0..oh {
                            for xx in 0..ow {
                                let mut best = base + (2 * yy) * iw + 2 * xx;
                                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                    let j = base + (2 * yy + dy) * iw + 2 * xx + dx;
                                    if x.data()[j] > x.data()[best] {
                                        best = j;
                                    }
                                }
                                let o = p * oh * ow + yy * ow + xx;
                                y[o] = x.data()[best];
                                idx[o] = best as u32;
                            }
                        }
                    }
                    argmax[i] = Some(idx);
                }
                LayerSpec::Concat => {
                    let plane = oh * ow;
                    let y = out.data_mut();
                    for b in 0..batch {
                        let mut off = b * oc * plane;
                        for &src in &node.desc.inputs {
                            let item = values[src].item(b);
                            y[off..off + item.len()].copy_from_slice(item);
                            off += item.len();
                        }
                    }
                }
            }
            values.push(out);
        }
        Ok(Activations {
            values,
            mode,
            masks,
            argmax,
        })
    }

    /// Back-propagates the seeded output gradients through the cached Train
    /// pass. Parameter gradients accumulate into `Param::grad`; the gradient
    /// with respect to the network input is returned.
    pub fn backward(&mut self, seeds: &[(NodeId, Tensor)]) -> Result<Tensor> {
        let cache = match &self.cache {
            None => {
                return Err(Error::State(
                    "backward called before a forward pass".into(),
                ))
            }
            Some(c) if c.mode != Mode::Train => {
                return Err(Error::State(
                    "backward requires a Train-mode forward pass".into(),
                ))
            }
            Some(c) => c,
        };
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        for (id, g) in seeds {
            if *id >= n || g.shape() != cache.values[*id].shape() {
                return Err(Error::shape(
                    self.nodes.get(*id).map_or("?", |n| n.desc.name.as_str()),
                    format!("seed gradient shape {:?} does not match activation", g.shape()),
                ));
            }
            accumulate(&mut grads[*id], g.clone());
        }
        for i in (1..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let src = node.desc.inputs[0];
            let x = &cache.values[src];
            let y = &cache.values[i];
            let batch = x.batch();
            match node.desc.layer {
                LayerSpec::Input { .. } => unreachable!(),
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let [ic, ih, iw] = self.nodes[src].shape;
                    let [_, oh, ow] = node.shape;
                    let geom = ConvGeom {
                        c: ic,
                        h: ih,
                        w: iw,
                        k: kernel,
                        stride,
                        pad: padding,
                        oh,
                        ow,
                    };
                    let (wi, bi) = (node.params[0], node.params[1]);
                    let mut dx = Tensor::zeros(x.shape());
                    let mut dw = std::mem::replace(&mut self.params[wi].grad, Tensor::zeros(&[0]));
                    let mut db = std::mem::replace(&mut self.params[bi].grad, Tensor::zeros(&[0]));
                    conv_backward(
                        x,
                        &g,
                        &geom,
                        self.params[wi].value.data(),
                        out_channels,
                        dw.data_mut(),
                        db.data_mut(),
                        dx.data_mut(),
                    );
                    self.params[wi].grad = dw;
                    self.params[bi].grad = db;
                    accumulate(&mut grads[src], dx);
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let (wi, bi) = (node.params[0], node.params[1]);
                    gemm(
                        out_features,
                        batch,
                        in_features,
                        g.data(),
                        true,
                        x.data(),
                        false,
                        1.0,
                        self.params[wi].grad.data_mut(),
                    );
                    let db = self.params[bi].grad.data_mut();
                    for row in g.data().chunks_exact(out_features) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let mut dx = Tensor::zeros(x.shape());
                    gemm(
                        batch,
                        out_features,
                        in_features,
                        g.data(),
                        false,
                        self.params[wi].value.data(),
                        false,
                        0.0,
                        dx.data_mut(),
                    );
                    accumulate(&mut grads[src], dx);
                }
                LayerSpec::Elu { alpha } => {
                    let dx = map3(&g, x, y, |g, x, y| if x > 0.0 { g } else { g * (y + alpha) });
                    accumulate(&mut grads[src], dx);
                }
                LayerSpec::Prelu { .. } => {
                    let pi = node.params[0];
                    let a = self.params[pi].value.data()[0];
                    let mut da = 0.0f64;
                    for (&gv, &xv) in g.data().iter().zip(x.data()) {
                        if xv <= 0.0 {
                            da += f64::from(gv) * f64::from(xv);
                        }
                    }
                    self.params[pi].grad.data_mut()[0] += da as f32;
                    let dx = map3(&g, x, y, |g, x, _| if x > 0.0 { g } else { g * a });
                    accumulate(&mut grads[src], dx);
                }
                LayerSpec::Relu => {
                    let dx = map3(&g, x, y, |g, x, _| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads[src], dx);
                }
                LayerSpec::Sigmoid => {
                    let dx = map3(&g, x, y, |g, _, y| g * y * (1.0 - y));
                    accumulate(&mut grads[src], dx);
                }
                LayerSpec::Dropout { .. } => {
                    let dx = match &cache.masks[i] {
                        Some(mask) => {
                            let mut d = g;
                            for (v, m) in d.data_mut().iter_mut().zip(mask) {
                                *v *= m;
                            }
                            d
                        }
                        None => g,
                    };
                    accumulate(&mut grads[src], dx);
                }
                LayerSpec::Upsample2x => {
                    let [_, oh, ow] = node.shape;
                    let (ih, iw) = (oh / 2, ow / 2);
                    let mut dx = Tensor::zeros(x.shape());
                    for (p, plane) in dx.data_mut().chunks_exact_mut(ih * iw).enumerate() {
                        let gp = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                        for yy in 0..oh {
                            for xx in 0..ow {
                                plane[(yy / 2) * iw + xx / 2] += gp[yy * ow + xx];
                            }
                        }
                    }
                    accumulate(&mut grads[src], dx);
                }
                LayerSpec::MaxPool2 => {
                    let idx = cache.argmax[i].as_ref().expect("pool indices cached");
                    let mut dx = Tensor::zeros(x.shape());
                    let d = dx.data_mut();
                    for (&j, &gv) in idx.iter().zip(g.data()) {
                        d[j as usize] += gv;
                    }
                    accumulate(&mut grads[src], dx);
                }
                LayerSpec::Concat => {
                    let [oc, oh, ow] = node.shape;
                    let plane = oh * ow;
                    let mut off = 0;
                    for &s in &node.desc.inputs {
                        let sc = self.nodes[s].shape[0];
                        let mut part = Tensor::zeros(cache.values[s].shape());
                        for b in 0..batch {
                            let from = b * oc * plane + off * plane;
                            part.data_mut()[b * sc * plane..(b + 1) * sc * plane]
                                .copy_from_slice(&g.data()[from..from + sc * plane]);
                        }
                        off += sc;
                        accumulate(&mut grads[s], part);
                    }
                }
            }
        }
        Ok(grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(cache.values[0].shape())))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn map3(g: &Tensor, x: &Tensor, y: &Tensor, f: impl Fn(f32, f32, f32) -> f32) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .zip(y.data())
        .map(|((&g, &x), &y)| f(g, x, y))
        .collect();
    Tensor::new(g.shape().to_vec(), data).unwrap()
}

#[inline]
pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

fn conv_forward(x: &Tensor, g: &ConvGeom, w: &[f32], bias: &[f32], oc: usize, y: &mut [f32]) {
    let plane = g.oh * g.ow;
    let mut cols = if is_pointwise(g) {
        Vec::new()
    } else {
        vec![0.0; g.cols_len()]
    };
    for b in 0..x.batch() {
        let xb = x.item(b);
        let yb = &mut y[b * oc * plane..(b + 1) * oc * plane];
        let patches: &[f32] = if is_pointwise(g) {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(oc, g.cols_rows(), plane, w, false, patches, false, 0.0, yb);
        for (row, &bv) in yb.chunks_exact_mut(plane).zip(bias) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &Tensor,
    gy: &Tensor,
    g: &ConvGeom,
    w: &[f32],
    oc: usize,
    dw: &mut [f32],
    db: &mut [f32],
    dx: &mut [f32],
) {
    let plane = g.oh * g.ow;
    let rows = g.cols_rows();
    let mut cols = vec![0.0; g.cols_len()];
    let mut dcols = vec![0.0; g.cols_len()];
    let per_in = g.c * g.h * g.w;
    for b in 0..x.batch() {
        let xb = x.item(b);
        let gb = gy.item(b);
        let patches: &[f32] = if is_pointwise(g) {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(oc, plane, rows, gb, false, patches, true, 1.0, dw);
        for (d, row) in db.iter_mut().zip(gb.chunks_exact(plane)) {
            *d += row.iter().sum::<f32>();
        }
        let dxb = &mut dx[b * per_in..(b + 1) * per_in];
        if is_pointwise(g) {
            gemm(rows, oc, plane, w, true, gb, false, 1.0, dxb);
        } else {
            gemm(rows, oc, plane, w, true, gb, false, 0.0, &mut dcols);
            col2im(&dcols, g, dxb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: Vec<f32>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_pointwise_conv_is_identity() {
        let mut b = NetworkBuilder::new(3, 4, 5);
        let x = b.input();
        b.conv("c", x, 3, 1, 1, 0).unwrap();
        let mut net = b.build(1);
        let w = net.params_mut()[0].value.data_mut();
        w.fill(0.0);
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let input = t4([2, 3, 4, 5], (0..120).map(|i| i as f32 * 0.1 - 3.0).collect());
        let out = net.infer(&input).unwrap();
        assert_eq!(out.output().data(), input.data());
    }

    #[test]
    fn identity_dense_is_identity() {
        let mut b = NetworkBuilder::new(4, 1, 1);
        let x = b.input();
        b.dense("d", x, 4).unwrap();
        let mut net = b.build(1);
        let w = net.params_mut()[0].value.data_mut();
        w.fill(0.0);
        for i in 0..4 {
            w[i * 4 + i] = 1.0;
        }
        let v = t4([1, 4, 1, 1], vec![1.5, -2.0, 0.25, 7.0]);
        assert_eq!(net.infer(&v).unwrap().output().data(), v.data());
    }

    #[test]
    fn elu_at_minus_one() {
        let mut b = NetworkBuilder::new(1, 1, 1);
        let x = b.input();
        b.unary("e", x, LayerSpec::Elu { alpha: 1.0 }).unwrap();
        let net = b.build(0);
        let out = net.infer(&t4([1, 1, 1, 1], vec![-1.0])).unwrap();
        assert!((out.output().data()[0] - ((-1.0f32).exp() - 1.0)).abs() < 1e-6);
        assert!((out.output().data()[0] + 0.63212).abs() < 1e-5);
    }

    #[test]
    fn dense_weight_gradient_is_outer_product() {
        let mut b = NetworkBuilder::new(3, 1, 1);
        let x = b.input();
        b.dense("d", x, 2).unwrap();
        let mut net = b.build(4);
        let input = t4([1, 3, 1, 1], vec![0.5, -1.0, 2.0]);
        net.forward(&input, Mode::Train).unwrap();
        let out = net.output_id();
        net.backward(&[(out, Tensor::filled(&[1, 2, 1, 1], 1.0))]).unwrap();
        let gw = net.params()[0].grad.data();
        assert_eq!(gw, &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(net.params()[1].grad.data(), &[1.0, 1.0]);
    }

    #[test]
    fn prelu_slope_gradient_on_negative_input() {
        let mut b = NetworkBuilder::new(1, 1, 1);
        let x = b.input();
        b.unary("p", x, LayerSpec::Prelu { init_slope: 0.25 }).unwrap();
        let mut net = b.build(0);
        net.forward(&t4([1, 1, 1, 1], vec![-2.0]), Mode::Train).unwrap();
        let dx = net
            .backward(&[(1, Tensor::filled(&[1, 1, 1, 1], 1.0))])
            .unwrap();
        assert_eq!(net.params()[0].grad.data(), &[-2.0]);
        assert_eq!(dx.data(), &[0.25]);
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut b = NetworkBuilder::new(1, 2, 2);
        let x = b.input();
        b.unary("r", x, LayerSpec::Relu).unwrap();
        let mut net = b.build(0);
        let seed = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(net.backward(&[(1, seed.clone())]), Err(Error::State(_))));
        net.forward(&Tensor::zeros(&[1, 1, 2, 2]), Mode::Eval).unwrap();
        assert!(matches!(net.backward(&[(1, seed)]), Err(Error::State(_))));
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let mut b = NetworkBuilder::new(2, 4, 4);
        let x = b.input();
        let err = b
            .add(
                "bad_conv",
                LayerSpec::Conv {
                    in_channels: 3,
                    out_channels: 1,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                vec![x],
            )
            .unwrap_err();
        assert!(err.to_string().contains("bad_conv"));

        let mut b = NetworkBuilder::new(1, 4, 4);
        let x = b.input();
        b.conv("c", x, 2, 3, 1, 1).unwrap();
        let net = b.build(0);
        let err = net.infer(&Tensor::zeros(&[1, 1, 5, 4])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn conv_output_size_formula() {
        for (h, k, s, p) in [(32, 4, 2, 1), (100, 4, 2, 1), (6, 3, 1, 0), (7, 3, 2, 1), (9, 5, 3, 2)] {
            let mut b = NetworkBuilder::new(1, h, h);
            let x = b.input();
            let c = b.conv("c", x, 1, k, s, p).unwrap();
            let want = (h + 2 * p - k) / s + 1;
            assert_eq!(b.shape(c), [1, want, want]);
        }
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_train() {
        let mut b = NetworkBuilder::new(1, 8, 8);
        let x = b.input();
        b.unary("d", x, LayerSpec::Dropout { rate: 0.5 }).unwrap();
        let mut net = b.build(9);
        let input = Tensor::filled(&[1, 1, 8, 8], 1.0);
        assert_eq!(net.infer(&input).unwrap().output().data(), input.data());
        let a = net.forward(&input, Mode::Train).unwrap().output().clone();
        let again = net.forward(&input, Mode::Train).unwrap().output().clone();
        assert_eq!(a, again);
        assert!(a.data().contains(&0.0));
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
        net.advance_step();
        let next = net.forward(&input, Mode::Train).unwrap().output().clone();
        assert_ne!(a, next);
    }

    #[test]
    fn upsample_pool_and_concat_shapes() {
        let mut b = NetworkBuilder::new(2, 4, 6);
        let x = b.input();
        let p = b.unary("p", x, LayerSpec::MaxPool2).unwrap();
        let u = b.unary("u", p, LayerSpec::Upsample2x).unwrap();
        let c = b.concat("c", &[x, u]).unwrap();
        assert_eq!(b.shape(p), [2, 2, 3]);
        assert_eq!(b.shape(c), [4, 4, 6]);
        let net = b.build(0);
        let input = Tensor::new(vec![1, 2, 4, 6], (0..48).map(|i| i as f32).collect()).unwrap();
        let acts = net.infer(&input).unwrap();
        // channel 0, top-left pool window is {0, 1, 6, 7}
        assert_eq!(acts.value(p).data()[0], 7.0);
        assert_eq!(&acts.output().data()[..48], input.data());
        assert_eq!(acts.output().data()[48], 7.0);
    }

    #[test]
    fn descriptor_round_trip_rebuilds_same_graph() {
        let mut b = NetworkBuilder::new(1, 8, 8);
        let x = b.input();
        let c = b.conv("c", x, 4, 3, 2, 1).unwrap();
        let e = b.unary("e", c, LayerSpec::Elu { alpha: 1.0 }).unwrap();
        b.dense("d", e, 3).unwrap();
        let net = b.build(5);
        let d = net.descriptor();
        let back = ArchDescriptor::from_text(&d.to_text()).unwrap();
        assert_eq!(back, d);
        let rebuilt = Network::from_descriptor(&back, 5).unwrap();
        assert_eq!(rebuilt.descriptor(), d);
        assert_eq!(rebuilt.params()[0].value, net.params()[0].value);
    }
}
