//! Parameter storage and the layers the model is assembled from.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Weight,
    /// Running statistics; updated by the forward pass in training mode.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
    pub frozen: bool,
}

/// Named parameters in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            kind,
            frozen: false,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        let e = &self.entries[id.0];
        e.kind == ParamKind::Weight && !e.frozen
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    /// Number of trainable scalars.
    pub fn weight_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.value.len())
            .sum()
    }
}

/// Forward-pass context: the tape being recorded, the parameters, and the mode.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a ParamStore,
    pub train: bool,
    /// Running-statistic updates produced in training mode, applied by the trainer.
    pub buffer_updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a ParamStore, train: bool) -> Self {
        Ctx {
            tape,
            params,
            train,
            buffer_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.params, id)
    }
}

fn kaiming(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng) as f32).collect())
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.register(
            format!("{name}.weight"),
            kaiming(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            ParamKind::Weight,
        );
        let bias = store.register(
            format!("{name}.bias"),
            Tensor::zeros(&[out_channels]),
            ParamKind::Weight,
        );
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    /// 3×3, stride 1, zero padding 1.
    pub fn same3(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self::new(store, name, cin, cout, 3, 1, 1, rng)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: store.register(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), ParamKind::Weight),
            beta: store.register(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Weight),
            running_mean: store.register(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                ParamKind::Buffer,
            ),
            running_var: store.register(
                format!("{name}.running_var"),
                Tensor::full(&[channels], 1.0),
                ParamKind::Buffer,
            ),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        // Batch statistics only when training and the layer is not frozen.
        let use_batch = ctx.train && ctx.params.is_trainable(self.gamma);
        if use_batch {
            let (y, mean, var) = ctx.tape.batch_norm(x, g, b, None, self.eps);
            let (n, _, h, w) = ctx.tape.value(x).dims4();
            let m = (n * h * w) as f32;
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let rm = ctx.params.value(self.running_mean).data();
            let rv = ctx.params.value(self.running_var).data();
            let mo = self.momentum;
            let new_mean = rm.iter().zip(&mean).map(|(r, v)| (1.0 - mo) * r + mo * v).collect();
            let new_var = rv
                .iter()
                .zip(&var)
                .map(|(r, v)| (1.0 - mo) * r + mo * v * unbias)
                .collect();
            let c = mean.len();
            ctx.buffer_updates
                .push((self.running_mean, Tensor::new(&[c], new_mean)));
            ctx.buffer_updates
                .push((self.running_var, Tensor::new(&[c], new_var)));
            y
        } else {
            let mean = ctx.params.value(self.running_mean).data().to_vec();
            let var = ctx.params.value(self.running_var).data().to_vec();
            ctx.tape.batch_norm(x, g, b, Some((&mean, &var)), self.eps).0
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: store.register(format!("{name}.weight"), kaiming(&[out, inp], inp, rng), ParamKind::Weight),
            bias: store.register(format!("{name}.bias"), Tensor::zeros(&[out]), ParamKind::Weight),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.linear(x, w, b)
    }
}

/// Convolution followed by optional batch norm and a rectifier.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm2d>,
    pub relu: bool,
}

impl ConvBlock {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let mut y = self.conv.forward(ctx, x);
        if let Some(bn) = &self.bn {
            y = bn.forward(ctx, y);
        }
        if self.relu {
            y = ctx.tape.relu(y);
        }
        y
    }
}

/// Two rounds of 3×3 convolution, batch norm and rectifier.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub first: ConvBlock,
    pub second: ConvBlock,
}

impl DoubleConv {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let block = |store: &mut ParamStore, idx: usize, cin: usize, rng: &mut _| ConvBlock {
            conv: Conv2d::same3(store, &format!("{name}.conv{idx}"), cin, cout, rng),
            bn: Some(BatchNorm2d::new(store, &format!("{name}.bn{idx}"), cout)),
            relu: true,
        };
        let first = block(store, 0, cin, rng);
        let second = block(store, 1, cout, rng);
        DoubleConv { first, second }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let y = self.first.forward(ctx, x);
        self.second.forward(ctx, y)
    }
}
