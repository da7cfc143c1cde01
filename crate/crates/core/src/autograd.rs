//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records one forward pass. Every operation appends a node that
//! owns its output value and a closure computing the input gradients from the
//! output gradient. [`Tape::backward`] walks the nodes in reverse insertion
//! order, which is a valid topological order because inputs always precede
//! their consumers.

use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Computes input gradients: `(grad_out, inputs, output, needs_grad) -> grads`.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients, one entry per use of a parameter on the tape.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(pid, idx)| self.grads[idx].as_ref().map(|g| (pid, g)))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// A free input that does receive a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, None)
    }

    /// Places a parameter on the tape. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let trainable = store.is_trainable(id);
        self.push_leaf(store.value(id).clone(), trainable, Some(id))
    }

    /// Records an operation whose output was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let requires_grad = inputs.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: inputs.to_vec(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let parent_grads = bw(&g, &inputs, &node.value, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (true, Some(pg)) = (*need, pg) else { continue };
                debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|pid| (pid, i)))
            .collect();
        Gradients { grads, params }
    }

    // ------------------------------------------------------------------
    // Elementwise

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let mut out = va.clone();
        out.add_assign(vb);
        self.custom(
            &[a, b],
            out,
            Box::new(|g, _, _, needs| {
                vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape(), data);
        self.custom(
            &[a, b],
            out,
            Box::new(|g, ins, _, needs| {
                let prod = |other: &Tensor| {
                    Tensor::new(
                        g.shape(),
                        g.data().iter().zip(other.data()).map(|(x, y)| x * y).collect(),
                    )
                };
                vec![needs[0].then(|| prod(ins[1])), needs[1].then(|| prod(ins[0]))]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.custom(&[a], out, Box::new(move |g, _, _, _| vec![Some(g.map(|x| x * s))]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.custom(
            &[a],
            out,
            Box::new(|g, _, out, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Some(Tensor::new(g.shape(), data))]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.custom(
            &[a],
            out,
            Box::new(|g, _, out, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                vec![Some(Tensor::new(g.shape(), data))]
            }),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum() as f32);
        self.custom(
            &[a],
            out,
            Box::new(|g, ins, _, _| vec![Some(Tensor::full(ins[0].shape(), g.item()))]),
        )
    }

    /// `Σ_k w_k · x_k` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Var {
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let weights: Vec<f32> = terms.iter().map(|t| t.1).collect();
        let total: f64 = terms
            .iter()
            .map(|&(v, w)| w as f64 * self.value(v).item() as f64)
            .sum();
        self.custom(
            &vars,
            Tensor::scalar(total as f32),
            Box::new(move |g, _, _, _| {
                weights
                    .iter()
                    .map(|w| Some(Tensor::scalar(w * g.item())))
                    .collect()
            }),
        )
    }

    /// Detached copy: same value, no gradient flows back.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.constant(v)
    }

    // ------------------------------------------------------------------
    // Shape

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let chans: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pn, pc, ph, pw) = self.value(p).dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "concat: spatial/batch mismatch");
                pc
            })
            .collect();
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = vec![0.0f32; n * total * hw];
        for s in 0..n {
            let mut off = 0;
            for (&p, &c) in parts.iter().zip(&chans) {
                let src = &self.value(p).data()[s * c * hw..(s + 1) * c * hw];
                let dst = (s * total + off) * hw;
                out[dst..dst + c * hw].copy_from_slice(src);
                off += c;
            }
        }
        let out = Tensor::new(&[n, total, h, w], out);
        self.custom(
            parts,
            out,
            Box::new(move |g, _, _, needs| {
                let mut off = 0;
                chans
                    .iter()
                    .zip(needs)
                    .map(|(&c, &need)| {
                        let start = off;
                        off += c;
                        need.then(|| {
                            let mut d = Vec::with_capacity(n * c * hw);
                            for s in 0..n {
                                let a = (s * total + start) * hw;
                                d.extend_from_slice(&g.data()[a..a + c * hw]);
                            }
                            Tensor::new(&[n, c, h, w], d)
                        })
                    })
                    .collect()
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshape(shape);
        self.custom(
            &[a],
            out,
            Box::new(|g, ins, _, _| vec![Some(g.clone().reshape(ins[0].shape()))]),
        )
    }

    // ------------------------------------------------------------------
    // Convolutional building blocks

    /// 2D convolution. `x`: `[N, C, H, W]`, `w`: `[O, C, k, k]`, `b`: `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = self.value(x).dims4();
        let (o, wc, k, k2) = self.value(w).dims4();
        assert_eq!(c, wc, "conv2d: input has {c} channels, kernel expects {wc}");
        assert_eq!(k, k2);
        let geo = ConvGeometry::new(n, c, h, wd, k, stride, pad);
        let cols = im2col(self.value(x).data(), &geo);
        let cols_n = n * geo.out_hw();
        let mut mat = vec![0.0f32; o * cols_n];
        gemm(o, geo.col_rows(), cols_n, self.value(w).data(), false, &cols, false, &mut mat, 0.0);
        let bias = self.value(b).data();
        let ohw = geo.out_hw();
        let mut out = vec![0.0f32; n * o * ohw];
        for oc in 0..o {
            for s in 0..n {
                let src = &mat[oc * cols_n + s * ohw..oc * cols_n + (s + 1) * ohw];
                let dst = &mut out[(s * o + oc) * ohw..(s * o + oc + 1) * ohw];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = v + bias[oc];
                }
            }
        }
        let out = Tensor::new(&[n, o, geo.out_h, geo.out_w], out);
        self.custom(
            &[x, w, b],
            out,
            Box::new(move |g, ins, _, needs| {
                let ohw = geo.out_hw();
                let cols_n = geo.n * ohw;
                // [N, O, HW] -> [O, N*HW]
                let mut gm = vec![0.0f32; o * cols_n];
                for s in 0..geo.n {
                    for oc in 0..o {
                        let src = &g.data()[(s * o + oc) * ohw..(s * o + oc + 1) * ohw];
                        gm[oc * cols_n + s * ohw..oc * cols_n + (s + 1) * ohw].copy_from_slice(src);
                    }
                }
                let dw = needs[1].then(|| {
                    let mut dw = vec![0.0f32; o * geo.col_rows()];
                    gemm(o, cols_n, geo.col_rows(), &gm, false, &cols, true, &mut dw, 0.0);
                    Tensor::new(ins[1].shape(), dw)
                });
                let db = needs[2].then(|| {
                    let sums = (0..o)
                        .map(|oc| gm[oc * cols_n..(oc + 1) * cols_n].iter().sum())
                        .collect();
                    Tensor::new(&[o], sums)
                });
                let dx = needs[0].then(|| {
                    let mut dcols = vec![0.0f32; geo.col_rows() * cols_n];
                    gemm(geo.col_rows(), o, cols_n, ins[1].data(), true, &gm, false, &mut dcols, 0.0);
                    Tensor::new(ins[0].shape(), col2im(&dcols, &geo))
                });
                vec![dx, dw, db]
            }),
        )
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        let mut arg = vec![0usize; out.len()];
        for p in 0..n * c {
            let base = p * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = p * oh * ow + y * ow + xx;
                    out[o] = src[best];
                    arg[o] = best;
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out);
        self.custom(
            &[x],
            out,
            Box::new(move |g, ins, _, _| {
                let mut dx = vec![0.0f32; ins[0].len()];
                for (gi, &a) in g.data().iter().zip(&arg) {
                    dx[a] += gi;
                }
                vec![Some(Tensor::new(ins[0].shape(), dx))]
            }),
        )
    }

    /// Bilinear resampling to `(out_h, out_w)` with half-pixel centers
    /// (`align_corners = false`). Halving a size reduces to 2×2 averaging.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let ry = interp_weights(h, out_h);
        let rx = interp_weights(w, out_w);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; n * c * out_h * out_w];
        for p in 0..n * c {
            let sb = p * h * w;
            let ob = p * out_h * out_w;
            for (oy, &(y0, y1, wy0, wy1)) in ry.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in rx.iter().enumerate() {
                    out[ob + oy * out_w + ox] = wy0 * (wx0 * src[sb + y0 * w + x0] + wx1 * src[sb + y0 * w + x1])
                        + wy1 * (wx0 * src[sb + y1 * w + x0] + wx1 * src[sb + y1 * w + x1]);
                }
            }
        }
        let out = Tensor::new(&[n, c, out_h, out_w], out);
        self.custom(
            &[x],
            out,
            Box::new(move |g, ins, _, _| {
                let mut dx = vec![0.0f32; ins[0].len()];
                let gd = g.data();
                for p in 0..n * c {
                    let sb = p * h * w;
                    let ob = p * out_h * out_w;
                    for (oy, &(y0, y1, wy0, wy1)) in ry.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in rx.iter().enumerate() {
                            let gv = gd[ob + oy * out_w + ox];
                            dx[sb + y0 * w + x0] += gv * wy0 * wx0;
                            dx[sb + y0 * w + x1] += gv * wy0 * wx1;
                            dx[sb + y1 * w + x0] += gv * wy1 * wx0;
                            dx[sb + y1 * w + x1] += gv * wy1 * wx1;
                        }
                    }
                }
                vec![Some(Tensor::new(ins[0].shape(), dx))]
            }),
        )
    }

    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|ch| ch.iter().sum::<f32>() / hw as f32)
            .collect();
        let out = Tensor::new(&[n, c], data);
        self.custom(
            &[x],
            out,
            Box::new(move |g, ins, _, _| {
                let mut dx = Vec::with_capacity(ins[0].len());
                for &gv in g.data() {
                    dx.extend(std::iter::repeat(gv / hw as f32).take(hw));
                }
                vec![Some(Tensor::new(ins[0].shape(), dx))]
            }),
        )
    }

    /// Batch normalization over `(N, H, W)` per channel.
    ///
    /// With `stats = None` the batch statistics are used and returned so the
    /// caller can update running averages; otherwise the given
    /// `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f32], &[f32])>,
        eps: f32,
    ) -> (Var, Vec<f32>, Vec<f32>) {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let m = (n * hw) as f32;
        let src = self.value(x).data();
        let (mean, var) = match stats {
            Some((mu, v)) => (mu.to_vec(), v.to_vec()),
            None => {
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for s in 0..n {
                    for ch in 0..c {
                        let sl = &src[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                        mean[ch] += sl.iter().map(|&v| v as f64).sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m as f64);
                for s in 0..n {
                    for ch in 0..c {
                        let sl = &src[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                        var[ch] += sl.iter().map(|&v| (v as f64 - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= m as f64);
                (
                    mean.into_iter().map(|v| v as f32).collect(),
                    var.into_iter().map(|v| v as f32).collect(),
                )
            }
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gam = self.value(gamma).data();
        let bet = self.value(beta).data();
        let mut xhat = vec![0.0f32; src.len()];
        let mut out = vec![0.0f32; src.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (src[i] - mean[ch]) * inv_std[ch];
                    out[i] = gam[ch] * xhat[i] + bet[ch];
                }
            }
        }
        let batch_stats = stats.is_none();
        let out = Tensor::new(&[n, c, h, w], out);
        let node = self.custom(
            &[x, gamma, beta],
            out,
            Box::new(move |g, ins, _, needs| {
                let gd = g.data();
                let gam = ins[1].data();
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        for i in off..off + hw {
                            dgamma[ch] += gd[i] * xhat[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                }
                let dx = needs[0].then(|| {
                    let mut dx = vec![0.0f32; gd.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * hw;
                            for i in off..off + hw {
                                dx[i] = if batch_stats {
                                    // d/dx of the batch-normalized output
                                    gam[ch] * inv_std[ch] / m
                                        * (m * gd[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                                } else {
                                    gam[ch] * inv_std[ch] * gd[i]
                                };
                            }
                        }
                    }
                    Tensor::new(ins[0].shape(), dx)
                });
                vec![
                    dx,
                    Some(Tensor::new(&[c], dgamma)),
                    Some(Tensor::new(&[c], dbeta)),
                ]
            }),
        );
        (node, mean, var)
    }

    // ------------------------------------------------------------------
    // Dense

    /// `x · Wᵀ + b` with `x`: `[N, in]`, `w`: `[out, in]`, `b`: `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(xs.len(), 2);
        let (n, inp) = (xs[0], xs[1]);
        let outp = ws[0];
        assert_eq!(ws[1], inp, "linear: input width {inp} vs weight {ws:?}");
        let mut y = vec![0.0f32; n * outp];
        for s in 0..n {
            y[s * outp..(s + 1) * outp].copy_from_slice(self.value(b).data());
        }
        gemm(n, inp, outp, self.value(x).data(), false, self.value(w).data(), true, &mut y, 1.0);
        let out = Tensor::new(&[n, outp], y);
        self.custom(
            &[x, w, b],
            out,
            Box::new(move |g, ins, _, needs| {
                let dx = needs[0].then(|| {
                    let mut dx = vec![0.0f32; n * inp];
                    gemm(n, outp, inp, g.data(), false, ins[1].data(), false, &mut dx, 0.0);
                    Tensor::new(&[n, inp], dx)
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![0.0f32; outp * inp];
                    gemm(outp, n, inp, g.data(), true, ins[0].data(), false, &mut dw, 0.0);
                    Tensor::new(&[outp, inp], dw)
                });
                let db = needs[2].then(|| {
                    let mut db = vec![0.0f32; outp];
                    for row in g.data().chunks(outp) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    Tensor::new(&[outp], db)
                });
                vec![dx, dw, db]
            }),
        )
    }

    /// Softmax along the last axis of a `[N, K]` tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let k = *shape.last().unwrap();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(k) {
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let out = Tensor::new(&shape, data);
        self.custom(
            &[x],
            out,
            Box::new(move |g, _, out, _| {
                let mut dx = vec![0.0f32; g.len()];
                for ((d, gr), y) in dx.chunks_mut(k).zip(g.data().chunks(k)).zip(out.data().chunks(k)) {
                    let dot: f32 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                    for i in 0..k {
                        d[i] = y[i] * (gr[i] - dot);
                    }
                }
                vec![Some(Tensor::new(g.shape(), dx))]
            }),
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(n: usize, c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv2d: kernel larger than padded input");
        let out_h = (h + 2 * pad - k) / stride + 1;
        let out_w = (w + 2 * pad - k) / stride + 1;
        ConvGeometry {
            n,
            c,
            h,
            w,
            k,
            stride,
            pad,
            out_h,
            out_w,
        }
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }
}

/// Unfolds `[N, C, H, W]` into a `[C·k·k, N·Ho·Wo]` matrix.
fn im2col(x: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let ohw = g.out_hw();
    let cols_n = g.n * ohw;
    let mut cols = vec![0.0f32; g.col_rows() * cols_n];
    for s in 0..g.n {
        for c in 0..g.c {
            let img = &x[(s * g.c + c) * g.h * g.w..(s * g.c + c + 1) * g.h * g.w];
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = (c * g.k + ki) * g.k + kj;
                    let dst = &mut cols[row * cols_n + s * ohw..row * cols_n + (s + 1) * ohw];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &img[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let (lo, hi) = valid_range(g, kj);
                            if lo < hi {
                                let a = lo + kj - g.pad;
                                drow[lo..hi].copy_from_slice(&src_row[a..a + hi - lo]);
                            }
                        } else {
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(cols: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let ohw = g.out_hw();
    let cols_n = g.n * ohw;
    let mut x = vec![0.0f32; g.n * g.c * g.h * g.w];
    for s in 0..g.n {
        for c in 0..g.c {
            let img = &mut x[(s * g.c + c) * g.h * g.w..(s * g.c + c + 1) * g.h * g.w];
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = (c * g.k + ki) * g.k + kj;
                    let src = &cols[row * cols_n + s * ohw..row * cols_n + (s + 1) * ohw];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut img[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let srow = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let (lo, hi) = valid_range(g, kj);
                            if lo < hi {
                                let a = lo + kj - g.pad;
                                for (d, v) in dst_row[a..a + hi - lo].iter_mut().zip(&srow[lo..hi]) {
                                    *d += v;
                                }
                            }
                        } else {
                            for (ox, v) in srow.iter().enumerate() {
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    dst_row[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Output columns `[lo, hi)` whose stride-1 tap `kj` lands inside the input row.
fn valid_range(g: &ConvGeometry, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj);
    let hi = (g.w + g.pad).saturating_sub(kj).min(g.out_w);
    (lo, hi)
}

/// Per-output-index `(i0, i1, w0, w1)` for half-pixel-center linear resampling.
fn interp_weights(input: usize, output: usize) -> Vec<(usize, usize, f32, f32)> {
    let scale = input as f32 / output as f32;
    (0..output)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let l = src - i0 as f32;
            (i0, i1, 1.0 - l, l)
        })
        .collect()
}

/// `c = a·b + beta·c` for row-major matrices; `*_t` reads the operand transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertions above bound every index touched by the
    // given strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
