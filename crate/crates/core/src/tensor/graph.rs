use super::conv::{
    batch_major_to_channel_major, channel_major_to_batch_major, col2im, conv_out, gemm, im2col, ConvGeom, MatRef,
};
use super::Tensor;
use crate::error::{AiftError, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: usize, kernel: usize, geom: ConvGeom, k: usize, cols: Vec<f64> },
    ConvTranspose2d { input: usize, kernel: usize, geom: ConvGeom, c_in: usize },
    Dense { input: usize, weight: usize, bias: usize },
    ChannelBias { input: usize, bias: usize },
    LeakyRelu { input: usize, slope: f64 },
    Sigmoid { input: usize },
    Tanh { input: usize },
    Log { input: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Affine { input: usize, scale: f64 },
    Clamp { input: usize, lo: f64, hi: f64 },
    Sum { input: usize },
    Mean { input: usize },
    Reshape { input: usize },
    Concat { inputs: Vec<usize> },
    Narrow { input: usize, offset: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

/// Define-by-run computation record.
///
/// Nodes are appended in evaluation order, so every input id precedes its
/// consumer and the graph is acyclic by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` if no path exists.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor> {
        let g = self.get(v)?;
        Tensor::new(self.shapes[v.0].clone(), g.to_vec()).ok()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(AiftError::dim(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

fn rank(op: &'static str, what: &str, shape: &[usize], r: usize) -> Result<()> {
    if shape.len() != r {
        return Err(AiftError::dim(op, format!("{what} must have rank {r}, got shape {shape:?}")));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { op, shape, data, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a tensor as a leaf. It takes part in differentiation iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape.clone(), t.data.clone(), t.requires_grad)
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape.clone(), t.data.clone(), false)
    }

    /// Records a differentiable leaf regardless of the tensor's own flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape.clone(), t.data.clone(), true)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    /// Copies a node's value out as a standalone tensor.
    pub fn value(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor { shape: n.shape.clone(), data: n.data.clone(), requires_grad: false, grad: None }
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.data.len() != 1 {
            return Err(AiftError::Contract(format!("expected scalar, got shape {:?}", n.shape)));
        }
        Ok(n.data[0])
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// 2-D cross-correlation of `input` `[N,C,H,W]` with `kernel` `[K,C,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        rank("conv2d", "input", &xs, 4)?;
        rank("conv2d", "kernel", &ks, 4)?;
        if stride == 0 {
            return Err(AiftError::dim("conv2d", "stride must be at least 1"));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (k, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c {
            return Err(AiftError::dim("conv2d", format!("axis 1: input has {c} channels, kernel expects {kc}")));
        }
        let oh = conv_out(h, kh, stride, padding).ok_or_else(|| {
            AiftError::dim("conv2d", format!("axis 2: kernel {kh} exceeds padded height {}", h + 2 * padding))
        })?;
        let ow = conv_out(w, kw, stride, padding).ok_or_else(|| {
            AiftError::dim("conv2d", format!("axis 3: kernel {kw} exceeds padded width {}", w + 2 * padding))
        })?;
        let geom = ConvGeom { n, c, h, w, kh, kw, stride, pad: padding, oh, ow };
        let cols = im2col(self.data(input), &geom);
        let p = oh * ow;
        let mut out_cm = vec![0.0; k * n * p];
        gemm(
            k,
            geom.col_rows(),
            n * p,
            MatRef::row_major(self.data(kernel), geom.col_rows()),
            MatRef::row_major(&cols, n * p),
            0.0,
            &mut out_cm,
        );
        let out = channel_major_to_batch_major(&out_cm, n, k, p);
        let requires_grad = self.rg(&[input.0, kernel.0]);
        let saved = if requires_grad { cols } else { Vec::new() };
        Ok(self.push(
            Op::Conv2d { input: input.0, kernel: kernel.0, geom, k, cols: saved },
            vec![n, k, oh, ow],
            out,
            requires_grad,
        ))
    }

    /// Transposed convolution of `input` `[N,C,H,W]` with `kernel` `[C,K,kh,kw]`,
    /// the adjoint of [`Graph::conv2d`] with the same kernel.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        rank("conv_transpose2d", "input", &xs, 4)?;
        rank("conv_transpose2d", "kernel", &ks, 4)?;
        if stride == 0 {
            return Err(AiftError::dim("conv_transpose2d", "stride must be at least 1"));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (kc, k, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c {
            return Err(AiftError::dim(
                "conv_transpose2d",
                format!("axis 1: input has {c} channels, kernel expects {kc}"),
            ));
        }
        let full_h = (h - 1) * stride + kh;
        let full_w = (w - 1) * stride + kw;
        if full_h <= 2 * padding || full_w <= 2 * padding {
            return Err(AiftError::dim(
                "conv_transpose2d",
                format!("padding {padding} removes the whole {full_h}x{full_w} output"),
            ));
        }
        let (out_h, out_w) = (full_h - 2 * padding, full_w - 2 * padding);
        // The conv2d whose input gradient this op computes: [n,k,out_h,out_w] -> [n,c,h,w].
        let geom = ConvGeom { n, c: k, h: out_h, w: out_w, kh, kw, stride, pad: padding, oh: h, ow: w };
        let p = h * w;
        let x_cm = batch_major_to_channel_major(self.data(input), n, c, p);
        let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
        gemm(
            geom.col_rows(),
            c,
            n * p,
            MatRef::transposed(self.data(kernel), geom.col_rows()),
            MatRef::row_major(&x_cm, n * p),
            0.0,
            &mut cols,
        );
        let mut out = vec![0.0; n * k * out_h * out_w];
        col2im(&cols, &geom, &mut out);
        let requires_grad = self.rg(&[input.0, kernel.0]);
        Ok(self.push(
            Op::ConvTranspose2d { input: input.0, kernel: kernel.0, geom, c_in: c },
            vec![n, k, out_h, out_w],
            out,
            requires_grad,
        ))
    }

    /// Affine map `input [N,D] * weight [D,M] + bias [M]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        rank("dense", "input", &xs, 2)?;
        rank("dense", "weight", &ws, 2)?;
        if xs[1] != ws[0] {
            return Err(AiftError::dim("dense", format!("inner dimensions {} vs {}", xs[1], ws[0])));
        }
        if bs != [ws[1]] {
            return Err(AiftError::dim("dense", format!("bias shape {bs:?} for {} outputs", ws[1])));
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        let mut out: Vec<f64> = (0..n).flat_map(|_| self.data(bias).iter().copied()).collect();
        gemm(n, d, m, MatRef::row_major(self.data(input), d), MatRef::row_major(self.data(weight), m), 1.0, &mut out);
        let requires_grad = self.rg(&[input.0, weight.0, bias.0]);
        Ok(self.push(Op::Dense { input: input.0, weight: weight.0, bias: bias.0 }, vec![n, m], out, requires_grad))
    }

    /// Adds a per-channel bias `[C]` to a `[N,C,H,W]` feature map.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        rank("channel_bias", "input", &xs, 4)?;
        if self.shape(bias) != [xs[1]] {
            return Err(AiftError::dim(
                "channel_bias",
                format!("bias shape {:?} for {} channels", self.shape(bias), xs[1]),
            ));
        }
        let p = xs[2] * xs[3];
        let b = self.data(bias);
        let out: Vec<f64> = self.data(input).iter().enumerate().map(|(i, v)| v + b[(i / p) % xs[1]]).collect();
        let requires_grad = self.rg(&[input.0, bias.0]);
        Ok(self.push(Op::ChannelBias { input: input.0, bias: bias.0 }, xs, out, requires_grad))
    }

    fn unary(&mut self, input: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out: Vec<f64> = self.data(input).iter().map(|&v| f(v)).collect();
        let shape = self.shape(input).to_vec();
        let requires_grad = self.rg(&[input.0]);
        self.push(op, shape, out, requires_grad)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu { input: x.0, slope }, |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid { input: x.0 }, |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh { input: x.0 }, f64::tanh)
    }

    /// Natural log. Every input value must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.data(x).iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(AiftError::Domain { op: "log", detail: format!("non-positive input {bad}") });
        }
        Ok(self.unary(x, Op::Log { input: x.0 }, f64::ln))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Op::Affine { input: x.0, scale }, |v| scale * v + shift)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { input: x.0, lo, hi }, |v| v.clamp(lo, hi))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let requires_grad = self.rg(&[a.0, b.0]);
        Ok(self.push(op, shape, out, requires_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add { a: a.0, b: b.0 }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub { a: a.0, b: b.0 }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul { a: a.0, b: b.0 }, |x, y| x * y)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let requires_grad = self.rg(&[x.0]);
        self.push(Op::Sum { input: x.0 }, vec![1], vec![s], requires_grad)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let requires_grad = self.rg(&[x.0]);
        self.push(Op::Mean { input: x.0 }, vec![1], vec![m], requires_grad)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.data(x).len() || shape.contains(&0) {
            return Err(AiftError::dim("reshape", format!("cannot view {:?} as {shape:?}", self.shape(x))));
        }
        let data = self.data(x).to_vec();
        let requires_grad = self.rg(&[x.0]);
        Ok(self.push(Op::Reshape { input: x.0 }, shape.to_vec(), data, requires_grad))
    }

    /// Concatenates along axis 0. All trailing extents must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| AiftError::dim("concat", "no inputs"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s[1..] != tail[..] {
                return Err(AiftError::dim("concat", format!("{s:?} vs trailing {tail:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.data(x));
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        let requires_grad = self.rg(&ids);
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(Op::Concat { inputs: ids }, shape, data, requires_grad))
    }

    /// Rows `start..start+len` along axis 0.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if len == 0 || start + len > s[0] {
            return Err(AiftError::dim("narrow", format!("rows {start}..{} of {s:?}", start + len)));
        }
        let row: usize = s[1..].iter().product();
        let data = self.data(x)[start * row..(start + len) * row].to_vec();
        let mut shape = s;
        shape[0] = len;
        let requires_grad = self.rg(&[x.0]);
        Ok(self.push(Op::Narrow { input: x.0, offset: start * row }, shape, data, requires_grad))
    }

    /// Reverse pass from the scalar `loss`. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes;
        let loss_node = nodes.get(loss.0).ok_or_else(|| AiftError::Contract(format!("unknown node {}", loss.0)))?;
        if loss_node.data.len() != 1 {
            return Err(AiftError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
            if !nodes[id].requires_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, kernel, geom, k, cols } => {
                    let (n, p) = (geom.n, geom.oh * geom.ow);
                    let g_cm = batch_major_to_channel_major(&g, n, *k, p);
                    if nodes[*kernel].requires_grad {
                        let mut dk = vec![0.0; k * geom.col_rows()];
                        gemm(
                            *k,
                            n * p,
                            geom.col_rows(),
                            MatRef::row_major(&g_cm, n * p),
                            MatRef::transposed(cols, n * p),
                            0.0,
                            &mut dk,
                        );
                        acc(&mut grads, &nodes, *kernel, dk);
                    }
                    if nodes[*input].requires_grad {
                        let mut dcols = vec![0.0; geom.col_rows() * n * p];
                        gemm(
                            geom.col_rows(),
                            *k,
                            n * p,
                            MatRef::transposed(&nodes[*kernel].data, geom.col_rows()),
                            MatRef::row_major(&g_cm, n * p),
                            0.0,
                            &mut dcols,
                        );
                        let mut dx = vec![0.0; nodes[*input].data.len()];
                        col2im(&dcols, geom, &mut dx);
                        acc(&mut grads, &nodes, *input, dx);
                    }
                    grads[id] = Some(g);
                }
                Op::ConvTranspose2d { input, kernel, geom, c_in } => {
                    // Output gradient lowered through the forward conv geometry.
                    let gcols = im2col(&g, geom);
                    let (n, p) = (geom.n, geom.oh * geom.ow);
                    if nodes[*input].requires_grad {
                        let mut dx_cm = vec![0.0; c_in * n * p];
                        gemm(
                            *c_in,
                            geom.col_rows(),
                            n * p,
                            MatRef::row_major(&nodes[*kernel].data, geom.col_rows()),
                            MatRef::row_major(&gcols, n * p),
                            0.0,
                            &mut dx_cm,
                        );
                        acc(&mut grads, &nodes, *input, channel_major_to_batch_major(&dx_cm, n, *c_in, p));
                    }
                    if nodes[*kernel].requires_grad {
                        let x_cm = batch_major_to_channel_major(&nodes[*input].data, n, *c_in, p);
                        let mut dk = vec![0.0; c_in * geom.col_rows()];
                        gemm(
                            *c_in,
                            n * p,
                            geom.col_rows(),
                            MatRef::row_major(&x_cm, n * p),
                            MatRef::transposed(&gcols, n * p),
                            0.0,
                            &mut dk,
                        );
                        acc(&mut grads, &nodes, *kernel, dk);
                    }
                    grads[id] = Some(g);
                }
                Op::Dense { input, weight, bias } => {
                    let (n, d) = (nodes[*input].shape[0], nodes[*input].shape[1]);
                    let m = nodes[*weight].shape[1];
                    if nodes[*input].requires_grad {
                        let mut dx = vec![0.0; n * d];
                        gemm(
                            n,
                            m,
                            d,
                            MatRef::row_major(&g, m),
                            MatRef::transposed(&nodes[*weight].data, m),
                            0.0,
                            &mut dx,
                        );
                        acc(&mut grads, &nodes, *input, dx);
                    }
                    if nodes[*weight].requires_grad {
                        let mut dw = vec![0.0; d * m];
                        gemm(
                            d,
                            n,
                            m,
                            MatRef::transposed(&nodes[*input].data, d),
                            MatRef::row_major(&g, m),
                            0.0,
                            &mut dw,
                        );
                        acc(&mut grads, &nodes, *weight, dw);
                    }
                    if nodes[*bias].requires_grad {
                        let mut db = vec![0.0; m];
                        for row in g.chunks(m) {
                            db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        acc(&mut grads, &nodes, *bias, db);
                    }
                    grads[id] = Some(g);
                }
                Op::ChannelBias { input, bias } => {
                    let s = &node.shape;
                    let p = s[2] * s[3];
                    if nodes[*bias].requires_grad {
                        let mut db = vec![0.0; s[1]];
                        for (i, plane) in g.chunks(p).enumerate() {
                            db[i % s[1]] += plane.iter().sum::<f64>();
                        }
                        acc(&mut grads, &nodes, *bias, db);
                    }
                    acc(&mut grads, &nodes, *input, g.clone());
                    grads[id] = Some(g);
                }
                Op::LeakyRelu { input, slope } => {
                    let x = &nodes[*input].data;
                    let dx = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { slope * g }).collect();
                    acc(&mut grads, &nodes, *input, dx);
                    grads[id] = Some(g);
                }
                Op::Sigmoid { input } => {
                    let dx = g.iter().zip(&node.data).map(|(g, y)| g * y * (1.0 - y)).collect();
                    acc(&mut grads, &nodes, *input, dx);
                    grads[id] = Some(g);
                }
                Op::Tanh { input } => {
                    let dx = g.iter().zip(&node.data).map(|(g, y)| g * (1.0 - y * y)).collect();
                    acc(&mut grads, &nodes, *input, dx);
                    grads[id] = Some(g);
                }
                Op::Log { input } => {
                    let dx = g.iter().zip(&nodes[*input].data).map(|(g, x)| g / x).collect();
                    acc(&mut grads, &nodes, *input, dx);
                    grads[id] = Some(g);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, &nodes, *a, g.clone());
                    acc(&mut grads, &nodes, *b, g.clone());
                    grads[id] = Some(g);
                }
                Op::Sub { a, b } => {
                    acc(&mut grads, &nodes, *a, g.clone());
                    acc(&mut grads, &nodes, *b, g.iter().map(|v| -v).collect());
                    grads[id] = Some(g);
                }
                Op::Mul { a, b } => {
                    let da = g.iter().zip(&nodes[*b].data).map(|(g, y)| g * y).collect();
                    let db = g.iter().zip(&nodes[*a].data).map(|(g, x)| g * x).collect();
                    acc(&mut grads, &nodes, *a, da);
                    acc(&mut grads, &nodes, *b, db);
                    grads[id] = Some(g);
                }
                Op::Affine { input, scale } => {
                    acc(&mut grads, &nodes, *input, g.iter().map(|v| v * scale).collect());
                    grads[id] = Some(g);
                }
                Op::Clamp { input, lo, hi } => {
                    let x = &nodes[*input].data;
                    let dx = g.iter().zip(x).map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 }).collect();
                    acc(&mut grads, &nodes, *input, dx);
                    grads[id] = Some(g);
                }
                Op::Sum { input } => {
                    acc(&mut grads, &nodes, *input, vec![g[0]; nodes[*input].data.len()]);
                    grads[id] = Some(g);
                }
                Op::Mean { input } => {
                    let len = nodes[*input].data.len();
                    acc(&mut grads, &nodes, *input, vec![g[0] / len as f64; len]);
                    grads[id] = Some(g);
                }
                Op::Reshape { input } => {
                    acc(&mut grads, &nodes, *input, g.clone());
                    grads[id] = Some(g);
                }
                Op::Concat { inputs } => {
                    let mut offset = 0;
                    for &i in inputs {
                        let len = nodes[i].data.len();
                        acc(&mut grads, &nodes, i, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                    grads[id] = Some(g);
                }
                Op::Narrow { input, offset } => {
                    let mut dx = vec![0.0; nodes[*input].data.len()];
                    dx[*offset..*offset + g.len()].copy_from_slice(&g);
                    acc(&mut grads, &nodes, *input, dx);
                    grads[id] = Some(g);
                }
            }
        }
        Ok(Gradients { shapes: nodes.into_iter().map(|n| n.shape).collect(), grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = g.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.data(y), &[9.0]);
    }

    #[test]
    fn conv_transpose_broadcasts_kernel() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::full(&[1, 1, 1, 1], 1.0));
        let k = g.constant(&Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.conv_transpose2d(x, k, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.data(y), &[1.0; 4]);
    }

    #[test]
    fn conv_transpose_output_shape() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::zeros(&[1, 2, 8, 8]));
        let k = g.constant(&Tensor::zeros(&[2, 3, 4, 4]));
        let y = g.conv_transpose2d(x, k, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 16, 16]);
    }

    #[test]
    fn conv_channel_mismatch_names_axis() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::zeros(&[1, 2, 4, 4]));
        let k = g.constant(&Tensor::zeros(&[1, 3, 2, 2]));
        let err = g.conv2d(x, k, 1, 0).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
        let big = g.constant(&Tensor::zeros(&[1, 2, 5, 5]));
        assert!(g.conv2d(x, big, 1, 0).is_err());
    }

    #[test]
    fn dense_identity_and_hand_product() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[2, 2], &[1.5, -2.0, 3.0, 4.0]));
        let w = g.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(&Tensor::zeros(&[2]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.data(y), &[1.5, -2.0, 3.0, 4.0]);

        let x = g.constant(&t(&[1, 2], &[0.3, -1.2]));
        let w = g.constant(&t(&[2, 1], &[2.5, 0.4]));
        let b = g.constant(&t(&[1], &[0.1]));
        let y = g.dense(x, w, b).unwrap();
        assert!((g.data(y)[0] - (0.3 * 2.5 - 1.2 * 0.4 + 0.1)).abs() < 1e-15);
        let bad = g.constant(&Tensor::zeros(&[3, 1]));
        assert!(matches!(g.dense(x, bad, b), Err(AiftError::Dimension { .. })));
    }

    #[test]
    fn activation_values() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[2], &[0.0, -1.0]));
        let s = g.sigmoid(x);
        assert_eq!(g.data(s)[0], 0.5);
        let l = g.leaky_relu(x, 0.2);
        assert_eq!(g.data(l)[1], -0.2);
        assert!(matches!(g.log(x), Err(AiftError::Domain { .. })));
    }

    #[test]
    fn sum_gives_unit_gradient() {
        let mut g = Graph::new();
        let x = g.param(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn unreachable_parameter_gets_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::full(&[3], 2.0));
        let unused = g.param(&Tensor::full(&[3], 1.0));
        let loss = g.mean(x);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get(x).unwrap(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::full(&[3], 2.0));
        let y = g.tanh(x);
        assert!(matches!(g.backward(y), Err(AiftError::Contract(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let x = g.param(&t(&[2], &[3.0, -1.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0, -2.0]);
    }

    #[test]
    fn concat_and_narrow_route_gradients() {
        let mut g = Graph::new();
        let a = g.param(&t(&[1, 2], &[1.0, 2.0]));
        let b = g.param(&t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[3, 2]);
        let tail = g.narrow(c, 1, 2).unwrap();
        assert_eq!(g.data(tail), &[3.0, 4.0, 5.0, 6.0]);
        let s = g.sum(tail);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[0.0, 0.0]);
        assert_eq!(grads.get(b).unwrap(), &[1.0; 4]);
    }
}
