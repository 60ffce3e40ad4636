use crate::error::{AutodiffError, Result};
use crate::kernels::{col2im, conv_output_size, gemm, im2col, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    InstanceNorm {
        x: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Offset {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    L1Loss {
        a: Var,
        b: Var,
    },
    MseLoss {
        a: Var,
        b: Var,
    },
    BceLoss {
        p: Var,
        target: Var,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Tape of operations recorded in evaluation order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Add `contrib` into the gradient slot of `v`, if it tracks gradients.
fn add_grad(nodes: &mut [Node], v: Var, contrib: Vec<f64>) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    match node.grad.as_mut() {
        Some(g) => g.iter_mut().zip(&contrib).for_each(|(g, c)| *g += c),
        None => node.grad = Some(contrib),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf. Leaves with `requires_grad` collect gradients across
    /// repeated [`backward`](Self::backward) calls until [`zero_grad`](Self::zero_grad).
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Copy of `v` cut off from the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            let shape = self.value(b).shape();
            if shape != [channels] {
                return Err(AutodiffError::ShapeMismatch {
                    op,
                    left: shape.to_vec(),
                    right: vec![channels],
                });
            }
        }
        Ok(())
    }

    /// 2-D convolution. `kernel` is `[F, C, k, k]`, `bias` is `[F]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let kt = self.value(kernel);
        let [n, c, h, w] = x.dims4("conv2d")?;
        let [f, kc, kh, kw] = kt.dims4("conv2d")?;
        if kc != c || kh != kw {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                left: x.shape().to_vec(),
                right: kt.shape().to_vec(),
            });
        }
        let (out_h, out_w) = match (
            conv_output_size(h, kh, stride, padding),
            conv_output_size(w, kw, stride, padding),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "conv2d",
                    left: x.shape().to_vec(),
                    right: kt.shape().to_vec(),
                })
            }
        };
        self.check_bias("conv2d", bias, f)?;
        let g = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kernel: kh,
            stride,
            padding,
            out_h,
            out_w,
        };
        let plane_in = c * h * w;
        let plane_out = f * out_h * out_w;
        let mut out = vec![0.0; n * plane_out];
        let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
        for b in 0..n {
            im2col(&x.data()[b * plane_in..(b + 1) * plane_in], &g, &mut cols);
            gemm(
                f,
                g.col_rows(),
                g.col_cols(),
                kt.data(),
                false,
                &cols,
                false,
                0.0,
                &mut out[b * plane_out..(b + 1) * plane_out],
            );
        }
        if let Some(bv) = bias {
            add_channel_bias(&mut out, self.value(bv).data(), n, f, out_h * out_w);
        }
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let rg = self.rg(&inputs);
        let value = Tensor::new(vec![n, f, out_h, out_w], out)?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        )
    }

    /// Transposed 2-D convolution. `kernel` is `[C_in, C_out, k, k]`, output
    /// extent is `(H - 1)·stride - 2·padding + k`.
    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let kt = self.value(kernel);
        let [n, cin, h, w] = x.dims4("conv2d_transpose")?;
        let [kcin, cout, kh, kw] = kt.dims4("conv2d_transpose")?;
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "conv2d_transpose",
            left: x.shape().to_vec(),
            right: kt.shape().to_vec(),
        };
        if kcin != cin || kh != kw || stride == 0 {
            return Err(mismatch());
        }
        let out_h = ((h - 1) * stride + kh)
            .checked_sub(2 * padding)
            .filter(|&v| v > 0);
        let out_w = ((w - 1) * stride + kw)
            .checked_sub(2 * padding)
            .filter(|&v| v > 0);
        let (out_h, out_w) = match (out_h, out_w) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(mismatch()),
        };
        self.check_bias("conv2d_transpose", bias, cout)?;
        let g = ConvGeom {
            channels: cout,
            height: out_h,
            width: out_w,
            kernel: kh,
            stride,
            padding,
            out_h: h,
            out_w: w,
        };
        let plane_in = cin * h * w;
        let plane_out = cout * out_h * out_w;
        let mut out = vec![0.0; n * plane_out];
        let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
        for b in 0..n {
            gemm(
                g.col_rows(),
                cin,
                h * w,
                kt.data(),
                true,
                &x.data()[b * plane_in..(b + 1) * plane_in],
                false,
                0.0,
                &mut cols,
            );
            col2im(&cols, &g, &mut out[b * plane_out..(b + 1) * plane_out]);
        }
        if let Some(bv) = bias {
            add_channel_bias(&mut out, self.value(bv).data(), n, cout, out_h * out_w);
        }
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let rg = self.rg(&inputs);
        let value = Tensor::new(vec![n, cout, out_h, out_w], out)?;
        self.push(
            "conv2d_transpose",
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(AutodiffError::InvalidArgument(format!(
                "leaky_relu slope must lie in (0, 1), got {slope}"
            )));
        }
        let xt = self.value(x);
        let out = xt
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push("leaky_relu", value, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let out = xt.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push("sigmoid", value, Op::Sigmoid { x }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let out = xt.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push("tanh", value, Op::Tanh { x }, rg)
    }

    /// Per-sample, per-channel normalization over the spatial extent, without
    /// affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(AutodiffError::InvalidArgument(format!(
                "instance_norm eps must be positive, got {eps}"
            )));
        }
        let xt = self.value(x);
        let [n, c, h, w] = xt.dims4("instance_norm")?;
        let m = h * w;
        let mut normalized = vec![0.0; xt.numel()];
        let mut inv_std = vec![0.0; n * c];
        for (p, (src, dst)) in xt
            .data()
            .chunks_exact(m)
            .zip(normalized.chunks_exact_mut(m))
            .enumerate()
        {
            let mean = src.iter().sum::<f64>() / m as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[p] = inv;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv;
            }
        }
        let value = Tensor::new(vec![n, c, h, w], normalized.clone())?;
        let rg = self.rg(&[x]);
        self.push(
            "instance_norm",
            value,
            Op::InstanceNorm {
                x,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let at = self.value(a);
        let bt = self.value(b);
        let [n, ca, h, w] = at.dims4("concat_channels")?;
        let [nb, cb, hb, wb] = bt.dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_channels",
                left: at.shape().to_vec(),
                right: bt.shape().to_vec(),
            });
        }
        let (pa, pb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (pa + pb));
        for s in 0..n {
            out.extend_from_slice(&at.data()[s * pa..(s + 1) * pa]);
            out.extend_from_slice(&bt.data()[s * pb..(s + 1) * pb]);
        }
        let value = Tensor::new(vec![n, ca + cb, h, w], out)?;
        let rg = self.rg(&[a, b]);
        self.push("concat_channels", value, Op::ConcatChannels { a, b }, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let at = self.value(a);
        let bt = self.value(b);
        check_same_shape(name, at, bt)?;
        let out = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(at.shape().to_vec(), out)?;
        let rg = self.rg(&[a, b]);
        self.push(name, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xt = self.value(x);
        let value = Tensor::new(
            xt.shape().to_vec(),
            xt.data().iter().map(|v| v * factor).collect(),
        )?;
        let rg = self.rg(&[x]);
        self.push("scale", value, Op::Scale { x, factor }, rg)
    }

    /// `x + c` elementwise.
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        let xt = self.value(x);
        let value = Tensor::new(
            xt.shape().to_vec(),
            xt.data().iter().map(|v| v + c).collect(),
        )?;
        let rg = self.rg(&[x]);
        self.push("offset", value, Op::Offset { x }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push("sum", Tensor::scalar(total), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let m = xt.data().iter().sum::<f64>() / xt.numel() as f64;
        let rg = self.rg(&[x]);
        self.push("mean", Tensor::scalar(m), Op::Mean { x }, rg)
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let at = self.value(a);
        let bt = self.value(b);
        check_same_shape("l1_loss", at, bt)?;
        let m = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / at.numel() as f64;
        let rg = self.rg(&[a, b]);
        self.push("l1_loss", Tensor::scalar(m), Op::L1Loss { a, b }, rg)
    }

    /// Mean squared difference.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let at = self.value(a);
        let bt = self.value(b);
        check_same_shape("mse_loss", at, bt)?;
        let m = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / at.numel() as f64;
        let rg = self.rg(&[a, b]);
        self.push("mse_loss", Tensor::scalar(m), Op::MseLoss { a, b }, rg)
    }

    /// Mean binary cross-entropy with probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce_loss(&mut self, p: Var, target: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(AutodiffError::InvalidArgument(format!(
                "bce_loss eps must lie in (0, 0.5), got {eps}"
            )));
        }
        let pt = self.value(p);
        let tt = self.value(target);
        check_same_shape("bce_loss", pt, tt)?;
        let m = pt
            .data()
            .iter()
            .zip(tt.data())
            .map(|(&p, &t)| {
                let pc = p.clamp(eps, 1.0 - eps);
                -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / pt.numel() as f64;
        let rg = self.rg(&[p, target]);
        self.push(
            "bce_loss",
            Tensor::scalar(m),
            Op::BceLoss { p, target, eps },
            rg,
        )
    }

    /// Propagate d`loss`/d· to every node that requires gradients.
    ///
    /// Intermediate gradients are recomputed from scratch on every call; leaf
    /// gradients accumulate until [`zero_grad`](Self::zero_grad).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NotScalar(
                self.nodes[loss.0].value.shape().to_vec(),
            ));
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        add_grad(&mut self.nodes, loss, vec![1.0]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = node.grad.as_deref() else {
                continue;
            };
            backprop_node(before, node, grad)?;
        }
        Ok(())
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], n: usize, channels: usize, plane: usize) {
    for s in 0..n {
        for (c, &b) in bias.iter().enumerate().take(channels) {
            let off = (s * channels + c) * plane;
            out[off..off + plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn channel_sums(grad: &[f64], n: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut sums = vec![0.0; channels];
    for s in 0..n {
        for (c, acc) in sums.iter_mut().enumerate() {
            let off = (s * channels + c) * plane;
            *acc += grad[off..off + plane].iter().sum::<f64>();
        }
    }
    sums
}

fn backprop_node(before: &mut [Node], node: &Node, grad: &[f64]) -> Result<()> {
    let value = |nodes: &[Node], v: Var| -> Tensor { nodes[v.0].value.clone() };
    match &node.op {
        Op::Leaf => {}
        &Op::Conv2d {
            input,
            kernel,
            bias,
            stride,
            padding,
        } => {
            let x = &before[input.0].value;
            let kt = &before[kernel.0].value;
            let [n, c, h, w] = x.dims4("conv2d")?;
            let [f, _, k, _] = kt.dims4("conv2d")?;
            let [_, _, out_h, out_w] = node.value.dims4("conv2d")?;
            let g = ConvGeom {
                channels: c,
                height: h,
                width: w,
                kernel: k,
                stride,
                padding,
                out_h,
                out_w,
            };
            let plane_in = c * h * w;
            let plane_out = f * out_h * out_w;
            let need_x = before[input.0].requires_grad;
            let need_k = before[kernel.0].requires_grad;
            let mut dx = if need_x {
                vec![0.0; x.numel()]
            } else {
                Vec::new()
            };
            let mut dk = if need_k {
                vec![0.0; kt.numel()]
            } else {
                Vec::new()
            };
            let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
            for b in 0..n {
                let dout = &grad[b * plane_out..(b + 1) * plane_out];
                if need_k {
                    im2col(&x.data()[b * plane_in..(b + 1) * plane_in], &g, &mut cols);
                    gemm(
                        f,
                        g.col_cols(),
                        g.col_rows(),
                        dout,
                        false,
                        &cols,
                        true,
                        1.0,
                        &mut dk,
                    );
                }
                if need_x {
                    gemm(
                        g.col_rows(),
                        f,
                        g.col_cols(),
                        kt.data(),
                        true,
                        dout,
                        false,
                        0.0,
                        &mut cols,
                    );
                    col2im(&cols, &g, &mut dx[b * plane_in..(b + 1) * plane_in]);
                }
            }
            if need_x {
                add_grad(before, input, dx);
            }
            if need_k {
                add_grad(before, kernel, dk);
            }
            if let Some(bv) = bias {
                add_grad(before, bv, channel_sums(grad, n, f, out_h * out_w));
            }
        }
        &Op::ConvTranspose2d {
            input,
            kernel,
            bias,
            stride,
            padding,
        } => {
            let x = &before[input.0].value;
            let kt = &before[kernel.0].value;
            let [n, cin, h, w] = x.dims4("conv2d_transpose")?;
            let [_, cout, k, _] = kt.dims4("conv2d_transpose")?;
            let [_, _, out_h, out_w] = node.value.dims4("conv2d_transpose")?;
            let g = ConvGeom {
                channels: cout,
                height: out_h,
                width: out_w,
                kernel: k,
                stride,
                padding,
                out_h: h,
                out_w: w,
            };
            let plane_in = cin * h * w;
            let plane_out = cout * out_h * out_w;
            let need_x = before[input.0].requires_grad;
            let need_k = before[kernel.0].requires_grad;
            let mut dx = if need_x {
                vec![0.0; x.numel()]
            } else {
                Vec::new()
            };
            let mut dk = if need_k {
                vec![0.0; kt.numel()]
            } else {
                Vec::new()
            };
            let mut dcols = vec![0.0; g.col_rows() * g.col_cols()];
            for b in 0..n {
                im2col(&grad[b * plane_out..(b + 1) * plane_out], &g, &mut dcols);
                if need_x {
                    gemm(
                        cin,
                        g.col_rows(),
                        h * w,
                        kt.data(),
                        false,
                        &dcols,
                        false,
                        0.0,
                        &mut dx[b * plane_in..(b + 1) * plane_in],
                    );
                }
                if need_k {
                    gemm(
                        cin,
                        h * w,
                        g.col_rows(),
                        &x.data()[b * plane_in..(b + 1) * plane_in],
                        false,
                        &dcols,
                        true,
                        1.0,
                        &mut dk,
                    );
                }
            }
            if need_x {
                add_grad(before, input, dx);
            }
            if need_k {
                add_grad(before, kernel, dk);
            }
            if let Some(bv) = bias {
                add_grad(before, bv, channel_sums(grad, n, cout, out_h * out_w));
            }
        }
        &Op::LeakyRelu { x, slope } => {
            let xt = &before[x.0].value;
            let dx = xt
                .data()
                .iter()
                .zip(grad)
                .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                .collect();
            add_grad(before, x, dx);
        }
        &Op::Sigmoid { x } => {
            let dx = node
                .value
                .data()
                .iter()
                .zip(grad)
                .map(|(&y, &g)| g * y * (1.0 - y))
                .collect();
            add_grad(before, x, dx);
        }
        &Op::Tanh { x } => {
            let dx = node
                .value
                .data()
                .iter()
                .zip(grad)
                .map(|(&y, &g)| g * (1.0 - y * y))
                .collect();
            add_grad(before, x, dx);
        }
        Op::InstanceNorm {
            x,
            normalized,
            inv_std,
        } => {
            let [_, _, h, w] = node.value.dims4("instance_norm")?;
            let m = h * w;
            let mf = m as f64;
            let mut dx = vec![0.0; grad.len()];
            for (p, ((dy, yh), out)) in grad
                .chunks_exact(m)
                .zip(normalized.chunks_exact(m))
                .zip(dx.chunks_exact_mut(m))
                .enumerate()
            {
                let sum_dy: f64 = dy.iter().sum();
                let sum_dy_y: f64 = dy.iter().zip(yh).map(|(a, b)| a * b).sum();
                let k = inv_std[p] / mf;
                for ((o, &d), &y) in out.iter_mut().zip(dy).zip(yh) {
                    *o = k * (mf * d - sum_dy - y * sum_dy_y);
                }
            }
            add_grad(before, *x, dx);
        }
        &Op::ConcatChannels { a, b } => {
            let [n, ca, h, w] = before[a.0].value.dims4("concat_channels")?;
            let cb = before[b.0].value.shape()[1];
            let (pa, pb) = (ca * h * w, cb * h * w);
            let mut da = Vec::with_capacity(n * pa);
            let mut db = Vec::with_capacity(n * pb);
            for s in 0..n {
                let off = s * (pa + pb);
                da.extend_from_slice(&grad[off..off + pa]);
                db.extend_from_slice(&grad[off + pa..off + pa + pb]);
            }
            add_grad(before, a, da);
            add_grad(before, b, db);
        }
        &Op::Add { a, b } => {
            add_grad(before, a, grad.to_vec());
            add_grad(before, b, grad.to_vec());
        }
        &Op::Sub { a, b } => {
            add_grad(before, a, grad.to_vec());
            add_grad(before, b, grad.iter().map(|g| -g).collect());
        }
        &Op::Mul { a, b } => {
            let (av, bv) = (value(before, a), value(before, b));
            add_grad(
                before,
                a,
                grad.iter().zip(bv.data()).map(|(g, y)| g * y).collect(),
            );
            add_grad(
                before,
                b,
                grad.iter().zip(av.data()).map(|(g, x)| g * x).collect(),
            );
        }
        &Op::Div { a, b } => {
            let (av, bv) = (value(before, a), value(before, b));
            add_grad(
                before,
                a,
                grad.iter().zip(bv.data()).map(|(g, y)| g / y).collect(),
            );
            add_grad(
                before,
                b,
                grad.iter()
                    .zip(av.data().iter().zip(bv.data()))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect(),
            );
        }
        &Op::Scale { x, factor } => {
            add_grad(before, x, grad.iter().map(|g| g * factor).collect());
        }
        &Op::Offset { x } => {
            add_grad(before, x, grad.to_vec());
        }
        &Op::Sum { x } => {
            let n = before[x.0].value.numel();
            add_grad(before, x, vec![grad[0]; n]);
        }
        &Op::Mean { x } => {
            let n = before[x.0].value.numel();
            add_grad(before, x, vec![grad[0] / n as f64; n]);
        }
        &Op::L1Loss { a, b } => {
            let (av, bv) = (value(before, a), value(before, b));
            let scale = grad[0] / av.numel() as f64;
            let da: Vec<f64> = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| {
                    let d = x - y;
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                })
                .collect();
            let db = da.iter().map(|v| -v).collect();
            add_grad(before, a, da);
            add_grad(before, b, db);
        }
        &Op::MseLoss { a, b } => {
            let (av, bv) = (value(before, a), value(before, b));
            let scale = 2.0 * grad[0] / av.numel() as f64;
            let da: Vec<f64> = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| scale * (x - y))
                .collect();
            let db = da.iter().map(|v| -v).collect();
            add_grad(before, a, da);
            add_grad(before, b, db);
        }
        &Op::BceLoss { p, target, eps } => {
            let (pv, tv) = (value(before, p), value(before, target));
            let scale = grad[0] / pv.numel() as f64;
            let dp = pv
                .data()
                .iter()
                .zip(tv.data())
                .map(|(&p, &t)| {
                    if p < eps || p > 1.0 - eps {
                        0.0
                    } else {
                        scale * (-t / p + (1.0 - t) / (1.0 - p))
                    }
                })
                .collect();
            let dt = pv
                .data()
                .iter()
                .map(|&p| {
                    let pc = p.clamp(eps, 1.0 - eps);
                    scale * ((1.0 - pc).ln() - pc.ln())
                })
                .collect();
            add_grad(before, p, dp);
            add_grad(before, target, dt);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_of_ones_is_nine() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let k = g.param(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let y = g.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn transpose_output_size() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 3, 8, 8], 0.5)).unwrap();
        let k = g.param(Tensor::full(&[3, 2, 4, 4], 0.1)).unwrap();
        let y = g.conv2d_transpose(x, k, None, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 16, 16]);
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let t = g.param(Tensor::from_fn(&[2, 3], |i| i as f64)).unwrap();
        let s = g.sum(t).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(t).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn l1_subgradient_at_zero() {
        let mut g = Graph::new();
        let t = g
            .param(Tensor::new(vec![4], vec![1.5, -2.0, 0.0, 0.25]).unwrap())
            .unwrap();
        let z = g.constant(Tensor::zeros(&[4])).unwrap();
        let l = g.l1_loss(t, z).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(t).unwrap(), &[0.25, -0.25, 0.0, 0.25]);
    }

    #[test]
    fn l1_of_self_is_zero() {
        let mut g = Graph::new();
        let t = g.param(Tensor::from_fn(&[5], |i| i as f64 * 0.3)).unwrap();
        let l = g.l1_loss(t, t).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
    }

    #[test]
    fn bce_at_target_is_bounded() {
        let eps = 1e-7;
        let mut g = Graph::new();
        let p = g
            .constant(Tensor::new(vec![4], vec![0.0, 1.0, 1.0, 0.0]).unwrap())
            .unwrap();
        let l = g.bce_loss(p, p, eps).unwrap();
        let v = g.value(l).item().unwrap();
        assert!(v <= -(1.0f64 - eps).ln() + 1e-15, "{v}");
    }

    #[test]
    fn backward_accumulates_and_zero_grad_resets() {
        let mut g = Graph::new();
        let t = g.param(Tensor::full(&[3], 2.0)).unwrap();
        let s = g.sum(t).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(t).unwrap(), &[2.0; 3]);
        g.zero_grad();
        assert!(g.grad(t).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let t = g.param(Tensor::full(&[3], 2.0)).unwrap();
        let y = g.scale(t, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(AutodiffError::NotScalar(_))));
    }

    #[test]
    fn fan_out_gradients_add() {
        // loss = sum(x * x + 3x)  => d/dx = 2x + 3 via two paths through x.
        let mut g = Graph::new();
        let x = g
            .param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0).unwrap();
        let s = g.add(sq, lin).unwrap();
        let l = g.sum(s).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5.0, -1.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 2])).unwrap();
        let b = g.constant(Tensor::zeros(&[4])).unwrap();
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 2]") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[2], 1.0)).unwrap();
        let b = g.constant(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            g.div(a, b),
            Err(AutodiffError::NonFinite { op: "div" })
        ));
    }

    #[test]
    fn invalid_slope_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[2], 1.0)).unwrap();
        assert!(g.leaky_relu(a, 1.5).is_err());
        assert!(g.instance_norm(a, 1e-5).is_err());
    }
}
