//! Minimal feed-forward network with hand-written backpropagation.
//!
//! Five layer kinds cover everything the experiments need: dense, valid-padded
//! square convolution, ReLU, Tanh, and per-row L2 normalization (the unit-
//! circle output layer), plus an explicit Flatten boundary between spatial
//! and dense shapes. The optimizer is SGD with momentum and a learning rate
//! held constant for the first half of training, then decayed polynomially
//! to the terminal rate.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::Rng;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Dense(usize),
    Spatial { ch: usize, h: usize, w: usize },
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Dense(n) => n,
            Shape::Spatial { ch, h, w } => ch * h * w,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear {
        weight: Matrix, // in x out
        bias: Vec<f64>,
    },
    Conv2D {
        weight: Matrix, // out_ch x (in_ch * kernel * kernel)
        bias: Vec<f64>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
    },
    ReLU,
    Tanh,
    Flatten,
    L2NormalizeRows,
}

impl Layer {
    /// Dense layer with Glorot-uniform weights and zero bias.
    pub fn linear(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Layer {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| (2.0 * rng.next_f64() - 1.0) * a)
            .collect();
        Layer::Linear {
            weight: Matrix::new(fan_in, fan_out, data).expect("init shape"),
            bias: vec![0.0; fan_out],
        }
    }

    /// Square-kernel, valid-padding convolution over `in_h x in_w` inputs.
    pub fn conv2d(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
        rng: &mut Rng,
    ) -> Layer {
        assert!(stride >= 1 && kernel >= 1);
        assert!(in_h >= kernel && in_w >= kernel);
        let fan_in = in_ch * kernel * kernel;
        let fan_out = out_ch * kernel * kernel;
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..out_ch * fan_in)
            .map(|_| (2.0 * rng.next_f64() - 1.0) * a)
            .collect();
        Layer::Conv2D {
            weight: Matrix::new(out_ch, fan_in, data).expect("init shape"),
            bias: vec![0.0; out_ch],
            in_ch,
            out_ch,
            kernel,
            stride,
            in_h,
            in_w,
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::Linear { weight, bias } | Layer::Conv2D { weight, bias, .. } => {
                weight.rows() * weight.cols() + bias.len()
            }
            _ => 0,
        }
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Linear { weight, .. } => match input {
                Shape::Dense(n) if n == weight.rows() => Ok(Shape::Dense(weight.cols())),
                other => Err(Error::ShapeError(format!(
                    "linear layer expects dense {} input, got {other:?}",
                    weight.rows()
                ))),
            },
            Layer::Conv2D { in_ch, out_ch, kernel, stride, in_h, in_w, .. } => match input {
                Shape::Spatial { ch, h, w } if ch == *in_ch && h == *in_h && w == *in_w => {
                    Ok(Shape::Spatial {
                        ch: *out_ch,
                        h: (in_h - kernel) / stride + 1,
                        w: (in_w - kernel) / stride + 1,
                    })
                }
                other => Err(Error::ShapeError(format!(
                    "conv layer expects {in_ch}x{in_h}x{in_w} input, got {other:?}"
                ))),
            },
            Layer::Flatten => match input {
                Shape::Spatial { .. } => Ok(Shape::Dense(input.size())),
                Shape::Dense(_) => Err(Error::ShapeError(
                    "flatten boundary applied to an already-dense shape".into(),
                )),
            },
            Layer::L2NormalizeRows => match input {
                Shape::Dense(n) => Ok(Shape::Dense(n)),
                other => Err(Error::ShapeError(format!(
                    "row normalization expects a dense shape, got {other:?}"
                ))),
            },
            Layer::ReLU | Layer::Tanh => Ok(input),
        }
    }
}

/// Gradients for one layer's parameters.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Result of a backward pass: gradient with respect to the network input and
/// per-layer parameter gradients (None for parameter-free layers).
#[derive(Debug, Clone)]
pub struct Backprop {
    pub input_grad: Matrix,
    pub params: Vec<Option<LayerGrad>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Shape,
    shapes: Vec<Shape>, // input shape of each layer, plus the output shape
    cache: Option<Vec<Matrix>>,
    pub param_count: usize,
}

impl Network {
    pub fn new(input_shape: Shape, layers: Vec<Layer>) -> Result<Self> {
        let mut shapes = vec![input_shape];
        let mut cur = input_shape;
        for layer in &layers {
            cur = layer.out_shape(cur)?;
            shapes.push(cur);
        }
        let param_count = layers.iter().map(Layer::param_count).sum();
        Ok(Self { layers, input_shape, shapes, cache: None, param_count })
    }

    /// Embedding MLP used across the experiments:
    /// input -> hidden (ReLU) -> out, rows normalized to the unit sphere.
    pub fn embedder_mlp(input_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Network {
        Network::new(
            Shape::Dense(input_dim),
            vec![
                Layer::linear(input_dim, hidden, rng),
                Layer::ReLU,
                Layer::linear(hidden, out_dim, rng),
                Layer::L2NormalizeRows,
            ],
        )
        .expect("static composition")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().expect("at least the input shape")
    }

    pub fn input_size(&self) -> usize {
        self.input_shape.size()
    }

    pub fn forward(&mut self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_shape.size() {
            return Err(Error::ShapeError(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_shape.size()
            )));
        }
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        for layer in &self.layers {
            let out = layer_forward(layer, acts.last().unwrap());
            acts.push(out);
        }
        let out = acts.last().unwrap().clone();
        self.cache = Some(acts);
        Ok(out)
    }

    /// Evaluation-only forward pass; leaves the training cache untouched.
    pub fn infer(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_shape.size() {
            return Err(Error::ShapeError(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_shape.size()
            )));
        }
        let mut cur = batch.clone();
        for layer in &self.layers {
            cur = layer_forward(layer, &cur);
        }
        Ok(cur)
    }

    /// Backpropagates `grad_out` (same shape as the forward output) through
    /// the cached activations.
    pub fn backward(&self, grad_out: &Matrix) -> Result<Backprop> {
        let acts = self.cache.as_ref().ok_or(Error::StaleCache)?;
        let out = acts.last().unwrap();
        if grad_out.rows() != out.rows() || grad_out.cols() != out.cols() {
            return Err(Error::ShapeError(format!(
                "upstream gradient {}x{} vs output {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let mut grad = grad_out.clone();
        let mut params: Vec<Option<LayerGrad>> = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let output = &acts[i + 1];
            let (gin, pg) = layer_backward(layer, input, output, &grad)?;
            grad = gin;
            params[i] = pg;
        }
        Ok(Backprop { input_grad: grad, params })
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Versioned little-endian checkpoint: magic "SVMX", format version, the
    /// input shape, then one tagged record per layer with raw f64 parameters.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"SVMX");
        put_u32(&mut buf, 1);
        match self.input_shape {
            Shape::Dense(n) => {
                put_u32(&mut buf, 0);
                put_u32(&mut buf, n as u32);
            }
            Shape::Spatial { ch, h, w } => {
                put_u32(&mut buf, 1);
                put_u32(&mut buf, ch as u32);
                put_u32(&mut buf, h as u32);
                put_u32(&mut buf, w as u32);
            }
        }
        put_u32(&mut buf, self.layers.len() as u32);
        for layer in &self.layers {
            match layer {
                Layer::Linear { weight, bias } => {
                    put_u32(&mut buf, 0);
                    put_u32(&mut buf, weight.rows() as u32);
                    put_u32(&mut buf, weight.cols() as u32);
                    for v in weight.data() {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                    for v in bias {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Layer::Conv2D { weight, bias, in_ch, out_ch, kernel, stride, in_h, in_w } => {
                    put_u32(&mut buf, 1);
                    for dim in [*in_ch, *out_ch, *kernel, *stride, *in_h, *in_w] {
                        put_u32(&mut buf, dim as u32);
                    }
                    for v in weight.data() {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                    for v in bias {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Layer::ReLU => put_u32(&mut buf, 2),
                Layer::Tanh => put_u32(&mut buf, 3),
                Layer::Flatten => put_u32(&mut buf, 4),
                Layer::L2NormalizeRows => put_u32(&mut buf, 5),
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Network> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, at: 0 };
        if cur.take(4)? != b"SVMX" {
            return Err(Error::FormatError("bad checkpoint magic".into()));
        }
        let version = cur.u32()?;
        if version != 1 {
            return Err(Error::FormatError(format!("unsupported checkpoint version {version}")));
        }
        let input_shape = match cur.u32()? {
            0 => Shape::Dense(cur.u32()? as usize),
            1 => Shape::Spatial {
                ch: cur.u32()? as usize,
                h: cur.u32()? as usize,
                w: cur.u32()? as usize,
            },
            t => return Err(Error::FormatError(format!("unknown shape tag {t}"))),
        };
        let n_layers = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(match cur.u32()? {
                0 => {
                    let rows = cur.u32()? as usize;
                    let cols = cur.u32()? as usize;
                    let weight = Matrix::new(rows, cols, cur.f64s(rows * cols)?)?;
                    let bias = cur.f64s(cols)?;
                    Layer::Linear { weight, bias }
                }
                1 => {
                    let in_ch = cur.u32()? as usize;
                    let out_ch = cur.u32()? as usize;
                    let kernel = cur.u32()? as usize;
                    let stride = cur.u32()? as usize;
                    let in_h = cur.u32()? as usize;
                    let in_w = cur.u32()? as usize;
                    let weight =
                        Matrix::new(out_ch, in_ch * kernel * kernel, cur.f64s(out_ch * in_ch * kernel * kernel)?)?;
                    let bias = cur.f64s(out_ch)?;
                    Layer::Conv2D { weight, bias, in_ch, out_ch, kernel, stride, in_h, in_w }
                }
                2 => Layer::ReLU,
                3 => Layer::Tanh,
                4 => Layer::Flatten,
                5 => Layer::L2NormalizeRows,
                t => return Err(Error::FormatError(format!("unknown layer tag {t}"))),
            });
        }
        Network::new(input_shape, layers)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::TruncatedFile { expected: self.at + n, actual: self.bytes.len() });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn layer_forward(layer: &Layer, x: &Matrix) -> Matrix {
    match layer {
        Layer::Linear { weight, bias } => {
            let mut out = x.matmul(weight).expect("validated composition");
            for i in 0..out.rows() {
                for (v, b) in out.row_mut(i).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            out
        }
        Layer::Conv2D { weight, bias, in_ch, out_ch, kernel, stride, in_h, in_w } => {
            let (k, s) = (*kernel, *stride);
            let oh = (in_h - k) / s + 1;
            let ow = (in_w - k) / s + 1;
            let mut out = Matrix::zeros(x.rows(), out_ch * oh * ow);
            for b in 0..x.rows() {
                let row = x.row(b);
                let orow = out.row_mut(b);
                for oc in 0..*out_ch {
                    let w_row = weight.row(oc);
                    for y in 0..oh {
                        for xo in 0..ow {
                            let mut acc = bias[oc];
                            for ic in 0..*in_ch {
                                for ki in 0..k {
                                    let in_base = ic * in_h * in_w + (y * s + ki) * in_w + xo * s;
                                    let w_base = ic * k * k + ki * k;
                                    for kj in 0..k {
                                        acc += w_row[w_base + kj] * row[in_base + kj];
                                    }
                                }
                            }
                            orow[oc * oh * ow + y * ow + xo] = acc;
                        }
                    }
                }
            }
            out
        }
        Layer::ReLU => {
            let mut out = x.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            out
        }
        Layer::Tanh => {
            let mut out = x.clone();
            for v in out.data_mut() {
                *v = v.tanh();
            }
            out
        }
        Layer::Flatten => x.clone(),
        Layer::L2NormalizeRows => {
            let mut out = x.clone();
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
            out
        }
    }
}

fn layer_backward(
    layer: &Layer,
    input: &Matrix,
    output: &Matrix,
    grad_out: &Matrix,
) -> Result<(Matrix, Option<LayerGrad>)> {
    match layer {
        Layer::Linear { weight, .. } => {
            let input_grad = grad_out.matmul(&weight.transpose())?;
            let dw = input.transpose().matmul(grad_out)?;
            let mut db = vec![0.0; weight.cols()];
            for i in 0..grad_out.rows() {
                for (acc, g) in db.iter_mut().zip(grad_out.row(i)) {
                    *acc += g;
                }
            }
            Ok((input_grad, Some(LayerGrad { weight: dw, bias: db })))
        }
        Layer::Conv2D { weight, bias, in_ch, out_ch, kernel, stride, in_h, in_w } => {
            let (k, s) = (*kernel, *stride);
            let oh = (in_h - k) / s + 1;
            let ow = (in_w - k) / s + 1;
            let mut dx = Matrix::zeros(input.rows(), input.cols());
            let mut dw = Matrix::zeros(weight.rows(), weight.cols());
            let mut db = vec![0.0; bias.len()];
            for b in 0..input.rows() {
                let row = input.row(b);
                let grow = grad_out.row(b);
                for oc in 0..*out_ch {
                    let w_row = weight.row(oc);
                    for y in 0..oh {
                        for xo in 0..ow {
                            let g = grow[oc * oh * ow + y * ow + xo];
                            if g == 0.0 {
                                continue;
                            }
                            db[oc] += g;
                            let dxr = dx.row_mut(b);
                            for ic in 0..*in_ch {
                                for ki in 0..k {
                                    let in_base = ic * in_h * in_w + (y * s + ki) * in_w + xo * s;
                                    let w_base = ic * k * k + ki * k;
                                    for kj in 0..k {
                                        dxr[in_base + kj] += g * w_row[w_base + kj];
                                    }
                                }
                            }
                            let dwr = dw.row_mut(oc);
                            for ic in 0..*in_ch {
                                for ki in 0..k {
                                    let in_base = ic * in_h * in_w + (y * s + ki) * in_w + xo * s;
                                    let w_base = ic * k * k + ki * k;
                                    for kj in 0..k {
                                        dwr[w_base + kj] += g * row[in_base + kj];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Ok((dx, Some(LayerGrad { weight: dw, bias: db })))
        }
        Layer::ReLU => {
            let mut g = grad_out.clone();
            for (gv, xv) in g.data_mut().iter_mut().zip(input.data()) {
                if *xv <= 0.0 {
                    *gv = 0.0;
                }
            }
            Ok((g, None))
        }
        Layer::Tanh => {
            let mut g = grad_out.clone();
            for (gv, yv) in g.data_mut().iter_mut().zip(output.data()) {
                *gv *= 1.0 - yv * yv;
            }
            Ok((g, None))
        }
        Layer::Flatten => Ok((grad_out.clone(), None)),
        Layer::L2NormalizeRows => {
            // Per row: dx = (g - y (y . g)) / ||x||.
            let mut g = grad_out.clone();
            for i in 0..g.rows() {
                let norm = input.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let y = output.row(i);
                let yg: f64 = y.iter().zip(grad_out.row(i)).map(|(a, b)| a * b).sum();
                for (gv, yv) in g.row_mut(i).iter_mut().zip(y) {
                    *gv = (*gv - yv * yg) / norm;
                }
            }
            Ok((g, None))
        }
    }
}

/// SGD with momentum and the two-phase schedule: `lr = base` for the first
/// half of training, then polynomial decay (power `p`) down to `end_lr` at
/// `total_iters`.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<Option<LayerGrad>>,
    pub momentum: f64,
    pub base_lr: f64,
    pub end_lr: f64,
    pub total_iters: usize,
    pub power: f64,
}

impl SgdState {
    pub fn new(net: &Network, momentum: f64, base_lr: f64, end_lr: f64, total_iters: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidInput(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(base_lr > end_lr && end_lr > 0.0) {
            return Err(Error::InvalidInput(format!(
                "need base_lr > end_lr > 0, got {base_lr} and {end_lr}"
            )));
        }
        let velocity = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear { weight, bias } | Layer::Conv2D { weight, bias, .. } => {
                    Some(LayerGrad {
                        weight: Matrix::zeros(weight.rows(), weight.cols()),
                        bias: vec![0.0; bias.len()],
                    })
                }
                _ => None,
            })
            .collect();
        Ok(Self { velocity, momentum, base_lr, end_lr, total_iters, power: 1.0 })
    }

    /// Flat learning rate: the decay phase is pushed past any reachable
    /// iteration count.
    pub fn constant(net: &Network, momentum: f64, lr: f64) -> Result<Self> {
        Self::new(net, momentum, lr, lr * 1e-12, usize::MAX)
    }

    /// Learning rate at iteration `iter`.
    pub fn lr(&self, iter: usize) -> f64 {
        let half = self.total_iters as f64 / 2.0;
        let it = iter as f64;
        if it <= half {
            self.base_lr
        } else {
            let frac = ((it - half) / half).min(1.0);
            self.end_lr + (self.base_lr - self.end_lr) * (1.0 - frac).powf(self.power)
        }
    }

    /// `v <- momentum * v - lr * g; theta <- theta + v`.
    pub fn step(&mut self, net: &mut Network, grads: &[Option<LayerGrad>], iter: usize) {
        assert_eq!(grads.len(), net.layers.len(), "gradients do not match layers");
        let lr = self.lr(iter);
        for ((layer, vel), grad) in net.layers.iter_mut().zip(&mut self.velocity).zip(grads) {
            let (Some(vel), Some(grad)) = (vel.as_mut(), grad.as_ref()) else {
                continue;
            };
            match layer {
                Layer::Linear { weight, bias } | Layer::Conv2D { weight, bias, .. } => {
                    for (v, g) in vel.weight.data_mut().iter_mut().zip(grad.weight.data()) {
                        *v = self.momentum * *v - lr * g;
                    }
                    for (w, v) in weight.data_mut().iter_mut().zip(vel.weight.data()) {
                        *w += v;
                    }
                    for (v, g) in vel.bias.iter_mut().zip(&grad.bias) {
                        *v = self.momentum * *v - lr * g;
                    }
                    for (b, v) in bias.iter_mut().zip(&vel.bias) {
                        *b += v;
                    }
                }
                _ => unreachable!("velocity exists only for parameterized layers"),
            }
        }
        net.clear_cache();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe_coeffs(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.next_gaussian()).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn probe_loss(out: &Matrix, c: &Matrix) -> f64 {
        out.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
    }

    // Finite-difference check of every parameter gradient under the linear
    // probe loss sum(c .* out).
    fn check_param_grads(net: &Network, input: &Matrix, seed: u64, tol: f64) {
        let mut rng = Rng::new(seed);
        let mut live = net.clone();
        let out = live.forward(input).unwrap();
        let c = probe_coeffs(out.rows(), out.cols(), &mut rng);
        let bp = live.backward(&c).unwrap();

        let h = 1e-5;
        for (li, pg) in bp.params.iter().enumerate() {
            let Some(pg) = pg else { continue };
            let n_w = pg.weight.rows() * pg.weight.cols();
            for idx in 0..n_w + pg.bias.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                for (copy, delta) in [(&mut plus, h), (&mut minus, -h)] {
                    match &mut copy.layers[li] {
                        Layer::Linear { weight, bias } | Layer::Conv2D { weight, bias, .. } => {
                            if idx < n_w {
                                weight.data_mut()[idx] += delta;
                            } else {
                                bias[idx - n_w] += delta;
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                let fp = probe_loss(&plus.infer(input).unwrap(), &c);
                let fm = probe_loss(&minus.infer(input).unwrap(), &c);
                let fd = (fp - fm) / (2.0 * h);
                let analytic = if idx < n_w {
                    pg.weight.data()[idx]
                } else {
                    pg.bias[idx - n_w]
                };
                let scale = fd.abs().max(1.0);
                assert!(
                    (analytic - fd).abs() / scale <= tol,
                    "layer {li} param {idx}: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn linear_identity_forward() {
        let layer = Layer::Linear { weight: Matrix::identity(3), bias: vec![0.0; 3] };
        let mut net = Network::new(Shape::Dense(3), vec![layer]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn linear_plus_normalize() {
        let layers = vec![
            Layer::Linear { weight: Matrix::identity(2), bias: vec![0.0; 2] },
            Layer::L2NormalizeRows,
        ];
        let mut net = Network::new(Shape::Dense(2), layers).unwrap();
        let y = net.forward(&Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap();
        assert!((y.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((y.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_straightline_reevaluation() {
        let mut rng = Rng::new(14);
        let mut net = Network::new(
            Shape::Dense(4),
            vec![
                Layer::linear(4, 6, &mut rng),
                Layer::Tanh,
                Layer::linear(6, 3, &mut rng),
                Layer::L2NormalizeRows,
            ],
        )
        .unwrap();
        let x = probe_coeffs(5, 4, &mut rng);
        let y = net.forward(&x).unwrap();

        // Independent straight-line evaluation with plain loops.
        let (w0, b0) = match &net.layers()[0] {
            Layer::Linear { weight, bias } => (weight.clone(), bias.clone()),
            _ => unreachable!(),
        };
        let (w1, b1) = match &net.layers()[2] {
            Layer::Linear { weight, bias } => (weight.clone(), bias.clone()),
            _ => unreachable!(),
        };
        for r in 0..5 {
            let mut hidden = vec![0.0; 6];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut acc = b0[j];
                for i in 0..4 {
                    acc += x.get(r, i) * w0.get(i, j);
                }
                *h = acc.tanh();
            }
            let mut out = vec![0.0; 3];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = b1[j];
                for (i, h) in hidden.iter().enumerate() {
                    acc += h * w1.get(i, j);
                }
                *o = acc;
            }
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (j, o) in out.iter().enumerate() {
                assert_eq!(y.get(r, j), o / norm, "row {r} col {j}");
            }
        }
    }

    #[test]
    fn forward_rejects_bad_width() {
        let mut rng = Rng::new(1);
        let mut net = Network::embedder_mlp(4, 8, 2, &mut rng);
        let x = Matrix::zeros(3, 5);
        assert!(matches!(net.forward(&x), Err(Error::ShapeError(_))));
    }

    #[test]
    fn backward_before_forward_is_stale() {
        let mut rng = Rng::new(1);
        let net = Network::embedder_mlp(4, 8, 2, &mut rng);
        assert!(matches!(net.backward(&Matrix::zeros(3, 2)), Err(Error::StaleCache)));
    }

    #[test]
    fn backward_after_step_is_stale() {
        let mut rng = Rng::new(1);
        let mut net = Network::embedder_mlp(4, 8, 2, &mut rng);
        let mut sgd = SgdState::new(&net, 0.9, 0.01, 1e-7, 100).unwrap();
        let x = probe_coeffs(3, 4, &mut rng);
        net.forward(&x).unwrap();
        let bp = net.backward(&Matrix::zeros(3, 2)).unwrap();
        sgd.step(&mut net, &bp.params, 0);
        assert!(matches!(net.backward(&Matrix::zeros(3, 2)), Err(Error::StaleCache)));
    }

    #[test]
    fn linear_sum_loss_gradient_is_input_sum() {
        let mut rng = Rng::new(6);
        let mut net = Network::new(Shape::Dense(3), vec![Layer::linear(3, 2, &mut rng)]).unwrap();
        let x = probe_coeffs(4, 3, &mut rng);
        net.forward(&x).unwrap();
        // Loss = sum of outputs: upstream gradient of ones.
        let ones = Matrix::new(4, 2, vec![1.0; 8]).unwrap();
        let bp = net.backward(&ones).unwrap();
        let dw = &bp.params[0].as_ref().unwrap().weight;
        for i in 0..3 {
            let col_sum: f64 = (0..4).map(|r| x.get(r, i)).sum();
            for j in 0..2 {
                assert_eq!(dw.get(i, j), col_sum);
            }
        }
        assert_eq!(bp.params[0].as_ref().unwrap().bias, vec![4.0, 4.0]);
    }

    #[test]
    fn normalize_backward_closed_form() {
        let mut net =
            Network::new(Shape::Dense(2), vec![Layer::L2NormalizeRows]).unwrap();
        net.forward(&Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap();
        let bp = net.backward(&Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        assert!((bp.input_grad.get(0, 0) - 0.128).abs() < 1e-15);
        assert!((bp.input_grad.get(0, 1) + 0.096).abs() < 1e-15);
    }

    #[test]
    fn param_gradients_match_fd_mlp() {
        let mut rng = Rng::new(20);
        let net = Network::new(
            Shape::Dense(5),
            vec![
                Layer::linear(5, 7, &mut rng),
                Layer::ReLU,
                Layer::linear(7, 4, &mut rng),
                Layer::Tanh,
                Layer::linear(4, 3, &mut rng),
                Layer::L2NormalizeRows,
            ],
        )
        .unwrap();
        let x = probe_coeffs(6, 5, &mut rng);
        check_param_grads(&net, &x, 99, 1e-4);
    }

    #[test]
    fn param_gradients_match_fd_conv() {
        let mut rng = Rng::new(25);
        let net = Network::new(
            Shape::Spatial { ch: 2, h: 6, w: 6 },
            vec![
                Layer::conv2d(2, 3, 3, 2, 6, 6, &mut rng),
                Layer::ReLU,
                Layer::Flatten,
                Layer::linear(3 * 2 * 2, 4, &mut rng),
            ],
        )
        .unwrap();
        let x = probe_coeffs(3, 2 * 6 * 6, &mut rng);
        check_param_grads(&net, &x, 7, 1e-4);
    }

    #[test]
    fn input_gradient_matches_fd() {
        let mut rng = Rng::new(31);
        let mut net = Network::embedder_mlp(4, 6, 3, &mut rng);
        let x = probe_coeffs(3, 4, &mut rng);
        let out = net.forward(&x).unwrap();
        let c = probe_coeffs(out.rows(), out.cols(), &mut rng);
        let bp = net.backward(&c).unwrap();
        let h = 1e-5;
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut plus = x.clone();
                plus.set(i, j, plus.get(i, j) + h);
                let mut minus = x.clone();
                minus.set(i, j, minus.get(i, j) - h);
                let fd = (probe_loss(&net.infer(&plus).unwrap(), &c)
                    - probe_loss(&net.infer(&minus).unwrap(), &c))
                    / (2.0 * h);
                let a = bp.input_grad.get(i, j);
                assert!((a - fd).abs() / fd.abs().max(1.0) <= 1e-4, "{a} vs {fd}");
            }
        }
    }

    #[test]
    fn normalize_invariant_to_row_scaling() {
        let mut net =
            Network::new(Shape::Dense(3), vec![Layer::L2NormalizeRows]).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![5.0, 0.0, 1.0]]).unwrap();
        let y = net.forward(&x).unwrap();
        for &c in &[0.5, 3.0, 1e-3] {
            let ys = net.forward(&x.scale(c)).unwrap();
            assert!(y.max_abs_diff(&ys) < 1e-12);
        }
    }

    #[test]
    fn lr_schedule_endpoints() {
        let mut rng = Rng::new(2);
        let net = Network::embedder_mlp(2, 4, 2, &mut rng);
        let sgd = SgdState::new(&net, 0.9, 0.01, 1e-7, 1000).unwrap();
        assert_eq!(sgd.lr(0), 0.01);
        assert_eq!(sgd.lr(500), 0.01);
        assert!((sgd.lr(1000) - 1e-7).abs() < 1e-20);
        // Three-quarter point of linear decay: halfway between base and end.
        let expected = 1e-7 + (0.01 - 1e-7) * 0.5;
        assert!((sgd.lr(750) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_momentum_is_vanilla_gradient_descent() {
        let mut rng = Rng::new(40);
        let base = Network::embedder_mlp(3, 5, 2, &mut rng);
        let x = probe_coeffs(4, 3, &mut rng);
        let c = probe_coeffs(4, 2, &mut rng);

        let mut net_a = base.clone();
        let mut sgd = SgdState::new(&net_a, 0.0, 0.01, 1e-7, 100).unwrap();
        net_a.forward(&x).unwrap();
        let bp = net_a.backward(&c).unwrap();
        sgd.step(&mut net_a, &bp.params, 0);

        // Hand-applied theta -= lr * g on a copy.
        let mut net_b = base.clone();
        net_b.forward(&x).unwrap();
        let bp_b = net_b.backward(&c).unwrap();
        for (layer, pg) in net_b.layers.iter_mut().zip(&bp_b.params) {
            let Some(pg) = pg else { continue };
            match layer {
                Layer::Linear { weight, bias } | Layer::Conv2D { weight, bias, .. } => {
                    for (w, g) in weight.data_mut().iter_mut().zip(pg.weight.data()) {
                        *w += -0.01 * g;
                    }
                    for (b, g) in bias.iter_mut().zip(&pg.bias) {
                        *b += -0.01 * g;
                    }
                }
                _ => unreachable!(),
            }
        }
        for (la, lb) in net_a.layers.iter().zip(net_b.layers.iter()) {
            if let (Layer::Linear { weight: wa, bias: ba }, Layer::Linear { weight: wb, bias: bb }) =
                (la, lb)
            {
                assert_eq!(wa, wb);
                assert_eq!(ba, bb);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = Rng::new(77);
            let mut net = Network::embedder_mlp(3, 6, 2, &mut rng);
            let mut sgd = SgdState::new(&net, 0.9, 0.05, 1e-7, 50).unwrap();
            for iter in 0..50 {
                let x = probe_coeffs(4, 3, &mut rng);
                let out = net.forward(&x).unwrap();
                let bp = net.backward(&out).unwrap();
                sgd.step(&mut net, &bp.params, iter);
            }
            match &net.layers[0] {
                Layer::Linear { weight, .. } => weight.data().to_vec(),
                _ => unreachable!(),
            }
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_bitwise() {
        let mut rng = Rng::new(50);
        let net = Network::new(
            Shape::Spatial { ch: 1, h: 5, w: 5 },
            vec![
                Layer::conv2d(1, 2, 3, 1, 5, 5, &mut rng),
                Layer::ReLU,
                Layer::Flatten,
                Layer::linear(2 * 3 * 3, 4, &mut rng),
                Layer::L2NormalizeRows,
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.svmx");
        net.save_checkpoint(&path).unwrap();
        let loaded = Network::load_checkpoint(&path).unwrap();
        assert_eq!(net.param_count, loaded.param_count);
        for (a, b) in net.layers.iter().zip(loaded.layers.iter()) {
            match (a, b) {
                (
                    Layer::Linear { weight: wa, bias: ba },
                    Layer::Linear { weight: wb, bias: bb },
                ) => {
                    assert_eq!(wa, wb);
                    assert_eq!(ba, bb);
                }
                (
                    Layer::Conv2D { weight: wa, bias: ba, .. },
                    Layer::Conv2D { weight: wb, bias: bb, .. },
                ) => {
                    assert_eq!(wa, wb);
                    assert_eq!(ba, bb);
                }
                (Layer::ReLU, Layer::ReLU)
                | (Layer::Tanh, Layer::Tanh)
                | (Layer::Flatten, Layer::Flatten)
                | (Layer::L2NormalizeRows, Layer::L2NormalizeRows) => {}
                other => panic!("layer mismatch after reload: {other:?}"),
            }
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.svmx");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(Network::load_checkpoint(&path).is_err());
    }
}
