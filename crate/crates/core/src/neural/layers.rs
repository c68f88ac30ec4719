use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for either sign.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].ln()
}

/// Fully connected layer `y = W x + b`, `W` shaped `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::glorot(&[output, input], input, output, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.input_size();
        if x.len() != n {
            return Err(Error::Shape(format!("dense layer expects {n} inputs, got {}", x.len())));
        }
        let w = self.weight.data();
        Ok(self
            .bias
            .data()
            .iter()
            .enumerate()
            .map(|(o, b)| b + w[o * n..(o + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// Accumulates parameter gradients into `grad`, returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let n = self.input_size();
        let w = self.weight.data();
        let mut dx = vec![0.0; n];
        {
            let gw = grad.weight.data_mut();
            for (o, &d) in dy.iter().enumerate() {
                for i in 0..n {
                    gw[o * n + i] += d * x[i];
                    dx[i] += w[o * n + i] * d;
                }
            }
        }
        for (g, d) in grad.bias.data_mut().iter_mut().zip(dy) {
            *g += d;
        }
        dx
    }
}

/// Square-kernel convolution with zero "same" padding, weights `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn zeros(input: usize, output: usize, kernel: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input, kernel, kernel]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, kernel: usize, rng: &mut R) -> Self {
        let k2 = kernel * kernel;
        Self {
            weight: Tensor::glorot(&[output, input, kernel, kernel], input * k2, output * k2, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Visits every `(o, c, ky, kx)` tap with the valid output row/column
    /// ranges for which the shifted input stays inside the image.
    fn for_each_tap(&self, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize, usize, (usize, usize), (usize, usize))) {
        let (co, ci, k) = (self.out_channels(), self.in_channels(), self.kernel());
        let p = k / 2;
        for o in 0..co {
            for c in 0..ci {
                for ky in 0..k {
                    let y0 = p.saturating_sub(ky);
                    let y1 = (h + p).saturating_sub(ky).min(h);
                    for kx in 0..k {
                        let x0 = p.saturating_sub(kx);
                        let x1 = (w + p).saturating_sub(kx).min(w);
                        if y1 <= y0 || x1 <= x0 {
                            continue;
                        }
                        let widx = ((o * ci + c) * k + ky) * k + kx;
                        f(o, c, ky, kx, widx, (y0, y1), (x0, x1));
                    }
                }
            }
        }
    }

    /// `input` is `[in, h, w]`; output is `[out, h, w]`.
    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
        let ci = self.in_channels();
        if input.len() != ci * h * w {
            return Err(Error::Shape(format!(
                "conv expects {ci}x{h}x{w} input, got {} values",
                input.len()
            )));
        }
        let hw = h * w;
        let p = self.kernel() / 2;
        let mut out = vec![0.0; self.out_channels() * hw];
        for (o, b) in self.bias.data().iter().enumerate() {
            out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *b);
        }
        let wt = self.weight.data();
        self.for_each_tap(h, w, |o, c, ky, kx, widx, (y0, y1), (x0, x1)| {
            let wv = wt[widx];
            for y in y0..y1 {
                let src = c * hw + (y + ky - p) * w + x0 + kx - p;
                let dst = o * hw + y * w;
                let (orow, irow) = (&mut out[dst + x0..dst + x1], &input[src..src + x1 - x0]);
                for (a, b) in orow.iter_mut().zip(irow) {
                    *a += wv * b;
                }
            }
        });
        Ok(out)
    }

    /// Accumulates parameter gradients; returns `dL/dinput` when asked.
    pub fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        dout: &[f64],
        grad: &mut Conv2d,
        input_grad: bool,
    ) -> Option<Vec<f64>> {
        let hw = h * w;
        let p = self.kernel() / 2;
        let wt = self.weight.data();
        let mut din = input_grad.then(|| vec![0.0; self.in_channels() * hw]);
        {
            let gw = grad.weight.data_mut();
            self.for_each_tap(h, w, |o, c, ky, kx, widx, (y0, y1), (x0, x1)| {
                let wv = wt[widx];
                let mut acc = 0.0;
                for y in y0..y1 {
                    let src = c * hw + (y + ky - p) * w + x0 + kx - p;
                    let dst = o * hw + y * w;
                    let drow = &dout[dst + x0..dst + x1];
                    for (a, b) in drow.iter().zip(&input[src..src + x1 - x0]) {
                        acc += a * b;
                    }
                    if let Some(din) = din.as_mut() {
                        for (a, b) in din[src..src + x1 - x0].iter_mut().zip(drow) {
                            *a += wv * b;
                        }
                    }
                }
                gw[widx] += acc;
            });
        }
        for (o, g) in grad.bias.data_mut().iter_mut().enumerate() {
            *g += dout[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        din
    }
}

/// 2×2 max-pool with stride 2 over `[c, h, w]`; returns the pooled map and
/// the winning input index per output (first maximum in raster order).
pub fn max_pool2(input: &[f64], c: usize, h: usize, w: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) || input.len() != c * h * w {
        return Err(Error::Shape(format!("cannot 2x2-pool a {c}x{h}x{w} map")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * x;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2_backward(dout: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut din = vec![0.0; input_len];
    for (d, &i) in dout.iter().zip(argmax) {
        din[i] += d;
    }
    din
}
