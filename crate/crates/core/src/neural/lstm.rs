use rand::Rng;

use super::layers::sigmoid;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// LSTM cell. `weight` is `[4H, I + H]` acting on `[x; h]`, rows grouped as
/// input gate, forget gate, output gate, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Values kept from one step for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCellParams {
    /// Every weight and bias zero.
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[4 * hidden_size, input_size + hidden_size]),
            bias: Tensor::zeros(&[4 * hidden_size]),
        }
    }

    /// Zero weights with the forget-gate bias at 1.
    pub fn with_forget_bias(input_size: usize, hidden_size: usize) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        p.bias.data_mut()[hidden_size..2 * hidden_size].fill(1.0);
        p
    }

    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let (rows, cols) = (4 * hidden_size, input_size + hidden_size);
        let mut p = Self::with_forget_bias(input_size, hidden_size);
        p.weight = Tensor::glorot(&[rows, cols], cols, rows, rng);
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[1] - self.hidden_size()
    }

    pub fn forward_step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
        let (n_in, n_h) = (self.input_size(), self.hidden_size());
        if x.len() != n_in || h.len() != n_h || c.len() != n_h {
            return Err(Error::Shape(format!(
                "LSTM cell {n_in}->{n_h} got x {}, h {}, c {}",
                x.len(),
                h.len(),
                c.len()
            )));
        }
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let cols = xh.len();
        let w = self.weight.data();
        let z: Vec<f64> = self
            .bias
            .data()
            .iter()
            .enumerate()
            .map(|(r, b)| b + w[r * cols..(r + 1) * cols].iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let i: Vec<f64> = z[..n_h].iter().map(|v| sigmoid(*v)).collect();
        let f: Vec<f64> = z[n_h..2 * n_h].iter().map(|v| sigmoid(*v)).collect();
        let o: Vec<f64> = z[2 * n_h..3 * n_h].iter().map(|v| sigmoid(*v)).collect();
        let g: Vec<f64> = z[3 * n_h..].iter().map(|v| v.tanh()).collect();
        let c_new: Vec<f64> = (0..n_h).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..n_h).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmStepCache {
            xh,
            i,
            f,
            o,
            g,
            c_prev: c.to_vec(),
            tanh_c,
        };
        Ok((h_new, c_new, cache))
    }

    /// Given `dL/dh'` and `dL/dc'`, accumulates parameter gradients and
    /// returns `(dL/dx, dL/dh, dL/dc)` for the step's inputs.
    pub fn backward_step(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut LstmCellParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n_h = self.hidden_size();
        let cols = cache.xh.len();
        let mut dz = vec![0.0; 4 * n_h];
        let mut dc_prev = vec![0.0; n_h];
        for k in 0..n_h {
            let (i, f, o, g, tc) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k], cache.tanh_c[k]);
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dct * g * i * (1.0 - i);
            dz[n_h + k] = dct * cache.c_prev[k] * f * (1.0 - f);
            dz[2 * n_h + k] = dh[k] * tc * o * (1.0 - o);
            dz[3 * n_h + k] = dct * i * (1.0 - g * g);
            dc_prev[k] = dct * f;
        }
        let w = self.weight.data();
        let mut dxh = vec![0.0; cols];
        {
            let gw = grad.weight.data_mut();
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = r * cols;
                for j in 0..cols {
                    gw[row + j] += d * cache.xh[j];
                    dxh[j] += w[row + j] * d;
                }
            }
        }
        for (g, d) in grad.bias.data_mut().iter_mut().zip(&dz) {
            *g += d;
        }
        let dh_prev = dxh.split_off(self.input_size());
        (dxh, dh_prev, dc_prev)
    }
}

/// One LSTM step: `(h', c')` from input `x` and state `(h, c)`.
pub fn lstm_step(p: &LstmCellParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (h, c, _) = p.forward_step(x, h, c)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_stays_at_zero() {
        let p = LstmCellParams::zeros(3, 4);
        let (h, c) = lstm_step(&p, &[1.0, 2.0, 3.0], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn forget_bias_scales_cell() {
        let p = LstmCellParams::with_forget_bias(2, 3);
        let (_, c) = lstm_step(&p, &[0.0; 2], &[0.0; 3], &[1.0; 3]).unwrap();
        for v in c {
            assert!((v - 0.7310585786300049).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let p = LstmCellParams::zeros(2, 3);
        assert!(matches!(lstm_step(&p, &[0.0; 3], &[0.0; 3], &[0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(lstm_step(&p, &[0.0; 2], &[0.0; 2], &[0.0; 3]), Err(Error::Shape(_))));
    }
}
