//! The handful of differentiable layers the toy networks are built from.
//! Every layer exposes a forward pass, the input vector-Jacobian product, and
//! (for trainable layers) parameter-gradient accumulation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor3;

/// Draws `n` weights from `N(0, scale^2)`, rounded to `f32` precision so
/// randomly initialised models round-trip through the weight file exactly.
pub fn init_weights(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            (v * scale) as f32 as f64
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[cout][cin][k][k]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn random(rng: &mut impl Rng, cin: usize, cout: usize, kernel: usize, stride: usize, gain: f64) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
            weight: init_weights(rng, cout * cin * kernel * kernel, gain / fan_in.sqrt()),
            bias: vec![0.0; cout],
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    #[inline]
    fn w(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((co * self.cin + ci) * self.kernel + ky) * self.kernel + kx]
    }

    /// Output index range `[lo, hi)` whose input coordinate
    /// `o * stride + k - pad` lands inside `[0, n)`.
    #[inline]
    fn valid_range(&self, k: usize, n: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= n-1
        let hi_incl = (n as isize - 1 - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out as isize);
        (lo.min(out as isize) as usize, hi.max(lo.min(out as isize)) as usize)
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        debug_assert_eq!(x.channels, self.cin);
        let (oh, ow) = self.out_size(x.height, x.width);
        let mut out = Tensor3::zeros(self.cout, oh, ow);
        let s = self.stride;
        for co in 0..self.cout {
            let ob = co * oh * ow;
            out.data[ob..ob + oh * ow].fill(self.bias[co]);
            for ci in 0..self.cin {
                let ib = ci * x.height * x.width;
                for ky in 0..self.kernel {
                    let (y0, y1) = self.valid_range(ky, x.height, oh);
                    for kx in 0..self.kernel {
                        let wv = self.w(co, ci, ky, kx);
                        let (x0, x1) = self.valid_range(kx, x.width, ow);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - self.pad;
                            let orow = ob + oy * ow;
                            let irow = ib + iy * x.width;
                            for ox in x0..x1 {
                                let ix = ox * s + kx - self.pad;
                                out.data[orow + ox] += wv * x.data[irow + ix];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Gradient with respect to the input, given the output gradient.
    pub fn backward_input(&self, in_h: usize, in_w: usize, grad_out: &Tensor3) -> Tensor3 {
        let (oh, ow) = (grad_out.height, grad_out.width);
        let mut gin = Tensor3::zeros(self.cin, in_h, in_w);
        let s = self.stride;
        for co in 0..self.cout {
            let ob = co * oh * ow;
            for ci in 0..self.cin {
                let ib = ci * in_h * in_w;
                for ky in 0..self.kernel {
                    let (y0, y1) = self.valid_range(ky, in_h, oh);
                    for kx in 0..self.kernel {
                        let wv = self.w(co, ci, ky, kx);
                        let (x0, x1) = self.valid_range(kx, in_w, ow);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - self.pad;
                            let orow = ob + oy * ow;
                            let irow = ib + iy * in_w;
                            for ox in x0..x1 {
                                let ix = ox * s + kx - self.pad;
                                gin.data[irow + ix] += wv * grad_out.data[orow + ox];
                            }
                        }
                    }
                }
            }
        }
        gin
    }

    /// Accumulates weight and bias gradients into `gw` / `gb`.
    pub fn accumulate_grads(&self, x: &Tensor3, grad_out: &Tensor3, gw: &mut [f64], gb: &mut [f64]) {
        let (oh, ow) = (grad_out.height, grad_out.width);
        let s = self.stride;
        for co in 0..self.cout {
            let ob = co * oh * ow;
            gb[co] += grad_out.data[ob..ob + oh * ow].iter().sum::<f64>();
            for ci in 0..self.cin {
                let ib = ci * x.height * x.width;
                for ky in 0..self.kernel {
                    let (y0, y1) = self.valid_range(ky, x.height, oh);
                    for kx in 0..self.kernel {
                        let (x0, x1) = self.valid_range(kx, x.width, ow);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy * s + ky - self.pad;
                            let orow = ob + oy * ow;
                            let irow = ib + iy * x.width;
                            for ox in x0..x1 {
                                let ix = ox * s + kx - self.pad;
                                acc += grad_out.data[orow + ox] * x.data[irow + ix];
                            }
                        }
                        gw[((co * self.cin + ci) * self.kernel + ky) * self.kernel + kx] += acc;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub nin: usize,
    pub nout: usize,
    /// `[nout][nin]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn random(rng: &mut impl Rng, nin: usize, nout: usize, gain: f64) -> Self {
        Self {
            nin,
            nout,
            weight: init_weights(rng, nin * nout, gain / (nin as f64).sqrt()),
            bias: vec![0.0; nout],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nout)
            .map(|o| {
                let row = &self.weight[o * self.nin..(o + 1) * self.nin];
                self.bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward_input(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.nin];
        for (o, &go) in grad_out.iter().enumerate() {
            let row = &self.weight[o * self.nin..(o + 1) * self.nin];
            for (gi, &w) in g.iter_mut().zip(row) {
                *gi += go * w;
            }
        }
        g
    }

    pub fn accumulate_grads(&self, x: &[f64], grad_out: &[f64], gw: &mut [f64], gb: &mut [f64]) {
        for (o, &go) in grad_out.iter().enumerate() {
            gb[o] += go;
            for (i, &xi) in x.iter().enumerate() {
                gw[o * self.nin + i] += go * xi;
            }
        }
    }
}

pub fn upsample(x: &Tensor3, f: usize) -> Tensor3 {
    let (c, h, w) = x.shape();
    let mut out = Tensor3::zeros(c, h * f, w * f);
    let ow = w * f;
    for ch in 0..c {
        for oy in 0..h * f {
            let src = (ch * h + oy / f) * w;
            let dst = (ch * h * f + oy) * ow;
            for ox in 0..ow {
                out.data[dst + ox] = x.data[src + ox / f];
            }
        }
    }
    out
}

pub fn upsample_backward(g: &Tensor3, f: usize) -> Tensor3 {
    let (c, oh, ow) = g.shape();
    let (h, w) = (oh / f, ow / f);
    let mut out = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        for oy in 0..oh {
            let dst = (ch * h + oy / f) * w;
            let src = (ch * oh + oy) * ow;
            for ox in 0..ow {
                out.data[dst + ox / f] += g.data[src + ox];
            }
        }
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_t(x: &Tensor3) -> Tensor3 {
    x.map(silu)
}

/// Multiplies `grad` by SiLU' evaluated at the pre-activation `pre`.
pub fn silu_backward(pre: &Tensor3, grad: &Tensor3) -> Tensor3 {
    pre.zip_map(grad, |p, g| g * silu_grad(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(3)
    }

    fn random_tensor(r: &mut impl Rng, c: usize, h: usize, w: usize) -> Tensor3 {
        Tensor3::from_vec(c, h, w, init_weights(r, c * h * w, 1.0)).unwrap()
    }

    // Brute-force convolution used as an oracle for the range-optimised loops.
    fn conv_naive(conv: &Conv2d, x: &Tensor3) -> Tensor3 {
        let (oh, ow) = conv.out_size(x.height, x.width);
        let mut out = Tensor3::zeros(conv.cout, oh, ow);
        for co in 0..conv.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = conv.bias[co];
                    for ci in 0..conv.cin {
                        for ky in 0..conv.kernel {
                            for kx in 0..conv.kernel {
                                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.height && (ix as usize) < x.width {
                                    s += conv.w(co, ci, ky, kx) * x.at(ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    let i = out.idx(co, oy, ox);
                    out.data[i] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let mut r = rng();
        for stride in [1, 2] {
            for k in [1, 3] {
                let mut conv = Conv2d::random(&mut r, 3, 4, k, stride, 1.0);
                conv.bias = init_weights(&mut r, 4, 0.1);
                let x = random_tensor(&mut r, 3, 7, 6);
                let a = conv.forward(&x);
                let b = conv_naive(&conv, &x);
                assert!(a.max_abs_diff(&b) < 1e-12, "stride {stride} k {k}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - b, g> == <x, conv^T g> for the linear part.
        let mut r = rng();
        for stride in [1, 2] {
            let conv = Conv2d::random(&mut r, 2, 3, 3, stride, 1.0);
            let x = random_tensor(&mut r, 2, 8, 8);
            let y = conv.forward(&x);
            let g = random_tensor(&mut r, 3, y.height, y.width);
            let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
            let gx = conv.backward_input(8, 8, &g);
            let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn upsample_adjoint() {
        let mut r = rng();
        let x = random_tensor(&mut r, 2, 3, 4);
        let y = upsample(&x, 4);
        let g = random_tensor(&mut r, 2, 12, 16);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let gx = upsample_backward(&g, 4);
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn silu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
