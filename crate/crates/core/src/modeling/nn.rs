//! Layers with explicit forward and backward passes.
//!
//! Feature maps are single samples in CHW layout. Gradients accumulate into
//! each [`Param`] until the optimizer consumes them, so a batch is processed
//! one sample at a time.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    /// He-normal initialisation for a layer with `fan_in` inputs.
    pub fn he_normal(n: usize, fan_in: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).unwrap();
        Self {
            value: (0..n).map(|_| normal.sample(rng)).collect(),
            grad: vec![0.0; n],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// A CHW feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Feature {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn new(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "feature buffer does not match its shape");
        Self { c, h, w, data }
    }

    pub fn relu(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self
    }

    /// Zeroes `grad` where the forward activation was clipped.
    pub fn relu_backward(activated: &Feature, mut grad: Feature) -> Feature {
        for (g, a) in grad.data.iter_mut().zip(&activated.data) {
            if *a <= 0.0 {
                *g = 0.0;
            }
        }
        grad
    }
}

/// `c = a·b` (or `c += a·b`) for row-major buffers, with optional
/// transposition of either operand as stored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_transposed: bool,
    b: &[f32],
    b_transposed: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the assertion above bounds every index the strides can reach.
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

/// Square-kernel 2-D convolution via im2col.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_c × (in_c·k·k)`, row-major.
    pub weight: Param,
    pub bias: Param,
}

/// What the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f32>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_c * kernel * kernel;
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            pad: kernel / 2,
            weight: Param::he_normal(out_c * fan_in, fan_in, rng),
            bias: Param::zeros(out_c),
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Feature, oh: usize, ow: usize) -> Vec<f32> {
        let k = self.kernel;
        let p = oh * ow;
        let mut cols = vec![0.0f32; self.in_c * k * k * p];
        for c in 0..self.in_c {
            let plane = &x.data[c * x.h * x.w..(c + 1) * x.h * x.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * p;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], (c_in, h, w): (usize, usize, usize), (oh, ow): (usize, usize)) -> Feature {
        let k = self.kernel;
        let p = oh * ow;
        let mut dx = Feature::zeros(c_in, h, w);
        for c in 0..c_in {
            let plane = &mut dx.data[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * p;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, v) in src.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Feature) -> (Feature, ConvCache) {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let cols = self.im2col(x, oh, ow);
        let p = oh * ow;
        let ckk = self.in_c * self.kernel * self.kernel;
        let mut out = Feature::zeros(self.out_c, oh, ow);
        for (o, b) in self.bias.value.iter().enumerate() {
            out.data[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = *b);
        }
        gemm(
            self.out_c,
            ckk,
            p,
            &self.weight.value,
            false,
            &cols,
            false,
            &mut out.data,
            true,
        );
        (
            out,
            ConvCache {
                cols,
                in_shape: (x.c, x.h, x.w),
                out_hw: (oh, ow),
            },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache, dy: &Feature) -> Feature {
        let p = cache.out_hw.0 * cache.out_hw.1;
        let ckk = self.in_c * self.kernel * self.kernel;
        for o in 0..self.out_c {
            self.bias.grad[o] += dy.data[o * p..(o + 1) * p].iter().sum::<f32>();
        }
        gemm(
            self.out_c,
            p,
            ckk,
            &dy.data,
            false,
            &cache.cols,
            true,
            &mut self.weight.grad,
            true,
        );
        let mut dcols = vec![0.0f32; ckk * p];
        gemm(
            ckk,
            self.out_c,
            p,
            &self.weight.value,
            true,
            &dy.data,
            false,
            &mut dcols,
            false,
        );
        self.col2im(&dcols, cache.in_shape, cache.out_hw)
    }
}

/// Fully connected layer, `y = W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(in_f: usize, out_f: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0f32, (1.0 / in_f as f32).sqrt()).unwrap();
        Self {
            in_f,
            out_f,
            weight: Param {
                value: (0..in_f * out_f).map(|_| normal.sample(rng)).collect(),
                grad: vec![0.0; in_f * out_f],
            },
            bias: Param::zeros(out_f),
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        (0..self.out_f)
            .map(|o| {
                let row = &self.weight.value[o * self.in_f..(o + 1) * self.in_f];
                self.bias.value[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>()
            })
            .collect()
    }

    pub fn backward(&mut self, x: &[f32], dy: &[f32]) -> Vec<f32> {
        let mut dx = vec![0.0f32; self.in_f];
        for (o, g) in dy.iter().enumerate() {
            self.bias.grad[o] += g;
            let row = o * self.in_f..(o + 1) * self.in_f;
            for ((wg, w), (xi, dxi)) in self.weight.grad[row.clone()]
                .iter_mut()
                .zip(&self.weight.value[row])
                .zip(x.iter().zip(dx.iter_mut()))
            {
                *wg += g * xi;
                *dxi += g * w;
            }
        }
        dx
    }
}

pub fn global_avg_pool(x: &Feature) -> Vec<f32> {
    let hw = (x.h * x.w) as f32;
    x.data.chunks(x.h * x.w).map(|p| p.iter().sum::<f32>() / hw).collect()
}

pub fn global_avg_pool_backward(dy: &[f32], (c, h, w): (usize, usize, usize)) -> Feature {
    let hw = (h * w) as f32;
    let mut data = Vec::with_capacity(c * h * w);
    for g in dy {
        data.extend(std::iter::repeat_n(g / hw, h * w));
    }
    Feature::new(c, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution, independent of im2col + gemm.
    fn conv_naive(conv: &Conv2d, x: &Feature) -> Feature {
        let (oh, ow) = conv.out_hw(x.h, x.w);
        let k = conv.kernel;
        let mut out = Feature::zeros(conv.out_c, oh, ow);
        for o in 0..conv.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = conv.bias.value[o];
                    for c in 0..conv.in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    s += conv.weight.value[((o * conv.in_c + c) * k + ky) * k + kx]
                                        * x.data[(c * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    fn random_feature(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Feature {
        Feature::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let mut conv = Conv2d::new(3, 4, 3, stride, &mut rng);
            conv.bias.value = vec![0.1, -0.2, 0.3, 0.0];
            let x = random_feature(3, 7, 6, &mut rng);
            let (fast, _) = conv.forward(&x);
            let slow = conv_naive(&conv, &x);
            assert_eq!((fast.c, fast.h, fast.w), (slow.c, slow.h, slow.w));
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    /// Central finite differences of `sum(out ⊙ probe)`.
    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(2, 3, 3, 2, &mut rng);
        let x = random_feature(2, 5, 5, &mut rng);
        let (y, cache) = conv.forward(&x);
        let probe = random_feature(y.c, y.h, y.w, &mut rng);
        let loss = |conv: &Conv2d, x: &Feature| -> f64 {
            conv_naive(conv, x)
                .data
                .iter()
                .zip(&probe.data)
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        let dx = conv.backward(&cache, &probe);
        let eps = 1e-2f32;
        for i in [0, 7, 13, 31, 49] {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps as f64);
            assert!((fd - dx.data[i] as f64).abs() < 1e-3, "dx[{i}]: {fd} vs {}", dx.data[i]);
        }
        for i in [0, 5, 20, 53] {
            let mut cp = conv.clone();
            cp.weight.value[i] += eps;
            let mut cm = conv.clone();
            cm.weight.value[i] -= eps;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps as f64);
            assert!((fd - conv.weight.grad[i] as f64).abs() < 1e-3, "dw[{i}]");
        }
        let fd_bias: f64 = probe.data[..y.h * y.w].iter().map(|v| *v as f64).sum();
        assert!((fd_bias - conv.bias.grad[0] as f64).abs() < 1e-4);
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::new(4, 2, &mut rng);
        let x = vec![0.5, -1.0, 2.0, 0.25];
        let dy = vec![1.0, -2.0];
        let dx = lin.backward(&x, &dy);
        for i in 0..4 {
            let expect = lin.weight.value[i] * 1.0 + lin.weight.value[4 + i] * -2.0;
            assert!((dx[i] - expect).abs() < 1e-6);
        }
        assert_eq!(lin.bias.grad, vec![1.0, -2.0]);
        assert!((lin.weight.grad[4 + 2] - (-4.0)).abs() < 1e-6);
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn pooling_round_trip() {
        let x = Feature::new(2, 1, 2, vec![1.0, 3.0, -2.0, 2.0]);
        assert_eq!(global_avg_pool(&x), vec![2.0, 0.0]);
        let g = global_avg_pool_backward(&[2.0, 4.0], (2, 1, 2));
        assert_eq!(g.data, vec![1.0, 1.0, 2.0, 2.0]);
    }
}
