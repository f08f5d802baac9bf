//! Layers with hand-written backward passes. Each layer caches what its
//! backward pass needs during a training forward; `infer` is the read-only
//! evaluation path.

use super::tensor::{gemm, Matrix, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.into(),
            shape,
            value: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// A non-trainable state tensor (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<(Vec<f64>, (usize, usize, usize, usize))>,
}

impl Conv2d {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            weight: Param::zeros(format!("{name}.weight"), vec![out_ch, in_ch, kernel, kernel]),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Tensor) -> (Vec<f64>, usize, usize) {
        let (oh, ow) = self.out_hw(x.h, x.w);
        let k = self.kernel;
        let l = x.n * oh * ow;
        let mut cols = vec![0.0; x.c * k * k * l];
        for c in 0..x.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * l;
                    for n in 0..x.n {
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let dst = row + (n * oh + oy) * ow;
                            let src = x.idx(c, n, iy as usize, 0);
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < x.w as isize {
                                    cols[dst + ox] = x.data[src + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        (cols, oh, ow)
    }

    fn apply(&self, x: &Tensor) -> (Tensor, Vec<f64>) {
        assert_eq!(x.c, self.in_ch, "{}: channel mismatch", self.weight.name);
        let (cols, oh, ow) = self.im2col(x);
        let kk = self.in_ch * self.kernel * self.kernel;
        let l = x.n * oh * ow;
        let mut y = Tensor::zeros(self.out_ch, x.n, oh, ow);
        gemm(self.out_ch, kk, l, 1.0, &self.weight.value, false, &cols, false, 0.0, &mut y.data);
        (y, cols)
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        self.apply(x).0
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (y, cols) = self.apply(x);
        self.cache = Some((cols, (x.c, x.n, x.h, x.w)));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (cols, (c, n, h, w)) = self.cache.take().expect("conv backward without forward");
        let k = self.kernel;
        let kk = c * k * k;
        let l = dy.plane();
        gemm(self.out_ch, l, kk, 1.0, &dy.data, false, &cols, true, 1.0, &mut self.weight.grad);
        let mut dcols = cols;
        gemm(kk, self.out_ch, l, 1.0, &self.weight.value, true, &dy.data, false, 0.0, &mut dcols);
        let (oh, ow) = (dy.h, dy.w);
        let mut dx = Tensor::zeros(c, n, h, w);
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * l;
                    for ni in 0..n {
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = row + (ni * oh + oy) * ow;
                            let dst = dx.idx(ci, ni, iy as usize, 0);
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dx.data[dst + ix as usize] += dcols[src + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Vec<f64>, Vec<f64>)>,
}

impl BatchNorm2d {
    pub fn new(name: &str, ch: usize) -> Self {
        let mut gamma = Param::zeros(format!("{name}.weight"), vec![ch]);
        gamma.value.fill(1.0);
        BatchNorm2d {
            gamma,
            beta: Param::zeros(format!("{name}.bias"), vec![ch]),
            running_mean: Buffer {
                name: format!("{name}.running_mean"),
                shape: vec![ch],
                value: vec![0.0; ch],
            },
            running_var: Buffer {
                name: format!("{name}.running_var"),
                shape: vec![ch],
                value: vec![1.0; ch],
            },
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let m = x.plane();
        let mut y = x.clone();
        for c in 0..x.c {
            let inv = 1.0 / (self.running_var.value[c] + self.eps).sqrt();
            let (g, b, mu) = (self.gamma.value[c], self.beta.value[c], self.running_mean.value[c]);
            for v in &mut y.data[c * m..(c + 1) * m] {
                *v = g * (*v - mu) * inv + b;
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let m = x.plane();
        let mut y = x.clone();
        let mut xhat = vec![0.0; x.data.len()];
        let mut inv_std = vec![0.0; x.c];
        for c in 0..x.c {
            let s = &x.data[c * m..(c + 1) * m];
            let mean = s.iter().sum::<f64>() / m as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = inv;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for i in c * m..(c + 1) * m {
                let xh = (x.data[i] - mean) * inv;
                xhat[i] = xh;
                y.data[i] = g * xh + b;
            }
            let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
            let mom = self.momentum;
            self.running_mean.value[c] = (1.0 - mom) * self.running_mean.value[c] + mom * mean;
            self.running_var.value[c] = (1.0 - mom) * self.running_var.value[c] + mom * unbiased;
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("batchnorm backward without forward");
        let m = dy.plane();
        let mf = m as f64;
        let mut dx = dy.clone();
        for c in 0..dy.c {
            let r = c * m..(c + 1) * m;
            let (sum_dy, sum_dy_xh) = dy.data[r.clone()]
                .iter()
                .zip(&xhat[r.clone()])
                .fold((0.0, 0.0), |(a, b), (d, x)| (a + d, b + d * x));
            self.gamma.grad[c] += sum_dy_xh;
            self.beta.grad[c] += sum_dy;
            let k = self.gamma.value[c] * inv_std[c] / mf;
            for i in r {
                dx.data[i] = k * (mf * dy.data[i] - sum_dy - xhat[i] * sum_dy_xh);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn infer(x: &Tensor) -> Tensor {
        let mut y = x.clone();
        for v in &mut y.data {
            *v = v.max(0.0);
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = Some(x.data.iter().map(|v| *v > 0.0).collect());
        Self::infer(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("relu backward without forward");
        let mut dx = dy.clone();
        for (d, keep) in dx.data.iter_mut().zip(mask) {
            if !keep {
                *d = 0.0;
            }
        }
        dx
    }
}

/// 3x3 max pooling, stride 2, padding 1.
#[derive(Debug, Clone, Default)]
pub struct MaxPool {
    cache: Option<(Vec<usize>, (usize, usize, usize, usize))>,
}

impl MaxPool {
    const K: usize = 3;
    const S: usize = 2;
    const P: usize = 1;

    fn apply(x: &Tensor) -> (Tensor, Vec<usize>) {
        let oh = (x.h + 2 * Self::P - Self::K) / Self::S + 1;
        let ow = (x.w + 2 * Self::P - Self::K) / Self::S + 1;
        let mut y = Tensor::zeros(x.c, x.n, oh, ow);
        let mut arg = vec![0usize; y.data.len()];
        for c in 0..x.c {
            for n in 0..x.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = usize::MAX;
                        for ky in 0..Self::K {
                            let iy = (oy * Self::S + ky) as isize - Self::P as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            for kx in 0..Self::K {
                                let ix = (ox * Self::S + kx) as isize - Self::P as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                let i = x.idx(c, n, iy as usize, ix as usize);
                                if x.data[i] > best || best_i == usize::MAX {
                                    best = x.data[i];
                                    best_i = i;
                                }
                            }
                        }
                        let o = y.idx(c, n, oy, ox);
                        y.data[o] = best;
                        arg[o] = best_i;
                    }
                }
            }
        }
        (y, arg)
    }

    pub fn infer(x: &Tensor) -> Tensor {
        Self::apply(x).0
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (y, arg) = Self::apply(x);
        self.cache = Some((arg, (x.c, x.n, x.h, x.w)));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (arg, (c, n, h, w)) = self.cache.take().expect("maxpool backward without forward");
        let mut dx = Tensor::zeros(c, n, h, w);
        for (o, &i) in arg.iter().enumerate() {
            dx.data[i] += dy.data[o];
        }
        dx
    }
}

/// Global average pooling to an `N x C` feature matrix.
pub fn global_avg_pool(x: &Tensor) -> Matrix {
    let hw = x.h * x.w;
    let mut f = Matrix::zeros(x.n, x.c);
    for c in 0..x.c {
        for n in 0..x.n {
            let start = x.idx(c, n, 0, 0);
            f.data[n * x.c + c] = x.data[start..start + hw].iter().sum::<f64>() / hw as f64;
        }
    }
    f
}

pub fn global_avg_pool_backward(df: &Matrix, c: usize, n: usize, h: usize, w: usize) -> Tensor {
    let hw = (h * w) as f64;
    let mut dx = Tensor::zeros(c, n, h, w);
    for ci in 0..c {
        for ni in 0..n {
            let g = df.data[ni * c + ci] / hw;
            let start = dx.idx(ci, ni, 0, 0);
            dx.data[start..start + h * w].fill(g);
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Matrix>,
}

impl Linear {
    pub fn new(name: &str, input: usize, output: usize) -> Self {
        Linear {
            weight: Param::zeros(format!("{name}.weight"), vec![output, input]),
            bias: Param::zeros(format!("{name}.bias"), vec![output]),
            cache: None,
        }
    }

    pub fn infer(&self, x: &Matrix) -> Matrix {
        let out = self.weight.shape[0];
        let mut y = Matrix::zeros(x.rows, out);
        for i in 0..x.rows {
            y.row_mut(i).copy_from_slice(&self.bias.value);
        }
        gemm(x.rows, x.cols, out, 1.0, &x.data, false, &self.weight.value, true, 1.0, &mut y.data);
        y
    }

    pub fn forward(&mut self, x: &Matrix) -> Matrix {
        self.cache = Some(x.clone());
        self.infer(x)
    }

    pub fn backward(&mut self, dy: &Matrix) -> Matrix {
        let x = self.cache.take().expect("linear backward without forward");
        let (out, inp) = (self.weight.shape[0], self.weight.shape[1]);
        gemm(out, dy.rows, inp, 1.0, &dy.data, true, &x.data, false, 1.0, &mut self.weight.grad);
        for i in 0..dy.rows {
            for (g, d) in self.bias.grad.iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
        let mut dx = Matrix::zeros(dy.rows, inp);
        gemm(dy.rows, out, inp, 1.0, &dy.data, false, &self.weight.value, false, 0.0, &mut dx.data);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(c: usize, n: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor {
        let mut t = Tensor::zeros(c, n, h, w);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    /// Direct-loop convolution as an independent reference.
    fn conv_naive(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = conv.out_hw(x.h, x.w);
        let k = conv.kernel;
        let mut y = Tensor::zeros(conv.out_ch, x.n, oh, ow);
        for o in 0..conv.out_ch {
            for n in 0..x.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for c in 0..x.c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let wv = conv.weight.value[((o * x.c + c) * k + ky) * k + kx];
                                    s += wv * x.data[x.idx(c, n, iy as usize, ix as usize)];
                                }
                            }
                        }
                        let i = y.idx(o, n, oy, ox);
                        y.data[i] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 2, 0), (7, 2, 3)] {
            let mut conv = Conv2d::new("c", 2, 3, k, s, p);
            for (i, v) in conv.weight.value.iter_mut().enumerate() {
                *v = ((i * 31 % 17) as f64 - 8.0) / 10.0;
            }
            let x = tensor(2, 2, 9, 8, |i| ((i * 7 % 13) as f64 - 6.0) / 5.0);
            let got = conv.infer(&x);
            let want = conv_naive(&conv, &x);
            assert_eq!((got.c, got.n, got.h, got.w), (want.c, want.n, want.h, want.w));
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_input_gradient_is_adjoint() {
        // <conv(x), dy> = <x, conv^T(dy)> for a linear map
        let mut conv = Conv2d::new("c", 2, 3, 3, 2, 1);
        for (i, v) in conv.weight.value.iter_mut().enumerate() {
            *v = (i as f64 * 0.7).sin();
        }
        let x = tensor(2, 2, 7, 6, |i| (i as f64 * 0.3).cos());
        let y = conv.forward(&x);
        let dy = tensor(y.c, y.n, y.h, y.w, |i| (i as f64 * 0.9).sin());
        let dx = conv.backward(&dy);
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // weight gradient: <conv_W(x), dy> is linear in W too
        let gw: f64 = conv
            .weight
            .grad
            .iter()
            .zip(&conv.weight.value)
            .map(|(g, w)| g * w)
            .sum();
        assert!((lhs - gw).abs() < 1e-10);
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut bn = BatchNorm2d::new("bn", 2);
        let x = tensor(2, 3, 4, 4, |i| (i as f64).powf(1.3) * 0.1);
        let y = bn.forward(&x);
        let m = y.plane();
        for c in 0..2 {
            let s = &y.data[c * m..(c + 1) * m];
            let mean = s.iter().sum::<f64>() / m as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.value[0] > 0.0);
    }

    #[test]
    fn maxpool_shapes_and_routing() {
        let mut mp = MaxPool::default();
        let x = tensor(1, 1, 4, 4, |i| i as f64);
        let y = mp.forward(&x);
        assert_eq!((y.h, y.w), (2, 2));
        assert_eq!(y.data, vec![5.0, 7.0, 13.0, 15.0]);
        let dx = mp.backward(&tensor(1, 1, 2, 2, |_| 1.0));
        assert_eq!(dx.data.iter().sum::<f64>(), 4.0);
        assert_eq!(dx.data[15], 1.0);
    }

    #[test]
    fn linear_forward_backward() {
        let mut lin = Linear::new("fc", 3, 2);
        lin.weight.value = vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        lin.bias.value = vec![0.5, -0.5];
        let x = Matrix::from_rows(&[vec![1.0, 1.0, 1.0], vec![0.0, 2.0, -1.0]]);
        let y = lin.forward(&x);
        assert_eq!(y.data, vec![6.5, -0.5, 1.5, -1.5]);
        let dx = lin.backward(&Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        assert_eq!(dx.data, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        assert_eq!(lin.bias.grad, vec![1.0, 1.0]);
        assert_eq!(lin.weight.grad, vec![1.0, 1.0, 1.0, 0.0, 2.0, -1.0]);
    }
}
