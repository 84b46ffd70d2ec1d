use ndarray::{Array1, Array2, Array3, Array4, ArrayBase, ArrayD, Data, Ix1, Ix3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::Tensor;

fn he_normal(fan_in: usize) -> Normal<f64> {
    Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std")
}

/// Valid (unpadded) 2D convolution, NCHW single-sample layout.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// (out_ch, in_ch, kh, kw)
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: (usize, usize),
    pub grad_weight: Array4<f64>,
    pub grad_bias: Array1<f64>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel.0 * kernel.1;
        let dist = he_normal(fan_in);
        let weight =
            Array4::from_shape_simple_fn((out_ch, in_ch, kernel.0, kernel.1), || dist.sample(rng));
        Self {
            grad_weight: Array4::zeros(weight.raw_dim()),
            grad_bias: Array1::zeros(out_ch),
            bias: Array1::zeros(out_ch),
            stride,
            weight,
        }
    }

    pub fn forward<S: Data<Elem = f64>>(&self, input: &ArrayBase<S, Ix3>) -> Array3<f64> {
        let (oc, ic, kh, kw) = self.weight.dim();
        let (c, h, w) = input.dim();
        assert_eq!(c, ic, "conv input channels");
        let (sh, sw) = self.stride;
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        let x = input.as_slice().expect("standard layout");
        let wgt = self.weight.as_slice().expect("standard layout");
        let mut out = vec![0.0; oc * oh * ow];
        // kernel-stationary: the inner loop runs along an output row
        for o in 0..oc {
            let out_o = &mut out[o * oh * ow..][..oh * ow];
            out_o.fill(self.bias[o]);
            let w_o = &wgt[o * ic * kh * kw..][..ic * kh * kw];
            for cc in 0..ic {
                let x_c = &x[cc * h * w..][..h * w];
                let w_c = &w_o[cc * kh * kw..][..kh * kw];
                for u in 0..kh {
                    for v in 0..kw {
                        let wv = w_c[u * kw + v];
                        for y in 0..oh {
                            let in_row = &x_c[(y * sh + u) * w + v..];
                            let out_row = &mut out_o[y * ow..][..ow];
                            if sw == 1 {
                                for (ov, iv) in out_row.iter_mut().zip(&in_row[..ow]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for (xo, ov) in out_row.iter_mut().enumerate() {
                                    *ov += wv * in_row[xo * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
        Array3::from_shape_vec((oc, oh, ow), out).unwrap()
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<S1: Data<Elem = f64>, S2: Data<Elem = f64>>(
        &mut self,
        input: &ArrayBase<S1, Ix3>,
        grad_out: &ArrayBase<S2, Ix3>,
    ) -> Array3<f64> {
        let (oc, ic, kh, kw) = self.weight.dim();
        let (_, h, w) = input.dim();
        let (sh, sw) = self.stride;
        let (_, oh, ow) = grad_out.dim();
        let x = input.as_slice().expect("standard layout");
        let g = grad_out.as_slice().expect("standard layout");
        let wgt = self.weight.as_slice().expect("standard layout");
        let gw = self.grad_weight.as_slice_mut().expect("standard layout");
        let mut grad_in = vec![0.0; ic * h * w];
        for o in 0..oc {
            let g_o = &g[o * oh * ow..][..oh * ow];
            self.grad_bias[o] += g_o.iter().sum::<f64>();
            let w_o = &wgt[o * ic * kh * kw..][..ic * kh * kw];
            let gw_o = &mut gw[o * ic * kh * kw..][..ic * kh * kw];
            for cc in 0..ic {
                let x_c = &x[cc * h * w..][..h * w];
                let gi_c = &mut grad_in[cc * h * w..][..h * w];
                let w_c = &w_o[cc * kh * kw..][..kh * kw];
                let gw_c = &mut gw_o[cc * kh * kw..][..kh * kw];
                for u in 0..kh {
                    for v in 0..kw {
                        let wv = w_c[u * kw + v];
                        let mut acc = 0.0;
                        for y in 0..oh {
                            let g_row = &g_o[y * ow..][..ow];
                            let base = (y * sh + u) * w + v;
                            if sw == 1 {
                                let x_row = &x_c[base..][..ow];
                                let gi_row = &mut gi_c[base..][..ow];
                                for xo in 0..ow {
                                    let gv = g_row[xo];
                                    acc += gv * x_row[xo];
                                    gi_row[xo] += gv * wv;
                                }
                            } else {
                                for (xo, &gv) in g_row.iter().enumerate() {
                                    acc += gv * x_c[base + xo * sw];
                                    gi_c[base + xo * sw] += gv * wv;
                                }
                            }
                        }
                        gw_c[u * kw + v] += acc;
                    }
                }
            }
        }
        Array3::from_shape_vec((ic, h, w), grad_in).unwrap()
    }
}

/// Valid transposed 2D convolution: output is (in-1)*stride + kernel per axis.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    /// (in_ch, out_ch, kh, kw)
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: (usize, usize),
    pub grad_weight: Array4<f64>,
    pub grad_bias: Array1<f64>,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel.0 * kernel.1;
        let dist = he_normal(fan_in);
        let weight =
            Array4::from_shape_simple_fn((in_ch, out_ch, kernel.0, kernel.1), || dist.sample(rng));
        Self {
            grad_weight: Array4::zeros(weight.raw_dim()),
            grad_bias: Array1::zeros(out_ch),
            bias: Array1::zeros(out_ch),
            stride,
            weight,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (_, _, kh, kw) = self.weight.dim();
        ((h - 1) * self.stride.0 + kh, (w - 1) * self.stride.1 + kw)
    }

    pub fn forward<S: Data<Elem = f64>>(&self, input: &ArrayBase<S, Ix3>) -> Array3<f64> {
        let (ic, oc, kh, kw) = self.weight.dim();
        let (c, h, w) = input.dim();
        assert_eq!(c, ic, "deconv input channels");
        let (sh, sw) = self.stride;
        let (oh, ow) = self.output_size(h, w);
        let x = input.as_slice().expect("standard layout");
        let wgt = self.weight.as_slice().expect("standard layout");
        let mut out = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            out[o * oh * ow..][..oh * ow].fill(self.bias[o]);
        }
        for cc in 0..ic {
            let x_c = &x[cc * h * w..][..h * w];
            let w_c = &wgt[cc * oc * kh * kw..][..oc * kh * kw];
            for y in 0..h {
                for xi in 0..w {
                    let val = x_c[y * w + xi];
                    if val == 0.0 {
                        continue;
                    }
                    for o in 0..oc {
                        let out_o = &mut out[o * oh * ow..][..oh * ow];
                        let w_oc = &w_c[o * kh * kw..][..kh * kw];
                        for u in 0..kh {
                            let base = (y * sh + u) * ow + xi * sw;
                            let orow = &mut out_o[base..][..kw];
                            let wr = &w_oc[u * kw..][..kw];
                            for v in 0..kw {
                                orow[v] += val * wr[v];
                            }
                        }
                    }
                }
            }
        }
        Array3::from_shape_vec((oc, oh, ow), out).unwrap()
    }

    pub fn backward<S1: Data<Elem = f64>, S2: Data<Elem = f64>>(
        &mut self,
        input: &ArrayBase<S1, Ix3>,
        grad_out: &ArrayBase<S2, Ix3>,
    ) -> Array3<f64> {
        let (ic, oc, kh, kw) = self.weight.dim();
        let (_, h, w) = input.dim();
        let (sh, sw) = self.stride;
        let (_, oh, ow) = grad_out.dim();
        let x = input.as_slice().expect("standard layout");
        let g = grad_out.as_slice().expect("standard layout");
        let wgt = self.weight.as_slice().expect("standard layout");
        let gw = self.grad_weight.as_slice_mut().expect("standard layout");
        for o in 0..oc {
            self.grad_bias[o] += g[o * oh * ow..][..oh * ow].iter().sum::<f64>();
        }
        let mut grad_in = vec![0.0; ic * h * w];
        for cc in 0..ic {
            let x_c = &x[cc * h * w..][..h * w];
            let gi_c = &mut grad_in[cc * h * w..][..h * w];
            let w_c = &wgt[cc * oc * kh * kw..][..oc * kh * kw];
            let gw_c = &mut gw[cc * oc * kh * kw..][..oc * kh * kw];
            for y in 0..h {
                for xi in 0..w {
                    let val = x_c[y * w + xi];
                    let mut acc = 0.0;
                    for o in 0..oc {
                        let g_o = &g[o * oh * ow..][..oh * ow];
                        let w_oc = &w_c[o * kh * kw..][..kh * kw];
                        let gw_oc = &mut gw_c[o * kh * kw..][..kh * kw];
                        for u in 0..kh {
                            let base = (y * sh + u) * ow + xi * sw;
                            let grow = &g_o[base..][..kw];
                            let wr = &w_oc[u * kw..][..kw];
                            let gwr = &mut gw_oc[u * kw..][..kw];
                            for v in 0..kw {
                                acc += grow[v] * wr[v];
                                gwr[v] += grow[v] * val;
                            }
                        }
                    }
                    gi_c[y * w + xi] = acc;
                }
            }
        }
        Array3::from_shape_vec((ic, h, w), grad_in).unwrap()
    }
}

/// Fully connected layer, y = Wx + b.
#[derive(Debug, Clone)]
pub struct Dense {
    /// (out, in)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
}

impl Dense {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let dist = he_normal(in_dim);
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Self {
            grad_weight: Array2::zeros(weight.raw_dim()),
            grad_bias: Array1::zeros(out_dim),
            bias: Array1::zeros(out_dim),
            weight,
        }
    }

    pub fn forward<S: Data<Elem = f64>>(&self, input: &ArrayBase<S, Ix1>) -> Array1<f64> {
        let (od, id) = self.weight.dim();
        let x = input.as_slice().expect("standard layout");
        let wgt = self.weight.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(od);
        for o in 0..od {
            let wr = &wgt[o * id..][..id];
            let mut acc = self.bias[o];
            for i in 0..id {
                acc += wr[i] * x[i];
            }
            out.push(acc);
        }
        Array1::from_vec(out)
    }

    pub fn backward<S1: Data<Elem = f64>, S2: Data<Elem = f64>>(
        &mut self,
        input: &ArrayBase<S1, Ix1>,
        grad_out: &ArrayBase<S2, Ix1>,
    ) -> Array1<f64> {
        let (od, id) = self.weight.dim();
        let x = input.as_slice().expect("standard layout");
        let g = grad_out.as_slice().expect("standard layout");
        let wgt = self.weight.as_slice().expect("standard layout");
        let gw = self.grad_weight.as_slice_mut().expect("standard layout");
        let mut grad_in = vec![0.0; id];
        for o in 0..od {
            let gv = g[o];
            self.grad_bias[o] += gv;
            let wr = &wgt[o * id..][..id];
            let gwr = &mut gw[o * id..][..id];
            if gv == 0.0 {
                continue;
            }
            for i in 0..id {
                gwr[i] += gv * x[i];
                grad_in[i] += gv * wr[i];
            }
        }
        Array1::from_vec(grad_in)
    }
}

/// Dueling head: q[a] = value + adv[a] - mean(adv).
#[derive(Debug, Clone)]
pub struct Dueling {
    pub value: Dense,
    pub advantage: Dense,
}

impl Dueling {
    pub fn new<R: Rng>(in_dim: usize, actions: usize, rng: &mut R) -> Self {
        Self {
            value: Dense::new(in_dim, 1, rng),
            advantage: Dense::new(in_dim, actions, rng),
        }
    }

    pub fn forward<S: Data<Elem = f64>>(&self, input: &ArrayBase<S, Ix1>) -> Array1<f64> {
        let v = self.value.forward(input)[0];
        let adv = self.advantage.forward(input);
        let mean = adv.sum() / adv.len() as f64;
        adv.mapv(|a| v + a - mean)
    }

    pub fn backward<S1: Data<Elem = f64>, S2: Data<Elem = f64>>(
        &mut self,
        input: &ArrayBase<S1, Ix1>,
        grad_out: &ArrayBase<S2, Ix1>,
    ) -> Array1<f64> {
        let n = grad_out.len() as f64;
        let gsum = grad_out.sum();
        let grad_v = Array1::from_elem(1, gsum);
        let grad_adv = grad_out.mapv(|g| g - gsum / n);
        let mut grad_in = self.value.backward(input, &grad_v);
        grad_in += &self.advantage.backward(input, &grad_adv);
        grad_in
    }
}

/// One pipeline stage. Activation layers carry no parameters.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    Dense(Dense),
    Dueling(Dueling),
    Relu,
    Elu,
    /// 3D (c,h,w) -> 1D
    Flatten,
    /// 1D -> 3D (c,h,w)
    Reshape(usize, usize, usize),
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn as3(t: &Tensor) -> ndarray::ArrayView3<'_, f64> {
    t.view().into_dimensionality::<Ix3>().expect("3d tensor")
}

fn as1(t: &Tensor) -> ndarray::ArrayView1<'_, f64> {
    t.view().into_dimensionality::<Ix1>().expect("1d tensor")
}

impl Layer {
    pub fn forward(&self, input: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.forward(&as3(input)).into_dyn(),
            Layer::ConvT(l) => l.forward(&as3(input)).into_dyn(),
            Layer::Dense(l) => l.forward(&as1(input)).into_dyn(),
            Layer::Dueling(l) => l.forward(&as1(input)).into_dyn(),
            Layer::Relu => input.mapv(|x| x.max(0.0)),
            Layer::Elu => input.mapv(elu),
            Layer::Flatten => {
                let flat = input.as_slice().expect("standard layout").to_vec();
                ArrayD::from_shape_vec(ndarray::IxDyn(&[flat.len()]), flat).unwrap()
            }
            Layer::Reshape(c, h, w) => {
                let flat = input.as_slice().expect("standard layout").to_vec();
                ArrayD::from_shape_vec(ndarray::IxDyn(&[*c, *h, *w]), flat).unwrap()
            }
        }
    }

    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.backward(&as3(input), &as3(grad_out)).into_dyn(),
            Layer::ConvT(l) => l.backward(&as3(input), &as3(grad_out)).into_dyn(),
            Layer::Dense(l) => l.backward(&as1(input), &as1(grad_out)).into_dyn(),
            Layer::Dueling(l) => l.backward(&as1(input), &as1(grad_out)).into_dyn(),
            Layer::Relu => {
                let mut g = grad_out.clone();
                ndarray::Zip::from(&mut g).and(input).for_each(|g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
                g
            }
            Layer::Elu => {
                let mut g = grad_out.clone();
                ndarray::Zip::from(&mut g).and(input).for_each(|g, &x| {
                    if x <= 0.0 {
                        *g *= x.exp();
                    }
                });
                g
            }
            Layer::Flatten => {
                let flat = grad_out.as_slice().expect("standard layout").to_vec();
                ArrayD::from_shape_vec(input.raw_dim(), flat).unwrap()
            }
            Layer::Reshape(..) => {
                let flat = grad_out.as_slice().expect("standard layout").to_vec();
                ArrayD::from_shape_vec(input.raw_dim(), flat).unwrap()
            }
        }
    }
}
