use ndarray::{Array2, Array4, Axis};
use rand::Rng;

use crate::init;
use crate::param::{Net, Param};

/// 2-D convolution over `(N, C, H, W)` batches with square kernels and zero
/// padding, implemented as im2col + matrix multiply. The per-sample column
/// matrices are cached by `forward` so `backward` reuses them.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param, // (oc, ic, k, k)
    pub bias: Param,   // (oc)
    pub stride: usize,
    pub pad: usize,
    kernel: usize,
    input_shape: Option<[usize; 4]>,
    cols: Vec<Array2<f64>>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            weight: Param::new(init::he_uniform(rng, &[out_ch, in_ch, kernel, kernel], fan_in)),
            bias: Param::new(init::zeros(&[out_ch])),
            stride,
            pad,
            kernel,
            input_shape: None,
            cols: Vec::new(),
        }
    }

    pub fn out_ch(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_ch(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (n, ic, h, w) = x.dim();
        assert_eq!(ic, self.in_ch(), "conv input channel mismatch");
        let (oh, ow) = self.out_hw(h, w);
        let oc = self.out_ch();
        self.input_shape = Some([n, ic, h, w]);
        self.cols.clear();

        let kk = ic * self.kernel * self.kernel;
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((oc, kk))
            .unwrap();
        let mut out = Array4::<f64>::zeros((n, oc, oh, ow));
        for i in 0..n {
            let xs = x.index_axis(Axis(0), i);
            let xs = xs.as_standard_layout();
            let col = im2col(
                xs.as_slice().unwrap(),
                ic,
                h,
                w,
                self.kernel,
                self.stride,
                self.pad,
            );
            let mut y = w2.dot(&col); // (oc, oh*ow)
            for (mut row, b) in y.rows_mut().into_iter().zip(self.bias.value.iter()) {
                row.mapv_inplace(|v| v + b);
            }
            out.index_axis_mut(Axis(0), i)
                .assign(&y.into_shape_with_order((oc, oh, ow)).unwrap());
            self.cols.push(col);
        }
        out
    }

    pub fn backward(&mut self, grad: &Array4<f64>) -> Array4<f64> {
        let [n, ic, h, w] = self.input_shape.expect("backward before forward");
        let (gn, oc, oh, ow) = grad.dim();
        assert_eq!(gn, n);
        assert_eq!(oc, self.out_ch());

        let kk = ic * self.kernel * self.kernel;
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((oc, kk))
            .unwrap()
            .to_owned();
        let mut dw = Array2::<f64>::zeros((oc, kk));
        let mut db = vec![0.0f64; oc];
        let mut dx = Array4::<f64>::zeros((n, ic, h, w));
        for i in 0..n {
            let gs = grad.index_axis(Axis(0), i);
            let gs = gs.as_standard_layout();
            let g2 = gs
                .view()
                .into_shape_with_order((oc, oh * ow))
                .unwrap()
                .to_owned();
            let col = &self.cols[i];
            dw += &g2.dot(&col.t());
            for (c, row) in g2.rows().into_iter().enumerate() {
                db[c] += row.sum();
            }
            let dcol = w2.t().dot(&g2); // (kk, oh*ow)
            let mut dxs = dx.index_axis_mut(Axis(0), i);
            col2im(
                dxs.as_slice_mut().unwrap(),
                &dcol,
                ic,
                h,
                w,
                self.kernel,
                self.stride,
                self.pad,
            );
        }
        self.weight.grad += &dw.into_shape_with_order(self.weight.value.raw_dim()).unwrap();
        for (g, d) in self.bias.grad.iter_mut().zip(db) {
            *g += d;
        }
        dx
    }
}

impl Net for Conv2d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// Unfold one `(C, H, W)` sample into a `(C*k*k, OH*OW)` column matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut col = Array2::<f64>::zeros((c * k * k, oh * ow));
    let cs = col.as_slice_mut().unwrap();
    for ci in 0..c {
        let xplane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = iy as usize * w;
                    let dst = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cs[dst + ox] = xplane[src + ix as usize];
                    }
                }
            }
        }
    }
    col
}

/// Fold a `(C*k*k, OH*OW)` column gradient back onto a `(C, H, W)` sample,
/// accumulating overlaps.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dx: &mut [f64],
    dcol: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let ds = dcol.as_slice().expect("dcol must be standard layout");
    for ci in 0..c {
        let plane = ci * h * w;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = plane + iy as usize * w;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[dst + ix as usize] += ds[src + ox];
                    }
                }
            }
        }
    }
}

/// Nearest-neighbour 2x spatial upsampling.
#[derive(Debug, Clone, Default)]
pub struct Upsample2x;

impl Upsample2x {
    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let mut out = Array4::<f64>::zeros((n, c, 2 * h, 2 * w));
        for i in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let v = x[[i, ci, y, xx]];
                        out[[i, ci, 2 * y, 2 * xx]] = v;
                        out[[i, ci, 2 * y, 2 * xx + 1]] = v;
                        out[[i, ci, 2 * y + 1, 2 * xx]] = v;
                        out[[i, ci, 2 * y + 1, 2 * xx + 1]] = v;
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, grad: &Array4<f64>) -> Array4<f64> {
        let (n, c, h2, w2) = grad.dim();
        let (h, w) = (h2 / 2, w2 / 2);
        let mut out = Array4::<f64>::zeros((n, c, h, w));
        for i in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        out[[i, ci, y, xx]] = grad[[i, ci, 2 * y, 2 * xx]]
                            + grad[[i, ci, 2 * y, 2 * xx + 1]]
                            + grad[[i, ci, 2 * y + 1, 2 * xx]]
                            + grad[[i, ci, 2 * y + 1, 2 * xx + 1]];
                    }
                }
            }
        }
        out
    }
}
