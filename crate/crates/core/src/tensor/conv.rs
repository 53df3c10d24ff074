use serde::{Deserialize, Serialize};

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Square kernel shorthand.
    pub fn square(kernel: usize, stride: usize, pad: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(Error::Config(format!("kernel and stride must be >= 1: {self:?}")));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("channels must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn param_count(&self) -> usize {
        self.weight_dims().iter().product::<usize>() + self.out_channels
    }

    /// Output `(H', W')` for an `H×W` input, or a dimension error when the
    /// padded input is smaller than the kernel.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            conv_output_extent(h, self.kernel_h, self.stride, self.pad)
                .ok_or_else(|| Error::dim("conv2d", "H", format!(">= {}", self.kernel_h), h + 2 * self.pad))?,
            conv_output_extent(w, self.kernel_w, self.stride, self.pad)
                .ok_or_else(|| Error::dim("conv2d", "W", format!(">= {}", self.kernel_w), w + 2 * self.pad))?,
        ))
    }
}

/// `floor((extent + 2·pad − kernel)/stride) + 1`, or `None` if the kernel does not fit.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn q(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

/// Lays out every receptive field of one sample as a row: `[H'W', C·kh·kw]`.
fn im2col(g: &Geom, x: &[f32], cols: &mut [f32]) {
    let q = g.q();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut cols[(oy * g.ow + ox) * q..(oy * g.ow + ox + 1) * q];
            let mut j = 0;
            for ch in 0..g.c {
                let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        row[j] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            plane[iy as usize * g.w + ix as usize]
                        } else {
                            0.0
                        };
                        j += 1;
                    }
                }
            }
        }
    }
}

fn col2im(g: &Geom, cols: &[f32], dx: &mut [f32]) {
    let q = g.q();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &cols[(oy * g.ow + ox) * q..(oy * g.ow + ox + 1) * q];
            let mut j = 0;
            for ch in 0..g.c {
                let plane = &mut dx[ch * g.h * g.w..(ch + 1) * g.h * g.w];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            plane[iy as usize * g.w + ix as usize] += row[j];
                        }
                        j += 1;
                    }
                }
            }
        }
    }
}

fn geometry(input: &[usize], spec: &ConvSpec) -> Result<Geom> {
    let (oh, ow) = spec.output_hw(input[2], input[3])?;
    Ok(Geom {
        c: input[1],
        h: input[2],
        w: input[3],
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.pad,
        oh,
        ow,
    })
}

fn check_shapes(input: &[usize], weight: &[usize], bias: &[usize], spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    if input.len() != 4 {
        return Err(Error::dim("conv2d", "input rank", 4, input.len()));
    }
    if input[1] != spec.in_channels {
        return Err(Error::dim("conv2d", "input C", spec.in_channels, input[1]));
    }
    if weight != spec.weight_dims() {
        return Err(Error::dim(
            "conv2d",
            "weight",
            format!("{:?}", spec.weight_dims()),
            format!("{weight:?}"),
        ));
    }
    if bias != [spec.out_channels] {
        return Err(Error::dim("conv2d", "bias", spec.out_channels, format!("{bias:?}")));
    }
    Ok(())
}

pub(super) fn backward(
    input: &Tensor,
    weight: &Tensor,
    output: &Tensor,
    spec: &ConvSpec,
    cols: &[Vec<f32>],
    g: &[f32],
    want: [bool; 3],
) -> [Option<Vec<f32>>; 3] {
    let geom = geometry(input.dims(), spec).expect("shapes validated on forward");
    let (n, k, p, q) = (input.dims()[0], spec.out_channels, geom.p(), geom.q());
    let sample_in = geom.c * geom.h * geom.w;
    debug_assert_eq!(output.numel(), n * k * p);

    let mut dx = want[0].then(|| vec![0.0; input.numel()]);
    let mut dw = want[1].then(|| vec![0.0; weight.numel()]);
    let db = want[2].then(|| {
        let mut db = vec![0.0; k];
        for s in 0..n {
            for (ch, d) in db.iter_mut().enumerate() {
                *d += g[(s * k + ch) * p..(s * k + ch + 1) * p].iter().sum::<f32>();
            }
        }
        db
    });

    let mut dcols = vec![0.0; p * q];
    for s in 0..n {
        let gs = &g[s * k * p..(s + 1) * k * p];
        if let Some(dw) = dw.as_mut() {
            // dW[K,Q] += dY[K,P] · cols[P,Q]
            gemm_nn(k, p, q, gs, &cols[s], dw);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[P,Q] = dY[K,P]ᵀ · W[K,Q]
            dcols.iter_mut().for_each(|v| *v = 0.0);
            gemm_tn(p, k, q, gs, weight.data(), &mut dcols);
            col2im(&geom, &dcols, &mut dx[s * sample_in..(s + 1) * sample_in]);
        }
    }
    [dx, dw, db]
}

impl Graph {
    /// Cross-correlation of `input[N,C,H,W]` with `weight[K,C,kh,kw]` plus `bias[K]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        check_shapes(x.dims(), w.dims(), b.dims(), &spec)?;
        let geom = geometry(x.dims(), &spec)?;
        let (n, k, p, q) = (x.dims()[0], spec.out_channels, geom.p(), geom.q());
        let sample_in = geom.c * geom.h * geom.w;

        let mut out = vec![0.0f32; n * k * p];
        let mut all_cols = Vec::with_capacity(n);
        for s in 0..n {
            let mut cols = vec![0.0f32; p * q];
            im2col(&geom, &x.data()[s * sample_in..(s + 1) * sample_in], &mut cols);
            let ys = &mut out[s * k * p..(s + 1) * k * p];
            for (ch, plane) in ys.chunks_mut(p).enumerate() {
                plane.iter_mut().for_each(|v| *v = b.data()[ch]);
            }
            // Y[K,P] += W[K,Q] · cols[P,Q]ᵀ
            gemm_nt(k, q, p, w.data(), &cols, ys);
            all_cols.push(cols);
        }
        let value = Tensor::new(&[n, k, geom.oh, geom.ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
                cols: all_cols,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation, independent of im2col/gemm.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f32> {
        let [n, c, h, wd] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
        let [k, _, kh, kw] = [w.dims()[0], w.dims()[1], w.dims()[2], w.dims()[3]];
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0f64; n * k * oh * ow];
        for s in 0..n {
            for o in 0..k {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[o] as f64;
                        for ch in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as i64 - pad as i64;
                                    let ix = (ox * stride + kx) as i64 - pad as i64;
                                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                        continue;
                                    }
                                    let xv = x.data()[((s * c + ch) * h + iy as usize) * wd + ix as usize];
                                    let wv = w.data()[((o * c + ch) * kh + ky) * kw + kx];
                                    acc += xv as f64 * wv as f64;
                                }
                            }
                        }
                        out[((s * k + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out.into_iter().map(|v| v as f32).collect()
    }

    #[test]
    fn full_scale_first_layer_shape() {
        let spec = ConvSpec::square(11, 4, 0, 3, 96);
        assert_eq!(spec.output_hw(224, 224).unwrap(), (54, 54));
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut g = Graph::new();
        let spec = ConvSpec::square(3, 1, 1, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = g.constant(Tensor::zeros(&[1, 2, 5, 5]));
        let w = g.constant(Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng));
        let b = g.constant(Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let y = g.conv2d(x, w, b, spec).unwrap();
        for (ch, plane) in g.value(y).data().chunks(25).enumerate() {
            assert!(plane.iter().all(|&v| v == [0.5, -1.0, 2.0][ch]));
        }
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 2)] {
            let x = Tensor::uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(&[4, 2, 3, 3], -1.0, 1.0, &mut rng);
            let b = Tensor::uniform(&[4], -1.0, 1.0, &mut rng);
            let want = conv_oracle(&x, &w, &b, stride, pad);
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
            let y = g.conv2d(xv, wv, bv, ConvSpec::square(3, stride, pad, 2, 4)).unwrap();
            for (a, e) in g.value(y).data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-5, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let w = g.constant(Tensor::zeros(&[4, 2, 3, 3]));
        let b = g.constant(Tensor::zeros(&[4]));
        match g.conv2d(x, w, b, ConvSpec::square(3, 1, 0, 2, 4)) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "input C"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 1, 5, 5]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(
            g.conv2d(x, w, b, ConvSpec::square(5, 1, 0, 1, 1)),
            Err(Error::Dimension { .. })
        ));
    }
}
