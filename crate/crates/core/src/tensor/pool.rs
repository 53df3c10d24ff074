use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// `floor((extent − window)/stride) + 1`, or `None` if the window does not fit.
pub fn pool_output_extent(extent: usize, window: usize, stride: usize) -> Option<usize> {
    (extent >= window && window > 0 && stride > 0).then(|| (extent - window) / stride + 1)
}

pub(super) fn backward(input_numel: usize, argmax: &[u32], g: &[f32]) -> Vec<f32> {
    let mut dx = vec![0.0; input_numel];
    for (&src, &gv) in argmax.iter().zip(g) {
        dx[src as usize] += gv;
    }
    dx
}

impl Graph {
    /// Max pooling over square windows of `input[N,C,H,W]`.
    ///
    /// Ties resolve to the first position in row-major order, which is also
    /// where the gradient is routed.
    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let dims = x.dims();
        if dims.len() != 4 {
            return Err(Error::dim("maxpool2d", "input rank", 4, dims.len()));
        }
        let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        let oh = pool_output_extent(h, window, stride)
            .ok_or_else(|| Error::dim("maxpool2d", "H", format!(">= {window}"), h))?;
        let ow = pool_output_extent(w, window, stride)
            .ok_or_else(|| Error::dim("maxpool2d", "W", format!(">= {window}"), w))?;

        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let data = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2d { input, argmax }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sixteen_values_window_two() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[1, 1, 4, 4], |i| (i + 1) as f32));
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.dims(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn constant_input_constant_output() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 3, 7, 7], 0.25));
        let y = g.maxpool2d(x, 3, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = Tensor::uniform(&[1, 1, 7, 7], -1.0, 1.0, &mut rng);
        let d = t.data().to_vec();
        let mut want = Vec::new();
        for oy in 0..3 {
            for ox in 0..3 {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..3 {
                    for kx in 0..3 {
                        m = m.max(d[(oy * 2 + ky) * 7 + ox * 2 + kx]);
                    }
                }
                want.push(m);
            }
        }
        let mut g = Graph::new();
        let x = g.constant(t);
        let y = g.maxpool2d(x, 3, 2).unwrap();
        assert_eq!(g.value(y).data(), &want[..]);
    }

    #[test]
    fn tie_routes_gradient_to_first_index() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[1, 1, 2, 2], 1.0).with_requires_grad());
        let y = g.maxpool2d(x, 2, 2).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn oversized_window_is_dimension_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(matches!(g.maxpool2d(x, 3, 2), Err(Error::Dimension { .. })));
    }
}
