use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub(super) fn backward(
    input: &Tensor,
    weight: &Tensor,
    g: &[f32],
    want: [bool; 3],
) -> [Option<Vec<f32>>; 3] {
    let (n, d) = (input.dims()[0], input.dims()[1]);
    let m = weight.dims()[0];
    let din = want[0].then(|| {
        let mut din = vec![0.0; n * d];
        gemm_nn(n, m, d, g, weight.data(), &mut din);
        din
    });
    let dw = want[1].then(|| {
        let mut dw = vec![0.0; m * d];
        gemm_tn(m, n, d, g, input.data(), &mut dw);
        dw
    });
    let db = want[2].then(|| {
        let mut db = vec![0.0; m];
        for row in g.chunks(m) {
            db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        db
    });
    [din, dw, db]
}

impl Graph {
    /// Affine map `input[N,D] · weight[M,D]ᵀ + bias[M]`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        if x.ndim() != 2 {
            return Err(Error::dim("fully_connected", "input rank", 2, x.ndim()));
        }
        if w.ndim() != 2 {
            return Err(Error::dim("fully_connected", "weight rank", 2, w.ndim()));
        }
        let (n, d) = (x.dims()[0], x.dims()[1]);
        let m = w.dims()[0];
        if w.dims()[1] != d {
            return Err(Error::dim("fully_connected", "inner D", d, w.dims()[1]));
        }
        let mut out = vec![0.0f32; n * m];
        if let Some(b) = bias {
            let b = self.value(b);
            if b.dims() != [m] {
                return Err(Error::dim("fully_connected", "bias", m, format!("{:?}", b.dims())));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(b.data());
            }
        }
        gemm_nt(n, d, m, x.data(), w.data(), &mut out);
        let value = Tensor::new(&[n, m], out)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_passes_input_through() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap());
        let w = g.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.fully_connected(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn hand_arithmetic() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::new(&[1], vec![5.0]).unwrap());
        let y = g.fully_connected(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[16.0]);
    }

    #[test]
    fn matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::uniform(&[2, 8], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[4, 8], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[4], -1.0, 1.0, &mut rng);
        let mut want = vec![0.0f64; 8];
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = b.data()[j] as f64;
                for p in 0..8 {
                    acc += x.data()[i * 8 + p] as f64 * w.data()[j * 8 + p] as f64;
                }
                want[i * 4 + j] = acc;
            }
        }
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.fully_connected(xv, wv, Some(bv)).unwrap();
        for (a, e) in g.value(y).data().iter().zip(&want) {
            assert!((*a as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn inner_dim_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let w = g.constant(Tensor::zeros(&[4, 5]));
        assert!(matches!(
            g.fully_connected(x, w, None),
            Err(Error::Dimension { .. })
        ));
    }
}
