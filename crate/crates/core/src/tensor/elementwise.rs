use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub(super) fn relu_backward(output: &Tensor, g: &[f32]) -> Vec<f32> {
    output
        .data()
        .iter()
        .zip(g)
        .map(|(&y, &gv)| if y > 0.0 { gv } else { 0.0 })
        .collect()
}

fn split_axis(dims: &[usize], axis: usize) -> (usize, usize) {
    (dims[..axis].iter().product(), dims[axis + 1..].iter().product())
}

pub(super) fn concat_backward(dims: &[&[usize]], axis: usize, g: &[f32]) -> Vec<Vec<f32>> {
    let (outer, inner) = split_axis(dims[0], axis);
    let total: usize = dims.iter().map(|d| d[axis]).sum();
    let mut out: Vec<Vec<f32>> = dims.iter().map(|d| Vec::with_capacity(d.iter().product())).collect();
    for o in 0..outer {
        let mut offset = o * total * inner;
        for (part, d) in out.iter_mut().zip(dims) {
            let len = d[axis] * inner;
            part.extend_from_slice(&g[offset..offset + len]);
            offset += len;
        }
    }
    out
}

pub(super) fn euclidean_backward(pred: &Tensor, target: &Tensor, g: f32) -> (Vec<f32>, Vec<f32>) {
    let n = pred.dims()[0] as f32;
    let dp: Vec<f32> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| g * (p - t) / n)
        .collect();
    let dt = dp.iter().map(|v| -v).collect();
    (dp, dt)
}

impl Graph {
    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.dims(), data).expect("same shape");
        self.push(value, Op::Relu { input })
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let base = self.dims(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", "axis", format!("< {}", base.len()), axis));
        }
        for &p in &parts[1..] {
            let d = self.dims(p);
            if d.len() != base.len() {
                return Err(Error::dim("concat", "rank", base.len(), d.len()));
            }
            for (ax, (&a, &b)) in base.iter().zip(d).enumerate() {
                if ax != axis && a != b {
                    return Err(Error::dim("concat", format!("axis {ax}"), a, b));
                }
            }
        }
        let (outer, inner) = split_axis(&base, axis);
        let total: usize = parts.iter().map(|&p| self.dims(p)[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.dims(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut dims = base;
        dims[axis] = total;
        let value = Tensor::new(&dims, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// `[N, ...] → [N, D]`, keeping row-major order within each sample.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let dims = self.dims(input);
        let n = dims[0];
        let d = dims[1..].iter().product::<usize>().max(1);
        self.reshape(input, &[n, d])
    }

    pub fn reshape(&mut self, input: Var, dims: &[usize]) -> Result<Var> {
        let value = Tensor::new(dims, self.value(input).data().to_vec())?;
        Ok(self.push(value, Op::Reshape { input }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum { input })
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.dims(), data).expect("same shape");
        self.push(value, Op::Scale { input, factor })
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.dims() != b.dims() {
            return Err(Error::dim(
                "add",
                "shape",
                format!("{:?}", a.dims()),
                format!("{:?}", b.dims()),
            ));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(a.dims(), data)?;
        Ok(self.push(value, Op::Add { lhs, rhs }))
    }

    /// Scalar `Σ input ⊙ weights` against a constant tensor of equal size.
    pub fn dot_const(&mut self, input: Var, weights: &Tensor) -> Result<Var> {
        let x = self.value(input);
        if x.numel() != weights.numel() {
            return Err(Error::dim("dot_const", "numel", x.numel(), weights.numel()));
        }
        let s: f64 = x
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        Ok(self.push(
            Tensor::scalar(s as f32),
            Op::Dot {
                input,
                weights: weights.data().to_vec(),
            },
        ))
    }

    /// `(1/2N)·Σᵢ‖predᵢ − targetᵢ‖²` over `[N, D]` rows.
    pub fn euclidean_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.dims() != t.dims() {
            return Err(Error::dim(
                "euclidean_loss",
                "shape",
                format!("{:?}", p.dims()),
                format!("{:?}", t.dims()),
            ));
        }
        let n = p.dims()[0] as f64;
        let sq: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        Ok(self.push(
            Tensor::scalar((sq / (2.0 * n)) as f32),
            Op::EuclideanLoss { pred, target },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn concat_single_part_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3], |i| i as f32));
        assert_eq!(g.concat(&[x], 1).unwrap(), x);
    }

    #[test]
    fn concat_interleaves_per_outer_index() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::new(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.dims(c), &[2, 3]);
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn concat_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 1]));
        let b = g.constant(Tensor::zeros(&[3, 1]));
        assert!(matches!(g.concat(&[a, b], 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn flatten_follows_index_mapping() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f32));
        let y = g.flatten(x).unwrap();
        assert_eq!(g.dims(y), &[2, 12]);
        let v = g.value(y).data();
        for n in 0..2 {
            for c in 0..3 {
                for w in 0..4 {
                    assert_eq!(v[n * 12 + c * 4 + w], ((n * 3 + c) * 4 + w) as f32);
                }
            }
        }
    }

    #[test]
    fn euclidean_loss_hand_values() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap().with_requires_grad());
        let t = g.constant(Tensor::zeros(&[1, 2]));
        let l = g.euclidean_loss(p, t).unwrap();
        assert_eq!(g.value(l).data(), &[12.5]);
        g.backward(l).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[3.0, 4.0]);

        let mut g = Graph::new();
        let p = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let t = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let l = g.euclidean_loss(p, t).unwrap();
        assert_eq!(g.value(l).data(), &[0.0]);
    }
}
