//! Central finite-difference oracle for graph ops.
//!
//! The scalar objective is `Σ R ⊙ op(leaves)` for a fixed random `R`. The
//! analytic side uses `Graph::backward`; the numeric side re-runs only the
//! forward pass on perturbed copies and sums the projection in f64.

use gazetrack::{Graph, Result, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

pub const EPS: f32 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 0.1;
/// Coordinates checked per leaf tensor (all of them for smaller tensors).
pub const MAX_COORDS: usize = 256;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn objective<F>(leaves: &[Tensor], build: &F, proj: &[f32]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars).expect("forward succeeds");
    g.value(out)
        .data()
        .iter()
        .zip(proj)
        .map(|(&y, &r)| y as f64 * r as f64)
        .sum()
}

/// Returns the worst relative error over every leaf (or a sample of its
/// coordinates) between backward and central differences.
pub fn max_relative_error<F, R>(leaves: &[Tensor], build: F, rng: &mut R) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Rng,
{
    check(leaves, build, rng, false)
}

/// Like [`max_relative_error`], for compositions containing ReLU or max
/// pooling with unconstrained inputs: coordinates whose step straddles a kink
/// (forward and backward one-sided quotients disagree) are skipped. These
/// graphs are piecewise linear, so away from kinks both quotients agree up to
/// rounding.
pub fn max_relative_error_piecewise<F, R>(leaves: &[Tensor], build: F, rng: &mut R) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Rng,
{
    check(leaves, build, rng, true)
}

struct Quotients {
    central: f64,
    forward: f64,
    backward: f64,
}

fn quotients<F>(leaves: &[Tensor], build: &F, proj: &[f32], li: usize, j: usize) -> Quotients
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut plus = leaves.to_vec();
    plus[li].data_mut()[j] += EPS;
    let mut minus = leaves.to_vec();
    minus[li].data_mut()[j] -= EPS;
    // Use the actually-representable steps.
    let x0 = leaves[li].data()[j] as f64;
    let (hp, hm) = (plus[li].data()[j] as f64 - x0, x0 - minus[li].data()[j] as f64);
    let (fp, f0, fm) = (
        objective(&plus, build, proj),
        objective(leaves, build, proj),
        objective(&minus, build, proj),
    );
    Quotients {
        central: (fp - fm) / (hp + hm),
        forward: (fp - f0) / hp,
        backward: (f0 - fm) / hm,
    }
}

fn check<F, R>(leaves: &[Tensor], build: F, rng: &mut R, skip_kinks: bool) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Rng,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad()))
        .collect();
    let out = build(&mut g, &vars).expect("forward succeeds");
    let proj = Tensor::uniform(g.dims(out), -1.0, 1.0, rng);
    let loss = g.dot_const(out, &proj).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();

    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0usize, 0usize);
    for (li, leaf) in leaves.iter().enumerate() {
        let mut coords: Vec<usize> = (0..leaf.numel()).collect();
        if coords.len() > MAX_COORDS {
            coords.shuffle(rng);
            coords.truncate(MAX_COORDS);
        }
        for j in coords {
            let q = quotients(leaves, &build, proj.data(), li, j);
            checked += 1;
            if skip_kinks && relative_error(q.forward, q.backward) > 1e-2 {
                skipped += 1;
                continue;
            }
            let numeric = q.central;
            worst = worst.max(relative_error(analytic[li][j] as f64, numeric));
        }
    }
    assert!(
        skipped * 4 <= checked,
        "kink filter discarded {skipped} of {checked} coordinates"
    );
    worst
}

/// Values spread at least `gap` apart in random order, so neither ReLU kinks
/// nor max-pool ties fall inside a finite-difference step.
pub fn spaced_values<R: Rng>(dims: &[usize], gap: f32, rng: &mut R) -> Tensor {
    let n: usize = dims.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let offset = (n / 2) as f32 + 0.5;
    Tensor::from_fn(dims, |i| (order[i] as f32 - offset) * gap)
}

/// Every differentiable op on the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Conv2d,
    MaxPool2d,
    FullyConnected,
    Relu,
    Concat,
    Flatten,
    Sum,
    Scale,
    Add,
    EuclideanLoss,
    /// conv → relu → pool → flatten → fc, exercising gradient flow between ops.
    Composite,
}

impl OpKind {
    pub const ALL: [OpKind; 11] = [
        OpKind::Conv2d,
        OpKind::MaxPool2d,
        OpKind::FullyConnected,
        OpKind::Relu,
        OpKind::Concat,
        OpKind::Flatten,
        OpKind::Sum,
        OpKind::Scale,
        OpKind::Add,
        OpKind::EuclideanLoss,
        OpKind::Composite,
    ];
}

fn rand_dims<R: Rng>(rng: &mut R, rank: usize, max_numel: usize) -> Vec<usize> {
    loop {
        let dims: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=16)).collect();
        if dims.iter().product::<usize>() <= max_numel {
            return dims;
        }
    }
}

/// Draws one random case for `op` and returns its worst relative error.
pub fn random_case<R: Rng>(op: OpKind, rng: &mut R) -> f64 {
    use gazetrack::ConvSpec;
    match op {
        OpKind::Conv2d => {
            let k = rng.gen_range(1..=4);
            let stride = rng.gen_range(1..=3);
            let pad = rng.gen_range(0..=2);
            let n = rng.gen_range(1..=2);
            let c = rng.gen_range(1..=3);
            let out = rng.gen_range(1..=4);
            let h = rng.gen_range(k.max(2)..=12);
            let w = rng.gen_range(k.max(2)..=12);
            let spec = ConvSpec::square(k, stride, pad, c, out);
            let leaves = vec![
                Tensor::uniform(&[n, c, h, w], -1.0, 1.0, rng),
                Tensor::uniform(&spec.weight_dims(), -1.0, 1.0, rng),
                Tensor::uniform(&[out], -1.0, 1.0, rng),
            ];
            max_relative_error(&leaves, |g, v| g.conv2d(v[0], v[1], v[2], spec), rng)
        }
        OpKind::MaxPool2d => {
            let window = rng.gen_range(2..=3);
            let stride = rng.gen_range(1..=3);
            let n = rng.gen_range(1..=2);
            let c = rng.gen_range(1..=3);
            let h = rng.gen_range(window..=16);
            let w = rng.gen_range(window..=16);
            let leaves = vec![spaced_values(&[n, c, h, w], 4.0 * EPS, rng)];
            max_relative_error(&leaves, |g, v| g.maxpool2d(v[0], window, stride), rng)
        }
        OpKind::FullyConnected => {
            let n = rng.gen_range(1..=8);
            let d = rng.gen_range(1..=16);
            let m = rng.gen_range(1..=16);
            let leaves = vec![
                Tensor::uniform(&[n, d], -1.0, 1.0, rng),
                Tensor::uniform(&[m, d], -1.0, 1.0, rng),
                Tensor::uniform(&[m], -1.0, 1.0, rng),
            ];
            max_relative_error(&leaves, |g, v| g.fully_connected(v[0], v[1], Some(v[2])), rng)
        }
        OpKind::Relu => {
            let dims = rand_dims(rng, 3, 1000);
            let leaves = vec![spaced_values(&dims, 4.0 * EPS, rng)];
            max_relative_error(&leaves, |g, v| Ok(g.relu(v[0])), rng)
        }
        OpKind::Concat => {
            let rank = rng.gen_range(1..=3);
            let axis = rng.gen_range(0..rank);
            let base = rand_dims(rng, rank, 300);
            let parts = rng.gen_range(2..=3);
            let leaves: Vec<Tensor> = (0..parts)
                .map(|_| {
                    let mut d = base.clone();
                    d[axis] = rng.gen_range(1..=16);
                    Tensor::uniform(&d, -1.0, 1.0, rng)
                })
                .collect();
            max_relative_error(&leaves, |g, v| g.concat(v, axis), rng)
        }
        OpKind::Flatten => {
            let dims = rand_dims(rng, 4, 1000);
            let leaves = vec![Tensor::uniform(&dims, -1.0, 1.0, rng)];
            max_relative_error(&leaves, |g, v| g.flatten(v[0]), rng)
        }
        OpKind::Sum => {
            let dims = rand_dims(rng, 3, 1000);
            let leaves = vec![Tensor::uniform(&dims, -1.0, 1.0, rng)];
            max_relative_error(&leaves, |g, v| Ok(g.sum(v[0])), rng)
        }
        OpKind::Scale => {
            let dims = rand_dims(rng, 3, 1000);
            let factor = rng.gen_range(-3.0..3.0);
            let leaves = vec![Tensor::uniform(&dims, -1.0, 1.0, rng)];
            max_relative_error(&leaves, |g, v| Ok(g.scale(v[0], factor)), rng)
        }
        OpKind::Add => {
            let dims = rand_dims(rng, 3, 1000);
            let leaves = vec![
                Tensor::uniform(&dims, -1.0, 1.0, rng),
                Tensor::uniform(&dims, -1.0, 1.0, rng),
            ];
            max_relative_error(&leaves, |g, v| g.add(v[0], v[1]), rng)
        }
        OpKind::EuclideanLoss => {
            let dims = rand_dims(rng, 2, 1000);
            let leaves = vec![
                Tensor::uniform(&dims, -1.0, 1.0, rng),
                Tensor::uniform(&dims, -1.0, 1.0, rng),
            ];
            max_relative_error(&leaves, |g, v| g.euclidean_loss(v[0], v[1]), rng)
        }
        OpKind::Composite => {
            let n = rng.gen_range(1..=2);
            let spec = ConvSpec::square(3, 1, 1, 2, 3);
            let leaves = vec![
                Tensor::uniform(&[n, 2, 8, 8], -1.0, 1.0, rng),
                Tensor::uniform(&spec.weight_dims(), -0.5, 0.5, rng),
                Tensor::uniform(&[3], -0.1, 0.1, rng),
                Tensor::uniform(&[4, 27], -0.5, 0.5, rng),
                Tensor::uniform(&[4], -0.5, 0.5, rng),
            ];
            max_relative_error_piecewise(
                &leaves,
                |g, v| {
                    let y = g.conv2d(v[0], v[1], v[2], spec)?;
                    let y = g.relu(y);
                    let y = g.maxpool2d(y, 3, 2)?;
                    let y = g.flatten(y)?;
                    g.fully_connected(y, v[3], Some(v[4]))
                },
                rng,
            )
        }
    }
}
