//! The four-input gaze network, its distillation student, and input ablation.

mod batch;
mod itracker;
mod student;

pub use batch::Batch;
pub use itracker::{ArchitectureConfig, EnabledInputs, POOL_STRIDE, POOL_WINDOW};
pub use student::StudentConfig;

use serde::{Deserialize, Serialize};

use crate::data::FrameSample;
use crate::error::{Error, Result};
use crate::params::{Bindings, ModelParams};
use crate::rng::{stream, tag};
use crate::tensor::{Graph, Tensor, Var};

/// Either network family, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelConfig {
    ITracker(ArchitectureConfig),
    Student(StudentConfig),
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `[N, 2]` gaze in camera centimeters.
    pub pred: Var,
    /// `[N, F]` penultimate features (post-activation).
    pub features: Var,
}

/// Detached forward results.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub pred: Tensor,
    pub features: Tensor,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::ITracker(c) => c.validate(),
            ModelConfig::Student(c) => c.validate(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<ModelParams> {
        match self {
            ModelConfig::ITracker(c) => build(c, seed),
            ModelConfig::Student(c) => build_student(c, seed),
        }
    }

    /// Width of the penultimate feature vector.
    pub fn feature_width(&self) -> usize {
        match self {
            ModelConfig::ITracker(c) => c.fc1,
            ModelConfig::Student(c) => c.fc_eye,
        }
    }

    /// Stacks the inputs this network reads.
    pub fn batch(&self, samples: &[&FrameSample]) -> Result<Batch> {
        match self {
            ModelConfig::ITracker(_) => Batch::full(samples),
            ModelConfig::Student(_) => Batch::tight(samples),
        }
    }

    pub fn forward_graph(
        &self,
        params: &ModelParams,
        graph: &mut Graph,
        batch: &Batch,
        bindings: &mut Bindings,
    ) -> Result<Outputs> {
        match self {
            ModelConfig::ITracker(c) => c.forward_graph(params, graph, batch, bindings),
            ModelConfig::Student(c) => c.forward_graph(params, graph, batch, bindings),
        }
    }

    /// Inference on a batch; no gradients are recorded.
    pub fn predict(&self, params: &ModelParams, batch: &Batch) -> Result<Prediction> {
        let mut graph = Graph::new();
        let mut bindings = Bindings::new();
        let frozen = frozen_view(params);
        let out = self.forward_graph(&frozen, &mut graph, batch, &mut bindings)?;
        let features = graph.take(out.features);
        let pred = graph.take(out.pred);
        Ok(Prediction { pred, features })
    }

    /// Expected shape of every parameter, by name.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let p = self.build(0)?;
        Ok(p.iter().map(|(n, t)| (n.to_string(), t.dims().to_vec())).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ModelConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("architecture record: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

/// Builds and initializes the full network's parameters.
pub fn build(config: &ArchitectureConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    init_params(&config.layer_shapes()?, seed)
}

/// Builds and initializes the student's parameters.
pub fn build_student(config: &StudentConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    init_params(&config.layer_shapes()?, seed)
}

/// Forward pass of the full network over samples, without gradients.
pub fn forward(params: &ModelParams, config: &ArchitectureConfig, samples: &[&FrameSample]) -> Result<Prediction> {
    let mc = ModelConfig::ITracker(config.clone());
    mc.predict(params, &mc.batch(samples)?)
}

/// One weight/bias pair: `(name, weight dims, fan_in)`.
pub(crate) type LayerShape = (String, Vec<usize>, usize);

fn name_id(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// He-scaled truncated normal weights, zero biases. Each layer draws from its
/// own stream, so adding or ablating a layer leaves the others unchanged.
fn init_params(layers: &[LayerShape], seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::new();
    for (name, dims, fan_in) in layers {
        let mut rng = stream(seed, &[tag::INIT, name_id(name)]);
        let std = (2.0 / *fan_in as f32).sqrt();
        p.insert(
            format!("{name}.weight"),
            Tensor::truncated_normal(dims, std, &mut rng).with_requires_grad(),
        )?;
        p.insert(format!("{name}.bias"), Tensor::zeros(&[dims[0]]).with_requires_grad())?;
    }
    Ok(p)
}

fn frozen_view(params: &ModelParams) -> ModelParams {
    let mut p = params.clone();
    p.set_requires_grad(false);
    p.zero_grads();
    p.clear_velocity();
    p
}

/// Binds `<name>.weight` and `<name>.bias`.
pub(crate) fn bind_layer(
    params: &ModelParams,
    graph: &mut Graph,
    name: &str,
    bindings: &mut Bindings,
) -> Result<(Var, Var)> {
    let w = params.bind(graph, &format!("{name}.weight"), bindings)?;
    let b = params.bind(graph, &format!("{name}.bias"), bindings)?;
    Ok((w, b))
}

pub(crate) fn fc_relu(
    params: &ModelParams,
    graph: &mut Graph,
    name: &str,
    input: Var,
    bindings: &mut Bindings,
) -> Result<Var> {
    let (w, b) = bind_layer(params, graph, name, bindings)?;
    let y = graph.fully_connected(input, w, Some(b))?;
    Ok(graph.relu(y))
}
