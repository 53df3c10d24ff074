use serde::{Deserialize, Serialize};

use super::batch::{input, Batch};
use super::{bind_layer, fc_relu, LayerShape, Outputs};
use crate::data::GRID_SIZE;
use crate::error::{Error, Result};
use crate::params::{Bindings, ModelParams};
use crate::tensor::{pool_output_extent, ConvSpec, Graph, Tensor, Var};

/// Max pooling after the first and second conv of each tower.
pub const POOL_WINDOW: usize = 3;
pub const POOL_STRIDE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledInputs {
    pub eyes: bool,
    pub face: bool,
    pub facegrid: bool,
}

impl EnabledInputs {
    pub const ALL: EnabledInputs = EnabledInputs {
        eyes: true,
        face: true,
        facegrid: true,
    };

    /// Parses a comma-separated subset such as `face,facegrid`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut e = EnabledInputs {
            eyes: false,
            face: false,
            facegrid: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "eyes" => e.eyes = true,
                "face" => e.face = true,
                "facegrid" => e.facegrid = true,
                other => return Err(Error::Config(format!("unknown input {other:?}"))),
            }
        }
        Ok(e)
    }

    /// All inputs except `name`.
    pub fn without(name: &str) -> Result<Self> {
        let mut e = Self::ALL;
        match name {
            "eyes" => e.eyes = false,
            "face" => e.face = false,
            "facegrid" => e.facegrid = false,
            other => return Err(Error::Config(format!("unknown input {other:?}"))),
        }
        Ok(e)
    }
}

/// Layer sizes of the full network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub input_size: usize,
    pub eye_convs: [ConvSpec; 4],
    pub face_convs: [ConvSpec; 4],
    pub fc_e1: usize,
    pub fc_f1: usize,
    pub fc_f2: usize,
    pub fc_fg1: usize,
    pub fc_fg2: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub share_eye_weights: bool,
    pub enabled_inputs: EnabledInputs,
}

fn tower(first: ConvSpec, c: [usize; 4], k2: usize, k3: usize) -> [ConvSpec; 4] {
    [
        first,
        ConvSpec::square(k2, 1, k2 / 2, c[0], c[1]),
        ConvSpec::square(k3, 1, k3 / 2, c[1], c[2]),
        ConvSpec::square(1, 1, 0, c[2], c[3]),
    ]
}

impl ArchitectureConfig {
    /// 224×224 crops; conv 11×11/96 s4, 5×5/256, 3×3/384, 1×1/64.
    pub fn full() -> Self {
        let t = tower(ConvSpec::square(11, 4, 0, 3, 96), [96, 256, 384, 64], 5, 3);
        ArchitectureConfig {
            input_size: 224,
            eye_convs: t,
            face_convs: t,
            fc_e1: 128,
            fc_f1: 128,
            fc_f2: 64,
            fc_fg1: 256,
            fc_fg2: 128,
            fc1: 128,
            fc2: 2,
            share_eye_weights: true,
            enabled_inputs: EnabledInputs::ALL,
        }
    }

    /// 32×32 crops; conv 5×5/12 s2, 5×5/32, 3×3/48, 1×1/8 and FC widths ÷4.
    pub fn desk() -> Self {
        let t = tower(ConvSpec::square(5, 2, 0, 3, 12), [12, 32, 48, 8], 5, 3);
        ArchitectureConfig {
            input_size: 32,
            eye_convs: t,
            face_convs: t,
            fc_e1: 32,
            fc_f1: 32,
            fc_f2: 16,
            fc_fg1: 64,
            fc_fg2: 32,
            fc1: 32,
            fc2: 2,
            share_eye_weights: true,
            enabled_inputs: EnabledInputs::ALL,
        }
    }

    pub fn with_inputs(mut self, e: EnabledInputs) -> Self {
        self.enabled_inputs = e;
        self
    }

    /// Flattened output width of a conv tower on `input_size` crops.
    pub fn tower_width(&self, convs: &[ConvSpec; 4]) -> Result<usize> {
        let mut hw = (self.input_size, self.input_size);
        for (i, spec) in convs.iter().enumerate() {
            spec.validate()?;
            hw = spec.output_hw(hw.0, hw.1)?;
            if i < 2 {
                let pool = |e| {
                    pool_output_extent(e, POOL_WINDOW, POOL_STRIDE).ok_or_else(|| {
                        Error::Config(format!("pool after conv{} does not fit a {e}-pixel map", i + 1))
                    })
                };
                hw = (pool(hw.0)?, pool(hw.1)?);
            }
        }
        Ok(convs[3].out_channels * hw.0 * hw.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fc2 != 2 {
            return Err(Error::Config(format!("fc2 must be 2, got {}", self.fc2)));
        }
        let e = self.enabled_inputs;
        if !(e.eyes || e.face || e.facegrid) {
            return Err(Error::Config("at least one input must be enabled".into()));
        }
        for convs in [&self.eye_convs, &self.face_convs] {
            if convs[0].in_channels != 3 {
                return Err(Error::Config("first conv must read 3 channels".into()));
            }
            for w in convs.windows(2) {
                if w[0].out_channels != w[1].in_channels {
                    return Err(Error::Config(format!(
                        "conv chain mismatch: {} output channels feed {} input channels",
                        w[0].out_channels, w[1].in_channels
                    )));
                }
            }
            self.tower_width(convs)?;
        }
        let widths = [self.fc_e1, self.fc_f1, self.fc_f2, self.fc_fg1, self.fc_fg2, self.fc1];
        if widths.contains(&0) {
            return Err(Error::Config("fully connected widths must be positive".into()));
        }
        Ok(())
    }

    /// Input width of FC1: `fc_e1 + fc_f2 + fc_fg2`.
    pub fn fc1_input_width(&self) -> usize {
        self.fc_e1 + self.fc_f2 + self.fc_fg2
    }

    fn eye_tower_names(&self) -> [&'static str; 2] {
        if self.share_eye_weights {
            ["eye", "eye"]
        } else {
            ["eye_left", "eye_right"]
        }
    }

    pub(crate) fn layer_shapes(&self) -> Result<Vec<LayerShape>> {
        let mut out: Vec<LayerShape> = Vec::new();
        let conv_layers = |out: &mut Vec<LayerShape>, tower: &str, convs: &[ConvSpec; 4]| {
            for (i, s) in convs.iter().enumerate() {
                out.push((
                    format!("{tower}.conv{}", i + 1),
                    s.weight_dims().to_vec(),
                    s.in_channels * s.kernel_h * s.kernel_w,
                ));
            }
        };
        let fc = |out: &mut Vec<LayerShape>, name: &str, m: usize, d: usize| {
            out.push((name.to_string(), vec![m, d], d));
        };
        let e = self.enabled_inputs;
        if e.eyes {
            let [l, r] = self.eye_tower_names();
            conv_layers(&mut out, l, &self.eye_convs);
            if l != r {
                conv_layers(&mut out, r, &self.eye_convs);
            }
            fc(&mut out, "fc_e1", self.fc_e1, 2 * self.tower_width(&self.eye_convs)?);
        }
        if e.face {
            conv_layers(&mut out, "face", &self.face_convs);
            fc(&mut out, "fc_f1", self.fc_f1, self.tower_width(&self.face_convs)?);
            fc(&mut out, "fc_f2", self.fc_f2, self.fc_f1);
        }
        if e.facegrid {
            fc(&mut out, "fc_fg1", self.fc_fg1, GRID_SIZE * GRID_SIZE);
            fc(&mut out, "fc_fg2", self.fc_fg2, self.fc_fg1);
        }
        fc(&mut out, "fc1", self.fc1, self.fc1_input_width());
        fc(&mut out, "fc2", self.fc2, self.fc1);
        Ok(out)
    }

    fn conv_tower(
        &self,
        params: &ModelParams,
        graph: &mut Graph,
        tower: &str,
        convs: &[ConvSpec; 4],
        x: &Tensor,
        bindings: &mut Bindings,
    ) -> Result<Var> {
        let mut h = graph.constant(x.clone());
        for (i, spec) in convs.iter().enumerate() {
            let (w, b) = bind_layer(params, graph, &format!("{tower}.conv{}", i + 1), bindings)?;
            h = graph.conv2d(h, w, b, *spec)?;
            h = graph.relu(h);
            if i < 2 {
                h = graph.maxpool2d(h, POOL_WINDOW, POOL_STRIDE)?;
            }
        }
        graph.flatten(h)
    }

    pub(crate) fn forward_graph(
        &self,
        params: &ModelParams,
        graph: &mut Graph,
        batch: &Batch,
        bindings: &mut Bindings,
    ) -> Result<Outputs> {
        let n = batch.n;
        let e = self.enabled_inputs;
        let s = self.input_size;

        let eyes = if e.eyes {
            let left = input(&batch.left_eye, "left eye", s)?;
            let right = input(&batch.right_eye, "right eye", s)?;
            let [ln, rn] = self.eye_tower_names();
            let l = self.conv_tower(params, graph, ln, &self.eye_convs, left, bindings)?;
            let r = self.conv_tower(params, graph, rn, &self.eye_convs, right, bindings)?;
            let both = graph.concat(&[l, r], 1)?;
            fc_relu(params, graph, "fc_e1", both, bindings)?
        } else {
            graph.constant(Tensor::zeros(&[n, self.fc_e1]))
        };

        let face = if e.face {
            let f = input(&batch.face, "face", s)?;
            let h = self.conv_tower(params, graph, "face", &self.face_convs, f, bindings)?;
            let h = fc_relu(params, graph, "fc_f1", h, bindings)?;
            fc_relu(params, graph, "fc_f2", h, bindings)?
        } else {
            graph.constant(Tensor::zeros(&[n, self.fc_f2]))
        };

        let grid = if e.facegrid {
            let g = graph.constant(batch.grid.clone());
            let h = fc_relu(params, graph, "fc_fg1", g, bindings)?;
            fc_relu(params, graph, "fc_fg2", h, bindings)?
        } else {
            graph.constant(Tensor::zeros(&[n, self.fc_fg2]))
        };

        let joined = graph.concat(&[eyes, face, grid], 1)?;
        let features = fc_relu(params, graph, "fc1", joined, bindings)?;
        let (w, b) = bind_layer(params, graph, "fc2", bindings)?;
        let pred = graph.fully_connected(features, w, Some(b))?;
        Ok(Outputs { pred, features })
    }
}
