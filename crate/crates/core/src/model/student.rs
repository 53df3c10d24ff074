use serde::{Deserialize, Serialize};

use super::batch::{input, Batch};
use super::itracker::{POOL_STRIDE, POOL_WINDOW};
use super::{bind_layer, fc_relu, LayerShape, Outputs};
use crate::data::GRID_SIZE;
use crate::error::{Error, Result};
use crate::params::{Bindings, ModelParams};
use crate::tensor::{pool_output_extent, ConvSpec, Graph, Var};

/// Two-input student: shared tight-eye tower plus the face grid.
///
/// Each eye runs conv1 → relu → max pool → conv2 → relu; the flattened eyes
/// feed `fc_eye` (the penultimate feature), the grid feeds `fc_fg`, and both
/// are concatenated into the 2-unit output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub tight_size: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub fc_eye: usize,
    pub fc_fg: usize,
}

impl StudentConfig {
    /// 80×80 crops; conv 7×7/16 s2, 3×3/32 s2; FC 64 and 32.
    pub fn full() -> Self {
        StudentConfig {
            tight_size: 80,
            conv1: ConvSpec::square(7, 2, 0, 3, 16),
            conv2: ConvSpec::square(3, 2, 1, 16, 32),
            fc_eye: 64,
            fc_fg: 32,
        }
    }

    /// 24×24 crops with channels 8/16 and FC 16 and 8.
    pub fn desk() -> Self {
        StudentConfig {
            tight_size: 24,
            conv1: ConvSpec::square(7, 2, 0, 3, 8),
            conv2: ConvSpec::square(3, 2, 1, 8, 16),
            fc_eye: 16,
            fc_fg: 8,
        }
    }

    pub fn tower_width(&self) -> Result<usize> {
        self.conv1.validate()?;
        self.conv2.validate()?;
        let (h, w) = self.conv1.output_hw(self.tight_size, self.tight_size)?;
        let pool = |e| {
            pool_output_extent(e, POOL_WINDOW, POOL_STRIDE)
                .ok_or_else(|| Error::Config(format!("student pool does not fit a {e}-pixel map")))
        };
        let (h, w) = self.conv2.output_hw(pool(h)?, pool(w)?)?;
        Ok(self.conv2.out_channels * h * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv1.in_channels != 3 {
            return Err(Error::Config("student conv1 must read 3 channels".into()));
        }
        if self.conv1.out_channels != self.conv2.in_channels {
            return Err(Error::Config("student conv chain mismatch".into()));
        }
        if self.fc_eye == 0 || self.fc_fg == 0 {
            return Err(Error::Config("fully connected widths must be positive".into()));
        }
        self.tower_width().map(|_| ())
    }

    pub(crate) fn layer_shapes(&self) -> Result<Vec<LayerShape>> {
        let conv = |name: &str, s: &ConvSpec| -> LayerShape {
            (name.into(), s.weight_dims().to_vec(), s.in_channels * s.kernel_h * s.kernel_w)
        };
        let d = 2 * self.tower_width()?;
        let cells = GRID_SIZE * GRID_SIZE;
        Ok(vec![
            conv("student.eye.conv1", &self.conv1),
            conv("student.eye.conv2", &self.conv2),
            ("student.fc_eye".into(), vec![self.fc_eye, d], d),
            ("student.fc_fg".into(), vec![self.fc_fg, cells], cells),
            ("student.fc2".into(), vec![2, self.fc_eye + self.fc_fg], self.fc_eye + self.fc_fg),
        ])
    }

    fn eye(
        &self,
        params: &ModelParams,
        graph: &mut Graph,
        x: Var,
        bindings: &mut Bindings,
    ) -> Result<Var> {
        let (w, b) = bind_layer(params, graph, "student.eye.conv1", bindings)?;
        let h = graph.conv2d(x, w, b, self.conv1)?;
        let h = graph.relu(h);
        let h = graph.maxpool2d(h, POOL_WINDOW, POOL_STRIDE)?;
        let (w, b) = bind_layer(params, graph, "student.eye.conv2", bindings)?;
        let h = graph.conv2d(h, w, b, self.conv2)?;
        let h = graph.relu(h);
        graph.flatten(h)
    }

    pub(crate) fn forward_graph(
        &self,
        params: &ModelParams,
        graph: &mut Graph,
        batch: &Batch,
        bindings: &mut Bindings,
    ) -> Result<Outputs> {
        let t = self.tight_size;
        let left = graph.constant(input(&batch.tight_left, "tight left eye", t)?.clone());
        let right = graph.constant(input(&batch.tight_right, "tight right eye", t)?.clone());
        let l = self.eye(params, graph, left, bindings)?;
        let r = self.eye(params, graph, right, bindings)?;
        let eyes = graph.concat(&[l, r], 1)?;
        let features = fc_relu(params, graph, "student.fc_eye", eyes, bindings)?;
        let g = graph.constant(batch.grid.clone());
        let grid = fc_relu(params, graph, "student.fc_fg", g, bindings)?;
        let joined = graph.concat(&[features, grid], 1)?;
        let (w, b) = bind_layer(params, graph, "student.fc2", bindings)?;
        let pred = graph.fully_connected(joined, w, Some(b))?;
        Ok(Outputs { pred, features })
    }
}
