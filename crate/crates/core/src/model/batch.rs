use crate::data::{FrameSample, GRID_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stacked network inputs for `n` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub n: usize,
    /// `[N, 3, S, S]`; present for the full network.
    pub face: Option<Tensor>,
    pub left_eye: Option<Tensor>,
    pub right_eye: Option<Tensor>,
    /// `[N, 3, T, T]`; present for the student.
    pub tight_left: Option<Tensor>,
    pub tight_right: Option<Tensor>,
    /// `[N, 625]` flattened face grids.
    pub grid: Tensor,
    /// `[N, 2]` camera-centimeter targets.
    pub targets: Tensor,
}

fn stack_field(samples: &[&FrameSample], f: impl Fn(&FrameSample) -> &Tensor) -> Result<Tensor> {
    Tensor::stack(&samples.iter().map(|s| f(s)).collect::<Vec<_>>())
}

fn grids_and_targets(samples: &[&FrameSample]) -> Result<(Tensor, Tensor)> {
    let cells = GRID_SIZE * GRID_SIZE;
    let mut grid = Vec::with_capacity(samples.len() * cells);
    let mut targets = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        grid.extend_from_slice(s.face_grid().mask.data());
        targets.extend_from_slice(&s.target_cm_f32());
    }
    Ok((
        Tensor::new(&[samples.len(), cells], grid)?,
        Tensor::new(&[samples.len(), 2], targets)?,
    ))
}

impl Batch {
    /// Face, both eye crops, grid and targets.
    pub fn full(samples: &[&FrameSample]) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let (grid, targets) = grids_and_targets(samples)?;
        Ok(Batch {
            n: samples.len(),
            face: Some(stack_field(samples, |s| &s.face)?),
            left_eye: Some(stack_field(samples, |s| &s.left_eye)?),
            right_eye: Some(stack_field(samples, |s| &s.right_eye)?),
            tight_left: None,
            tight_right: None,
            grid,
            targets,
        })
    }

    /// Tight eye crops, grid and targets.
    pub fn tight(samples: &[&FrameSample]) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let (grid, targets) = grids_and_targets(samples)?;
        Ok(Batch {
            n: samples.len(),
            face: None,
            left_eye: None,
            right_eye: None,
            tight_left: Some(stack_field(samples, |s| &s.tight_left)?),
            tight_right: Some(stack_field(samples, |s| &s.tight_right)?),
            grid,
            targets,
        })
    }

    /// Both input sets, for teacher and student on the same samples.
    pub fn both(samples: &[&FrameSample]) -> Result<Batch> {
        let mut b = Batch::full(samples)?;
        b.tight_left = Some(stack_field(samples, |s| &s.tight_left)?);
        b.tight_right = Some(stack_field(samples, |s| &s.tight_right)?);
        Ok(b)
    }
}

/// Fetches a required input, checking its spatial size.
pub(crate) fn input<'a>(t: &'a Option<Tensor>, what: &str, size: usize) -> Result<&'a Tensor> {
    let t = t
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("batch lacks {what} crops")))?;
    for (axis, d) in [("H", t.dims()[2]), ("W", t.dims()[3])] {
        if d != size {
            return Err(Error::dim("forward", format!("{what} {axis}"), size, d));
        }
    }
    Ok(t)
}
