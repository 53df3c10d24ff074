//! Per-subject affine calibration on penultimate features.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{calibration_fixed_indices, sessions_from_frames, FrameSample, SessionRecord};
use crate::error::{Error, Result};
use crate::evaluation::{dot_error, frame_error, DotPredictions};
use crate::geometry::{truncate_to_screen, DeviceTable};
use crate::tensor::Tensor;

/// Affine map from a feature vector to a camera-centimeter point, or the
/// identity on raw predictions when `k_points == 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationModel {
    pub subject_id: u32,
    pub k_points: usize,
    /// `[2, F + 1]`, bias in the last column; `None` for the no-op model.
    pub weights: Option<Tensor>,
}

impl CalibrationModel {
    pub fn identity(subject_id: u32) -> Self {
        CalibrationModel {
            subject_id,
            k_points: 0,
            weights: None,
        }
    }

    /// Calibrated point for one sample; `raw` is returned untouched by the
    /// no-op model.
    pub fn apply(&self, features: &[f32], raw: [f64; 2]) -> Result<[f64; 2]> {
        let Some(w) = &self.weights else { return Ok(raw) };
        let cols = w.dims()[1];
        if features.len() + 1 != cols {
            return Err(Error::dim("calibration", "feature width", cols - 1, features.len()));
        }
        let mut out = [0.0; 2];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &w.data()[r * cols..(r + 1) * cols];
            *o = row[cols - 1] as f64
                + row[..cols - 1]
                    .iter()
                    .zip(features)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>();
        }
        Ok(out)
    }
}

/// Eigendecomposition of a symmetric `n×n` matrix (row-major). Returns
/// eigenvalues and column eigenvectors, row-major.
fn symmetric_eigen(a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let eig = nalgebra::DMatrix::from_row_slice(n, n, &a).symmetric_eigen();
    let vecs = (0..n * n).map(|i| eig.eigenvectors[(i / n, i % n)]).collect();
    (eig.eigenvalues.iter().copied().collect(), vecs)
}

/// Ridge regression from `features [M, F]` to `targets [M, 2]` with an
/// unpenalized bias, solved in f64 on centered data. With `ridge_lambda = 0`
/// a rank-deficient system yields the minimum-norm least-squares solution.
pub fn fit_calibration(
    features: &Tensor,
    targets: &Tensor,
    ridge_lambda: f64,
    subject_id: u32,
    k_points: usize,
) -> Result<CalibrationModel> {
    if features.ndim() != 2 || targets.ndim() != 2 || targets.dims()[1] != 2 {
        return Err(Error::Contract("calibration expects [M, F] features and [M, 2] targets".into()));
    }
    let (m, f) = (features.dims()[0], features.dims()[1]);
    if targets.dims()[0] != m {
        return Err(Error::dim("fit_calibration", "rows", m, targets.dims()[0]));
    }
    if !(ridge_lambda >= 0.0) {
        return Err(Error::Config(format!("ridge_lambda must be ≥ 0, got {ridge_lambda}")));
    }
    let x = |i: usize, j: usize| features.data()[i * f + j] as f64;
    let y = |i: usize, r: usize| targets.data()[i * 2 + r] as f64;
    let mean_x: Vec<f64> = (0..f).map(|j| (0..m).map(|i| x(i, j)).sum::<f64>() / m as f64).collect();
    let mean_y: [f64; 2] = [0, 1].map(|r| (0..m).map(|i| y(i, r)).sum::<f64>() / m as f64);

    let mut gram = vec![0.0; f * f];
    let mut xty = vec![0.0; f * 2];
    for i in 0..m {
        let xc: Vec<f64> = (0..f).map(|j| x(i, j) - mean_x[j]).collect();
        let yc = [y(i, 0) - mean_y[0], y(i, 1) - mean_y[1]];
        for a in 0..f {
            for b in 0..f {
                gram[a * f + b] += xc[a] * xc[b];
            }
            xty[a * 2] += xc[a] * yc[0];
            xty[a * 2 + 1] += xc[a] * yc[1];
        }
    }

    let (eig, vecs) = symmetric_eigen(gram, f);
    let top = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = top * f as f64 * 1e-12;
    // W = V · diag(1 / (s + λ)) · Vᵀ · Xᵀy, dropping null directions when λ = 0.
    let mut w = vec![[0.0f64; 2]; f];
    for k in 0..f {
        let denom = eig[k] + ridge_lambda;
        if ridge_lambda == 0.0 && eig[k] <= cutoff || denom <= 0.0 || !denom.is_finite() {
            continue;
        }
        for r in 0..2 {
            let proj: f64 = (0..f).map(|a| vecs[a * f + k] * xty[a * 2 + r]).sum();
            let coef = proj / denom;
            for (a, wa) in w.iter_mut().enumerate() {
                wa[r] += vecs[a * f + k] * coef;
            }
        }
    }

    let mut out = Vec::with_capacity(2 * (f + 1));
    for r in 0..2 {
        out.extend(w.iter().map(|wa| wa[r] as f32));
        let bias = mean_y[r] - (0..f).map(|a| w[a][r] * mean_x[a]).sum::<f64>();
        out.push(bias as f32);
    }
    Ok(CalibrationModel {
        subject_id,
        k_points,
        weights: Some(Tensor::new(&[2, f + 1], out)?),
    })
}

/// Calibration and evaluation dot ids of one session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationSplit {
    pub calibration: Vec<u32>,
    pub evaluation: Vec<u32>,
}

/// The first `k` fixed locations (corners, center, lattice edges, screen
/// edges) calibrate; every non-fixed dot evaluates.
pub fn select_calibration_dots(session: &SessionRecord, k: usize) -> Result<CalibrationSplit> {
    let chosen = calibration_fixed_indices(k)?;
    if !session.has_complete_fixed_set() {
        return Err(Error::Contract(format!(
            "subject {} session {} lacks the full set of fixed dots",
            session.subject_id, session.session_id
        )));
    }
    let mut calibration = Vec::new();
    let mut evaluation = Vec::new();
    let mut taken = std::collections::BTreeSet::new();
    for d in &session.dots {
        match d.fixed_index {
            Some(i) if chosen.contains(&i) && taken.insert(i) => calibration.push(d.dot_id),
            Some(_) => {}
            None => evaluation.push(d.dot_id),
        }
    }
    Ok(CalibrationSplit {
        calibration,
        evaluation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub subject: u32,
    pub k: usize,
    pub error_cm: f64,
    pub dot_error_cm: f64,
}

/// `subject,k,error_cm,dot_error_cm` CSV.
pub fn calibration_csv(rows: &[CalibrationRow]) -> String {
    let mut s = String::from("subject,k,error_cm,dot_error_cm\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6},{:.6}\n", r.subject, r.k, r.error_cm, r.dot_error_cm));
    }
    s
}

/// Calibrated predictions and per-subject scores for one `k`.
#[derive(Clone, Debug)]
pub struct CalibrationRun {
    pub rows: Vec<CalibrationRow>,
    /// Evaluation frames (all frames when `k = 0`) with calibrated raw predictions.
    pub frames: Vec<usize>,
    pub preds: Vec<[f64; 2]>,
}

/// Fits one calibration per session on its first `k` fixed dots and scores
/// the calibrated predictions on the session's non-fixed dots. With `k = 0`
/// raw predictions are scored on every frame. `preds` and `features` are the
/// network outputs for `frames`, index-aligned.
pub fn calibrate_sessions(
    frames: &[&FrameSample],
    preds: &[[f64; 2]],
    features: &[Vec<f32>],
    devices: &DeviceTable,
    k: usize,
    ridge_lambda: f64,
) -> Result<CalibrationRun> {
    calibration_fixed_indices(k)?;
    if frames.len() != preds.len() || frames.len() != features.len() {
        return Err(Error::dim("calibrate", "frames", frames.len(), preds.len().min(features.len())));
    }
    let mut by_session: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (i, f) in frames.iter().enumerate() {
        by_session.entry((f.subject_id, f.session_id)).or_default().push(i);
    }
    let mut run = CalibrationRun {
        rows: Vec::new(),
        frames: Vec::new(),
        preds: Vec::new(),
    };
    for ((subject, _), idx) in &by_session {
        let sessions = sessions_from_frames(idx.iter().map(|&i| frames[i]))?;
        let session = &sessions[0];
        let first = frames[idx[0]];
        let dev = devices.get(&first.device)?;
        let o = first.orientation;

        let (model, eval_idx): (CalibrationModel, Vec<usize>) = if k == 0 {
            (CalibrationModel::identity(*subject), idx.clone())
        } else {
            let split = select_calibration_dots(session, k)?;
            let calib: BTreeSet<u32> = split.calibration.iter().copied().collect();
            let evals: BTreeSet<u32> = split.evaluation.iter().copied().collect();
            let fit_idx: Vec<usize> = idx.iter().copied().filter(|&i| calib.contains(&frames[i].dot_id)).collect();
            if fit_idx.is_empty() {
                return Err(Error::Contract(format!("subject {subject}: no calibration frames")));
            }
            let width = features[fit_idx[0]].len();
            let x = Tensor::new(
                &[fit_idx.len(), width],
                fit_idx.iter().flat_map(|&i| features[i].iter().copied()).collect(),
            )?;
            let y = Tensor::new(
                &[fit_idx.len(), 2],
                fit_idx.iter().flat_map(|&i| frames[i].target_cm_f32()).collect(),
            )?;
            let model = fit_calibration(&x, &y, ridge_lambda, *subject, k)?;
            let eval_idx = idx.iter().copied().filter(|&i| evals.contains(&frames[i].dot_id)).collect();
            (model, eval_idx)
        };
        if eval_idx.is_empty() {
            return Err(Error::Contract(format!("subject {subject}: no evaluation dots")));
        }

        let clamp = |p: [f64; 2]| truncate_to_screen(p, dev, o);
        let mut finals = Vec::with_capacity(eval_idx.len());
        let mut truths = Vec::with_capacity(eval_idx.len());
        let mut per_dot: BTreeMap<u32, DotPredictions> = BTreeMap::new();
        for &i in &eval_idx {
            let p = model.apply(&features[i], preds[i])?;
            finals.push(clamp(p));
            truths.push(frames[i].target.cam_cm);
            per_dot
                .entry(frames[i].dot_id)
                .or_insert_with(|| DotPredictions {
                    truth: frames[i].target.cam_cm,
                    preds: Vec::new(),
                })
                .preds
                .push(p);
            run.frames.push(i);
            run.preds.push(p);
        }
        let dots: Vec<DotPredictions> = per_dot.into_values().collect();
        run.rows.push(CalibrationRow {
            subject: *subject,
            k,
            error_cm: frame_error(&finals, &truths)?,
            dot_error_cm: dot_error(&dots, clamp)?,
        });
    }
    Ok(run)
}
