//! Frame and dot error, test-time augmentation, baselines, heatmaps and the
//! subjects-vs-samples study.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment_25, FrameSample};
use crate::error::{Error, Result};
use crate::geometry::{screen_center_cm, truncate_to_screen, DeviceSpec, DeviceTable, Orientation};
use crate::model::ModelConfig;
use crate::params::ModelParams;
use crate::rng::{stream, tag};
use crate::training::{train, TrainConfig};

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Mean Euclidean distance between final (already truncated) predictions and truths.
pub fn frame_error(preds: &[[f64; 2]], truths: &[[f64; 2]]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Contract("frame_error of zero frames".into()));
    }
    if preds.len() != truths.len() {
        return Err(Error::dim("frame_error", "frames", truths.len(), preds.len()));
    }
    Ok(preds.iter().zip(truths).map(|(p, t)| dist(*p, *t)).sum::<f64>() / preds.len() as f64)
}

/// Raw per-frame predictions for one displayed dot.
#[derive(Clone, Debug, PartialEq)]
pub struct DotPredictions {
    pub truth: [f64; 2],
    pub preds: Vec<[f64; 2]>,
}

/// Truncated mean prediction of one dot: every frame is truncated, the
/// results are averaged, and the mean truncated once more.
pub fn dot_mean(preds: &[[f64; 2]], clamp: &impl Fn([f64; 2]) -> [f64; 2]) -> Result<[f64; 2]> {
    if preds.is_empty() {
        return Err(Error::Contract("dot without frames".into()));
    }
    let n = preds.len() as f64;
    let mut m = [0.0; 2];
    for p in preds {
        let c = clamp(*p);
        m[0] += c[0] / n;
        m[1] += c[1] / n;
    }
    Ok(clamp(m))
}

/// Mean over dots of the distance between the dot's averaged prediction and its truth.
pub fn dot_error(dots: &[DotPredictions], clamp: impl Fn([f64; 2]) -> [f64; 2]) -> Result<f64> {
    if dots.is_empty() {
        return Err(Error::Contract("dot_error of zero dots".into()));
    }
    let mut total = 0.0;
    for d in dots {
        total += dist(dot_mean(&d.preds, &clamp)?, d.truth);
    }
    Ok(total / dots.len() as f64)
}

/// Frame error of always predicting the screen center.
pub fn center_baseline(dev: &DeviceSpec, o: Orientation, truths: &[[f64; 2]]) -> Result<f64> {
    let c = screen_center_cm(dev, o);
    frame_error(&vec![c; truths.len()], truths)
}

/// Raw network predictions and penultimate features for every frame, in
/// batches of `batch_size`.
pub fn predict_frames(
    model: &ModelConfig,
    params: &ModelParams,
    frames: &[&FrameSample],
    batch_size: usize,
) -> Result<(Vec<[f64; 2]>, Vec<Vec<f32>>)> {
    let mut preds = Vec::with_capacity(frames.len());
    let mut feats = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(batch_size.max(1)) {
        let out = model.predict(params, &model.batch(chunk)?)?;
        let w = out.features.dims()[1];
        for i in 0..chunk.len() {
            let p = out.pred.row(i);
            preds.push([p[0] as f64, p[1] as f64]);
            feats.push(out.features.data()[i * w..(i + 1) * w].to_vec());
        }
    }
    Ok((preds, feats))
}

/// Mean raw prediction over the 25 shifted copies of `sample`.
pub fn predict_with_test_augmentation(
    model: &ModelConfig,
    params: &ModelParams,
    sample: &FrameSample,
    max_shift: f64,
) -> Result<[f64; 2]> {
    let copies = augment_25(sample, max_shift);
    let refs: Vec<&FrameSample> = copies.iter().collect();
    let out = model.predict(params, &model.batch(&refs)?)?;
    let mut m = [0.0f64; 2];
    for i in 0..25 {
        let p = out.pred.row(i);
        m[0] += p[0] as f64;
        m[1] += p[1] as f64;
    }
    Ok([m[0] / 25.0, m[1] / 25.0])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub test_augment: bool,
    /// Augmentation shift as a fraction of the crop side.
    pub max_shift_frac: f64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            test_augment: false,
            max_shift_frac: 0.05,
            batch_size: 64,
        }
    }
}

/// Raw predictions for `frames`, optionally averaged over test-time shifts.
pub fn predict_all(
    model: &ModelConfig,
    params: &ModelParams,
    frames: &[&FrameSample],
    opts: &EvalOptions,
) -> Result<Vec<[f64; 2]>> {
    if !opts.test_augment {
        return Ok(predict_frames(model, params, frames, opts.batch_size)?.0);
    }
    frames
        .iter()
        .map(|s| {
            let shift = opts.max_shift_frac * s.crop_size() as f64;
            predict_with_test_augmentation(model, params, s, shift)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotEval {
    pub subject_id: u32,
    pub session_id: u32,
    pub dot_id: u32,
    pub device: String,
    pub orientation: Orientation,
    pub truth_cm: [f64; 2],
    pub mean_pred_cm: [f64; 2],
    pub n_frames: usize,
    pub error_cm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEval {
    pub device: String,
    pub orientation: Orientation,
    pub n_frames: usize,
    pub n_dots: usize,
    pub error_cm: f64,
    pub dot_error_cm: f64,
    pub baseline_center_error_cm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// One entry per (device, orientation).
    pub groups: Vec<GroupEval>,
    /// Pooled over all frames and dots.
    pub overall: GroupEval,
    pub dots: Vec<DotEval>,
}

/// Scores raw predictions: frame error on truncated predictions, dot error on
/// truncated dot means, and the center baseline, per (device, orientation).
pub fn evaluate_predictions(
    frames: &[&FrameSample],
    preds: &[[f64; 2]],
    devices: &DeviceTable,
) -> Result<EvalReport> {
    if frames.is_empty() {
        return Err(Error::Contract("evaluation of zero frames".into()));
    }
    if frames.len() != preds.len() {
        return Err(Error::dim("evaluate", "frames", frames.len(), preds.len()));
    }
    type Key = (String, Orientation);
    let mut by_group: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    for (i, f) in frames.iter().enumerate() {
        by_group.entry(f.device_key()).or_default().push(i);
    }

    let mut groups = Vec::new();
    let mut dots_out = Vec::new();
    let (mut all_frame, mut all_base, mut all_dot) = (0.0, 0.0, 0.0);
    for ((device, o), idx) in &by_group {
        let dev = devices.get(device)?;
        let clamp = |p: [f64; 2]| truncate_to_screen(p, dev, *o);
        let truths: Vec<[f64; 2]> = idx.iter().map(|&i| frames[i].target.cam_cm).collect();
        let final_preds: Vec<[f64; 2]> = idx.iter().map(|&i| clamp(preds[i])).collect();
        let err = frame_error(&final_preds, &truths)?;
        let base = center_baseline(dev, *o, &truths)?;

        let mut per_dot: BTreeMap<(u32, u32, u32), DotPredictions> = BTreeMap::new();
        for &i in idx {
            let f = frames[i];
            per_dot
                .entry((f.subject_id, f.session_id, f.dot_id))
                .or_insert_with(|| DotPredictions {
                    truth: f.target.cam_cm,
                    preds: Vec::new(),
                })
                .preds
                .push(preds[i]);
        }
        let dots: Vec<DotPredictions> = per_dot.values().cloned().collect();
        let derr = dot_error(&dots, clamp)?;
        for ((subject_id, session_id, dot_id), d) in &per_dot {
            let mean = dot_mean(&d.preds, &clamp)?;
            dots_out.push(DotEval {
                subject_id: *subject_id,
                session_id: *session_id,
                dot_id: *dot_id,
                device: device.clone(),
                orientation: *o,
                truth_cm: d.truth,
                mean_pred_cm: mean,
                n_frames: d.preds.len(),
                error_cm: dist(mean, d.truth),
            });
        }
        all_frame += err * idx.len() as f64;
        all_base += base * idx.len() as f64;
        all_dot += derr * per_dot.len() as f64;
        groups.push(GroupEval {
            device: device.clone(),
            orientation: *o,
            n_frames: idx.len(),
            n_dots: per_dot.len(),
            error_cm: err,
            dot_error_cm: derr,
            baseline_center_error_cm: base,
        });
    }
    let n_frames = frames.len();
    let n_dots = dots_out.len();
    let overall = GroupEval {
        device: "all".into(),
        orientation: groups[0].orientation,
        n_frames,
        n_dots,
        error_cm: all_frame / n_frames as f64,
        dot_error_cm: all_dot / n_dots as f64,
        baseline_center_error_cm: all_base / n_frames as f64,
    };
    Ok(EvalReport {
        groups,
        overall,
        dots: dots_out,
    })
}

/// Predicts and scores `frames` in one call.
pub fn evaluate(
    model: &ModelConfig,
    params: &ModelParams,
    frames: &[&FrameSample],
    devices: &DeviceTable,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let preds = predict_all(model, params, frames, opts)?;
    evaluate_predictions(frames, &preds, devices)
}

impl EvalReport {
    /// `device,orientation,n_frames,n_dots,error_cm,dot_error_cm,center_baseline_cm`
    /// with one row per (device, orientation) and a final `all` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("device,orientation,n_frames,n_dots,error_cm,dot_error_cm,center_baseline_cm\n");
        let row = |g: &GroupEval, orientation: &str| {
            format!(
                "{},{},{},{},{:.6},{:.6},{:.6}\n",
                g.device, orientation, g.n_frames, g.n_dots, g.error_cm, g.dot_error_cm, g.baseline_center_error_cm
            )
        };
        for g in &self.groups {
            s.push_str(&row(g, g.orientation.as_str()));
        }
        s.push_str(&row(&self.overall, "all"));
        s
    }

    /// Per-dot records as `subject,session,dot,device,orientation,truth_x_cm,truth_y_cm,pred_x_cm,pred_y_cm,n_frames,error_cm`.
    pub fn dots_csv(&self) -> String {
        let mut s = String::from(
            "subject,session,dot,device,orientation,truth_x_cm,truth_y_cm,pred_x_cm,pred_y_cm,n_frames,error_cm\n",
        );
        for d in &self.dots {
            s.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{:.6}\n",
                d.subject_id,
                d.session_id,
                d.dot_id,
                d.device,
                d.orientation,
                d.truth_cm[0],
                d.truth_cm[1],
                d.mean_pred_cm[0],
                d.mean_pred_cm[1],
                d.n_frames,
                d.error_cm
            ));
        }
        s
    }
}

/// Mean dot error binned by truth location on a square grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub cell_cm: f64,
    /// `(col, row)` cell index → (sum of errors, dot count). Empty cells are absent.
    pub cells: BTreeMap<(i64, i64), (f64, usize)>,
}

pub const DEFAULT_HEATMAP_CELL_CM: f64 = 0.5;

pub fn error_heatmap(dots: &[DotEval], cell_cm: f64) -> Result<Heatmap> {
    if !(cell_cm > 0.0 && cell_cm.is_finite()) {
        return Err(Error::Config(format!("heatmap cell size must be positive, got {cell_cm}")));
    }
    let mut cells: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
    for d in dots {
        let key = (
            (d.truth_cm[0] / cell_cm).floor() as i64,
            (d.truth_cm[1] / cell_cm).floor() as i64,
        );
        let e = cells.entry(key).or_insert((0.0, 0));
        e.0 += d.error_cm;
        e.1 += 1;
    }
    Ok(Heatmap { cell_cm, cells })
}

impl Heatmap {
    pub fn mean(&self, key: (i64, i64)) -> Option<f64> {
        self.cells.get(&key).map(|(s, n)| s / *n as f64)
    }

    /// `x_cm,y_cm,mean_error_cm,n_dots` with the lower-left corner of each
    /// non-empty cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x_cm,y_cm,mean_error_cm,n_dots\n");
        for (&(cx, cy), &(sum, n)) in &self.cells {
            s.push_str(&format!(
                "{:.3},{:.3},{:.6},{}\n",
                cx as f64 * self.cell_cm,
                cy as f64 * self.cell_cm,
                sum / n as f64,
                n
            ));
        }
        s
    }
}

/// One grid point of the subjects-vs-samples study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub n_subjects: usize,
    pub samples_per: usize,
}

/// Parses lines `n_subjects,samples_per`; `#` starts a comment.
pub fn parse_budgets(text: &str, origin: &str) -> Result<Vec<Budget>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            file: origin.to_string(),
            line: i + 1,
            msg,
        };
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(parse_err(format!("expected n_subjects,samples_per, got {line:?}")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| parse_err(format!("{s:?}: {e}")));
        let b = Budget {
            n_subjects: num(parts[0])?,
            samples_per: num(parts[1])?,
        };
        if b.n_subjects == 0 || b.samples_per == 0 {
            return Err(parse_err("budget entries must be positive".into()));
        }
        out.push(b);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{origin}: no budgets")));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n_subjects: usize,
    pub samples_per: usize,
    /// Median test frame error over the study seeds.
    pub error: f64,
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut s = String::from("n_subjects,samples_per,error\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6}\n", r.n_subjects, r.samples_per, r.error));
    }
    s
}

/// Training subset for one budget: `n_subjects` subjects drawn under `seed`,
/// each contributing `samples_per` frames drawn under `seed`.
pub fn budget_subset<'a>(
    corpus: &'a [FrameSample],
    budget: Budget,
    seed: u64,
) -> Result<Vec<&'a FrameSample>> {
    let mut per_subject: BTreeMap<u32, Vec<&FrameSample>> = BTreeMap::new();
    for f in corpus {
        per_subject.entry(f.subject_id).or_default().push(f);
    }
    if budget.n_subjects > per_subject.len() {
        return Err(Error::Config(format!(
            "budget needs {} subjects, corpus has {}",
            budget.n_subjects,
            per_subject.len()
        )));
    }
    let fewest = per_subject.values().map(Vec::len).min().unwrap_or(0);
    if budget.samples_per > fewest {
        return Err(Error::Config(format!(
            "budget needs {} samples per subject, smallest subject has {fewest}",
            budget.samples_per
        )));
    }
    let mut ids: Vec<u32> = per_subject.keys().copied().collect();
    ids.shuffle(&mut stream(seed, &[tag::STUDY, 0]));
    let mut out = Vec::with_capacity(budget.n_subjects * budget.samples_per);
    for id in ids.into_iter().take(budget.n_subjects) {
        let mut frames = per_subject[&id].clone();
        frames.shuffle(&mut stream(seed, &[tag::STUDY, 1, id as u64]));
        out.extend(frames.into_iter().take(budget.samples_per));
    }
    Ok(out)
}

/// Trains one model per (budget, seed) on the budget's subset of `corpus`
/// and reports the median test frame error per budget.
pub fn subjects_vs_samples_study(
    corpus: &[FrameSample],
    test: &[&FrameSample],
    devices: &DeviceTable,
    budgets: &[Budget],
    model: &ModelConfig,
    tcfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<StudyRow>> {
    if seeds.is_empty() || budgets.is_empty() {
        return Err(Error::Config("study needs at least one budget and one seed".into()));
    }
    let train_ids: BTreeSet<u32> = corpus.iter().map(|f| f.subject_id).collect();
    if test.iter().any(|f| train_ids.contains(&f.subject_id)) {
        return Err(Error::Contract("study test subjects overlap the training corpus".into()));
    }
    for b in budgets {
        budget_subset(corpus, *b, seeds[0])?;
    }
    let mut rows = Vec::with_capacity(budgets.len());
    for b in budgets {
        let mut errors = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let subset: Vec<FrameSample> = budget_subset(corpus, *b, seed)?.into_iter().cloned().collect();
            let cfg = TrainConfig { seed, ..tcfg.clone() };
            let params = model.build(seed)?;
            let trained = train(model, params, &subset, &cfg)?;
            let report = evaluate(model, &trained.params, test, devices, &EvalOptions::default())?;
            errors.push(report.overall.error_cm);
        }
        rows.push(StudyRow {
            n_subjects: b.n_subjects,
            samples_per: b.samples_per,
            error: median(&mut errors),
        });
    }
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}
