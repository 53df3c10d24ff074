use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use gazetrack::calibration::{calibrate_sessions, calibration_csv};
use gazetrack::config::RunConfig;
use gazetrack::data::{sessions_from_frames, split_subjects, synth_generate, FrameSample, SubjectInfo, SynthConfig};
use gazetrack::evaluation::{
    error_heatmap, evaluate, evaluate_predictions, parse_budgets, predict_frames, study_csv,
    subjects_vs_samples_study, EvalOptions, EvalReport, DEFAULT_HEATMAP_CELL_CM,
};
use gazetrack::geometry::DeviceTable;
use gazetrack::io::{dataset_hash, load_checkpoint, load_dataset, save_checkpoint, save_dataset, Checkpoint, META_FILE};
use gazetrack::model::ModelConfig;
use gazetrack::training::{distill, fine_tune, trace_csv, train, TraceRow};
use gazetrack::{Error, Orientation, Tensor};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::Command;

/// Checkpoint extra holding the canonical run configuration as bytes.
const CONFIG_EXTRA: &str = "config";

pub fn init_threads() -> Result<()> {
    let threads = match std::env::var("GAZE_ENGINE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("GAZE_ENGINE_THREADS must be a positive integer, got {v:?}")))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("starting worker pool")?;
    Ok(())
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthGen {
            subjects,
            dots,
            frames,
            device,
            orientation,
            seed,
            out,
            first_subject,
            append,
            scale,
            devices,
        } => {
            let table = match devices {
                Some(p) => DeviceTable::load(&p)?,
                None => DeviceTable::builtin(),
            };
            let dev = table.get(&device)?.clone();
            let o: Orientation = orientation.parse()?;
            let mut cfg = match scale.as_str() {
                "desk" => SynthConfig::desk(),
                "full" => SynthConfig::full(),
                _ => return Err(Error::Config(format!("scale must be desk or full, got {scale:?}")).into()),
            };
            cfg.n_subjects = subjects;
            cfg.first_subject = first_subject;
            cfg.dots_per_session = dots;
            cfg.frames_per_dot = frames;
            if out.join(META_FILE).exists() && !append {
                return Err(Error::Config(format!(
                    "{} already holds a dataset; pass --append to add to it",
                    out.display()
                ))
                .into());
            }
            let (_, samples) = synth_generate(&cfg, &dev, o, seed)?;
            save_dataset(&out, &samples, &table)?;
            println!("wrote {} frames to {}", samples.len(), out.display());
        }
        Command::Train {
            data,
            config,
            out,
            augment_train,
            ablate,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.train.augment_train |= augment_train;
            if ablate.is_some() {
                cfg.ablate = ablate;
            }
            cfg.validate()?;
            let ds = load_dataset(&data)?;
            let mc = ModelConfig::ITracker(cfg.architecture()?);
            let outcome = train(&mc, mc.build(cfg.train.seed)?, &ds.frames, &cfg.train)?;
            let ckpt = with_config(Checkpoint::new(mc, outcome.params), &cfg)?;
            save_model(&ckpt, &out, &outcome.trace)?;
            print_last_loss(&outcome.trace);
        }
        Command::Finetune {
            data,
            device,
            orientation,
            from,
            out,
            config,
        } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let o: Orientation = orientation.parse()?;
            let ds = load_dataset(&data)?;
            ds.devices.get(&device)?;
            let subset: Vec<FrameSample> =
                ds.frames.into_iter().filter(|f| f.device == device && f.orientation == o).collect();
            if subset.is_empty() {
                return Err(Error::Contract(format!("no frames for {device} {o} in {}", data.display())).into());
            }
            let base = load_checkpoint(&from, None)?;
            let outcome = fine_tune(&base.config, base.params, &subset, &cfg.train)?;
            let ckpt = with_config(Checkpoint::new(base.config, outcome.params), &cfg)?;
            save_model(&ckpt, &out, &outcome.trace)?;
            print_last_loss(&outcome.trace);
        }
        Command::Eval {
            data,
            model,
            test_augment,
            report,
        } => {
            let ds = load_dataset(&data)?;
            let ckpt = load_checkpoint(&model, None)?;
            let refs: Vec<&FrameSample> = ds.frames.iter().collect();
            let opts = EvalOptions {
                test_augment,
                ..EvalOptions::default()
            };
            let r = evaluate(&ckpt.config, &ckpt.params, &refs, &ds.devices, &opts)?;
            write_eval(&report, &r)?;
            let mut m = manifest("eval", &data, &model, &ckpt)?;
            m["test_augment"] = json!(test_augment);
            m["error_cm"] = json!(r.overall.error_cm);
            m["dot_error_cm"] = json!(r.overall.dot_error_cm);
            write_file(&report.join("manifest.json"), &pretty(&m))?;
            print!("{}", r.to_csv());
        }
        Command::Calibrate {
            data,
            model,
            k,
            report,
            lambda,
        } => {
            let k: usize = k.parse().context("parsing --k")?;
            let ds = load_dataset(&data)?;
            let ckpt = load_checkpoint(&model, None)?;
            let lambda = match lambda {
                Some(l) => l,
                None => stored_config(&ckpt)?.map(|c| c.ridge_lambda).unwrap_or(gazetrack::config::DEFAULT_RIDGE_LAMBDA),
            };
            let refs: Vec<&FrameSample> = ds.frames.iter().collect();
            let (preds, feats) = predict_frames(&ckpt.config, &ckpt.params, &refs, EvalOptions::default().batch_size)?;
            let run = calibrate_sessions(&refs, &preds, &feats, &ds.devices, k, lambda)?;
            // Score the evaluation frames in dataset order.
            let mut scored: Vec<(usize, [f64; 2])> = run.frames.iter().copied().zip(run.preds.iter().copied()).collect();
            scored.sort_by_key(|(i, _)| *i);
            let frames: Vec<&FrameSample> = scored.iter().map(|(i, _)| refs[*i]).collect();
            let calibrated: Vec<[f64; 2]> = scored.iter().map(|(_, p)| *p).collect();
            let r = evaluate_predictions(&frames, &calibrated, &ds.devices)?;
            write_eval(&report, &r)?;
            write_file(&report.join("calibration.csv"), &calibration_csv(&run.rows))?;
            let mut m = manifest("calibrate", &data, &model, &ckpt)?;
            m["k"] = json!(k);
            m["ridge_lambda"] = json!(lambda);
            m["error_cm"] = json!(r.overall.error_cm);
            m["dot_error_cm"] = json!(r.overall.dot_error_cm);
            write_file(&report.join("manifest.json"), &pretty(&m))?;
            print!("{}", calibration_csv(&run.rows));
        }
        Command::Distill {
            data,
            teacher,
            config,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let ds = load_dataset(&data)?;
            let t = load_checkpoint(&teacher, None)?;
            let sc = ModelConfig::Student(cfg.student_architecture());
            let outcome = distill(
                &sc,
                sc.build(cfg.train.seed)?,
                &t.config,
                &t.params,
                &ds.frames,
                &cfg.distill,
                &cfg.train,
            )?;
            let mut ckpt = with_config(Checkpoint::new(sc, outcome.student), &cfg)?;
            ckpt.extras.insert("projection".into(), outcome.projection);
            save_model(&ckpt, &out, &outcome.trace)?;
            print_last_loss(&outcome.trace);
        }
        Command::Study {
            data,
            budgets,
            report,
            config,
            seeds,
            test_fraction,
        } => {
            let cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(Error::Config(format!("test fraction must lie in (0, 1), got {test_fraction}")).into());
            }
            if seeds == 0 {
                return Err(Error::Config("at least one seed is required".into()).into());
            }
            let text = fs::read_to_string(&budgets).map_err(|e| io_error(&budgets, e))?;
            let grid = parse_budgets(&text, &budgets.display().to_string())?;
            let ds = load_dataset(&data)?;

            let mut subjects: Vec<SubjectInfo> = Vec::new();
            for s in sessions_from_frames(ds.frames.iter())? {
                match subjects.iter_mut().find(|x| x.id == s.subject_id) {
                    Some(x) => x.complete_fixed_set |= s.has_complete_fixed_set(),
                    None => subjects.push(SubjectInfo {
                        id: s.subject_id,
                        complete_fixed_set: s.has_complete_fixed_set(),
                    }),
                }
            }
            let n_test = ((subjects.len() as f64 * test_fraction).round() as usize).max(1);
            let n_train = subjects.len().saturating_sub(n_test);
            let split = split_subjects(&subjects, n_train, 0, n_test, cfg.train.seed)?;
            let corpus: Vec<FrameSample> =
                ds.frames.iter().filter(|f| split.train.contains(&f.subject_id)).cloned().collect();
            let test: Vec<&FrameSample> = ds.frames.iter().filter(|f| split.test.contains(&f.subject_id)).collect();

            let mc = ModelConfig::ITracker(cfg.architecture()?);
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.train.seed + i).collect();
            let rows = subjects_vs_samples_study(&corpus, &test, &ds.devices, &grid, &mc, &cfg.train, &seed_list)?;
            fs::create_dir_all(&report).map_err(|e| io_error(&report, e))?;
            write_file(&report.join("study.csv"), &study_csv(&rows))?;
            let m = json!({
                "command": "study",
                "config_hash": cfg.hash(),
                "dataset_hash": dataset_hash(&data)?,
                "budgets_sha256": sha256_file(&budgets)?,
                "seeds": seed_list,
                "train_subjects": split.train,
                "test_subjects": split.test,
            });
            write_file(&report.join("manifest.json"), &pretty(&m))?;
            print!("{}", study_csv(&rows));
        }
    }
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> anyhow::Error {
    anyhow::Error::new(e).context(path.display().to_string())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("manifest serializes") + "\n"
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn with_config(mut ckpt: Checkpoint, cfg: &RunConfig) -> Result<Checkpoint> {
    let text = cfg.canonical();
    let t = Tensor::new(&[text.len()], text.bytes().map(f32::from).collect())?;
    ckpt.extras.insert(CONFIG_EXTRA.into(), t);
    Ok(ckpt)
}

/// The run configuration a checkpoint was trained under, if it records one.
fn stored_config(ckpt: &Checkpoint) -> Result<Option<RunConfig>> {
    let Some(t) = ckpt.extras.get(CONFIG_EXTRA) else { return Ok(None) };
    let bytes: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
    let text = String::from_utf8(bytes).map_err(|_| Error::Format("stored configuration is not UTF-8".into()))?;
    Ok(Some(RunConfig::parse(&text, "checkpoint")?))
}

/// Writes the checkpoint and its loss trace next to it.
fn save_model(ckpt: &Checkpoint, out: &Path, trace: &[TraceRow]) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    save_checkpoint(ckpt, out)?;
    write_file(&out.with_extension("trace.csv"), &trace_csv(trace))
}

fn print_last_loss(trace: &[TraceRow]) {
    if let Some(r) = trace.last() {
        println!("step {} loss {}", r.step, r.loss);
    }
}

fn manifest(command: &str, data: &Path, model: &Path, ckpt: &Checkpoint) -> Result<Value> {
    Ok(json!({
        "command": command,
        "config_hash": stored_config(ckpt)?.map(|c| c.hash()),
        "dataset_hash": dataset_hash(data)?,
        "model_sha256": sha256_file(model)?,
        "model": ckpt.config.to_json(),
    }))
}

fn write_eval(report: &Path, r: &EvalReport) -> Result<()> {
    fs::create_dir_all(report).map_err(|e| io_error(report, e))?;
    write_file(&report.join("eval.csv"), &r.to_csv())?;
    write_file(&report.join("dots.csv"), &r.dots_csv())?;
    write_file(&report.join("heatmap.csv"), &error_heatmap(&r.dots, DEFAULT_HEATMAP_CELL_CM)?.to_csv())
}
