use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use attnet::data::{generate_synthetic_sequence, load_kitti_scan, scan_paths, CourseShape, Sequence, SyntheticConfig};
use attnet::evaluation::{
    ablation_csv, ablation_grid, cross_validate, describe_sequence, evaluate_map, evaluate_sequence, folds_csv,
    measure_fps, recall_curve_csv, Metrics, RecallCurve,
};
use attnet::model::{encode_checkpoint, load_checkpoint, ModelState};
use attnet::projection::{encode_range_image, project, ProjectionConfig};
use attnet::retrieval::{build_map, encode_map, load_map};
use attnet::run_config::{RunConfig, DATA_ROOT_ENV};
use attnet::training::{train, EpochRecord, LabeledSequence, StepRecord, TrainObserver};

use crate::failure::{CmdResult, Failure};
use crate::manifest::{io_failure, Manifest};

pub fn load_config(path: &Path) -> CmdResult<RunConfig> {
    RunConfig::load(path).map_err(Failure::usage)
}

fn data_root(cfg: &RunConfig) -> CmdResult<PathBuf> {
    let env = std::env::var(DATA_ROOT_ENV).ok();
    cfg.resolve_data_root(env.as_deref()).map_err(Failure::usage)
}

fn open_sequence(cfg: &RunConfig, root: &Path, tag: &str) -> CmdResult<LabeledSequence> {
    let seq = Sequence::open_kitti(root, tag)?;
    Ok(LabeledSequence::new(seq, cfg.protocol.r_th, cfg.protocol.min_frame_gap)?)
}

fn load_sequences(cfg: &RunConfig) -> CmdResult<Vec<LabeledSequence>> {
    if cfg.sequences.is_empty() {
        return Err(Failure::usage_msg("config", "config lists no sequences"));
    }
    let root = data_root(cfg)?;
    cfg.sequences.iter().map(|tag| open_sequence(cfg, &root, tag)).collect()
}

fn load_state(path: &Path) -> CmdResult<ModelState> {
    if !path.is_file() {
        return Err(Failure::usage_msg("io", format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

pub fn project_scans(input: &Path, out: &Path, projection: &ProjectionConfig) -> CmdResult<()> {
    if !input.exists() {
        return Err(Failure::usage_msg("io", format!("input {} does not exist", input.display())));
    }
    let scans = if input.is_file() {
        vec![input.to_path_buf()]
    } else {
        let velodyne = input.join("velodyne");
        scan_paths(if velodyne.is_dir() { &velodyne } else { input })?
    };
    if scans.is_empty() {
        return Err(Failure::usage_msg("data", format!("no .bin scans under {}", input.display())));
    }
    let config = format!(
        "width = {}\nheight = {}\nfov_up = {}\nfov_down = {}\n",
        projection.width,
        projection.height,
        projection.fov_up.to_degrees(),
        projection.fov_down.to_degrees()
    );
    let mut manifest = Manifest::new("project", config);
    let mut fractions = Vec::with_capacity(scans.len());
    for path in &scans {
        let image = project(&load_kitti_scan(path)?, projection)?;
        fractions.push(image.valid_fraction());
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        manifest.write(&out.join(format!("{stem}.arng")), &encode_range_image(&image))?;
    }
    manifest.finish(out)?;
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let (lo, hi) = fractions
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &f| (lo.min(f), hi.max(f)));
    println!(
        "projected {} scan(s) to {}: valid-pixel fraction mean {mean:.4} min {lo:.4} max {hi:.4}",
        scans.len(),
        out.display()
    );
    Ok(())
}

pub struct SynthOptions {
    pub out: PathBuf,
    pub sequences: usize,
    pub frames: usize,
    pub seed: u64,
    pub course: String,
    pub size: f64,
    pub lap_offset: Option<f64>,
}

pub fn synthesize(opts: &SynthOptions) -> CmdResult<()> {
    let course = match opts.course.as_str() {
        "circle" => CourseShape::Circle { radius: opts.size },
        "out-and-back" => CourseShape::OutAndBack { length: opts.size },
        other => {
            return Err(Failure::usage_msg(
                "config",
                format!("unknown course '{other}' (circle|out-and-back)"),
            ))
        }
    };
    let mut manifest = Manifest::new(
        "synth",
        format!(
            "sequences = {}\nframes = {}\nseed = {}\ncourse = {}\nsize = {}\n",
            opts.sequences, opts.frames, opts.seed, opts.course, opts.size
        ),
    );
    for i in 0..opts.sequences {
        let defaults = SyntheticConfig::default();
        let cfg = SyntheticConfig {
            course,
            frames: opts.frames,
            seed: opts.seed + i as u64,
            lap_offset: opts.lap_offset.unwrap_or(defaults.lap_offset),
            ..defaults
        };
        cfg.validate().map_err(Failure::usage)?;
        let tag = format!("{i:02}");
        let seq = generate_synthetic_sequence(&cfg)?;
        seq.write_kitti_layout(&opts.out, &tag)?;
        for cloud in &seq.clouds {
            manifest.record(&opts.out.join(format!("sequences/{tag}/velodyne/{:06}.bin", cloud.frame_id)));
        }
        manifest.record(&opts.out.join(format!("poses/{tag}.txt")));
        manifest.write(&opts.out.join(format!("synthetic-{tag}.txt")), cfg.to_manifest().as_bytes())?;
        println!("sequence {tag}: {} frames", seq.clouds.len());
    }
    manifest.finish(&opts.out)?;
    Ok(())
}

struct TrainLog {
    log: BufWriter<File>,
    log_path: PathBuf,
    checkpoint_every: Option<usize>,
    checkpoint_dir: PathBuf,
    checkpoints: Vec<PathBuf>,
}

impl TrainObserver for TrainLog {
    fn on_step(&mut self, r: &StepRecord) -> attnet::Result<()> {
        writeln!(self.log, "{}", r.log_line()).map_err(|e| attnet::Error::Io {
            path: self.log_path.clone(),
            source: e,
        })
    }

    fn on_epoch(&mut self, r: &EpochRecord, state: &ModelState) -> attnet::Result<()> {
        if self.checkpoint_every.is_some_and(|k| k > 0 && r.epoch.is_multiple_of(k)) {
            let path = self.checkpoint_dir.join(format!("epoch-{:03}.adlw", r.epoch));
            std::fs::create_dir_all(&self.checkpoint_dir).map_err(|e| attnet::Error::Io {
                path: self.checkpoint_dir.clone(),
                source: e,
            })?;
            attnet::model::save_checkpoint(&path, state)?;
            self.checkpoints.push(path);
        }
        Ok(())
    }
}

pub fn train_model(cfg: &RunConfig, checkpoint_every: Option<usize>) -> CmdResult<()> {
    let model = cfg.model_config().map_err(Failure::usage)?;
    let sequences = load_sequences(cfg)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let log_path = out.join("train.log");
    let file = File::create(&log_path).map_err(|e| io_failure(&log_path, e))?;
    let mut observer = TrainLog {
        log: BufWriter::new(file),
        log_path: log_path.clone(),
        checkpoint_every,
        checkpoint_dir: out.join("checkpoints"),
        checkpoints: Vec::new(),
    };
    let state = ModelState::new(model, cfg.train.seed)?;
    let refs: Vec<&LabeledSequence> = sequences.iter().collect();
    let (state, report) = train(state, &refs, &cfg.projection, &cfg.train, &mut observer)?;
    observer.log.flush().map_err(|e| io_failure(&log_path, e))?;

    let mut manifest = Manifest::new("train", cfg.to_text());
    manifest.record(&log_path);
    for p in &observer.checkpoints {
        manifest.record(p);
    }
    manifest.write(&out.join("model.adlw"), &encode_checkpoint(&state))?;
    manifest.finish(out)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "trained {} for {} epoch(s): loss {:.4} -> {:.4}, gamma {:?}",
            state.config().name(),
            report.epochs.len(),
            report.epochs[0].mean_loss,
            last.mean_loss,
            report.final_gammas
        );
    }
    Ok(())
}

pub fn build_map_file(cfg: &RunConfig, checkpoint: &Path, tag: &str, out: Option<PathBuf>) -> CmdResult<()> {
    let state = load_state(checkpoint)?;
    let root = data_root(cfg)?;
    let seq = Sequence::open_kitti(&root, tag)?;
    let map = build_map(describe_sequence(&state, &seq, &cfg.projection)?, tag)?;
    let path = out.unwrap_or_else(|| cfg.output_dir.join("maps").join(format!("{tag}.adlm")));
    let mut manifest = Manifest::new("build-map", cfg.to_text());
    manifest.write(&path, &encode_map(&map))?;
    manifest.finish(&cfg.output_dir)?;
    println!("map {}: {} descriptors of length {}", path.display(), map.len(), map.dim());
    Ok(())
}

pub fn query_scan(cfg: &RunConfig, checkpoint: &Path, map: &Path, scan: &Path, top: usize) -> CmdResult<()> {
    if !scan.is_file() {
        return Err(Failure::usage_msg("io", format!("scan {} does not exist", scan.display())));
    }
    if top == 0 {
        return Err(Failure::usage_msg("config", "-n must be at least 1"));
    }
    let state = load_state(checkpoint)?;
    let map = load_map(map)?;
    let q = attnet::model::describe(&load_kitti_scan(scan)?, &state, &cfg.projection)?;
    let result = map.query(&q, top)?;
    let mut text = String::from("rank,frame_id,similarity\n");
    for (i, c) in result.candidates.iter().enumerate() {
        text.push_str(&format!("{},{},{:.6}\n", i + 1, c.frame_id, c.similarity));
    }
    print!("{text}");
    let mut manifest = Manifest::new("query", cfg.to_text());
    manifest.write(&cfg.output_dir.join(format!("query-{}.csv", q.frame_id)), text.as_bytes())?;
    manifest.finish(&cfg.output_dir)?;
    Ok(())
}

fn curve_rows(name: &str, per_sequence: &[(String, RecallCurve)], mean: Option<RecallCurve>) -> Vec<(String, RecallCurve)> {
    let mut rows: Vec<(String, RecallCurve)> = per_sequence
        .iter()
        .map(|(tag, c)| (format!("{name}@{tag}"), c.clone()))
        .collect();
    if let Some(m) = mean {
        rows.push((name.to_string(), m));
    }
    rows
}

/// Cross-validation when `checkpoint` is `None`, otherwise evaluation of the
/// checkpoint on every configured sequence (against `map` for its sequence).
pub fn evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, map: Option<&Path>) -> CmdResult<()> {
    let sequences = load_sequences(cfg)?;
    let (name, metrics, curves, mean) = match checkpoint {
        None => {
            let model = cfg.model_config().map_err(Failure::usage)?;
            let cv = cross_validate(&sequences, &model, &cfg.train, &cfg.protocol, &cfg.projection)?;
            let metrics: Vec<Metrics> = cv.folds.iter().map(|f| f.metrics.clone()).collect();
            let curves = cv.folds.iter().map(|f| (f.held_out.clone(), f.curve.clone())).collect();
            (model.name(), metrics, curves, Some(cv.mean_curve()))
        }
        Some(path) => {
            let state = load_state(path)?;
            let map = map.map(load_map).transpose()?;
            let mut metrics = Vec::new();
            let mut curves = Vec::new();
            for seq in &sequences {
                if seq.ground_truth.is_empty() {
                    log::warn!("sequence {} has no loops, skipped", seq.tag());
                    continue;
                }
                let eval = match &map {
                    Some(m) if m.tag == seq.tag() => evaluate_map(m, seq, &cfg.protocol)?,
                    _ => evaluate_sequence(&state, seq, &cfg.projection, &cfg.protocol)?,
                };
                curves.push((seq.tag().to_string(), eval.curve));
                metrics.push(eval.metrics);
            }
            if metrics.is_empty() {
                return Err(Failure::from(attnet::Error::Data("no configured sequence has loops".into())));
            }
            (state.config().name(), metrics, curves, None)
        }
    };
    let out = &cfg.output_dir;
    let mut manifest = Manifest::new("eval", cfg.to_text());
    let folds = folds_csv(&metrics);
    manifest.write(&out.join("folds.csv"), folds.as_bytes())?;
    manifest.write(
        &out.join("recall_curve.csv"),
        recall_curve_csv(&curve_rows(&name, &curves, mean)).as_bytes(),
    )?;
    manifest.finish(out)?;
    print!("{folds}");
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> CmdResult<()> {
    let sequences = load_sequences(cfg)?;
    let rows = ablation_grid(&cfg.ablate_encoder, &cfg.ablate_attention, &sequences, &cfg.ablation_setup());
    let table = ablation_csv(&rows, &cfg.sequences);
    let curves: Vec<(String, RecallCurve)> = rows
        .iter()
        .filter_map(|r| Some((r.config.clone(), r.outcome.as_ref().ok()?.cross_validation.mean_curve())))
        .collect();
    let out = &cfg.output_dir;
    let mut manifest = Manifest::new("ablate", cfg.to_text());
    manifest.write(&out.join("ablation.csv"), table.as_bytes())?;
    manifest.write(&out.join("recall_curve.csv"), recall_curve_csv(&curves).as_bytes())?;
    manifest.finish(out)?;
    print!("{table}");
    for r in &rows {
        if let Err(e) = &r.outcome {
            eprintln!("{} failed: {e}", r.config);
        }
    }
    Ok(())
}

pub fn bench(cfg: &RunConfig, checkpoint: Option<&Path>) -> CmdResult<()> {
    let state = match checkpoint {
        Some(p) => load_state(p)?,
        None => ModelState::new(cfg.model_config().map_err(Failure::usage)?, cfg.train.seed)?,
    };
    let tag = cfg
        .sequences
        .first()
        .ok_or_else(|| Failure::usage_msg("config", "config lists no sequences"))?;
    let seq = Sequence::open_kitti(&data_root(cfg)?, tag)?;
    let n = (cfg.fps_warmup + cfg.fps_frames).min(seq.len());
    let clouds = (0..n).map(|i| seq.frames.load(i)).collect::<attnet::Result<Vec<_>>>()?;
    let fps = measure_fps(&state, &clouds, &cfg.projection, cfg.fps_warmup)?;
    let mut text = format!(
        "config,frames,fps_mean,fps_std\n{},{},{:.3},{:.3}\n",
        state.config().name(),
        n - cfg.fps_warmup.min(n),
        fps.mean,
        fps.std
    );
    for (i, (frames, secs)) in fps.repetitions.iter().enumerate() {
        text.push_str(&format!("# repetition {}: {frames} frames in {secs:.6} s\n", i + 1));
    }
    let mut manifest = Manifest::new("bench", cfg.to_text());
    manifest.write(&cfg.output_dir.join("bench.txt"), text.as_bytes())?;
    manifest.finish(&cfg.output_dir)?;
    print!("{text}");
    Ok(())
}
