//! `scenesynth`: drive the synthetic-scene pipeline from the shell.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or processing
//! error, 4 failed experiment assertion.

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use scenesynth_core::config::{load_config, load_experiment_spec, ConfigError, LoadedConfig};
use scenesynth_core::dataset::{
    import_csv_annotations, read_manifest, CoordConvention, CsvColumns, DatasetWriter,
    DIFFICULT_VISIBILITY,
};
use scenesynth_core::detect::{
    detect_pedestrians, train_detector, Detection, FrameSource, HogParams, LinearModel,
};
use scenesynth_core::evalkit::{
    emit_report, evaluate_frames, read_detections_csv, write_detections_csv, APResult,
    GroundTruthBox,
};
use scenesynth_core::pipeline::{
    background_plate, generate_dataset, render_and_label, run_experiment, DiskFrames,
    PipelineError,
};
use scenesynth_core::rasterlab::RenderMode;
use scenesynth_core::scenesim::simulate_frames;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "scenesynth",
    version,
    about = "Rebuild a surveillance scene virtually, simulate pedestrians, render auto-labeled datasets, and train/evaluate scene-specific detectors"
)]
struct Cli {
    /// Scene config file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the seed in the config (simulation for generate/render,
    /// training for train)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory command outputs are written into
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads; defaults to the logical CPU count
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured scene and write an auto-labeled dataset
    Generate,
    /// Render one simulated frame in a chosen mode
    Render {
        /// composite | silhouette | instance
        #[arg(long, default_value = "composite")]
        mode: String,
        /// Simulation frame index to render
        #[arg(long, default_value_t = 0)]
        frame: u32,
    },
    /// Convert external CSV ground truth into the dataset layout
    Label {
        /// CSV file with one box per row
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "frame")]
        col_frame: String,
        #[arg(long, default_value = "id")]
        col_id: String,
        #[arg(long, default_value = "x1")]
        col_x1: String,
        #[arg(long, default_value = "y1")]
        col_y1: String,
        #[arg(long, default_value = "x2")]
        col_x2: String,
        #[arg(long, default_value = "y2")]
        col_y2: String,
        /// Treat incoming coordinates as 1-based
        #[arg(long)]
        one_based: bool,
        /// Source resolution WxH; boxes are rescaled to the camera size
        #[arg(long)]
        from_size: Option<String>,
    },
    /// Train a detector on a generated dataset
    Train {
        /// Dataset directory (holds manifest.txt)
        #[arg(long)]
        dataset: PathBuf,
        /// Model file name, relative to --out-dir unless absolute
        #[arg(long, default_value = "model.bin")]
        model_out: PathBuf,
    },
    /// Run a trained detector over a dataset's images
    Detect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Detections CSV name, relative to --out-dir unless absolute
        #[arg(long, default_value = "detections.csv")]
        detections_out: PathBuf,
    },
    /// Score a detections CSV against a dataset's ground truth
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Label used in the report files
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Train on a matched and a mismatched scene, compare APs per seed
    Experiment {
        /// Experiment spec (TOML)
        #[arg(long)]
        spec: PathBuf,
        /// Exit 4 unless the mean AP increment is positive
        #[arg(long)]
        assert_positive: bool,
    },
    /// Rebuild pr.svg and ap.csv from stored detection CSVs
    Plot {
        #[arg(long)]
        dataset: PathBuf,
        /// One or more name=path detection CSVs
        #[arg(long = "detections", value_name = "NAME=PATH", num_args = 1.., required = true)]
        detections: Vec<String>,
    },
}

/// Failure bucket that decides the process exit code.
enum CliError {
    Config(String),
    Runtime(String),
    Assertion(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Assertion(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) | CliError::Assertion(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(
    scenesynth_core::dataset::DatasetError,
    scenesynth_core::detect::DetectError,
    scenesynth_core::evalkit::EvalError,
    scenesynth_core::imgio::ImageError,
    scenesynth_core::rasterlab::RasterError,
    scenesynth_core::rasterlab::LabelError,
    scenesynth_core::scenesim::SimError,
    std::io::Error
);

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        // Ignore failure: the global pool can only be set once (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn require_config(cli: &Cli) -> Result<LoadedConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs --config <path>".to_string()))?;
    Ok(load_config(path)?)
}

fn in_out_dir(cli: &Cli, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        cli.out_dir.join(p)
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate => cmd_generate(cli),
        Command::Render { mode, frame } => cmd_render(cli, mode, *frame),
        Command::Label {
            csv,
            col_frame,
            col_id,
            col_x1,
            col_y1,
            col_x2,
            col_y2,
            one_based,
            from_size,
        } => {
            let columns = CsvColumns {
                frame: col_frame.clone(),
                id: col_id.clone(),
                x1: col_x1.clone(),
                y1: col_y1.clone(),
                x2: col_x2.clone(),
                y2: col_y2.clone(),
            };
            cmd_label(cli, csv, &columns, *one_based, from_size.as_deref())
        }
        Command::Train { dataset, model_out } => cmd_train(cli, dataset, model_out),
        Command::Detect {
            dataset,
            model,
            detections_out,
        } => cmd_detect(cli, dataset, model, detections_out),
        Command::Eval {
            dataset,
            detections,
            name,
        } => cmd_eval(cli, dataset, detections, name),
        Command::Experiment {
            spec,
            assert_positive,
        } => cmd_experiment(cli, spec, *assert_positive),
        Command::Plot {
            dataset,
            detections,
        } => cmd_plot(cli, dataset, detections),
    }
}

fn cmd_generate(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = require_config(cli)?;
    if let Some(seed) = cli.seed {
        cfg.sim.rng_seed = seed;
    }
    let name = cli
        .config
        .as_ref()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let out = generate_dataset(&cfg, &cli.out_dir, &name)?;
    println!(
        "frames={} annotations={} dir={}",
        out.manifest.frames.len(),
        out.annotations_total,
        out.root.display()
    );
    Ok(())
}

fn cmd_render(cli: &Cli, mode: &str, frame: u32) -> Result<(), CliError> {
    let mut cfg = require_config(cli)?;
    if let Some(seed) = cli.seed {
        cfg.sim.rng_seed = seed;
    }
    let render_mode = match mode {
        "composite" => RenderMode::Composite,
        "silhouette" => RenderMode::Silhouette,
        "instance" => RenderMode::InstanceColor,
        other => {
            return Err(CliError::Config(format!(
                "--mode must be composite, silhouette, or instance, got {other:?}"
            )))
        }
    };
    let mut sim = cfg.sim.clone();
    if frame >= sim.frames {
        sim.frames = frame + 1;
    }
    let frames = simulate_frames(&cfg.scene, &sim)?;
    let agents = &frames[frame as usize];
    let plate = background_plate(&cfg.scene)?;
    let (image, records) = render_and_label(&cfg.scene, agents, render_mode, &plate)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let path = cli.out_dir.join(format!("frame_{frame:06}_{mode}.ppm"));
    image.write_ppm(&path)?;
    println!(
        "frame={} mode={} pedestrians={} file={}",
        frame,
        mode,
        records.len(),
        path.display()
    );
    Ok(())
}

fn cmd_label(
    cli: &Cli,
    csv: &Path,
    columns: &CsvColumns,
    one_based: bool,
    from_size: Option<&str>,
) -> Result<(), CliError> {
    let cfg = require_config(cli)?;
    let cam = &cfg.scene.camera;
    let convention = if one_based {
        CoordConvention::OneBased
    } else {
        CoordConvention::ZeroBased
    };
    let import = import_csv_annotations(csv, columns, convention)?;
    let mut frames = import.frames;
    if let Some(spec) = from_size {
        let (w, h) = parse_size(spec)?;
        frames = scenesynth_core::dataset::rescale_labels(
            frames,
            (w, h),
            (cam.width(), cam.height()),
        );
    }
    let mut writer = DatasetWriter::create(
        &cli.out_dir,
        "imported",
        cam.width(),
        cam.height(),
        &cfg.config_hash,
        0,
    )?;
    let mut kept = 0usize;
    let mut dropped = 0usize;
    for f in frames {
        let mut anns = f.annotations;
        let before = anns.len();
        anns.retain_mut(|a| {
            match a.full_bbox.clamp_to(cam.width(), cam.height()) {
                Some(b) => {
                    a.full_bbox = b;
                    a.visible_bbox = Some(b);
                    true
                }
                None => false,
            }
        });
        dropped += before - anns.len();
        kept += anns.len();
        writer.add_labels_frame(f.frame_index, &f.image_path, anns)?;
    }
    writer.finish()?;
    println!(
        "imported={} skipped_rows={} dropped_offscreen={} dir={}",
        kept,
        import.skipped_rows,
        dropped,
        cli.out_dir.display()
    );
    Ok(())
}

fn parse_size(spec: &str) -> Result<(u32, u32), CliError> {
    let bad = || CliError::Config(format!("--from-size expects WxH, got {spec:?}"));
    let (w, h) = spec.split_once('x').ok_or_else(bad)?;
    Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
}

fn load_dataset_frames(root: &Path) -> Result<DiskFrames, CliError> {
    let manifest = read_manifest(root)?;
    Ok(DiskFrames {
        root: root.to_path_buf(),
        frames: manifest.frames,
    })
}

fn cmd_train(cli: &Cli, dataset: &Path, model_out: &Path) -> Result<(), CliError> {
    let mut cfg = require_config(cli)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    let source = load_dataset_frames(dataset)?;
    let outcome = train_detector(&source, &HogParams::default(), &cfg.detect, &cfg.train)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let path = in_out_dir(cli, model_out);
    outcome.model.save(&path)?;
    let final_objective = outcome
        .objective_history
        .last()
        .and_then(|h| h.last())
        .copied()
        .unwrap_or(f64::NAN);
    println!(
        "positives={} negatives={} hard_negatives={} final_objective={:.6} model={}",
        outcome.positives,
        outcome.negatives,
        outcome.hard_negatives,
        final_objective,
        path.display()
    );
    Ok(())
}

fn cmd_detect(cli: &Cli, dataset: &Path, model: &Path, detections_out: &Path) -> Result<(), CliError> {
    let cfg = require_config(cli)?;
    let source = load_dataset_frames(dataset)?;
    let model = LinearModel::load(model)?;
    let per_frame: Vec<(u32, Vec<Detection>)> = (0..source.len())
        .into_par_iter()
        .map(|i| -> Result<_, CliError> {
            let (img, _) = source.load(i)?;
            let dets = detect_pedestrians(&img.to_gray(), &model, &cfg.detect)?;
            Ok((source.frames[i].frame_index, dets))
        })
        .collect::<Result<_, _>>()?;
    let map: BTreeMap<u32, Vec<Detection>> = per_frame.into_iter().collect();
    let total: usize = map.values().map(Vec::len).sum();
    std::fs::create_dir_all(&cli.out_dir)?;
    let path = in_out_dir(cli, detections_out);
    write_detections_csv(&path, &map)?;
    println!("frames={} detections={} file={}", map.len(), total, path.display());
    Ok(())
}

fn ground_truth_of(frames: &DiskFrames) -> Vec<Vec<GroundTruthBox>> {
    frames
        .frames
        .iter()
        .map(|rec| {
            rec.annotations
                .iter()
                .map(|a| GroundTruthBox {
                    bbox: a.full_bbox.to_boxf(),
                    difficult: a.visibility < DIFFICULT_VISIBILITY,
                })
                .collect()
        })
        .collect()
}

fn evaluate_csv(
    cfg: &LoadedConfig,
    source: &DiskFrames,
    detections_csv: &Path,
) -> Result<APResult, CliError> {
    let mut dets = read_detections_csv(detections_csv)?;
    let gts = ground_truth_of(source);
    let frames: Vec<(Vec<Detection>, Vec<GroundTruthBox>)> = source
        .frames
        .iter()
        .zip(gts)
        .map(|(rec, gt)| (dets.remove(&rec.frame_index).unwrap_or_default(), gt))
        .collect();
    Ok(evaluate_frames(&frames, &cfg.eval)?)
}

fn cmd_eval(cli: &Cli, dataset: &Path, detections: &Path, name: &str) -> Result<(), CliError> {
    let cfg = require_config(cli)?;
    let source = load_dataset_frames(dataset)?;
    let result = evaluate_csv(&cfg, &source, detections)?;
    println!("name={} total_gt={} ap={:.6}", name, result.total_gt, result.ap);
    emit_report(&[(name.to_string(), result)], &cli.out_dir)?;
    Ok(())
}

fn cmd_experiment(cli: &Cli, spec_path: &Path, assert_positive: bool) -> Result<(), CliError> {
    let spec = load_experiment_spec(spec_path)?;
    let outcome = run_experiment(&spec, &cli.out_dir)?;
    for s in &outcome.per_seed {
        println!(
            "seed={} ap_matched={:.6} ap_mismatched={:.6} increment={:.6}",
            s.seed,
            s.ap_matched,
            s.ap_mismatched,
            s.increment()
        );
    }
    println!("{}", outcome.summary_line());
    if assert_positive && !(outcome.mean_increment > 0.0) {
        return Err(CliError::Assertion(format!(
            "expected a positive mean AP increment, got {:.6}",
            outcome.mean_increment
        )));
    }
    Ok(())
}

fn cmd_plot(cli: &Cli, dataset: &Path, detections: &[String]) -> Result<(), CliError> {
    let cfg = require_config(cli)?;
    let source = load_dataset_frames(dataset)?;
    let mut results = Vec::new();
    for pair in detections {
        let (name, path) = pair.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--detections expects NAME=PATH, got {pair:?}"))
        })?;
        results.push((name.to_string(), evaluate_csv(&cfg, &source, Path::new(path))?));
    }
    emit_report(&results, &cli.out_dir)?;
    for (name, r) in &results {
        println!("name={} ap={:.6}", name, r.ap);
    }
    println!("report={}", cli.out_dir.join("pr.svg").display());
    Ok(())
}
