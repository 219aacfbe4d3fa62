//! `hashproctor`: offline face hiding and hash-based anomaly detection.
//!
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hashproctor_core::anomaly::{AnomalyReport, DetectorConfig};
use hashproctor_core::calibration::{SessionFile, SESSION_FILE_NAME};
use hashproctor_core::detections::{parse_detections, parse_ground_truth, resolve_stream, DetectionRecord};
use hashproctor_core::evalharness::{bench_fps, evaluate_report, write_rows, BenchInput, BenchStage, MetricsRow};
use hashproctor_core::exec::{self, Execution};
use hashproctor_core::facehide::{hide, HideConfig, HideMode};
use hashproctor_core::imagehash::{HashAlgorithm, HashConfig, DEFAULT_HASH_SIZE};
use hashproctor_core::pipeline::{
    calibration_threshold, frame_file_name, generate_scenario, list_frames, run_pipeline, PipelineConfig,
    SyntheticScenario,
};
use hashproctor_core::{Error, Frame, Rgb};

#[derive(Parser)]
#[command(name = "hashproctor", version, about = "Privacy-preserving proctoring: face hiding and hash-based anomaly detection")]
struct Cli {
    /// Run every batch on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct HashArgs {
    #[arg(long, default_value = "dhash")]
    algo: HashAlgorithm,
    #[arg(long, default_value_t = DEFAULT_HASH_SIZE)]
    size: u32,
}

impl HashArgs {
    fn config(self) -> anyhow::Result<HashConfig> {
        Ok(HashConfig::new(self.algo, self.size)?)
    }
}

#[derive(Args, Clone, Copy)]
struct HideArgs {
    #[arg(long, default_value = "mask")]
    mode: HideMode,
    #[arg(long, default_value_t = 30)]
    blur_level: u32,
    #[arg(long, default_value_t = 26)]
    point_size: u32,
    /// Mask colour as R,G,B.
    #[arg(long, default_value = "255,255,255", value_parser = parse_rgb)]
    mask_color: Rgb,
    /// Hide the eyes too instead of copying them back.
    #[arg(long)]
    hide_eyes: bool,
}

impl HideArgs {
    fn config(self) -> HideConfig {
        HideConfig {
            mode: self.mode,
            blur_level: self.blur_level,
            point_size: self.point_size,
            mask_color: self.mask_color,
            preserve_eyes: !self.hide_eyes,
        }
    }
}

fn parse_rgb(s: &str) -> Result<Rgb, String> {
    let parts: Vec<u8> = s
        .split(',')
        .map(|p| p.trim().parse::<u8>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [r, g, b] => Ok(Rgb(r, g, b)),
        _ => Err("expected R,G,B".into()),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the perceptual hash of each image.
    Hash {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[command(flatten)]
        hash: HashArgs,
    },
    /// Write face-hidden copies of a frame directory.
    Hide {
        frames: PathBuf,
        detections: PathBuf,
        #[arg(long)]
        fallback: Option<PathBuf>,
        /// Output directory; must differ from the input.
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        hide: HideArgs,
    },
    /// Session threshold from a directory of calibration photos.
    CalibrateThreshold {
        photos: PathBuf,
        #[command(flatten)]
        hash: HashArgs,
        #[command(flatten)]
        hide: HideArgs,
        /// Also store the threshold as session.json in the photo directory.
        #[arg(long)]
        write: bool,
    },
    /// Run the full pipeline from a TOML config.
    Detect { config: PathBuf },
    /// Render a synthetic labelled session from a TOML scenario.
    GenScenario {
        spec: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Score a report against ground truth.
    Eval {
        report: PathBuf,
        ground_truth: PathBuf,
        /// Hide mode the report was produced with, for the metrics row.
        #[arg(long, default_value = "mask")]
        mode: HideMode,
        /// Write the metrics row to a .csv or .json file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure single-thread frames per second of one stage.
    Bench {
        stage: BenchStage,
        frames: PathBuf,
        /// Detections for the frames; required by every stage but hash.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Use at most this many frames.
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        hash: HashArgs,
        #[command(flatten)]
        hide: HideArgs,
        #[arg(long, default_value_t = 10)]
        threshold: u32,
    },
    /// Start the local HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value = "proctor-data")]
        data_dir: PathBuf,
    },
}

/// Failure with its exit code.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        if e.chain().any(|c| c.is::<Error>() || c.is::<std::io::Error>()) {
            Failure::Data(e)
        } else {
            Failure::Internal(e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {}", message(&e));
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {}", message(&e));
            ExitCode::from(3)
        }
    }
}

/// The error chain joined with ": ", skipping causes that the previous
/// message already quotes.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(command: Command, exec: Execution) -> Result<(), Failure> {
    match command {
        Command::Hash { images, hash } => {
            let cfg = hash.config().map_err(Failure::Usage)?;
            for path in images {
                let h = cfg.hash_frame(&Frame::load(&path).map_err(anyhow::Error::from)?).map_err(anyhow::Error::from)?;
                println!("{h}  {}", path.display());
            }
            Ok(())
        }
        Command::Hide {
            frames,
            detections,
            fallback,
            out,
            hide: h,
        } => {
            let cfg = h.config();
            cfg.validate().map_err(|e| Failure::Usage(e.into()))?;
            if same_dir(&frames, &out) {
                return Err(Failure::Usage(anyhow::anyhow!("output directory {} is the input directory", out.display())));
            }
            hide_dir(&frames, &detections, fallback.as_deref(), &out, &cfg, exec)?;
            Ok(())
        }
        Command::CalibrateThreshold {
            photos,
            hash,
            hide: h,
            write,
        } => {
            let cfg = hash.config().map_err(Failure::Usage)?;
            let t = calibration_threshold(&photos, &h.config(), cfg, exec).map_err(anyhow::Error::from)?;
            if write {
                let file = SessionFile {
                    session_id: photos
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "calibration".into()),
                    hash: cfg,
                    captures: Vec::new(),
                    threshold: Some(t),
                };
                file.write(&photos.join(SESSION_FILE_NAME)).map_err(anyhow::Error::from)?;
            }
            println!("{t}");
            Ok(())
        }
        Command::Detect { config } => {
            let cfg = PipelineConfig::load(&config).map_err(anyhow::Error::from)?;
            let out = run_pipeline(&cfg, exec).map_err(anyhow::Error::from)?;
            let r = &out.report;
            println!(
                "{} frames, threshold {}, {} anchor(s), {} event(s)",
                r.frame_count(),
                r.threshold,
                r.anchors.len(),
                r.events.len()
            );
            for (i, e) in r.events.iter().enumerate() {
                println!("  event {i}: frames {}-{} peak {}", e.start, e.end, e.peak);
            }
            println!("report: {}", out.report_path.display());
            println!("hidden frames: {}", out.hidden_dir.display());
            Ok(())
        }
        Command::GenScenario { spec, out } => {
            let s = SyntheticScenario::load(&spec).map_err(anyhow::Error::from)?;
            let files = generate_scenario(&s, &out, exec).map_err(anyhow::Error::from)?;
            println!("{} frames in {}", s.duration_frames, files.frames_dir.display());
            println!("pipeline config: {}", files.config.display());
            Ok(())
        }
        Command::Eval {
            report,
            ground_truth,
            mode,
            out,
        } => {
            let r = AnomalyReport::read(&report).map_err(anyhow::Error::from)?;
            let labels = parse_ground_truth(&ground_truth).map_err(anyhow::Error::from)?;
            let c = evaluate_report(&r, &labels).map_err(anyhow::Error::from)?;
            let row = MetricsRow::new(r.session_id.clone(), mode, &c);
            let cell = |v: Option<f64>| v.map_or("N/A".to_string(), |v| format!("{v:.1}"));
            println!("tp {} fp {} tn {} fn {}", c.tp, c.fp, c.tn, c.fn_);
            println!(
                "accuracy {}  recall {}  precision {}",
                cell(row.accuracy),
                cell(row.recall),
                cell(row.precision)
            );
            if let Some(path) = out {
                write_rows(&path, &[row]).map_err(anyhow::Error::from)?;
            }
            Ok(())
        }
        Command::Bench {
            stage,
            frames,
            detections,
            reps,
            limit,
            hash,
            hide: h,
            threshold,
        } => {
            let hash = hash.config().map_err(Failure::Usage)?;
            if reps == 0 {
                return Err(Failure::Usage(anyhow::anyhow!("--reps must be at least 1")));
            }
            let mut paths = list_frames(&frames).map_err(anyhow::Error::from)?;
            paths.truncate(limit.unwrap_or(usize::MAX));
            let loaded: Vec<Frame> = exec::try_map(exec, &paths, |p| Frame::load(p)).map_err(anyhow::Error::from)?;
            let n = loaded.len() as u64;
            let records: Vec<DetectionRecord> = match detections {
                Some(d) => resolve_stream(&parse_detections(&d).map_err(anyhow::Error::from)?, None, n),
                None if stage == BenchStage::Hash => (0..n).map(DetectionRecord::none).collect(),
                None => return Err(Failure::Usage(anyhow::anyhow!("stage {stage:?} needs --detections"))),
            };
            let input = BenchInput {
                frames: loaded,
                detections: records,
                hide: h.config(),
                hash,
                detector: DetectorConfig::default(),
                threshold,
            };
            let result = bench_fps(stage, &input, reps).map_err(anyhow::Error::from)?;
            println!("{}", serde_json::to_string(&result).map_err(anyhow::Error::from)?);
            Ok(())
        }
        Command::Serve { port, host, data_dir } => {
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            let cfg = hashproctor_service::ServiceConfig::new(data_dir);
            rt.block_on(hashproctor_service::serve(SocketAddr::new(host, port), cfg))
                .context("service stopped")?;
            Ok(())
        }
    }
}

fn hide_dir(
    frames: &Path,
    detections: &Path,
    fallback: Option<&Path>,
    out: &Path,
    cfg: &HideConfig,
    exec: Execution,
) -> anyhow::Result<()> {
    let paths = list_frames(frames)?;
    let n = paths.len() as u64;
    let primary = parse_detections(detections)?;
    let fallback = fallback.map(parse_detections).transpose()?;
    for stream in std::iter::once(&primary).chain(fallback.as_ref()) {
        if let Some(bad) = stream.entries().map(|e| e.frame).find(|&f| f >= n) {
            return Err(Error::Misaligned(bad).into());
        }
    }
    let records = resolve_stream(&primary, fallback.as_ref(), n);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    exec::try_map_range(exec, paths.len(), |i| {
        let hidden = hide(&Frame::load(&paths[i])?, &records[i], cfg)?;
        hidden.save(&out.join(frame_file_name(i)))
    })?;
    println!("{} hidden frames in {}", paths.len(), out.display());
    Ok(())
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}
