//! `brickgram` command-line pipeline.
//!
//! Exit codes:
//!
//! | code | meaning                                          |
//! |------|--------------------------------------------------|
//! | 0    | success                                          |
//! | 1    | I/O failure                                      |
//! | 2    | unparsable or empty input, bad document          |
//! | 3    | no bricks found, insufficient data               |
//! | 4    | invalid flag or argument                         |
//! | 5    | degenerate geometry                              |
//! | 6    | `validate` found violations                      |
//! | 7    | wall spec too small                              |
//! | 8    | derivation replay or rule guard failure          |

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use brickgram::extract::{extract_bricks, rects_from_json, rects_to_json, ExtractOptions, Extraction, FitMethod};
use brickgram::generate::{generate, synthesize_cloud, validate, wall_from_json, wall_to_json, Wall, WallSpec};
use brickgram::grammar::Heading;
use brickgram::ingest::{downsample, fit_wall_plane, parse_point_cloud, project, write_point_cloud, CloudFormat, CropRect};
use brickgram::render::{compare_stats, to_svg, RenderStyle};
use brickgram::stats::{estimate_parameters_on_grid, Estimate, SamplingMode, WallParameters};
use brickgram::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

const EXIT_IO: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_USAGE: u8 = 4;
const EXIT_GEOMETRY: u8 = 5;
const EXIT_INVALID_WALL: u8 = 6;
const EXIT_TOO_SMALL: u8 = 7;
const EXIT_DERIVATION: u8 = 8;

#[derive(Parser)]
#[command(name = "brickgram", version, about = "Extract bricklaying parameters from surveys and regenerate walls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cloud (CSV or ASCII PLY) -> brick rectangles.
    Extract {
        cloud: PathBuf,
        #[arg(short, long, default_value = "rects.json")]
        output: PathBuf,
        #[command(flatten)]
        opts: ExtractArgs,
    },
    /// Brick rectangles -> parameter distributions.
    Stats {
        rects: PathBuf,
        #[arg(short, long, default_value = "params.json")]
        output: PathBuf,
        /// Skip the sampling-grid correction of the spreads.
        #[arg(long)]
        raw: bool,
    },
    /// Parameter distributions -> wall with derivation.
    Generate {
        params: PathBuf,
        #[arg(short, long, default_value = "wall.json")]
        output: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        /// Seed range `a..b` (exclusive) or `a..=b`; writes one wall per seed
        /// next to OUTPUT as `<stem>.seed<N>.json`.
        #[arg(long, value_parser = parse_seed_range)]
        seeds: Option<(u64, u64)>,
    },
    /// Wall -> SVG.
    Render {
        wall: PathBuf,
        #[arg(short, long, default_value = "wall.svg")]
        output: PathBuf,
        #[command(flatten)]
        style: StyleArgs,
    },
    /// Checks a wall; exits 6 if any violation is found.
    Validate { wall: PathBuf },
    /// Wall -> synthetic labeled cloud.
    Synth {
        wall: PathBuf,
        #[arg(short, long, default_value = "cloud.csv")]
        output: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        pitch: f64,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, env = "BRICKGRAM_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Source parameters vs. a generated wall.
    Compare {
        params: PathBuf,
        wall: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Cloud -> rects, params, wall, SVG and report in one directory.
    Pipeline {
        cloud: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[command(flatten)]
        opts: ExtractArgs,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        style: StyleArgs,
        /// Skip the sampling-grid correction of the spreads.
        #[arg(long)]
        raw: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitArg {
    /// Trimmed bounding box grown by `pad`.
    Box,
    /// Width and height from the second moments of the cluster.
    Moments,
}

#[derive(Args)]
struct ExtractArgs {
    /// Cluster radius in mm (default 1.5x the median point spacing).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = brickgram::extract::DEFAULT_MIN_PTS)]
    min_pts: usize,
    /// Fraction trimmed from each side before taking the box, 0..=0.1.
    #[arg(long, default_value_t = brickgram::extract::DEFAULT_TRIM)]
    trim: f64,
    /// Voxel edge in mm for downsampling before the plane fit.
    #[arg(long)]
    voxel: Option<f64>,
    /// Window in wall coordinates `u0,v0,u1,v1`, applied after projection.
    #[arg(long, value_parser = parse_crop)]
    crop: Option<CropRect>,
    #[arg(long, value_enum, default_value_t = FitArg::Box)]
    fit: FitArg,
    /// Box padding in mm (default half the point spacing).
    #[arg(long)]
    pad: Option<f64>,
    /// Keep clusters of touching bricks whole.
    #[arg(long)]
    no_split: bool,
}

#[derive(Args)]
struct SpecArgs {
    /// Wall width in mm (pipeline default: extent of the extracted bricks).
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    height: Option<f64>,
    #[arg(long, env = "BRICKGRAM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Empirical)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = DirectionArg::Right)]
    direction: DirectionArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gaussian,
    Empirical,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Right,
    Left,
}

#[derive(Args)]
struct StyleArgs {
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.0)]
    stroke_width: f64,
    #[arg(long, default_value = "#9e5839")]
    brick_fill: String,
    #[arg(long, default_value = "#d9cfc0")]
    mortar_fill: String,
}

impl StyleArgs {
    fn style(&self) -> brickgram::Result<RenderStyle> {
        let style = RenderStyle {
            brick_fill: self.brick_fill.clone(),
            mortar_fill: self.mortar_fill.clone(),
            stroke_width: self.stroke_width,
            scale: self.scale,
        };
        style.check()?;
        Ok(style)
    }
}

impl SpecArgs {
    fn spec(&self, width: f64, height: f64, seed: u64) -> WallSpec {
        WallSpec {
            width,
            height,
            seed,
            mode: match self.mode {
                ModeArg::Gaussian => SamplingMode::GaussianTruncated,
                ModeArg::Empirical => SamplingMode::EmpiricalIndex,
            },
            direction: match self.direction {
                DirectionArg::Right => Heading::Rightward,
                DirectionArg::Left => Heading::Leftward,
            },
        }
    }

    fn size(&self) -> anyhow::Result<(f64, f64)> {
        match (self.width, self.height) {
            (Some(w), Some(h)) => Ok((w, h)),
            _ => Err(Error::InvalidArgument("--width and --height are required".into()).into()),
        }
    }
}

fn parse_crop(s: &str) -> Result<CropRect, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [u0, v0, u1, v1] = parts[..] else {
        return Err("expected four numbers u0,v0,u1,v1".into());
    };
    CropRect::new(u0, v0, u1, v1).map_err(|e| e.to_string())
}

fn parse_seed_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err("expected a..b or a..=b".into());
    };
    let a: u64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    let end = if inclusive { b.checked_add(1).ok_or("range end overflows")? } else { b };
    if end <= a {
        return Err("empty seed range".into());
    }
    Ok((a, end))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e {
            Error::Io(_) => EXIT_IO,
            Error::Parse { .. } | Error::Schema(_) | Error::EmptyInput => EXIT_PARSE,
            Error::NoBricksFound | Error::InsufficientData(_) => EXIT_DATA,
            Error::InvalidArgument(_) => EXIT_USAGE,
            Error::DegenerateGeometry(_) | Error::DegenerateCluster(_) => EXIT_GEOMETRY,
            Error::SpecTooSmall(_) => EXIT_TOO_SMALL,
            Error::GuardFailed(_) | Error::Replay { .. } => EXIT_DERIVATION,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return EXIT_IO;
    }
    if let Some(c) = err.downcast_ref::<Failure>() {
        return c.0;
    }
    EXIT_IO
}

/// Error carrying an explicit exit code.
#[derive(Debug)]
struct Failure(u8, String);

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Failure {}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_params(path: &Path) -> anyhow::Result<WallParameters> {
    WallParameters::from_json(&read_text(path)?).with_context(|| format!("in {}", path.display()))
}

fn load_wall(path: &Path) -> anyhow::Result<Wall> {
    wall_from_json(&read_text(path)?).with_context(|| format!("in {}", path.display()))
}

fn run_extract(cloud: &Path, opts: &ExtractArgs) -> anyhow::Result<Extraction> {
    let file = fs::File::open(cloud).with_context(|| format!("opening {}", cloud.display()))?;
    let mut points = parse_point_cloud(BufReader::new(file), CloudFormat::from_path(cloud))
        .with_context(|| format!("in {}", cloud.display()))?;
    if let Some(voxel) = opts.voxel {
        points = downsample(&points, voxel)?;
    }
    let plane = fit_wall_plane(&points)?;
    let mut projected = project(&points, &plane)?;
    if let Some(crop) = &opts.crop {
        projected.retain(|(p, _)| crop.contains(p));
    }
    if !(0.0..=0.1).contains(&opts.trim) {
        return Err(Error::InvalidArgument(format!("--trim must be in [0, 0.1], got {}", opts.trim)).into());
    }
    let options = ExtractOptions {
        eps: opts.eps,
        min_pts: opts.min_pts,
        fit: match opts.fit {
            FitArg::Box => FitMethod::TrimmedBox { trim: opts.trim },
            FitArg::Moments => FitMethod::Moments,
        },
        pad: opts.pad,
        split: !opts.no_split,
    };
    Ok(extract_bricks(&projected, &options)?)
}

fn extract_summary(e: &Extraction, output: &Path) -> String {
    let r = &e.report;
    let (h, v) = r.gap_exclusions.map_or((0, 0), |g| (g.h_gaps, g.v_gaps));
    format!(
        "command=extract bricks={} clusters={} split={} degenerate={} brick_points={} mortar_points={} eps={:.4} excluded_h_gaps={h} excluded_v_gaps={v} output={}",
        e.rects.len(),
        r.clusters,
        r.split_clusters,
        r.degenerate_clusters,
        r.brick_points,
        r.mortar_points,
        r.eps,
        output.display()
    )
}

fn generate_summary(wall: &Wall, output: &Path) -> String {
    format!(
        "command=generate seed={} bricks={} rows={} steps={} output={}",
        wall.spec.seed,
        wall.bricks.len(),
        wall.row_count(),
        wall.derivation.len(),
        output.display()
    )
}

/// Parameters from extracted rectangles, corrected for the sampling pitch
/// recorded at extraction unless `raw`.
fn estimate(extraction: &Extraction, raw: bool) -> brickgram::Result<Estimate> {
    let pitch = extraction.report.sample_pitch;
    let pitch = (!raw && pitch > 0.0).then_some(pitch);
    estimate_parameters_on_grid(&extraction.rects, pitch)
}

fn seed_path(output: &Path, seed: u64) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("wall");
    let ext = output.extension().and_then(|s| s.to_str()).unwrap_or("json");
    output.with_file_name(format!("{stem}.seed{seed}.{ext}"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Extract { cloud, output, opts } => {
            let extraction = run_extract(&cloud, &opts)?;
            write_text(&output, &rects_to_json(&extraction)?)?;
            println!("{}", extract_summary(&extraction, &output));
        }
        Command::Stats { rects, output, raw } => {
            let extraction = rects_from_json(&read_text(&rects)?).with_context(|| format!("in {}", rects.display()))?;
            let estimate = estimate(&extraction, raw)?;
            write_text(&output, &estimate.params.to_json()?)?;
            let p = &estimate.params;
            println!(
                "command=stats rects={} width_samples={} height_samples={} h_gap_samples={} v_gap_samples={} jitter_samples={} offset_samples={} output={}",
                extraction.rects.len(),
                p.brick_width.samples.len(),
                p.brick_height.samples.len(),
                p.h_gap.samples.len(),
                p.v_gap.samples.len(),
                p.level_jitter.samples.len(),
                p.row_offset.samples.len(),
                output.display()
            );
        }
        Command::Generate {
            params,
            output,
            spec,
            seeds,
        } => {
            let params = load_params(&params)?;
            let (w, h) = spec.size()?;
            match seeds {
                None => {
                    let wall = generate(&spec.spec(w, h, spec.seed), &params)?;
                    write_text(&output, &wall_to_json(&wall)?)?;
                    println!("{}", generate_summary(&wall, &output));
                }
                Some((a, b)) => {
                    let walls: Vec<(u64, brickgram::Result<String>, Option<Wall>)> = (a..b)
                        .into_par_iter()
                        .map(|seed| match generate(&spec.spec(w, h, seed), &params) {
                            Ok(wall) => (seed, wall_to_json(&wall), Some(wall)),
                            Err(e) => (seed, Err(e), None),
                        })
                        .collect();
                    for (seed, text, wall) in walls {
                        let path = seed_path(&output, seed);
                        write_text(&path, &text?)?;
                        println!("{}", generate_summary(&wall.expect("generated"), &path));
                    }
                }
            }
        }
        Command::Render { wall, output, style } => {
            let style = style.style()?;
            let wall = load_wall(&wall)?;
            write_text(&output, &to_svg(&wall, &style))?;
            println!("command=render rects={} output={}", wall.bricks.len() + 1, output.display());
        }
        Command::Validate { wall } => {
            let wall = load_wall(&wall)?;
            let report = validate(&wall);
            for v in &report.violations {
                eprintln!("{v}");
            }
            println!(
                "command=validate bricks={} violations={} valid={}",
                wall.bricks.len(),
                report.violations.len(),
                report.is_valid()
            );
            if !report.is_valid() {
                return Err(Failure(EXIT_INVALID_WALL, format!("{} violations", report.violations.len())).into());
            }
        }
        Command::Synth {
            wall,
            output,
            pitch,
            noise,
            seed,
        } => {
            let wall = load_wall(&wall)?;
            let points = synthesize_cloud(&wall, pitch, noise, seed)?;
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let file = fs::File::create(&output).with_context(|| format!("writing {}", output.display()))?;
            write_point_cloud(BufWriter::new(file), &points, CloudFormat::from_path(&output))?;
            let bricks = points.iter().filter(|p| p.label == brickgram::ingest::PointClass::Brick).count();
            println!(
                "command=synth points={} brick_points={bricks} output={}",
                points.len(),
                output.display()
            );
        }
        Command::Compare { params, wall, output } => {
            let params = load_params(&params)?;
            let wall = load_wall(&wall)?;
            let report = compare_stats(&params, &wall)?;
            let text = report.to_text();
            match &output {
                Some(path) => write_text(path, &text)?,
                None => print!("{text}"),
            }
            let worst = report.rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
            println!(
                "command=compare bricks_measured={} max_rel_error={worst:.6}{}",
                report.bricks_measured,
                output.map(|p| format!(" output={}", p.display())).unwrap_or_default()
            );
        }
        Command::Pipeline {
            cloud,
            out_dir,
            opts,
            spec,
            style,
            raw,
        } => {
            let style = style.style()?;
            let extraction = run_extract(&cloud, &opts)?;
            let rects_path = out_dir.join("rects.json");
            write_text(&rects_path, &rects_to_json(&extraction)?)?;
            println!("{}", extract_summary(&extraction, &rects_path));

            let estimate = estimate(&extraction, raw)?;
            let params_path = out_dir.join("params.json");
            write_text(&params_path, &estimate.params.to_json()?)?;

            let extent = |lo: fn(&brickgram::extract::BrickRect) -> f64, hi: fn(&brickgram::extract::BrickRect) -> f64| {
                let a = extraction.rects.iter().map(lo).fold(f64::INFINITY, f64::min);
                let b = extraction.rects.iter().map(hi).fold(f64::NEG_INFINITY, f64::max);
                (b - a).ceil()
            };
            let width = spec.width.unwrap_or_else(|| extent(|r| r.left(), |r| r.right()));
            let height = spec.height.unwrap_or_else(|| extent(|r| r.bottom(), |r| r.top()));
            let wall = generate(&spec.spec(width, height, spec.seed), &estimate.params)?;
            let wall_path = out_dir.join("wall.json");
            write_text(&wall_path, &wall_to_json(&wall)?)?;
            println!("{}", generate_summary(&wall, &wall_path));

            let svg_path = out_dir.join("wall.svg");
            write_text(&svg_path, &to_svg(&wall, &style))?;

            let mut report = format!(
                "source_cloud={}\n{}\nparams_digest={}\nvalidation_violations={}\n",
                cloud.display(),
                extract_summary(&extraction, &rects_path),
                wall.params_digest,
                validate(&wall).violations.len()
            );
            match compare_stats(&estimate.params, &wall) {
                Ok(c) => report.push_str(&c.to_text()),
                Err(e) => report.push_str(&format!("comparison_skipped={e}\n")),
            }
            let report_path = out_dir.join("report.txt");
            write_text(&report_path, &report)?;
            println!(
                "command=pipeline rects={} bricks={} output_dir={}",
                extraction.rects.len(),
                wall.bricks.len(),
                out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
