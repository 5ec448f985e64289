use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ply_rs::ply::Encoding;
use raht::eval::{self, CodecOptions};
use raht::ply_io::{self, AttributeKind};
use raht::{selftest, synth};
use raht_core::codec::Header;
use raht_core::{build_hierarchy, voxelize, Order, PointCloud, ResidualMode};

#[derive(Parser)]
#[command(name = "raht", version, about = "Point-cloud attribute coding with B-spline RAHT")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode the attributes of a PLY cloud.
    Encode {
        /// PLY file or `builtin:sphere[:N]`, `builtin:torus[:N]`, `builtin:uniform[:N]`.
        input: String,
        output: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long, default_value_t = 8.0)]
        step: f64,
    },
    /// Decode a bitstream onto the geometry it was encoded with.
    Decode {
        input: PathBuf,
        /// Geometry source, as given to `encode`.
        geometry: String,
        output: PathBuf,
        /// Write ASCII PLY instead of binary.
        #[arg(long)]
        ascii: bool,
    },
    /// Rate-distortion sweep as CSV.
    Rd {
        input: String,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
        steps: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2", value_parser = clap::value_parser!(u8).range(1..=2))]
        orders: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_value = "critical")]
        modes: Vec<Mode>,
        #[command(flatten)]
        series: SeriesArgs,
        /// CSV destination; stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Distortion against retained coefficient count, as CSV.
    Compaction {
        input: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2", value_parser = clap::value_parser!(u8).range(1..=2))]
        orders: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_value = "critical")]
        modes: Vec<Mode>,
        #[command(flatten)]
        series: SeriesArgs,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check the transform against dense references on built-in clouds.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Critical,
    Overcomplete,
}

impl From<Mode> for ResidualMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Critical => ResidualMode::Critical,
            Mode::Overcomplete => ResidualMode::Overcomplete,
        }
    }
}

#[derive(Args)]
struct SeriesArgs {
    /// Octree depth; defaults to 6 for built-in clouds and 10 for files.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=20))]
    depth: Option<u32>,
    /// Series order for Gram functions.
    #[arg(long)]
    taylor_k: Option<u32>,
    /// Series order for the detail-basis Gram.
    #[arg(long)]
    psi_k: Option<u32>,
    /// Normalize basis functions to unit norm.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    scaling: bool,
    /// Keep the requested mode at every level instead of falling back.
    #[arg(long)]
    no_fallback: bool,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    order: u8,
    #[arg(long, value_enum, default_value_t = Mode::Critical)]
    mode: Mode,
    #[command(flatten)]
    series: SeriesArgs,
}

impl SeriesArgs {
    fn options(&self, order: Order, mode: ResidualMode, step: f64) -> CodecOptions {
        let d = CodecOptions::default();
        CodecOptions {
            order,
            mode,
            step,
            taylor_k: self.taylor_k.unwrap_or(d.taylor_k),
            psi_k: self.psi_k.unwrap_or(d.psi_k),
            scaling: self.scaling,
            fallback: !self.no_fallback,
        }
    }
}

fn order(p: u8) -> Order {
    Order::from_u8(p).expect("validated by the parser")
}

/// Loads a voxelized cloud and its attribute kind.
fn load(input: &str, depth: Option<u32>) -> Result<(PointCloud, Option<AttributeKind>)> {
    if let Some(spec) = input.strip_prefix("builtin:") {
        let cloud = synth::builtin(spec, depth.unwrap_or(6))
            .with_context(|| format!("unknown built-in cloud '{spec}'"))?;
        return Ok((cloud, Some(AttributeKind::Rgb)));
    }
    let ply = ply_io::read_ply(Path::new(input))?;
    let cloud = voxelize(&ply.raw, depth.unwrap_or(10))?;
    Ok((cloud, ply.kind))
}

fn encode(input: &str, output: &Path, codec: &CodecArgs, step: f64) -> Result<()> {
    let (cloud, kind) = load(input, codec.series.depth)?;
    if kind.is_none() {
        bail!("{input} has no attributes to encode");
    }
    let opts = codec.series.options(order(codec.order), codec.mode.into(), step);
    let t = Instant::now();
    let h = build_hierarchy(&cloud, opts.order)?;
    let rep = eval::encode_cloud(&cloud, &h, &opts)?;
    let secs = t.elapsed().as_secs_f64();
    fs::write(output, &rep.bytes).with_context(|| format!("writing {}", output.display()))?;
    if !rep.fallback_levels.is_empty() {
        eprintln!("warning: levels {:?} coded overcomplete (critical step unavailable or inaccurate)", rep.fallback_levels);
    }
    println!(
        "points {} depth {} bytes {} header_bytes {} bpp {:.4} seconds {:.3}",
        rep.points,
        cloud.depth,
        rep.bytes.len(),
        rep.header_bytes,
        rep.bpp(),
        secs
    );
    Ok(())
}

fn decode(input: &Path, geometry: &str, output: &Path, ascii: bool) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let (header, _) = Header::read(&bytes)?;
    let (geom, kind) = load(geometry, Some(header.depth))?;
    let t = Instant::now();
    let (_, attrs) = eval::decode_cloud(&bytes, &geom, None)?;
    let secs = t.elapsed().as_secs_f64();
    let kind = match (header.channels, kind) {
        (3, _) => AttributeKind::Rgb,
        (1, Some(AttributeKind::Scalar(n))) => AttributeKind::Scalar(n),
        (1, _) => AttributeKind::Scalar("scalar".into()),
        (c, _) => bail!("cannot write {c} channels to PLY"),
    };
    let enc = if ascii { Encoding::Ascii } else { Encoding::BinaryLittleEndian };
    ply_io::write_ply(output, &geom.positions, &attrs, &kind, enc)?;
    println!("points {} seconds {:.3}", geom.len(), secs);
    Ok(())
}

fn csv_out(output: Option<&Path>) -> Result<Box<dyn io::Write>> {
    Ok(match output {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Command::Encode { input, output, codec, step } => encode(&input, &output, &codec, step)?,
        Command::Decode { input, geometry, output, ascii } => decode(&input, &geometry, &output, ascii)?,
        Command::Rd { input, steps, orders, modes, series, output } => {
            let (cloud, _) = load(&input, series.depth)?;
            if steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                bail!("steps must be positive");
            }
            let orders: Vec<Order> = orders.into_iter().map(order).collect();
            let modes: Vec<ResidualMode> = modes.into_iter().map(Into::into).collect();
            let base = series.options(Order::P2, ResidualMode::Critical, 1.0);
            let rows = eval::rd_sweep(&cloud, &orders, &modes, &steps, &base)?;
            eval::write_rd_csv(csv_out(output.as_deref())?, &rows)?;
        }
        Command::Compaction { input, orders, modes, series, output } => {
            let (cloud, _) = load(&input, series.depth)?;
            let mut rows = Vec::new();
            for o in orders {
                let h = build_hierarchy(&cloud, order(o))?;
                for &m in &modes {
                    let opts = series.options(order(o), m.into(), 1.0);
                    rows.extend(eval::compaction(&cloud, &h, &opts)?);
                }
            }
            eval::write_compaction_csv(csv_out(output.as_deref())?, &rows)?;
        }
        Command::Selftest => {
            let checks = selftest::run();
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
