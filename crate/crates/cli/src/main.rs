//! `trainfractal`: render trainability fields, zoom into them, estimate box-counting
//! dimensions, check the trainer against the readout oracle and serve the HTTP API.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid flags.

use std::fmt::Write as _;
use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use trainfractal_core::formats::{boxcount_csv, encode_field, encode_png, read_field, RenderRequest};
use trainfractal_core::fracdim::{median_dimension, report_field};
use trainfractal_core::readout::oracle_sweep;
use trainfractal_core::renderer::{render_zoom_sequence, zoom_viewports, MAX_ZOOM_FRAMES};
use trainfractal_core::{colorize, preset, render_field_with, ConditionId, Field, RenderControl, ZoomSpec};
use trainfractal_service::{serve, workers_from_env, ServiceConfig};

/// A flag combination the program rejects; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

#[derive(Parser)]
#[command(name = "trainfractal", version, about = "Fractal trainability boundaries of small neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one field; writes PREFIX.png, PREFIX.nnfr and PREFIX.json.
    Render(RenderArgs),
    /// Render a sequence of frames zooming into a point.
    Zoom(ZoomArgs),
    /// Box-counting report for a saved field, as CSV on stdout.
    Fracdim {
        #[arg(long = "in", value_name = "FIELD.nnfr")]
        input: PathBuf,
    },
    /// Compare readout-only training against the closed-form critical rate.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(1..))]
        samples: u32,
        #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u32).range(1..))]
        steps: u32,
        /// Half-width of the sweep around the critical rate, in decades.
        #[arg(long, default_value_t = 1.0, value_parser = positive)]
        decades: f64,
    },
    /// Run the HTTP service until interrupted.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Also write each finished job's artifacts under this directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Allowed CORS origin; repeatable. Any origin when omitted.
        #[arg(long = "allow-origin", value_name = "ORIGIN")]
        allow_origin: Vec<String>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Preset id, for example tanh-fullbatch or deep-linear.
    #[arg(long, default_value = "tanh-fullbatch", value_parser = condition)]
    condition: ConditionId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training steps per pixel; defaults to the preset's.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    steps: Option<u32>,
    /// Minibatch size; defaults to the preset's (the dataset size means full batch).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Loss above which a run counts as diverged.
    #[arg(long, value_parser = positive)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "1024x1024", value_parser = size)]
    size: (usize, usize),
    /// Axis window in axis coordinates (exponents for log axes).
    #[arg(long, value_name = "XLO,XHI,YLO,YHI", value_parser = window)]
    window: Option<[f64; 4]>,
    #[arg(long, value_name = "PREFIX", default_value = "render")]
    out: PathBuf,
}

#[derive(Args)]
struct ZoomArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "CX,CY", value_parser = pair)]
    center: (f64, f64),
    /// Half-widths of the first frame; defaults to half the preset window.
    #[arg(long, value_name = "HX,HY", value_parser = pair)]
    halfwidth: Option<(f64, f64)>,
    #[arg(long, default_value_t = ZoomSpec::DEFAULT_FRAMES, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    frames: usize,
    /// Square frame extent, N or NxN.
    #[arg(long, default_value = "1024", value_parser = square)]
    size: usize,
    #[arg(long, value_name = "DIR", default_value = "zoom")]
    out: PathBuf,
}

fn condition(s: &str) -> Result<ConditionId, String> {
    s.parse().map_err(|_| {
        let ids: Vec<_> = ConditionId::ALL.iter().map(|c| c.slug()).collect();
        format!("unknown condition, expected one of {}", ids.join(", "))
    })
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err("expected a positive number".into()),
    }
}

fn numbers<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<_>>()
        .ok_or("expected comma-separated finite numbers")?;
    parts.try_into().map_err(|_| format!("expected {N} comma-separated numbers"))
}

fn pair(s: &str) -> Result<(f64, f64), String> {
    numbers::<2>(s).map(|[a, b]| (a, b))
}

fn window(s: &str) -> Result<[f64; 4], String> {
    let w = numbers::<4>(s)?;
    if !(w[0] < w[1] && w[2] < w[3]) {
        return Err("window needs xlo < xhi and ylo < yhi".into());
    }
    Ok(w)
}

fn size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    match (w.parse::<usize>(), h.parse::<usize>()) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err("expected positive integers WxH".into()),
    }
}

fn square(s: &str) -> Result<usize, String> {
    let (w, h) = if s.contains(['x', 'X']) { size(s)? } else { size(&format!("{s}x{s}"))? };
    if w != h {
        return Err("zoom frames are square".into());
    }
    Ok(w)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let workers = workers_from_env().map_err(|e| usage(e.to_string()))?;
    match cli.command {
        Command::Render(args) => render(args, workers),
        Command::Zoom(args) => zoom(args, workers),
        Command::Fracdim { input } => fracdim(&input),
        Command::OracleCheck { seed, samples, steps, decades } => oracle_check(seed, samples, steps, decades),
        Command::Serve { port, host, out, allow_origin } => {
            let config = ServiceConfig { out_dir: out, workers, allowed_origins: allow_origin };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(config, SocketAddr::new(host, port)))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn control(workers: Option<usize>) -> Arc<RenderControl> {
    Arc::new(workers.map(RenderControl::with_workers).unwrap_or_default())
}

/// Build and validate the request described by the shared flags.
fn request(common: &CommonArgs, (width, height): (usize, usize), window: Option<[f64; 4]>) -> Result<RenderRequest> {
    let mut req = RenderRequest::for_condition(common.condition);
    req.seed = common.seed;
    req.width = width;
    req.height = height;
    if let Some(s) = common.steps {
        req.steps = s;
    }
    if let Some(b) = common.batch_size {
        req.batch_size = b;
    }
    if let Some(t) = common.threshold {
        req.threshold = t;
    }
    if let Some([xlo, xhi, ylo, yhi]) = window {
        req.x_range = (xlo, xhi);
        req.y_range = (ylo, yhi);
    }
    req.validate().map_err(|e| usage(e.to_string()))?;
    Ok(req)
}

/// Print `done/total` to stderr until the render finishes.
fn with_progress<T>(control: &Arc<RenderControl>, total: usize, label: &str, work: impl FnOnce() -> T) -> T {
    let done = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let reporter = {
        let (control, done, label) = (control.clone(), done.clone(), label.to_string());
        std::thread::spawn(move || {
            while !done.load(std::sync::atomic::Ordering::Relaxed) {
                std::thread::sleep(Duration::from_millis(500));
                eprint!("\r{label}: {}/{total} pixels", control.completed().min(total));
            }
        })
    };
    let out = work();
    done.store(true, std::sync::atomic::Ordering::Relaxed);
    let _ = reporter.join();
    eprintln!("\r{label}: {total}/{total} pixels");
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// PNG, field and box-count report of a rendered field.
fn save_field(field: &Field, png: &Path, nnfr: &Path) -> Result<(f64, f64)> {
    write(png, &encode_png(&colorize(field)?)?)?;
    write(nnfr, &encode_field(field))?;
    let report = report_field(field);
    Ok((report.dimension, report.fit_r2))
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn render(args: RenderArgs, workers: Option<usize>) -> Result<ExitCode> {
    let req = request(&args.common, args.size, args.window)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let ctl = control(workers);
    let field = with_progress(&ctl, req.pixels(), "render", || {
        render_field_with(&req.condition_config(), &req.viewport(), req.width, req.height, req.seed, req.steps, &ctl)
    })?;
    let (dimension, r2) = save_field(&field, &with_suffix(&args.out, "png"), &with_suffix(&args.out, "nnfr"))?;
    write(&with_suffix(&args.out, "json"), req.to_json().as_bytes())?;
    println!("dimension={dimension} r2={r2}");
    Ok(ExitCode::SUCCESS)
}

fn zoom(args: ZoomArgs, workers: Option<usize>) -> Result<ExitCode> {
    let base = request(&args.common, (args.size, args.size), None)?;
    let cond = base.condition_config();
    let defaults = preset(base.condition);
    let halfwidth = args.halfwidth.unwrap_or((
        (defaults.x_axis.hi - defaults.x_axis.lo) / 2.0,
        (defaults.y_axis.hi - defaults.y_axis.lo) / 2.0,
    ));
    let spec = ZoomSpec { max_frames: args.frames, frame_extent: args.size, ..ZoomSpec::new(args.center, halfwidth) };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let planned = zoom_viewports(&cond, &spec).map_err(|e| usage(e.to_string()))?;
    if planned.is_empty() {
        return Err(usage("the first zoom frame is already below the depth guard"));
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let ctl = control(workers);
    let pixels = args.size * args.size;
    let mut frames = Vec::new();
    render_zoom_sequence(&cond, &spec, base.seed, base.steps, &ctl, |k, field| {
        let name = format!("frame_{k:03}");
        let (dimension, r2) =
            save_field(&field, &args.out.join(format!("{name}.png")), &args.out.join(format!("{name}.nnfr")))
                .map_err(|e| std::io::Error::other(format!("{e:#}")))?;
        eprintln!("frame {k}: dimension={dimension} r2={r2}");
        let (x, y) = (field.viewport.x_axis, field.viewport.y_axis);
        frames.push(json!({
            "index": k,
            "png": format!("{name}.png"),
            "field": format!("{name}.nnfr"),
            "viewport": {"x": {"lo": x.lo, "hi": x.hi}, "y": {"lo": y.lo, "hi": y.hi}},
            "dimension": finite(dimension),
            "r2": finite(r2),
        }));
        ctl.reset_progress();
        Ok(())
    })
    .inspect(|n| eprintln!("{n}/{} frames rendered ({pixels} pixels each)", planned.len()))?;

    let dims: Vec<f64> = frames.iter().filter_map(|f| f["dimension"].as_f64()).collect();
    let median = median_dimension(dims).unwrap_or(f64::NAN);
    let stopped_by = if frames.len() == args.frames {
        "frames"
    } else if frames.len() == MAX_ZOOM_FRAMES {
        "frame cap"
    } else {
        "depth guard"
    };
    let manifest = json!({
        "request": serde_json::from_str::<serde_json::Value>(&base.to_json())?,
        "center": [spec.center_x, spec.center_y],
        "halfwidth": [spec.initial_halfwidth_x, spec.initial_halfwidth_y],
        "requested_frames": args.frames,
        "stopped_by": stopped_by,
        "median_dimension": finite(median),
        "frames": frames,
    });
    write(&args.out.join("sequence.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    println!("median_dimension={median} frames={}", frames.len());
    Ok(ExitCode::SUCCESS)
}

fn finite(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn fracdim(input: &Path) -> Result<ExitCode> {
    let file = std::fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let field = read_field(std::io::BufReader::new(file)).with_context(|| format!("reading {}", input.display()))?;
    let report = report_field(&field);
    let mut out = boxcount_csv(&report);
    writeln!(out, "dimension={}", report.dimension)?;
    std::io::stdout().lock().write_all(out.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

/// Agreement below this fraction fails the check.
const ORACLE_PASS: f64 = 0.99;

fn oracle_check(seed: u64, samples: u32, steps: u32, decades: f64) -> Result<ExitCode> {
    let model = preset(ConditionId::TanhFullBatch).model;
    let report = oracle_sweep(model, steps, seed, samples as usize, decades)?;
    println!("critical_eta1={}", report.critical_eta1);
    println!(
        "scored={} agreeing={} excluded_in_band={}",
        report.scored(),
        report.agreeing(),
        report.samples.len() - report.scored()
    );
    let agreement = report.agreement();
    println!("agreement={agreement}");
    Ok(if agreement >= ORACLE_PASS { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
