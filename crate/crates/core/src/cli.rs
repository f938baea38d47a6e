//! `dlotrack` command line: simulate, track, eval, bench, plot.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{self, DatasetHeader};
use crate::metrics::{aggregate, MeanStd, Summary, DEFAULT_WARMUP};
use crate::sim::{self, FrameRecord, Scenario};
use crate::tracker::{run_records, OcclusionPolicy, SessionStatus, StageTimings, TrackerSession};
use crate::types::TrackerConfig;

#[derive(Parser, Debug)]
#[command(name = "dlotrack", version, about = "Deformable linear object tracking under occlusion")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        /// Built-in scenario name or path to a scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track a dataset and write a trace CSV plus a summary JSON.
    Track {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out_trace: PathBuf,
        /// Leave timing columns empty so traces are byte-reproducible.
        #[arg(long)]
        no_timing: bool,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
    },
    /// Print aggregate statistics of a trace.
    Eval {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
    },
    /// Time the tracker over repeated independent runs.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Render error-vs-frame and chain snapshots as SVG.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Tracker config JSON; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Freeze occluded nodes instead of estimating them.
    #[arg(long)]
    no_upe: bool,
}

impl RunArgs {
    fn policy(&self) -> OcclusionPolicy {
        if self.no_upe {
            OcclusionPolicy::Freeze
        } else {
            OcclusionPolicy::Estimate
        }
    }

    fn load(&self) -> Result<(TrackerConfig, DatasetHeader, Vec<FrameRecord>)> {
        let (header, frames) = io::load_dataset(&self.dataset)?;
        let config = match &self.config {
            Some(path) => TrackerConfig::from_json(&fs::read_to_string(path)?)?,
            None => TrackerConfig {
                node_count: header.node_count,
                ..TrackerConfig::default()
            },
        };
        if config.node_count != header.node_count {
            return Err(Error::Config(format!(
                "config node_count {} but dataset has {} nodes",
                config.node_count, header.node_count
            )));
        }
        if frames.is_empty() {
            return Err(Error::EmptyTrace);
        }
        Ok((config, header, frames))
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    let json = cli.json;
    match dispatch(cli) {
        Ok(out) => {
            if json {
                println!("{}", out.json);
            } else {
                print!("{}", out.text);
            }
            out.code
        }
        Err(e) => {
            if json {
                println!("{}", json!({ "error": e.to_string() }));
            }
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var("DLOTRACK_THREADS") else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // Fails only if a pool already exists, e.g. on a second call in-process.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("warning: ignoring DLOTRACK_THREADS={v:?}"),
    }
}

struct Output {
    text: String,
    json: serde_json::Value,
    code: i32,
}

impl Output {
    fn ok(text: String, json: serde_json::Value) -> Self {
        Self { text, json, code: 0 }
    }
}

fn dispatch(cli: Cli) -> Result<Output> {
    match cli.command {
        Command::Simulate { scenario, out, seed } => simulate(&scenario, &out, seed),
        Command::Track {
            run,
            out_trace,
            no_timing,
            warmup,
        } => track(&run, &out_trace, !no_timing, warmup),
        Command::Eval { trace, warmup } => eval(&trace, warmup),
        Command::Bench { run, trials } => bench(&run, trials),
        Command::Plot { trace, out } => plot(&trace, &out),
    }
}

fn load_scenario(spec: &str) -> Result<Scenario> {
    if let Some(s) = sim::builtin(spec) {
        return Ok(s);
    }
    let path = Path::new(spec);
    if !path.exists() {
        let names: Vec<String> = sim::builtin_scenarios().into_iter().map(|s| s.name).collect();
        return Err(Error::Scenario(format!(
            "{spec:?} is neither a file nor a built-in scenario ({})",
            names.join(", ")
        )));
    }
    let s: Scenario = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(s)
}

fn simulate(spec: &str, out: &Path, seed: Option<u64>) -> Result<Output> {
    let mut scenario = load_scenario(spec)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let frames = sim::generate(&scenario)?;
    io::write_dataset(out, &DatasetHeader::for_scenario(&scenario), &frames)?;
    let points: usize = frames.iter().map(|f| f.cloud.len()).sum();
    let text = format!(
        "wrote {} frames ({points} points) of {:?} to {}\n",
        frames.len(),
        scenario.name,
        out.display()
    );
    let json = json!({
        "out": out.display().to_string(),
        "scenario": scenario.name,
        "seed": scenario.seed,
        "frames": frames.len(),
        "points": points,
    });
    Ok(Output::ok(text, json))
}

#[derive(Debug, Serialize)]
struct TrackReport {
    dataset: String,
    trace: String,
    frames: usize,
    tracking: usize,
    coasting: usize,
    failed: usize,
    failure: Option<String>,
    /// Absent when no frame follows the warm-up window.
    summary: Option<Summary>,
}

fn summary_path(trace: &Path) -> PathBuf {
    trace.with_extension("summary.json")
}

fn count(statuses: impl Iterator<Item = SessionStatus>) -> [usize; 3] {
    let mut n = [0; 3];
    for s in statuses {
        n[s as usize] += 1;
    }
    n
}

fn summary_text(s: &Summary) -> String {
    let mut t = format!(
        "frames {} (warm-up {}, scored {})\nerror mean {:.4}  q1 {:.4}  median {:.4}  q3 {:.4}  max {:.4}\n",
        s.frames, s.warmup, s.scored_frames, s.mean_error, s.q1_error, s.median_error, s.q3_error, s.max_error
    );
    if let Some(tm) = &s.timing {
        let ms = |m: &MeanStd| format!("{:.3} ± {:.3} ms", m.mean * 1e3, m.std * 1e3);
        let _ = writeln!(
            t,
            "time/frame visibility {}  em {}  upe {}  resample {}  total {}",
            ms(&tm.visibility),
            ms(&tm.em),
            ms(&tm.upe),
            ms(&tm.resample),
            ms(&tm.total)
        );
    }
    t
}

fn track(run: &RunArgs, out_trace: &Path, timing: bool, warmup: usize) -> Result<Output> {
    let (config, _, frames) = run.load()?;
    let (trace, failure) = run_records(config, run.policy(), &frames)?;
    io::write_trace(out_trace, trace.entries(), timing)?;
    let [tracking, coasting, failed] = count(trace.entries().iter().map(|e| e.status));
    let mut stats = trace.stats();
    if !timing {
        stats.iter_mut().for_each(|s| s.timings = None);
    }
    let summary = aggregate(&stats, warmup).ok();
    let report = TrackReport {
        dataset: run.dataset.display().to_string(),
        trace: out_trace.display().to_string(),
        frames: trace.len(),
        tracking,
        coasting,
        failed,
        failure: failure.as_ref().map(|e| e.to_string()),
        summary,
    };
    let report_json = serde_json::to_value(&report)?;
    fs::write(summary_path(out_trace), serde_json::to_string_pretty(&report_json)? + "\n")?;

    let mut text = format!(
        "tracked {} frames ({tracking} tracking, {coasting} coasting, {failed} failed) -> {}\n",
        report.frames,
        out_trace.display()
    );
    match &report.summary {
        Some(s) => text.push_str(&summary_text(s)),
        None => {
            let _ = writeln!(text, "no frames after warm-up of {warmup}; summary omitted");
        }
    }
    let mut out = Output::ok(text, report_json);
    if let Some(e) = failure {
        eprintln!("error: {e}");
        out.code = 1;
    }
    Ok(out)
}

fn eval(trace: &Path, warmup: usize) -> Result<Output> {
    let (_, rows) = io::read_trace(trace)?;
    let stats: Vec<_> = rows.iter().map(|r| r.stats()).collect();
    let summary = aggregate(&stats, warmup)?;
    let [tracking, coasting, failed] = count(rows.iter().map(|r| r.status));
    let text = format!("{tracking} tracking, {coasting} coasting, {failed} failed\n") + &summary_text(&summary);
    let mut value = serde_json::to_value(&summary)?;
    value["tracking"] = json!(tracking);
    value["coasting"] = json!(coasting);
    value["failed"] = json!(failed);
    Ok(Output::ok(text, value))
}

#[derive(Debug, Serialize)]
struct BenchReport {
    trials: usize,
    frames: usize,
    /// Mean ± std over trials of the per-trial mean time per frame, in ms.
    visibility_ms: MeanStd,
    em_ms: MeanStd,
    upe_ms: MeanStd,
    resample_ms: MeanStd,
    step_ms: MeanStd,
}

fn bench(run: &RunArgs, trials: usize) -> Result<Output> {
    if trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let (config, header, frames) = run.load()?;
    let first = &frames[0];
    let steps = frames.len() - 1;
    if steps == 0 {
        return Err(Error::Trace("bench needs at least two frames".into()));
    }
    let mut per_trial: Vec<[f64; 5]> = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut session =
            TrackerSession::initialize(config, header.dim, &first.ground_truth)?.with_policy(run.policy());
        let mut sum = StageTimings::default();
        let mut step_total = 0.0;
        for rec in &frames[1..] {
            let t = Instant::now();
            let entry = session.step(&rec.cloud)?;
            step_total += t.elapsed().as_secs_f64();
            sum.visibility += entry.timings.visibility;
            sum.em += entry.timings.em;
            sum.upe += entry.timings.upe;
            sum.resample += entry.timings.resample;
        }
        let n = steps as f64 / 1e3;
        per_trial.push([
            sum.visibility / n,
            sum.em / n,
            sum.upe / n,
            sum.resample / n,
            step_total / n,
        ]);
    }
    let col = |k: usize| MeanStd::of(&per_trial.iter().map(|r| r[k]).collect::<Vec<_>>());
    let report = BenchReport {
        trials,
        frames: steps,
        visibility_ms: col(0),
        em_ms: col(1),
        upe_ms: col(2),
        resample_ms: col(3),
        step_ms: col(4),
    };
    let row = |name: &str, m: &MeanStd| format!("{name:<11}{:>10.4} ± {:.4} ms\n", m.mean, m.std);
    let text = format!("{trials} trials x {steps} frames, per-frame time\n")
        + &row("visibility", &report.visibility_ms)
        + &row("em", &report.em_ms)
        + &row("upe", &report.upe_ms)
        + &row("resample", &report.resample_ms)
        + &row("step", &report.step_ms);
    Ok(Output::ok(text, serde_json::to_value(&report)?))
}

fn plot(trace: &Path, out: &Path) -> Result<Output> {
    let (dim, rows) = io::read_trace(trace)?;
    let svg = render_svg(dim.get(), &rows);
    fs::write(out, svg)?;
    Ok(Output::ok(
        format!("wrote {}\n", out.display()),
        json!({ "out": out.display().to_string(), "frames": rows.len() }),
    ))
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

fn render_svg(d: usize, rows: &[io::TraceRow]) -> String {
    let (w, h, pad) = (480.0, 360.0, 40.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{h}" font-family="sans-serif" font-size="11">"#,
        2.0 * w
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Left panel: symmetric error against frame.
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.error.map(|e| (r.frame as f64, e.symmetric)))
        .collect();
    let fmax = rows.last().map_or(1.0, |r| r.frame.max(1) as f64);
    let emax = pts.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-12);
    let sx = |f: f64| pad + f / fmax * (w - 2.0 * pad);
    let sy = |e: f64| h - pad - e / emax * (h - 2.0 * pad);
    let _ = writeln!(
        s,
        r##"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for r in rows.iter().filter(|r| r.status != SessionStatus::Tracking) {
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{pad}" x2="{x:.2}" y2="{}" stroke="#f4cccc"/>"##,
            h - pad,
            x = sx(r.frame as f64)
        );
    }
    let path: Vec<String> = pts.iter().map(|&(f, e)| format!("{:.2},{:.2}", sx(f), sy(e))).collect();
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f4e79" points="{}"/>"##, path.join(" "));
    let _ = writeln!(s, r#"<text x="{pad}" y="24">symmetric frame error (max {emax:.3})</text>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">frame {fmax}</text>"#, w - pad, h - 12.0);

    // Right panel: chain snapshots projected on the xy-plane.
    let picks: Vec<&io::TraceRow> = {
        let k = PALETTE.len().min(rows.len());
        let mut idx: Vec<usize> = (0..k).map(|i| i * (rows.len() - 1) / (k - 1).max(1)).collect();
        idx.dedup();
        idx.into_iter().map(|i| &rows[i]).collect()
    };
    let xy = |r: &io::TraceRow| -> Vec<(f64, f64)> { r.chain.chunks(d).map(|c| (c[0], c[1])).collect() };
    let all: Vec<(f64, f64)> = picks.iter().flat_map(|r| xy(r)).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let scale = (w - 2.0 * pad).min(h - 2.0 * pad) / span;
    let px = |x: f64| w + pad + (x - x0) * scale;
    let py = |y: f64| h - pad - (y - y0) * scale;
    for (i, r) in picks.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = xy(r).iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" points="{}"/>"#, path.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">frame {}</text>"#,
            w + pad,
            24.0 + 13.0 * i as f64,
            r.frame
        );
    }
    s.push_str("</svg>\n");
    s
}
