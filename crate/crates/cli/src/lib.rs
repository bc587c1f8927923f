//! The `pixmatch` command-line tool.
//!
//! Exit codes: 0 success, 1 malformed input or I/O failure, 2 shape or
//! channel mismatch, 3 bad flags or parameters, 4 property violation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pixmatch::io::{export_score_map_image, read_tensor, write_tensor};
use pixmatch::scene::{make_distractor_scene, make_random_scene, DistractorScene};
use pixmatch::{
    affinity_equalized, match_frames, Channel, Error, FeatureMap, MatchConfig, Mechanism, ProbMask,
    ScoreMap, Tensor,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_MALFORMED: u8 = 1;
pub const EXIT_SHAPE: u8 = 2;
pub const EXIT_USAGE: u8 = 3;
pub const EXIT_PROPERTY: u8 = 4;

/// Environment variable consulted when `--threads` is not given.
pub const THREADS_ENV: &str = "PIXMATCH_THREADS";

/// Row-sum tolerance for `match --check` on equalized affinities.
pub const ROW_SUM_TOL: f64 = 1e-5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

/// Maps a library error onto the exit-code contract.
fn classify(e: Error) -> Failure {
    let code = match e {
        Error::DimensionMismatch(_) | Error::IndexOutOfRange { .. } => EXIT_SHAPE,
        Error::InvalidParameter(_) | Error::Generation(_) => EXIT_USAGE,
        Error::InvalidData(_)
        | Error::BadMagic { .. }
        | Error::Length { .. }
        | Error::UnsupportedRank(_)
        | Error::Io(_) => EXIT_MALFORMED,
    };
    Failure::new(code, e.to_string())
}

type CmdResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "pixmatch",
    version,
    about = "Pixel-level feature matching for video object segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a score map from reference, mask and query tensor files.
    Match(MatchArgs),
    /// Run all mechanisms on a synthetic distractor scene and print a table.
    Compare(SceneArgs),
    /// Time match() on seeded random scenes and print a CSV report.
    Bench(BenchArgs),
    /// Export one channel of a score map as a PGM image.
    Viz(VizArgs),
    /// Write a synthetic distractor scene as tensor files plus a manifest.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MechanismArg {
    Surjective,
    Kernel,
    Topk,
    Equalized,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Surjective => Mechanism::Surjective,
            MechanismArg::Kernel => Mechanism::BijectiveKernel,
            MechanismArg::Topk => Mechanism::BijectiveTopK,
            MechanismArg::Equalized => Mechanism::Equalized,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    Bg,
    Fg,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Reference mask at feature resolution or an integer multiple of it.
    #[arg(long)]
    pub ref_mask: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long, value_enum)]
    pub mechanism: MechanismArg,
    /// Gaussian kernel standard deviation (kernel only).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Query pixels kept per reference pixel (topk only).
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Verify output invariants in-process before writing.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 7)]
    pub scene_seed: u64,
    #[arg(long, default_value_t = 3)]
    pub copies: usize,
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 48)]
    pub grid: usize,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    #[arg(long, value_enum, default_value = "surjective")]
    pub mechanism: MechanismArg,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Timed repetitions; must be odd and at least 3.
    #[arg(long, default_value_t = 9)]
    pub runs: usize,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub channel: ChannelArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub copies: usize,
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cmd: Command, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CmdResult {
    let flag = match &cmd {
        Command::Bench(b) => b.threads,
        _ => None,
    };
    let threads = resolve_threads(flag)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot build thread pool: {e}")))?;
    pool.install(|| match cmd {
        Command::Match(a) => cmd_match(&a, err),
        Command::Compare(a) => cmd_compare(&a, out),
        Command::Bench(a) => cmd_bench(&a, threads, out),
        Command::Viz(a) => cmd_viz(&a),
        Command::Synth(a) => cmd_synth(&a),
    })
}

/// `--threads` if given, else `PIXMATCH_THREADS`, else the host parallelism.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize, Failure> {
    let threads = match flag {
        Some(t) => t,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse::<usize>().map_err(|_| {
                Failure::usage(format!("{THREADS_ENV}={v:?} is not a thread count"))
            })?,
            Err(_) => std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
        },
    };
    if threads == 0 {
        return Err(Failure::usage("thread count must be at least 1"));
    }
    Ok(threads)
}

fn load<T: TryFrom<Tensor, Error = Error>>(path: &Path, what: &str) -> Result<T, Failure> {
    read_tensor(path)
        .and_then(T::try_from)
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{what} {}: {e}", path.display())))
}

/// Builds the match configuration, rejecting hyper-parameters that do not
/// belong to the chosen mechanism.
pub fn match_config(
    mechanism: MechanismArg,
    sigma: Option<f64>,
    topk: Option<usize>,
) -> Result<MatchConfig, Failure> {
    let cfg = match (mechanism, sigma, topk) {
        (MechanismArg::Kernel, Some(s), None) => MatchConfig::kernel(s),
        (MechanismArg::Kernel, None, _) => {
            return Err(Failure::usage("--mechanism kernel requires --sigma"))
        }
        (MechanismArg::Topk, None, Some(k)) => MatchConfig::topk(k),
        (MechanismArg::Topk, _, None) => {
            return Err(Failure::usage("--mechanism topk requires --topk"))
        }
        (MechanismArg::Surjective, None, None) => MatchConfig::surjective(),
        (MechanismArg::Equalized, None, None) => MatchConfig::equalized(),
        (m, _, _) => {
            let name = Mechanism::from(m).name();
            return Err(Failure::usage(format!(
                "--sigma/--topk not valid with --mechanism {name} (kernel takes --sigma, topk takes --topk)"
            )));
        }
    };
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

/// Brings a mask to the reference grid: used as-is when it matches, area
/// downsampled when both sides are the same integer multiple.
fn fit_mask(mask: ProbMask, reference: &FeatureMap) -> Result<ProbMask, Failure> {
    if mask.grid() == reference.grid() {
        return Ok(mask);
    }
    let (h, w) = (reference.height(), reference.width());
    let factor = mask.height() / h;
    if factor >= 1 && mask.height() == factor * h && mask.width() == factor * w {
        return mask.downsample(factor).map_err(classify);
    }
    Err(Failure::new(
        EXIT_SHAPE,
        format!(
            "mask {}x{} does not fit reference grid {h}x{w}",
            mask.height(),
            mask.width()
        ),
    ))
}

fn cmd_match(a: &MatchArgs, err: &mut (dyn Write + Send)) -> CmdResult {
    let cfg = match_config(a.mechanism, a.sigma, a.topk)?;
    let reference: FeatureMap = load(&a.reference, "reference")?;
    let mask: ProbMask = load(&a.ref_mask, "reference mask")?;
    let query: FeatureMap = load(&a.query, "query")?;
    if reference.channels() != query.channels() {
        return Err(Failure::new(
            EXIT_SHAPE,
            format!(
                "reference has {} channels, query has {}",
                reference.channels(),
                query.channels()
            ),
        ));
    }
    let mask = fit_mask(mask, &reference)?;
    let scores = match_frames(&reference, &mask, &query, &cfg).map_err(classify)?;
    if a.check {
        let summary = check_invariants(&reference, &query, &scores, cfg.mechanism)?;
        let _ = writeln!(err, "check passed: {summary}");
    }
    write_tensor(&a.out, &Tensor::from(&scores)).map_err(classify)
}

fn check_invariants(
    reference: &FeatureMap,
    query: &FeatureMap,
    scores: &ScoreMap,
    mechanism: Mechanism,
) -> Result<String, Failure> {
    if mechanism == Mechanism::Equalized {
        let a = affinity_equalized(reference, query).map_err(classify)?;
        let worst = a
            .rows()
            .map(|r| (r.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0f64, f64::max);
        if worst > ROW_SUM_TOL {
            return Err(Failure::new(
                EXIT_PROPERTY,
                format!("equalized row sum off by {worst:e}"),
            ));
        }
        return Ok(format!(
            "{} affinity rows sum to 1 (max deviation {worst:.2e})",
            a.ref_pixels()
        ));
    }
    if let Some(v) = scores.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Failure::new(
            EXIT_PROPERTY,
            format!("score {v} outside [0, 1]"),
        ));
    }
    Ok(format!("{} scores within [0, 1]", scores.data().len()))
}

/// One row of the `compare` table.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub mechanism: Mechanism,
    pub param: String,
    pub fg_true: f32,
    pub fg_distractor_max: f32,
    pub margin: f32,
}

/// Runs every mechanism with the initial-frame defaults on a distractor scene.
pub fn compare_scene(scene: &DistractorScene) -> Result<(Vec<CompareRow>, bool), Error> {
    let mut rows = Vec::new();
    let mut maps = Vec::new();
    for mechanism in Mechanism::ALL {
        let cfg = MatchConfig::tuned(mechanism, pixmatch::ReferenceRole::Initial);
        let s = match_frames(&scene.reference, &scene.ref_mask, &scene.query, &cfg)?;
        let fg = s.foreground();
        let fg_true = scene
            .fg_query_pixels
            .iter()
            .map(|&p| fg[p])
            .fold(f32::NEG_INFINITY, f32::max);
        let fg_distractor_max = scene
            .distractor_pixels
            .iter()
            .map(|&p| fg[p])
            .fold(f32::NEG_INFINITY, f32::max);
        let param = match mechanism {
            Mechanism::BijectiveKernel => format!("sigma={}", cfg.kernel_sigma),
            Mechanism::BijectiveTopK => format!("k={}", cfg.top_k),
            _ => "-".into(),
        };
        rows.push(CompareRow {
            mechanism,
            param,
            fg_true,
            fg_distractor_max,
            margin: fg_true - fg_distractor_max,
        });
        maps.push(s);
    }
    let (sur, eq) = (&maps[0], &maps[3]);
    let suppressed = scene
        .distractor_pixels
        .iter()
        .all(|&p| eq.foreground()[p] <= sur.foreground()[p]);
    let ok = suppressed && rows[3].margin >= rows[0].margin;
    Ok((rows, ok))
}

/// Fixed-format text table printed by `compare`.
pub fn render_compare(args: &SceneArgs, rows: &[CompareRow], ok: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "scene seed={} grid={} channels={} copies={}",
        args.scene_seed, args.grid, args.channels, args.copies
    );
    let _ = writeln!(
        s,
        "{:<12} {:<10} {:>12} {:>18} {:>12}",
        "mechanism", "param", "fg_true", "fg_distractor_max", "margin"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:<10} {:>12.6} {:>18.6} {:>12.6}",
            r.mechanism.name(),
            r.param,
            r.fg_true,
            r.fg_distractor_max,
            r.margin
        );
    }
    let _ = writeln!(
        s,
        "suppression ordering: {}",
        if ok { "ok" } else { "VIOLATED" }
    );
    s
}

fn scene_from(
    seed: u64,
    grid: usize,
    channels: usize,
    copies: usize,
) -> Result<DistractorScene, Failure> {
    make_distractor_scene(grid, channels, copies, seed).map_err(classify)
}

fn cmd_compare(a: &SceneArgs, out: &mut (dyn Write + Send)) -> CmdResult {
    let scene = scene_from(a.scene_seed, a.grid, a.channels, a.copies)?;
    let (rows, ok) = compare_scene(&scene).map_err(classify)?;
    out.write_all(render_compare(a, &rows, ok).as_bytes())
        .map_err(|e| Failure::new(EXIT_MALFORMED, e.to_string()))?;
    if !ok {
        return Err(Failure::new(
            EXIT_PROPERTY,
            "equalized matching did not suppress the distractors",
        ));
    }
    Ok(())
}

pub const BENCH_CSV_HEADER: &str =
    "mechanism,ref_grid,query_grid,channels,threads,runs,median_ms,entries_per_sec";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub mechanism: Mechanism,
    pub grid: usize,
    pub channels: usize,
    pub threads: usize,
    pub runs: usize,
    pub median_ms: f64,
}

impl BenchReport {
    /// Affinity entries (reference pixels x query pixels) per second.
    pub fn entries_per_sec(&self) -> f64 {
        let entries = (self.grid * self.grid * self.grid * self.grid) as f64;
        entries / (self.median_ms / 1e3)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{g}x{g},{g}x{g},{},{},{},{:.4},{:.0}",
            self.mechanism.name(),
            self.channels,
            self.threads,
            self.runs,
            self.median_ms,
            self.entries_per_sec(),
            g = self.grid
        )
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Times `match_frames` end to end on a seeded random scene inside a pool of
/// `threads` workers. One untimed warm-up call precedes the timed runs.
pub fn bench(
    mechanism: Mechanism,
    grid: usize,
    channels: usize,
    threads: usize,
    runs: usize,
) -> Result<BenchReport, Failure> {
    if runs < 3 || runs.is_multiple_of(2) {
        return Err(Failure::usage(format!(
            "--runs must be odd and at least 3, got {runs}"
        )));
    }
    if grid == 0 || channels == 0 || threads == 0 {
        return Err(Failure::usage(
            "--grid, --channels and --threads must be positive",
        ));
    }
    let scene = make_random_scene(grid, grid, channels, 0).map_err(classify)?;
    let cfg = MatchConfig::tuned(mechanism, pixmatch::ReferenceRole::Initial);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::usage(format!("cannot build thread pool: {e}")))?;
    let times = pool.install(|| -> Result<Vec<f64>, Failure> {
        match_frames(&scene.reference, &scene.ref_mask, &scene.query, &cfg).map_err(classify)?;
        let mut times = Vec::with_capacity(runs);
        for _ in 0..runs {
            let start = Instant::now();
            let s = match_frames(&scene.reference, &scene.ref_mask, &scene.query, &cfg)
                .map_err(classify)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(s);
        }
        Ok(times)
    })?;
    Ok(BenchReport {
        mechanism,
        grid,
        channels,
        threads,
        runs,
        median_ms: median(times).max(f64::MIN_POSITIVE),
    })
}

fn cmd_bench(a: &BenchArgs, threads: usize, out: &mut (dyn Write + Send)) -> CmdResult {
    let report = bench(a.mechanism.into(), a.grid, a.channels, threads, a.runs)?;
    writeln!(out, "{BENCH_CSV_HEADER}\n{}", report.csv_row())
        .map_err(|e| Failure::new(EXIT_MALFORMED, e.to_string()))
}

fn cmd_viz(a: &VizArgs) -> CmdResult {
    let scores: ScoreMap = load(&a.input, "score map")?;
    let channel = match a.channel {
        ChannelArg::Bg => Channel::Background,
        ChannelArg::Fg => Channel::Foreground,
    };
    export_score_map_image(&scores, channel, &a.out).map_err(classify)
}

/// Text manifest written next to the scene tensors.
pub fn manifest(scene: &DistractorScene, seed: u64) -> String {
    let join = |v: &[usize]| {
        v.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!(
        "# pixmatch distractor scene\nseed {seed}\ngrid {}\nchannels {}\ncopies {}\nref_fg_pixel {}\nfg_query_pixels {}\ndistractor_pixels {}\n",
        scene.query.width(),
        scene.query.channels(),
        scene.n_copies,
        scene.ref_fg_pixel,
        join(&scene.fg_query_pixels),
        join(&scene.distractor_pixels),
    )
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let scene = scene_from(a.seed, a.grid, a.channels, a.copies)?;
    let io_err =
        |e: std::io::Error| Failure::new(EXIT_MALFORMED, format!("{}: {e}", a.out_dir.display()));
    fs::create_dir_all(&a.out_dir).map_err(io_err)?;
    write_tensor(a.out_dir.join("ref.emt"), &Tensor::from(&scene.reference)).map_err(classify)?;
    write_tensor(
        a.out_dir.join("ref_mask.emt"),
        &Tensor::from(&scene.ref_mask),
    )
    .map_err(classify)?;
    write_tensor(a.out_dir.join("query.emt"), &Tensor::from(&scene.query)).map_err(classify)?;
    fs::write(a.out_dir.join("manifest.txt"), manifest(&scene, a.seed)).map_err(io_err)
}
