//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::eigdist::{
    cache_path, clear_cache, list_cache, load_or_build, DEFAULT_CACHE_DIR,
};
use crate::error::{Error, Result};
use crate::quantizer::{design, DesignMethod, QuantizerDoc};
use crate::randmat::AntennaConfig;
use crate::sim::{
    fit_diversity, read_sweep_csv, reproduce_figure, run_sweep, snr_grid, write_sweep_csv, DistSource,
    FigureId, FigureOptions, RateSpec, SchemeSpec, SweepConfig, SweepMode, DEFAULT_CALIBRATION,
};
use crate::tradeoff::{JointVariant, TradeoffCurve};

const SNR_NOTE: &str = "SNR in dB is 10·log10(p_av) with unit noise variance, so p_av doubles as SNR.";

#[derive(Debug, Parser)]
#[command(name = "fbdmt", version, args_override_self = true, about = "Outage and diversity-multiplexing tradeoff of MIMO links with quantized power-control feedback", after_help = SNR_NOTE)]
pub struct Cli {
    /// Config file of `key = value` lines (flat keys mirroring the flags);
    /// flags on the command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for simulation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design an L-bin feedback quantizer and write it as JSON.
    DesignQuantizer(DesignArgs),
    /// Outage versus SNR for one scheme, as CSV.
    Sweep(SweepArgs),
    /// Diversity-multiplexing curve of one scheme, as CSV.
    Tradeoff(TradeoffArgs),
    /// Fit the diversity slope of a sweep CSV.
    Fit(FitArgs),
    /// Write the data behind a figure.
    Figure(FigureArgs),
    /// Manage cached empirical eigenvalue tables.
    Cache(CacheArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Equi,
    Kkt,
}

impl From<MethodArg> for DesignMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Equi => DesignMethod::Equi,
            MethodArg::Kkt => DesignMethod::Kkt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistArg {
    Analytic,
    Empirical,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DistOpts {
    /// Law of the quantized eigenvalue (default: analytic for the smallest
    /// eigenvalue, empirical otherwise).
    #[arg(long, value_enum)]
    pub dist: Option<DistArg>,
    /// Channel draws for an empirical table.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    /// Seed of the empirical table (default: --seed).
    #[arg(long)]
    pub dist_seed: Option<u64>,
    /// Cache directory for empirical tables; omit to build in memory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DesignArgs {
    /// Transmit antennas M.
    #[arg(long)]
    pub m: usize,
    /// Receive antennas N.
    #[arg(long)]
    pub n: usize,
    /// Quantized eigenvalue index i (1 = largest; default min(M,N)).
    #[arg(long)]
    pub eig_index: Option<usize>,
    #[arg(long)]
    pub bins: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: f64,
    #[arg(long)]
    pub rate_bits: f64,
    #[arg(long, value_enum, default_value = "equi")]
    pub method: MethodArg,
    #[command(flatten)]
    pub dist: DistOpts,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    NoCsit,
    Beamforming,
    TemporalPerfect,
    OptimalPerfect,
    Quantized,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Mc,
    Analytic,
    Both,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    /// Transmit antennas M.
    #[arg(long)]
    pub m: usize,
    /// Receive antennas N.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub bins: usize,
    /// Quantized eigenvalue index i (default min(M,N)).
    #[arg(long)]
    pub eig_index: Option<usize>,
    /// Eigenvalue index j ≤ i whose modes carry the rate (default i).
    #[arg(long)]
    pub decode_index: Option<usize>,
    #[arg(long, value_enum, default_value = "equi")]
    pub method: MethodArg,
    /// Multiplexing gain r: rate r·log2(p_av).
    #[arg(long, conflicts_with = "rate_bits", required_unless_present = "rate_bits")]
    pub mux: Option<f64>,
    /// Fixed rate in bits/s/Hz.
    #[arg(long)]
    pub rate_bits: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_start: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_stop: f64,
    #[arg(long, default_value_t = 1.0)]
    pub snr_step: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "mc")]
    pub mode: ModeArg,
    /// Joint scheme: share α of the power for the high-rate codebook.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Joint scheme: multiplexing factor r₁ of the high-rate codebook.
    #[arg(long, default_value_t = 1.0)]
    pub r1: f64,
    /// Optimal power control: channels drawn to calibrate the power cut.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION)]
    pub calibration: usize,
    #[command(flatten)]
    pub dist: DistOpts,
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveArg {
    NoCsit,
    Beamforming,
    Perfect,
    TemporalPerfect,
    Quantized,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Printed,
    Figure,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TradeoffArgs {
    #[arg(long, value_enum)]
    pub scheme: CurveArg,
    /// Transmit antennas M.
    #[arg(long)]
    pub m: usize,
    /// Receive antennas N.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Joint scheme formula (default: both).
    #[arg(long, value_enum)]
    pub joint_variant: Option<VariantArg>,
    /// Quantized scheme: also emit the per-index branch curves.
    #[arg(long)]
    pub branches: bool,
    /// Points on [0, min(M,N)]; integers are always included.
    #[arg(long, default_value_t = 41)]
    pub grid_points: usize,
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[serde(rename = "in")]
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub window_start_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub window_stop_db: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureArg {
    Fig3,
    Fig4,
    Fig5a,
    Fig5b,
    Fig6,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FigureArgs {
    #[arg(long, value_enum)]
    pub id: FigureArg,
    #[serde(skip)]
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub snr_step: f64,
    #[arg(long, default_value_t = 0.05)]
    pub r_step: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(clap::ArgGroup::new("action").required(true).args(["build", "list", "clear"])))]
pub struct CacheArgs {
    #[arg(long)]
    pub build: bool,
    #[arg(long)]
    pub list: bool,
    #[arg(long)]
    pub clear: bool,
    #[arg(long, default_value = DEFAULT_CACHE_DIR)]
    pub dir: PathBuf,
    #[arg(long, required_if_eq("build", "true"))]
    pub m: Option<usize>,
    #[arg(long, required_if_eq("build", "true"))]
    pub n: Option<usize>,
    #[arg(long)]
    pub eig_index: Option<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Turns key/value pairs into flags: `true` gives a bare flag, `false` and
/// `null` are dropped.
pub fn pairs_to_args(pairs: &[(String, String)]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in pairs {
        let flag = format!("--{}", k.replace('_', "-"));
        match v.as_str() {
            "true" => out.push(flag),
            "false" | "null" => {}
            _ => {
                out.push(flag);
                out.push(v.clone());
            }
        }
    }
    out
}

/// Command line that reruns an output file: the `command` key of its header
/// names the subcommand, the remaining keys become flags.
pub fn header_to_args(header: &[(String, String)]) -> Result<Vec<String>> {
    let cmd = header
        .iter()
        .find(|(k, _)| k == "command")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Parse("header has no command key".into()))?;
    let rest: Vec<(String, String)> =
        header.iter().filter(|(k, _)| k != "command" && k != "version").cloned().collect();
    let mut args = vec!["fbdmt".to_string(), cmd];
    args.extend(pairs_to_args(&rest));
    Ok(args)
}

const SUBCOMMANDS: [&str; 6] = ["design-quantizer", "sweep", "tradeoff", "fit", "figure", "cache"];

/// Splices the config file's flags in right after the subcommand, so that
/// flags given later on the command line override them.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut cleaned = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| Error::Parse("--config needs a file".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            cleaned.push(a);
        }
    }
    let Some(path) = path else { return Ok(cleaned) };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config file {path}: {e}")))?;
    let extra = pairs_to_args(&parse_config_file(&text)?);
    let pos = cleaned.iter().position(|a| SUBCOMMANDS.contains(&a.as_str()));
    match pos {
        Some(p) => {
            cleaned.splice(p + 1..p + 1, extra);
        }
        None => cleaned.extend(extra),
    }
    Ok(cleaned)
}

/// Flattens a serialized argument struct into `key=value` header pairs.
fn header_of(command: &str, args: &impl Serialize) -> Vec<(String, String)> {
    let mut out = vec![
        ("command".to_string(), command.to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(args) {
        flatten(&map, &mut out);
    }
    out
}

fn flatten(map: &serde_json::Map<String, serde_json::Value>, out: &mut Vec<(String, String)>) {
    for (k, v) in map {
        match v {
            serde_json::Value::Object(inner) => flatten(inner, out),
            serde_json::Value::String(s) => out.push((k.replace('_', "-"), s.clone())),
            other => out.push((k.replace('_', "-"), other.to_string())),
        }
    }
}

/// Runs the CLI with explicit streams; returns the process exit code.
pub fn run_with(args: Vec<OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let args: Vec<String> = args.into_iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    let mut buf = Vec::new();
    let result = pool.install(|| dispatch(&cli.command, &mut buf));
    let _ = out.write_all(&buf);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::DesignQuantizer(a) => design_quantizer(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Tradeoff(a) => tradeoff(a, out),
        Command::Fit(a) => fit(a, out),
        Command::Figure(a) => figure(a, out),
        Command::Cache(a) => cache(a, out),
    }
}

/// Writes to `--out` when given, else to the output stream.
fn emit(path: Option<&Path>, out: &mut dyn Write, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(fs::File::create(p)?);
            body(&mut f)?;
            f.flush()?;
        }
        None => body(out)?,
    }
    Ok(())
}

fn dist_source(d: &DistOpts, cfg: AntennaConfig, i: usize, seed: u64) -> DistSource {
    let kind = d.dist.unwrap_or(if i == cfg.m() { DistArg::Analytic } else { DistArg::Empirical });
    match kind {
        DistArg::Analytic => DistSource::Analytic,
        DistArg::Empirical => DistSource::Empirical {
            samples: d.samples,
            seed: d.dist_seed.unwrap_or(seed),
            cache_dir: d.cache_dir.clone(),
        },
    }
}

fn design_quantizer(a: &DesignArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = AntennaConfig::new(a.m, a.n)?;
    let i = a.eig_index.unwrap_or(cfg.m());
    let source = dist_source(&a.dist, cfg, i, a.seed);
    let dist = source.resolve(cfg, i)?;
    let p_av = 10f64.powf(a.snr_db / 10.0);
    let report = design(a.method.into(), &dist, a.bins, p_av, a.rate_bits)?;
    let (samples, seed) = match &source {
        DistSource::Empirical { samples, seed, .. } => (Some(*samples), Some(*seed)),
        DistSource::Analytic => (None, None),
    };
    let mut doc = QuantizerDoc::from_report(&report, cfg.m(), cfg.n(), i, a.snr_db, source.label(), samples, seed);
    let mut config = serde_json::Map::new();
    for (k, v) in header_of("design-quantizer", a) {
        config.insert(k, serde_json::Value::String(v));
    }
    doc.config = Some(config);
    let text = serde_json::to_string_pretty(&doc)?;
    emit(a.out.as_deref(), out, |w| writeln!(w, "{text}"))
}

fn sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = AntennaConfig::new(a.m, a.n)?;
    let i = a.eig_index.unwrap_or(cfg.m());
    let j = a.decode_index.unwrap_or(i);
    let dist = dist_source(&a.dist, cfg, i, a.seed);
    let scheme = match a.scheme {
        SchemeArg::NoCsit => SchemeSpec::NoCsit,
        SchemeArg::Beamforming => SchemeSpec::Beamforming,
        SchemeArg::TemporalPerfect => SchemeSpec::TemporalPerfect,
        SchemeArg::OptimalPerfect => SchemeSpec::OptimalPerfect { calibration: a.calibration },
        SchemeArg::Quantized => SchemeSpec::Quantized {
            bins: a.bins,
            eig_index: i,
            decode_index: j,
            method: a.method.into(),
            dist,
        },
        SchemeArg::Joint => SchemeSpec::Joint { bins: a.bins, eig_index: i, alpha: a.alpha, r1: a.r1, dist },
    };
    let rate = match (a.mux, a.rate_bits) {
        (Some(r), None) => RateSpec::Mux(r),
        (None, Some(b)) => RateSpec::Fixed(b),
        _ => return Err(Error::InvalidConfig("give exactly one of --mux and --rate-bits".into())),
    };
    let mode = match a.mode {
        ModeArg::Mc => SweepMode::Mc,
        ModeArg::Analytic => SweepMode::Analytic,
        ModeArg::Both => SweepMode::Both,
    };
    let config = SweepConfig {
        cfg,
        scheme,
        rate,
        snr_db: snr_grid(a.snr_start, a.snr_stop, a.snr_step)?,
        trials: a.trials,
        seed: a.seed,
        mode,
    };
    let points = run_sweep(&config)?;
    let header = header_of("sweep", a);
    emit(a.out.as_deref(), out, |mut w| write_sweep_csv(&mut w, &header, &points))
}

fn tradeoff(a: &TradeoffArgs, out: &mut dyn Write) -> Result<()> {
    let c = AntennaConfig::new(a.m, a.n)?;
    let (m, n) = (c.m(), c.n());
    if a.grid_points < 2 {
        return Err(Error::InvalidConfig("--grid-points must be at least 2".into()));
    }
    let step = m as f64 / (a.grid_points - 1) as f64;
    let bins = || a.bins.ok_or_else(|| Error::InvalidConfig("this scheme needs --bins".into()));
    let curves = match a.scheme {
        CurveArg::NoCsit => vec![TradeoffCurve::no_csit(m, n, step)?],
        CurveArg::Beamforming => vec![TradeoffCurve::beamforming(m, n, step)?],
        CurveArg::Perfect => vec![TradeoffCurve::perfect(m, n, step)?],
        CurveArg::TemporalPerfect => vec![TradeoffCurve::temporal_perfect(m, n, step)?],
        CurveArg::Quantized => {
            let l = bins()?;
            let mut v = vec![TradeoffCurve::quantized(m, n, l, step)?];
            if a.branches {
                for i in 1..=m {
                    v.push(TradeoffCurve::quantized_branch(m, n, l, i, step)?);
                }
            }
            v
        }
        CurveArg::Joint => {
            let l = bins()?;
            let variants = match a.joint_variant {
                Some(VariantArg::Printed) => vec![JointVariant::AsPrinted],
                Some(VariantArg::Figure) => vec![JointVariant::FigureConsistent],
                None => vec![JointVariant::AsPrinted, JointVariant::FigureConsistent],
            };
            variants
                .into_iter()
                .map(|v| TradeoffCurve::joint(m, n, l, v, step))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let header = header_of("tradeoff", a);
    emit(a.out.as_deref(), out, |mut w| {
        crate::sim::write_header(&mut w, &header)?;
        writeln!(w, "r,d,branch_i,scheme")?;
        curves.iter().try_for_each(|c| c.write_rows(&mut w))
    })
}

fn fit(a: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let f = fs::File::open(&a.input)
        .map_err(|e| Error::InvalidConfig(format!("cannot open {}: {e}", a.input.display())))?;
    let (_, points) = read_sweep_csv(BufReader::new(f))?;
    let lo = a.window_start_db.unwrap_or(f64::NEG_INFINITY);
    let hi = a.window_stop_db.unwrap_or(f64::INFINITY);
    let r = fit_diversity(&points, lo, hi)?;
    for (k, v) in header_of("fit", a) {
        writeln!(out, "# {k}={v}")?;
    }
    if r.is_infinite() {
        writeln!(out, "d_hat = inf")?;
        writeln!(out, "note = infinite diversity indicated: all {} points in the window have zero outage", r.zero_points.len())?;
        return Ok(());
    }
    writeln!(out, "d_hat = {:.3}", r.d_hat)?;
    writeln!(out, "ci95 = [{:.3}, {:.3}]", r.ci_low, r.ci_high)?;
    writeln!(out, "r_squared = {:.6}", r.r_squared)?;
    writeln!(out, "points = {}", r.used)?;
    if !r.zero_points.is_empty() {
        let z: Vec<String> = r.zero_points.iter().map(|s| s.to_string()).collect();
        writeln!(out, "excluded_zero_outage_db = {}", z.join(" "))?;
    }
    Ok(())
}

fn figure(a: &FigureArgs, out: &mut dyn Write) -> Result<()> {
    let id = match a.id {
        FigureArg::Fig3 => FigureId::Fig3,
        FigureArg::Fig4 => FigureId::Fig4,
        FigureArg::Fig5a => FigureId::Fig5a,
        FigureArg::Fig5b => FigureId::Fig5b,
        FigureArg::Fig6 => FigureId::Fig6,
    };
    let files = reproduce_figure(id, &a.out_dir, &FigureOptions { step_db: a.snr_step, r_step: a.r_step })?;
    for f in files {
        writeln!(out, "{}", f.display())?;
    }
    Ok(())
}

fn cache(a: &CacheArgs, out: &mut dyn Write) -> Result<()> {
    if a.list {
        for (path, key) in list_cache(&a.dir)? {
            writeln!(out, "{}\t{key}", path.display())?;
        }
    }
    if a.clear {
        let n = clear_cache(&a.dir)?;
        writeln!(out, "removed {n} cached tables from {}", a.dir.display())?;
    }
    if a.build {
        let (Some(m), Some(n)) = (a.m, a.n) else {
            return Err(Error::InvalidConfig("--build needs --m and --n".into()));
        };
        let cfg = AntennaConfig::new(m, n)?;
        let i = a.eig_index.unwrap_or(cfg.m());
        let t = load_or_build(&a.dir, cfg, i, a.samples, a.seed)?;
        writeln!(
            out,
            "{}\tfitted_exponent={:.4}",
            cache_path(&a.dir, cfg, i, a.samples, a.seed).display(),
            t.fitted_exponent()
        )?;
    }
    Ok(())
}
