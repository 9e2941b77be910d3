//! Outage sweeps over SNR (Monte Carlo, analytic, or both), diversity-slope
//! fitting, and the data behind each figure.

use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::eigdist::{build_empirical_seeded, load_or_build, EigDistribution};
use crate::error::{Error, Result};
use crate::quantizer::{avg_power, ln_outage_analytic, DesignMethod};
use crate::randmat::{substream, AntennaConfig, EigSampler};
use crate::schemes::{calibrate_power_cut, mutual_information, Scheme, SchemeKind};
use crate::special::least_squares;
use crate::tradeoff::{JointVariant, TradeoffCurve};

/// Trials per Monte Carlo chunk; each chunk has its own substream.
pub const CHUNK_TRIALS: usize = 1 << 14;
/// Below this many outage events a `both` sweep reports the analytic value.
pub const RARE_EVENT_FLOOR: u64 = 30;
/// Relative slack on the rate test so that designs meeting the rate exactly
/// are not counted as failures through round-off.
pub const DECODE_SLACK: f64 = 1e-12;
/// Default calibration sample for the optimal power control cut.
pub const DEFAULT_CALIBRATION: usize = 1_000_000;

const MC_STREAM: u64 = 0x5157 << 32;

#[derive(Debug, Clone, PartialEq)]
pub enum DistSource {
    /// Gamma(n−m+1) smallest-eigenvalue model (requires i = m).
    Analytic,
    Empirical { samples: usize, seed: u64, cache_dir: Option<PathBuf> },
}

impl DistSource {
    pub fn resolve(&self, cfg: AntennaConfig, i: usize) -> Result<EigDistribution> {
        cfg.check_index(i)?;
        match self {
            Self::Analytic if i == cfg.m() => Ok(EigDistribution::smallest_analytic(cfg)),
            Self::Analytic => Err(Error::Unsupported(format!(
                "no analytic law for eigenvalue {i} of {}; use the empirical distribution",
                cfg.m()
            ))),
            Self::Empirical { samples, seed, cache_dir: Some(dir) } => {
                Ok(EigDistribution::EmpiricalTable(load_or_build(dir, cfg, i, *samples, *seed)?))
            }
            Self::Empirical { samples, seed, cache_dir: None } => {
                Ok(EigDistribution::EmpiricalTable(build_empirical_seeded(cfg, i, *samples, *seed)?))
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Analytic => "analytic",
            Self::Empirical { .. } => "empirical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchemeSpec {
    NoCsit,
    Beamforming,
    TemporalPerfect,
    OptimalPerfect { calibration: usize },
    Quantized { bins: usize, eig_index: usize, decode_index: usize, method: DesignMethod, dist: DistSource },
    Joint { bins: usize, eig_index: usize, alpha: f64, r1: f64, dist: DistSource },
}

impl SchemeSpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::NoCsit => "no-csit",
            Self::Beamforming => "beamforming",
            Self::TemporalPerfect => "temporal-perfect",
            Self::OptimalPerfect { .. } => "optimal-perfect",
            Self::Quantized { .. } => "quantized",
            Self::Joint { .. } => "joint",
        }
    }
}

/// R(p_av) = r·log₂ p_av for a multiplexing gain, or a fixed rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RateSpec {
    Mux(f64),
    Fixed(f64),
}

impl RateSpec {
    pub fn rate_at(&self, p_av: f64) -> Result<f64> {
        let r = match *self {
            Self::Mux(r) => r * p_av.log2(),
            Self::Fixed(b) => b,
        };
        if !(r > 0.0) {
            return Err(Error::InvalidConfig(format!("rate {r} bits at p_av={p_av} is not positive")));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    Mc,
    Analytic,
    Both,
}

impl FromStr for SweepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" | "monte-carlo" => Ok(Self::Mc),
            "analytic" => Ok(Self::Analytic),
            "both" => Ok(Self::Both),
            _ => Err(Error::Parse(format!("unknown mode '{s}' (mc|analytic|both)"))),
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mc => "mc",
            Self::Analytic => "analytic",
            Self::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub cfg: AntennaConfig,
    pub scheme: SchemeSpec,
    pub rate: RateSpec,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub mode: SweepMode,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() {
            return Err(Error::InvalidConfig("empty SNR grid".into()));
        }
        if self.snr_db.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("SNR grid must be strictly increasing".into()));
        }
        if self.mode != SweepMode::Analytic && self.trials < 1000 {
            return Err(Error::InvalidConfig(format!("need at least 1000 trials, got {}", self.trials)));
        }
        match self.rate {
            RateSpec::Mux(r) if !(r > 0.0) || r > self.cfg.m() as f64 => {
                return Err(Error::InvalidConfig(format!("multiplexing gain {r} outside (0, {}]; use a fixed rate for r = 0", self.cfg.m())))
            }
            RateSpec::Fixed(b) if !(b > 0.0) => {
                return Err(Error::InvalidConfig(format!("rate {b} must be positive")))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Inclusive grid start, start+step, …, stop.
pub fn snr_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::InvalidConfig(format!("bad SNR grid {start}:{step}:{stop}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| start + k as f64 * step).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PointMode {
    Mc,
    Analytic,
}

impl fmt::Display for PointMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mc => "mc",
            Self::Analytic => "analytic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutagePoint {
    pub snr_db: f64,
    pub rate_bits: f64,
    pub outage: f64,
    /// ln of the outage; finite even where `outage` underflows to 0.
    pub ln_outage: f64,
    /// Binomial standard error; 0 for analytic points.
    pub stderr: f64,
    pub trials: u64,
    pub transmit_fraction: f64,
    pub no_tx_outage: f64,
    pub decode_outage: f64,
    pub mode: PointMode,
    /// Mean transmitted power per slot and its standard error.
    pub mean_power: f64,
    pub power_stderr: f64,
    /// Outage events behind a Monte Carlo point.
    pub events: u64,
}

pub const SWEEP_COLUMNS: &str =
    "snr_db,rate_bits,outage,stderr,trials,transmit_fraction,no_tx_outage,decode_outage,mode";

/// Builds the scheme used at one SNR point.
pub fn build_scheme(
    cfg: AntennaConfig,
    spec: &SchemeSpec,
    p_av: f64,
    rate_bits: f64,
    quant_dist: Option<&EigDistribution>,
    calibration_seed: u64,
) -> Result<Scheme> {
    let need = || quant_dist.ok_or_else(|| Error::InvalidConfig("scheme needs an eigenvalue law".into()));
    match spec {
        SchemeSpec::NoCsit => Ok(Scheme::no_csit(cfg, p_av, rate_bits)),
        SchemeSpec::Beamforming => Ok(Scheme::beamforming(cfg, p_av, rate_bits)),
        SchemeSpec::TemporalPerfect => Scheme::temporal_perfect(cfg, p_av, rate_bits),
        SchemeSpec::OptimalPerfect { calibration } => {
            let cut = calibrate_power_cut(cfg, p_av, rate_bits, *calibration, calibration_seed)?;
            Ok(Scheme::optimal_perfect(cfg, p_av, rate_bits, cut))
        }
        SchemeSpec::Quantized { bins, eig_index, decode_index, method, .. } => {
            Scheme::quantized(cfg, p_av, rate_bits, *eig_index, *decode_index, *bins, *method, need()?)
        }
        SchemeSpec::Joint { bins, eig_index, alpha, r1, .. } => {
            Scheme::joint(cfg, p_av, *eig_index, *alpha, *r1, *bins, need()?)
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ChunkStats {
    no_tx: u64,
    decode: u64,
    power: f64,
    power_sq: f64,
}

/// Monte Carlo outage of one scheme; depends only on (seed, point), never on
/// the worker count.
pub fn mc_point(scheme: &Scheme, snr_db: f64, trials: usize, seed: u64, point: u64) -> OutagePoint {
    let cfg = scheme.cfg;
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let parts: Vec<ChunkStats> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK_TRIALS.min(trials - c * CHUNK_TRIALS);
            let mut rng = substream(seed, MC_STREAM | point, c as u64);
            let mut sampler = EigSampler::new(cfg);
            let mut s = ChunkStats::default();
            for _ in 0..len {
                let l = sampler.draw(&mut rng);
                let a = scheme.allocate(l);
                s.power += a.total;
                s.power_sq += a.total * a.total;
                if !a.transmitting {
                    s.no_tx += 1;
                } else if mutual_information(l, &a) < scheme.rate_for(l) * (1.0 - DECODE_SLACK) {
                    s.decode += 1;
                }
            }
            s
        })
        .collect();
    let tot = parts.iter().fold(ChunkStats::default(), |a, b| ChunkStats {
        no_tx: a.no_tx + b.no_tx,
        decode: a.decode + b.decode,
        power: a.power + b.power,
        power_sq: a.power_sq + b.power_sq,
    });
    let n = trials as f64;
    let events = tot.no_tx + tot.decode;
    let outage = tot.no_tx as f64 / n + tot.decode as f64 / n;
    let mean_power = tot.power / n;
    let var_power = (tot.power_sq / n - mean_power * mean_power).max(0.0);
    OutagePoint {
        snr_db,
        rate_bits: scheme.rate_bits,
        outage,
        ln_outage: outage.ln(),
        stderr: (outage * (1.0 - outage) / n).sqrt(),
        trials: trials as u64,
        transmit_fraction: 1.0 - tot.no_tx as f64 / n,
        no_tx_outage: tot.no_tx as f64 / n,
        decode_outage: tot.decode as f64 / n,
        mode: PointMode::Mc,
        mean_power,
        power_stderr: (var_power / n).sqrt(),
        events,
    }
}

/// Closed-form outage F(γ₀) for the threshold schemes.
pub fn analytic_point(
    scheme: &Scheme,
    snr_db: f64,
    quant_dist: Option<&EigDistribution>,
    outage_dist: Option<&EigDistribution>,
) -> Result<OutagePoint> {
    let cfg = scheme.cfg;
    let (ln_outage, no_tx, mean_power) = match &scheme.kind {
        SchemeKind::TemporalPerfect { ln_gamma0, .. } => {
            let lf = EigDistribution::smallest_analytic(cfg).ln_cdf(*ln_gamma0)?;
            (lf, lf.exp(), scheme.p_av)
        }
        SchemeKind::QuantizedTemporal { quantizer, .. } => {
            let (qd, od) = match (quant_dist, outage_dist) {
                (Some(q), Some(o)) => (q, o),
                _ => return Err(Error::InvalidConfig("analytic outage needs eigenvalue laws".into())),
            };
            let ln_out = ln_outage_analytic(quantizer, od)?;
            let out = ln_out.exp();
            let no_tx = if quantizer.is_silent_bin0() {
                qd.ln_cdf(quantizer.ln_thresholds()[0])?.exp()
            } else {
                0.0
            };
            (ln_out, no_tx.min(out), cfg.tx() as f64 * avg_power(quantizer, qd)?)
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "analytic outage is available for temporal-perfect and quantized, not {}",
                scheme.label()
            )))
        }
    };
    let outage = ln_outage.exp();
    Ok(OutagePoint {
        snr_db,
        rate_bits: scheme.rate_bits,
        outage,
        ln_outage,
        stderr: 0.0,
        trials: 0,
        transmit_fraction: 1.0 - no_tx,
        no_tx_outage: no_tx,
        decode_outage: (outage - no_tx).max(0.0),
        mode: PointMode::Analytic,
        mean_power,
        power_stderr: 0.0,
        events: 0,
    })
}

fn supports_analytic(spec: &SchemeSpec) -> bool {
    matches!(spec, SchemeSpec::TemporalPerfect | SchemeSpec::Quantized { .. })
}

pub fn run_sweep(config: &SweepConfig) -> Result<Vec<OutagePoint>> {
    config.validate()?;
    let cfg = config.cfg;
    if config.mode == SweepMode::Analytic && !supports_analytic(&config.scheme) {
        return Err(Error::Unsupported(format!(
            "analytic mode is available for temporal-perfect and quantized, not {}",
            config.scheme.label()
        )));
    }
    let (quant_dist, outage_dist) = match &config.scheme {
        SchemeSpec::Quantized { eig_index, decode_index, dist, .. } => {
            let q = dist.resolve(cfg, *eig_index)?;
            let o = if config.mode == SweepMode::Mc {
                None
            } else if decode_index == eig_index {
                Some(q.clone())
            } else {
                Some(dist.resolve(cfg, *decode_index)?)
            };
            (Some(q), o)
        }
        SchemeSpec::Joint { eig_index, bins, dist, .. } => {
            if *bins < 2 {
                return Err(Error::InvalidConfig("joint scheme needs L >= 2".into()));
            }
            (Some(dist.resolve(cfg, *eig_index)?), None)
        }
        _ => (None, None),
    };
    let mut out = Vec::with_capacity(config.snr_db.len());
    for (idx, &snr) in config.snr_db.iter().enumerate() {
        let p = 10f64.powf(snr / 10.0);
        let rate = config.rate.rate_at(p)?;
        let cal_seed = config.seed ^ ((idx as u64 + 1) << 40);
        let scheme = build_scheme(cfg, &config.scheme, p, rate, quant_dist.as_ref(), cal_seed)?;
        let point = match config.mode {
            SweepMode::Mc => mc_point(&scheme, snr, config.trials, config.seed, idx as u64),
            SweepMode::Analytic => analytic_point(&scheme, snr, quant_dist.as_ref(), outage_dist.as_ref())?,
            SweepMode::Both => {
                let mc = mc_point(&scheme, snr, config.trials, config.seed, idx as u64);
                if mc.events < RARE_EVENT_FLOOR && supports_analytic(&config.scheme) {
                    analytic_point(&scheme, snr, quant_dist.as_ref(), outage_dist.as_ref())?
                } else {
                    mc
                }
            }
        };
        out.push(point);
    }
    Ok(out)
}

pub fn write_header(out: &mut impl Write, header: &[(String, String)]) -> std::io::Result<()> {
    for (k, v) in header {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

pub fn write_sweep_csv(
    out: &mut impl Write,
    header: &[(String, String)],
    points: &[OutagePoint],
) -> std::io::Result<()> {
    write_header(out, header)?;
    writeln!(out, "{SWEEP_COLUMNS}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.snr_db,
            p.rate_bits,
            p.outage,
            p.stderr,
            p.trials,
            p.transmit_fraction,
            p.no_tx_outage,
            p.decode_outage,
            p.mode
        )?;
    }
    Ok(())
}

/// `# key=value` pairs of an output header, in file order.
pub type Header = Vec<(String, String)>;

/// Reads a sweep CSV: `# key=value` header lines, the column line, rows.
pub fn read_sweep_csv(input: impl BufRead) -> Result<(Header, Vec<OutagePoint>)> {
    let mut header = Vec::new();
    let mut points = Vec::new();
    let mut seen_columns = false;
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if !seen_columns {
            if line != SWEEP_COLUMNS {
                return Err(Error::Parse(format!("line {}: expected columns '{SWEEP_COLUMNS}'", no + 1)));
            }
            seen_columns = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Parse(format!("line {}: expected 9 fields", no + 1)));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse::<f64>().map_err(|_| Error::Parse(format!("line {}: bad number '{}'", no + 1, f[k])))
        };
        let mode = match f[8] {
            "mc" => PointMode::Mc,
            "analytic" => PointMode::Analytic,
            other => return Err(Error::Parse(format!("line {}: bad mode '{other}'", no + 1))),
        };
        let trials = f[4].parse::<u64>().map_err(|_| Error::Parse(format!("line {}: bad trials", no + 1)))?;
        let outage = num(2)?;
        points.push(OutagePoint {
            snr_db: num(0)?,
            rate_bits: num(1)?,
            outage,
            ln_outage: outage.ln(),
            stderr: num(3)?,
            trials,
            transmit_fraction: num(5)?,
            no_tx_outage: num(6)?,
            decode_outage: num(7)?,
            mode,
            mean_power: f64::NAN,
            power_stderr: f64::NAN,
            events: (outage * trials as f64).round() as u64,
        });
    }
    if !seen_columns {
        return Err(Error::Parse("no column line found".into()));
    }
    Ok((header, points))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityFit {
    /// Slope of −log₁₀ Π against log₁₀ p_av; +∞ when every point in the
    /// window has zero outage.
    pub d_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub stderr: f64,
    pub r_squared: f64,
    pub used: usize,
    /// SNRs (dB) in the window whose outage was zero.
    pub zero_points: Vec<f64>,
}

impl DiversityFit {
    pub fn is_infinite(&self) -> bool {
        self.d_hat.is_infinite()
    }
}

/// Least-squares diversity slope over `[lo_db, hi_db]` with a 95% interval.
pub fn fit_diversity(points: &[OutagePoint], lo_db: f64, hi_db: f64) -> Result<DiversityFit> {
    let window: Vec<&OutagePoint> =
        points.iter().filter(|p| p.snr_db >= lo_db - 1e-9 && p.snr_db <= hi_db + 1e-9).collect();
    let zero_points: Vec<f64> =
        window.iter().filter(|p| p.ln_outage == f64::NEG_INFINITY).map(|p| p.snr_db).collect();
    let used: Vec<&&OutagePoint> = window.iter().filter(|p| p.ln_outage > f64::NEG_INFINITY).collect();
    if used.is_empty() && !zero_points.is_empty() {
        return Ok(DiversityFit {
            d_hat: f64::INFINITY,
            ci_low: f64::INFINITY,
            ci_high: f64::INFINITY,
            stderr: 0.0,
            r_squared: 1.0,
            used: 0,
            zero_points,
        });
    }
    if used.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "diversity fit needs at least 4 points with nonzero outage in the window, got {}",
            used.len()
        )));
    }
    let xs: Vec<f64> = used.iter().map(|p| p.snr_db / 10.0).collect();
    let ys: Vec<f64> = used.iter().map(|p| -p.ln_outage / std::f64::consts::LN_10).collect();
    let line = fit_line(&xs, &ys)?;
    let dof = (xs.len() - 2) as f64;
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Domain(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(DiversityFit {
        d_hat: line.slope,
        ci_low: line.slope - t * line.slope_stderr,
        ci_high: line.slope + t * line.slope_stderr,
        stderr: line.slope_stderr,
        r_squared: line.r_squared,
        used: xs.len(),
        zero_points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Domain("line fit needs at least 3 paired points".into()));
    }
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
    let c = least_squares(&rows, ys, None)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - c[0] - c[1] * x).powi(2)).sum();
    Ok(LineFit {
        intercept: c[0],
        slope: c[1],
        slope_stderr: (ss_res / (n - 2.0) / sxx).sqrt(),
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    })
}

/// Fit of −ln Π against p_av^{1−r}: a straight line means Π ≈ e^{−c·p^{1−r}}.
pub fn fit_exponential_decay(points: &[OutagePoint], r: f64) -> Result<LineFit> {
    let used: Vec<&OutagePoint> = points.iter().filter(|p| p.ln_outage > f64::NEG_INFINITY).collect();
    let xs: Vec<f64> = used.iter().map(|p| 10f64.powf(p.snr_db / 10.0).powf(1.0 - r)).collect();
    let ys: Vec<f64> = used.iter().map(|p| -p.ln_outage).collect();
    fit_line(&xs, &ys)
}

/// Centered finite-difference slope of −log₁₀ Π per decade of p_av.
pub fn local_slopes(points: &[OutagePoint]) -> Vec<(f64, f64)> {
    points
        .windows(3)
        .filter(|w| w.iter().all(|p| p.ln_outage > f64::NEG_INFINITY))
        .map(|w| {
            let d = (w[0].ln_outage - w[2].ln_outage) / std::f64::consts::LN_10
                / ((w[2].snr_db - w[0].snr_db) / 10.0);
            (w[1].snr_db, d)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    Fig3,
    Fig4,
    Fig5a,
    Fig5b,
    Fig6,
}

impl FromStr for FigureId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig3" => Ok(Self::Fig3),
            "fig4" => Ok(Self::Fig4),
            "fig5a" => Ok(Self::Fig5a),
            "fig5b" => Ok(Self::Fig5b),
            "fig6" => Ok(Self::Fig6),
            _ => Err(Error::Parse(format!("unknown figure '{s}' (fig3|fig4|fig5a|fig5b|fig6)"))),
        }
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
            Self::Fig5a => "fig5a",
            Self::Fig5b => "fig5b",
            Self::Fig6 => "fig6",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureOptions {
    pub step_db: f64,
    /// Grid step of r for tradeoff curves.
    pub r_step: f64,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self { step_db: 1.0, r_step: 0.05 }
    }
}

fn kv(k: &str, v: impl fmt::Display) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn analytic_quantized(cfg: AntennaConfig, bins: usize, method: DesignMethod, rate: f64, snr: &[f64]) -> Result<Vec<OutagePoint>> {
    run_sweep(&SweepConfig {
        cfg,
        scheme: SchemeSpec::Quantized { bins, eig_index: 1, decode_index: 1, method, dist: DistSource::Analytic },
        rate: RateSpec::Fixed(rate),
        snr_db: snr.to_vec(),
        trials: 0,
        seed: 0,
        mode: SweepMode::Analytic,
    })
}

fn write_file(path: &Path, body: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    body(&mut f)?;
    Ok(())
}

/// Writes the data behind a figure into `out_dir`; returns the files written.
pub fn reproduce_figure(id: FigureId, out_dir: &Path, opts: &FigureOptions) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    match id {
        FigureId::Fig3 => {
            let cfg = AntennaConfig::new(1, 1)?;
            let snr = snr_grid(0.0, 20.0, opts.step_db)?;
            let perfect = run_sweep(&SweepConfig {
                cfg,
                scheme: SchemeSpec::TemporalPerfect,
                rate: RateSpec::Fixed(2.0),
                snr_db: snr.clone(),
                trials: 0,
                seed: 0,
                mode: SweepMode::Analytic,
            })?;
            let runs = [
                ("perfect", perfect),
                ("kkt", analytic_quantized(cfg, 3, DesignMethod::Kkt, 2.0, &snr)?),
                ("equi", analytic_quantized(cfg, 3, DesignMethod::Equi, 2.0, &snr)?),
                ("L1", analytic_quantized(cfg, 1, DesignMethod::Equi, 2.0, &snr)?),
            ];
            for (name, pts) in runs {
                let path = out_dir.join(format!("fig3_{name}.csv"));
                let header = [kv("figure", "fig3"), kv("curve", name), kv("m", 1), kv("n", 1), kv("L", if name == "L1" { 1 } else { 3 }), kv("rate_bits", 2)];
                write_file(&path, |f| write_sweep_csv(f, &header, &pts))?;
                files.push(path);
            }
        }
        FigureId::Fig4 => {
            for (n, label) in [(4, "text"), (5, "caption")] {
                let path = out_dir.join(format!("fig4_m3_n{n}.csv"));
                let mut curves = vec![TradeoffCurve::quantized(3, n, 2, opts.r_step)?];
                for i in 1..=3 {
                    curves.push(TradeoffCurve::quantized_branch(3, n, 2, i, opts.r_step)?);
                }
                curves.push(TradeoffCurve::no_csit(3, n, opts.r_step)?);
                let header = [kv("figure", "fig4"), kv("parameterization", label), kv("m", 3), kv("n", n), kv("L", 2)];
                write_file(&path, |f| {
                    write_header(f, &header)?;
                    writeln!(f, "r,d,branch_i,scheme")?;
                    curves.iter().try_for_each(|c| c.write_rows(f))
                })?;
                files.push(path);
            }
        }
        FigureId::Fig5a => {
            let cfg = AntennaConfig::new(2, 1)?;
            let snr = snr_grid(0.0, 20.0, opts.step_db)?;
            for bins in 2..=4 {
                for method in [DesignMethod::Kkt, DesignMethod::Equi] {
                    let pts = analytic_quantized(cfg, bins, method, 2.0, &snr)?;
                    let path = out_dir.join(format!("fig5a_L{bins}_{method}.csv"));
                    let header = [kv("figure", "fig5a"), kv("M", 2), kv("N", 1), kv("L", bins), kv("method", method), kv("rate_bits", 2)];
                    write_file(&path, |f| write_sweep_csv(f, &header, &pts))?;
                    files.push(path);
                }
            }
        }
        FigureId::Fig5b => {
            let cfg = AntennaConfig::new(2, 1)?;
            let snr = snr_grid(0.0, 60.0, opts.step_db)?;
            let path = out_dir.join("fig5b.csv");
            let mut rows = Vec::new();
            let mut header = vec![kv("figure", "fig5b"), kv("M", 2), kv("N", 1), kv("rate_bits", 2)];
            for bins in [3, 4] {
                for method in [DesignMethod::Kkt, DesignMethod::Equi] {
                    let pts = analytic_quantized(cfg, bins, method, 2.0, &snr)?;
                    let top = fit_diversity(&pts, 50.0, 60.0)?;
                    header.push(kv(&format!("slope_top_decade_L{bins}_{method}"), format!("{:.4}", top.d_hat)));
                    for (s, d) in local_slopes(&pts) {
                        rows.push(format!("{s},{bins},{method},{d}"));
                    }
                }
            }
            write_file(&path, |f| {
                write_header(f, &header)?;
                writeln!(f, "snr_db,L,method,local_slope")?;
                rows.iter().try_for_each(|r| writeln!(f, "{r}"))
            })?;
            files.push(path);
        }
        FigureId::Fig6 => {
            let path = out_dir.join("fig6.csv");
            let curves = [
                TradeoffCurve::no_csit(2, 3, opts.r_step)?,
                TradeoffCurve::joint(2, 3, 2, JointVariant::AsPrinted, opts.r_step)?,
                TradeoffCurve::joint(2, 3, 2, JointVariant::FigureConsistent, opts.r_step)?,
            ];
            let header = [kv("figure", "fig6"), kv("M", 2), kv("N", 3), kv("L", 2)];
            write_file(&path, |f| {
                write_header(f, &header)?;
                writeln!(f, "r,d,branch_i,scheme")?;
                curves.iter().try_for_each(|c| c.write_rows(f))
            })?;
            files.push(path);
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn siso() -> AntennaConfig {
        AntennaConfig::new(1, 1).unwrap()
    }

    fn base(scheme: SchemeSpec, mode: SweepMode) -> SweepConfig {
        SweepConfig {
            cfg: siso(),
            scheme,
            rate: RateSpec::Fixed(2.0),
            snr_db: vec![0.0, 5.0, 10.0],
            trials: 50_000,
            seed: 3,
            mode,
        }
    }

    #[test]
    fn no_csit_siso_matches_closed_form() {
        let pts = run_sweep(&base(SchemeSpec::NoCsit, SweepMode::Mc)).unwrap();
        for p in &pts {
            let want = 1.0 - (-3.0 / 10f64.powf(p.snr_db / 10.0)).exp();
            assert!((p.outage - want).abs() < 4.0 * p.stderr.max(1e-4), "{p:?} want {want}");
            assert_eq!(p.outage, p.no_tx_outage + p.decode_outage);
            assert_eq!(p.transmit_fraction, 1.0);
        }
    }

    #[test]
    fn quantized_l1_analytic_is_truncated_inversion() {
        let spec = SchemeSpec::Quantized {
            bins: 1,
            eig_index: 1,
            decode_index: 1,
            method: DesignMethod::Equi,
            dist: DistSource::Analytic,
        };
        let pts = run_sweep(&base(spec, SweepMode::Analytic)).unwrap();
        for p in &pts {
            let want = 1.0 - (-3.0 / 10f64.powf(p.snr_db / 10.0)).exp();
            assert!((p.outage - want).abs() < 1e-12);
            assert_eq!(p.mode, PointMode::Analytic);
        }
    }

    #[test]
    fn analytic_mode_rejects_unsupported() {
        assert!(matches!(run_sweep(&base(SchemeSpec::NoCsit, SweepMode::Analytic)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn grid_and_validation() {
        assert_eq!(snr_grid(0.0, 2.0, 0.5).unwrap(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let mut c = base(SchemeSpec::NoCsit, SweepMode::Mc);
        c.snr_db = vec![1.0, 1.0];
        assert!(run_sweep(&c).is_err());
        let mut c = base(SchemeSpec::NoCsit, SweepMode::Mc);
        c.trials = 10;
        assert!(run_sweep(&c).is_err());
        assert!(RateSpec::Mux(1.0).rate_at(1.0).is_err());
    }

    fn synthetic(d: f64) -> Vec<OutagePoint> {
        (0..8)
            .map(|k| {
                let snr = 10.0 + 5.0 * k as f64;
                let p = 10f64.powf(snr / 10.0);
                OutagePoint {
                    snr_db: snr,
                    rate_bits: 1.0,
                    outage: 0.7 / p.powf(d),
                    ln_outage: (0.7 / p.powf(d)).ln(),
                    stderr: 0.0,
                    trials: 0,
                    transmit_fraction: 1.0,
                    no_tx_outage: 0.0,
                    decode_outage: 0.7 / p.powf(d),
                    mode: PointMode::Analytic,
                    mean_power: 0.0,
                    power_stderr: 0.0,
                    events: 0,
                }
            })
            .collect()
    }

    #[test]
    fn fit_exact_power_law() {
        let f = fit_diversity(&synthetic(2.0), 0.0, 100.0).unwrap();
        assert!((f.d_hat - 2.0).abs() < 1e-9);
        assert!(f.ci_low <= f.d_hat && f.d_hat <= f.ci_high);
        let mut zero = synthetic(2.0);
        zero.iter_mut().for_each(|p| {
            p.outage = 0.0;
            p.ln_outage = f64::NEG_INFINITY;
        });
        assert!(fit_diversity(&zero, 0.0, 100.0).unwrap().is_infinite());
        assert!(fit_diversity(&synthetic(2.0)[..3], 0.0, 100.0).is_err());
    }

    #[test]
    fn sweep_csv_round_trip() {
        let pts = synthetic(3.0);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[kv("seed", 42)], &pts).unwrap();
        let (h, back) = read_sweep_csv(buf.as_slice()).unwrap();
        assert_eq!(h, vec![kv("seed", 42)]);
        assert_eq!(back.len(), pts.len());
        for (a, b) in pts.iter().zip(&back) {
            assert_eq!(a.outage, b.outage);
            assert_eq!(a.snr_db, b.snr_db);
        }
    }
}
