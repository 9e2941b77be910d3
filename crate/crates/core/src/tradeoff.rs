//! Closed-form diversity-multiplexing curves for each transmitter-knowledge
//! regime, as point functions and tabulated curve families.

use std::fmt;
use std::io::Write;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::schemes::g_function;

/// Diversity order: a finite value, the infinite sentinel, or a case left
/// open by the theory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diversity {
    Finite(f64),
    Infinite,
    Unresolved,
}

impl Diversity {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(*v),
            Self::Infinite => Some(f64::INFINITY),
            Self::Unresolved => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Self::Infinite)
    }
}

impl fmt::Display for Diversity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(v) => write!(f, "{}", round12(*v)),
            Self::Infinite => f.write_str("inf"),
            Self::Unresolved => f.write_str("unresolved"),
        }
    }
}

/// Drops float noise below 1e-12 from printed grid values.
fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

impl Serialize for Diversity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(v) => s.serialize_f64(*v),
            Self::Infinite => s.serialize_str("inf"),
            Self::Unresolved => s.serialize_str("unresolved"),
        }
    }
}

fn check(m: usize, n: usize, r: f64) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::Domain(format!("need 1 <= m <= n, got m={m}, n={n}")));
    }
    if !(0.0..=m as f64).contains(&r) {
        return Err(Error::Domain(format!("multiplexing gain {r} outside [0, {m}]")));
    }
    Ok(())
}

/// Piecewise-linear curve through (k, (m−k)(n−k)), k = 0..m.
pub fn d_no_csit(m: usize, n: usize, r: f64) -> Result<f64> {
    check(m, n, r)?;
    let at = |k: f64| (m as f64 - k) * (n as f64 - k);
    let k = r.floor().min(m as f64 - 1.0);
    let t = r - k;
    Ok(at(k) * (1.0 - t) + at(k + 1.0) * t)
}

/// Beamforming keeps the no-CSIT curve.
pub fn d_beamforming(m: usize, n: usize, r: f64) -> Result<f64> {
    d_no_csit(m, n, r)
}

/// j = max(1, ⌈r⌉): the number of modes carrying data at gain r.
pub fn active_index(r: f64) -> usize {
    (r.ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantizedDiversity {
    /// Envelope value, max over the branches.
    pub d: f64,
    /// (i, value) for i = j..m.
    pub branches: Vec<(usize, f64)>,
    pub argmax: usize,
    pub j: usize,
    /// True if any G value saturated u64.
    pub saturated: bool,
}

/// One branch (1−r/i)(n−j+1)(m−j+1)·G(m,n,i,L); None when i < j.
pub fn quantized_branch(m: usize, n: usize, bins: usize, r: f64, i: usize) -> Result<Option<(f64, bool)>> {
    check(m, n, r)?;
    let j = active_index(r);
    if i < j || i > m {
        return Ok(None);
    }
    let g = g_function(m, n, i, bins)?;
    let d = (1.0 - r / i as f64) * ((n - j + 1) * (m - j + 1)) as f64 * g.as_f64();
    Ok(Some((d.max(0.0), g.saturated)))
}

/// Diversity of quantized temporal power control, maximized over the
/// quantized eigenvalue index.
pub fn d_quantized(m: usize, n: usize, bins: usize, r: f64) -> Result<QuantizedDiversity> {
    check(m, n, r)?;
    if bins == 0 {
        return Err(Error::Domain("need L >= 1".into()));
    }
    let j = active_index(r);
    let mut branches = Vec::new();
    let mut saturated = false;
    for i in j..=m {
        if let Some((d, s)) = quantized_branch(m, n, bins, r, i)? {
            branches.push((i, d));
            saturated |= s;
        }
    }
    let (argmax, d) = branches
        .iter()
        .copied()
        .fold((j, f64::NEG_INFINITY), |acc, b| if b.1 > acc.1 { b } else { acc });
    Ok(QuantizedDiversity { d: d.max(0.0), branches, argmax, j, saturated })
}

/// Optimal power control with perfect CSIT.
pub fn d_perfect(m: usize, n: usize, r: f64) -> Result<Diversity> {
    check(m, n, r)?;
    Ok(if r < m as f64 || n > 2 * m { Diversity::Infinite } else { Diversity::Unresolved })
}

/// Temporal power control with perfect CSIT.
pub fn d_temporal_perfect(m: usize, n: usize, r: f64) -> Result<Diversity> {
    check(m, n, r)?;
    Ok(if r < m as f64 || n >= 2 * m { Diversity::Infinite } else { Diversity::Finite(0.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointVariant {
    /// (1−r/i)(n−i+1)(m−i+1)·G(m,n,i,L−1).
    AsPrinted,
    /// The same without (1−r/i) for r > 0; the pure power-control value at r = 0.
    FigureConsistent,
}

impl JointVariant {
    pub fn label(&self) -> &'static str {
        match self {
            Self::AsPrinted => "joint-as-printed",
            Self::FigureConsistent => "joint-figure-consistent",
        }
    }
}

/// Diversity of joint rate and power control with L feedback levels.
pub fn d_joint(m: usize, n: usize, bins: usize, r: f64, variant: JointVariant) -> Result<f64> {
    check(m, n, r)?;
    if bins < 2 {
        return Err(Error::Domain("joint scheme needs L >= 2".into()));
    }
    let i = active_index(r).min(m);
    let base = ((n - i + 1) * (m - i + 1)) as f64 * g_function(m, n, i, bins - 1)?.as_f64();
    Ok(match variant {
        JointVariant::AsPrinted => ((1.0 - r / i as f64) * base).max(0.0),
        JointVariant::FigureConsistent if r == 0.0 => d_quantized(m, n, bins, 0.0)?.d,
        JointVariant::FigureConsistent => base,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub r: f64,
    pub d: Diversity,
    pub branch_i: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffCurve {
    pub scheme: String,
    pub m: usize,
    pub n: usize,
    pub bins: Option<usize>,
    pub points: Vec<CurvePoint>,
}

/// r = 0, step, 2·step, …, m, with every integer included.
pub fn r_grid(m: usize, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || step > m as f64 {
        return Err(Error::Domain(format!("grid step {step} must lie in (0, {m}]")));
    }
    let count = (m as f64 / step).round() as usize;
    let mut out: Vec<f64> = (0..=count).map(|k| round12(k as f64 * step).min(m as f64)).collect();
    out.extend((0..=m).map(|k| k as f64));
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(out)
}

impl TradeoffCurve {
    fn new(scheme: &str, m: usize, n: usize, bins: Option<usize>) -> Self {
        Self { scheme: scheme.to_string(), m, n, bins, points: Vec::new() }
    }

    fn push(&mut self, r: f64, d: Diversity, branch_i: Option<usize>) {
        self.points.push(CurvePoint { r, d, branch_i });
    }

    pub fn no_csit(m: usize, n: usize, step: f64) -> Result<Self> {
        let mut c = Self::new("no-csit", m, n, None);
        for r in r_grid(m, step)? {
            c.push(r, Diversity::Finite(d_no_csit(m, n, r)?), None);
        }
        Ok(c)
    }

    pub fn beamforming(m: usize, n: usize, step: f64) -> Result<Self> {
        let mut c = Self::no_csit(m, n, step)?;
        c.scheme = "beamforming".into();
        Ok(c)
    }

    pub fn perfect(m: usize, n: usize, step: f64) -> Result<Self> {
        let mut c = Self::new("perfect", m, n, None);
        for r in r_grid(m, step)? {
            c.push(r, d_perfect(m, n, r)?, None);
        }
        Ok(c)
    }

    pub fn temporal_perfect(m: usize, n: usize, step: f64) -> Result<Self> {
        let mut c = Self::new("temporal-perfect", m, n, None);
        for r in r_grid(m, step)? {
            c.push(r, d_temporal_perfect(m, n, r)?, None);
        }
        Ok(c)
    }

    /// Envelope of quantized control. At each integer r < m a second point
    /// with the same r carries the right limit (j = r + 1), so the jump is
    /// drawn; the first point at that r is the value itself.
    pub fn quantized(m: usize, n: usize, bins: usize, step: f64) -> Result<Self> {
        let mut c = Self::new("quantized", m, n, Some(bins));
        for r in r_grid(m, step)? {
            let q = d_quantized(m, n, bins, r)?;
            c.push(r, Diversity::Finite(q.d), Some(q.argmax));
            if r.fract() == 0.0 && r > 0.0 && r < m as f64 {
                let (i, d) = right_limit(m, n, bins, r)?;
                c.push(r, Diversity::Finite(d), Some(i));
            }
        }
        Ok(c)
    }

    /// Branch i of the quantized family over the r where it is defined.
    pub fn quantized_branch(m: usize, n: usize, bins: usize, i: usize, step: f64) -> Result<Self> {
        let mut c = Self::new(&format!("quantized-branch-{i}"), m, n, Some(bins));
        for r in r_grid(m, step)? {
            if let Some((d, _)) = quantized_branch(m, n, bins, r, i)? {
                c.push(r, Diversity::Finite(d), Some(i));
            }
        }
        Ok(c)
    }

    pub fn joint(m: usize, n: usize, bins: usize, variant: JointVariant, step: f64) -> Result<Self> {
        let mut c = Self::new(variant.label(), m, n, Some(bins));
        for r in r_grid(m, step)? {
            c.push(r, Diversity::Finite(d_joint(m, n, bins, r, variant)?), Some(active_index(r).min(m)));
        }
        Ok(c)
    }

    /// Rows `r,d,branch_i,scheme` without header.
    pub fn write_rows(&self, out: &mut impl Write) -> std::io::Result<()> {
        for p in &self.points {
            let b = p.branch_i.map(|i| i.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", p.r, p.d, b, self.scheme)?;
        }
        Ok(())
    }

    /// `# key=value` header, the column line, then the rows.
    pub fn write_csv(&self, out: &mut impl Write, header: &[(String, String)]) -> std::io::Result<()> {
        for (k, v) in header {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "# m={}", self.m)?;
        writeln!(out, "# n={}", self.n)?;
        if let Some(l) = self.bins {
            writeln!(out, "# L={l}")?;
        }
        writeln!(out, "r,d,branch_i,scheme")?;
        self.write_rows(out)
    }
}

/// Limit of the quantized envelope as r ↓ k for integer k: j = k + 1.
fn right_limit(m: usize, n: usize, bins: usize, r: f64) -> Result<(usize, f64)> {
    let j = r as usize + 1;
    let mut best = (j, 0.0);
    for i in j..=m {
        let g = g_function(m, n, i, bins)?.as_f64();
        let d = (1.0 - r / i as f64) * ((n - j + 1) * (m - j + 1)) as f64 * g;
        if d > best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_csit_values() {
        assert_eq!(d_no_csit(2, 2, 0.0).unwrap(), 4.0);
        assert_eq!(d_no_csit(2, 2, 1.0).unwrap(), 1.0);
        assert_eq!(d_no_csit(2, 2, 2.0).unwrap(), 0.0);
        assert_eq!(d_no_csit(2, 2, 0.5).unwrap(), 2.5);
        assert_eq!(d_no_csit(3, 5, 1.0).unwrap(), 8.0);
        assert_eq!(d_beamforming(3, 4, 0.0).unwrap(), 12.0);
        assert!(d_no_csit(2, 2, 2.5).is_err());
        assert!(d_no_csit(3, 2, 0.0).is_err());
    }

    #[test]
    fn quantized_values() {
        let q = d_quantized(2, 3, 2, 0.0).unwrap();
        assert_eq!(q.d, 42.0);
        assert_eq!(q.argmax, 1);
        for l in 1..6 {
            assert_eq!(d_quantized(1, 1, l, 0.0).unwrap().d, l as f64);
        }
        for (m, n) in [(1, 1), (2, 2), (2, 3), (3, 4)] {
            assert_eq!(d_quantized(m, n, 3, m as f64).unwrap().d, 0.0);
        }
    }

    #[test]
    fn single_bin_matches_enumeration() {
        for m in 1..=4 {
            for n in m..=4 {
                for k in 0..=40 {
                    let r = k as f64 * m as f64 / 40.0;
                    let j = (r.ceil() as usize).max(1);
                    let mut best = 0.0f64;
                    for i in j..=m {
                        best = best.max((1.0 - r / i as f64) * ((n - j + 1) * (m - j + 1)) as f64);
                    }
                    assert!((d_quantized(m, n, 1, r).unwrap().d - best).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn perfect_and_temporal() {
        assert_eq!(d_perfect(2, 5, 2.0).unwrap(), Diversity::Infinite);
        assert_eq!(d_perfect(1, 1, 0.5).unwrap(), Diversity::Infinite);
        assert_eq!(d_perfect(2, 3, 2.0).unwrap(), Diversity::Unresolved);
        assert_eq!(d_temporal_perfect(2, 4, 2.0).unwrap(), Diversity::Infinite);
        assert_eq!(d_temporal_perfect(2, 3, 2.0).unwrap(), Diversity::Finite(0.0));
        assert_eq!(d_temporal_perfect(1, 2, 1.0).unwrap(), Diversity::Infinite);
    }

    #[test]
    fn joint_values() {
        let fc = JointVariant::FigureConsistent;
        assert_eq!(d_joint(2, 3, 2, 0.0, fc).unwrap(), 42.0);
        assert_eq!(d_joint(2, 3, 2, 1.0, fc).unwrap(), 6.0);
        assert_eq!(d_joint(2, 3, 2, 2.0, fc).unwrap(), 2.0);
        assert_eq!(d_joint(2, 3, 2, 2.0, JointVariant::AsPrinted).unwrap(), 0.0);
        assert!(d_joint(2, 3, 1, 1.0, fc).is_err());
    }

    #[test]
    fn curve_csv_marks_jumps() {
        let c = TradeoffCurve::quantized(2, 3, 2, 0.5).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf, &[("scheme".into(), "quantized".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# scheme=quantized\n"));
        assert!(text.contains("r,d,branch_i,scheme\n"));
        let at_one: Vec<_> = c.points.iter().filter(|p| p.r == 1.0).collect();
        assert_eq!(at_one.len(), 2);
        // at r=1, j=1: branch i=2 gives (1−1/2)·3·2·G(2,3,2,2) = 0.5·6·3 = 9
        assert_eq!(at_one[0].d, Diversity::Finite(9.0));
        // right limit, j=2: (1−1/2)·2·1·3 = 3
        assert_eq!(at_one[1].d, Diversity::Finite(3.0));
        let p = TradeoffCurve::perfect(2, 3, 1.0).unwrap();
        let mut buf = Vec::new();
        p.write_rows(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("0,inf,,perfect"));
        assert!(text.contains("2,unresolved,,perfect"));
    }

    #[test]
    fn grid_includes_integers() {
        let g = r_grid(3, 0.4).unwrap();
        for k in 0..=3 {
            assert!(g.contains(&(k as f64)));
        }
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
