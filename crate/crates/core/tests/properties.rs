use feedback_dmt::eigdist::{build_empirical_seeded, EigDistribution};
use feedback_dmt::quantizer::{
    avg_power, design_equi_power, design_kkt, ln_outage_analytic, rate_constant, Quantizer,
};
use feedback_dmt::randmat::AntennaConfig;
use feedback_dmt::tradeoff::{
    d_beamforming, d_joint, d_no_csit, d_quantized, quantized_branch, JointVariant,
};
use proptest::prelude::*;

fn shares(q: &Quantizer, dist: &EigDistribution) -> Vec<f64> {
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend_from_slice(q.ln_thresholds());
    edges.push(f64::INFINITY);
    q.ln_powers()
        .iter()
        .zip(edges.windows(2))
        .map(|(lp, e)| (lp + dist.ln_mass(e[0], e[1]).unwrap()).exp())
        .collect()
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=4, 1usize..=4).prop_map(|(a, b)| (a.min(b), a.max(b)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn curves_are_nonincreasing_in_r((m, n) in dims(), bins in 1usize..=8, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (r1, r2) = (a.min(b) * m as f64, a.max(b) * m as f64);
        prop_assert!(d_no_csit(m, n, r1).unwrap() >= d_no_csit(m, n, r2).unwrap());
        prop_assert!(d_beamforming(m, n, r1).unwrap() >= d_beamforming(m, n, r2).unwrap());
        prop_assert!(d_quantized(m, n, bins, r1).unwrap().d >= d_quantized(m, n, bins, r2).unwrap().d);
        if bins >= 2 {
            let f = |r| d_joint(m, n, bins, r, JointVariant::FigureConsistent).unwrap();
            prop_assert!(f(r1) >= f(r2));
        }
    }

    #[test]
    fn more_bins_never_lower_diversity((m, n) in dims(), bins in 1usize..=7, a in 0.0f64..1.0) {
        let r = a * m as f64;
        prop_assert!(d_quantized(m, n, bins + 1, r).unwrap().d >= d_quantized(m, n, bins, r).unwrap().d);
    }

    #[test]
    fn envelope_is_max_of_branches((m, n) in dims(), bins in 1usize..=8, a in 0.0f64..=1.0) {
        let r = a * m as f64;
        let q = d_quantized(m, n, bins, r).unwrap();
        let best = (1..=m)
            .filter_map(|i| quantized_branch(m, n, bins, r, i).unwrap().map(|b| b.0))
            .fold(0.0f64, f64::max);
        prop_assert_eq!(q.d, best);
    }

    #[test]
    fn equi_designs_hold_their_invariants(snr in 0.0f64..40.0, bins in 1usize..=5, rate in 0.5f64..4.0) {
        let dist = EigDistribution::smallest_analytic(AntennaConfig::new(1, 1).unwrap());
        let p = 10f64.powf(snr / 10.0);
        let r = design_equi_power(&dist, bins, p, rate).unwrap();
        let q = &r.quantizer;
        prop_assert!(q.ln_thresholds().windows(2).all(|w| w[0] < w[1]));
        let s: Vec<f64> = shares(q, &dist).into_iter().filter(|v| *v > 0.0).collect();
        let each = p / s.len() as f64;
        for v in &s {
            prop_assert!((v - each).abs() <= 1e-9 * each, "share {} vs {}", v, each);
        }
        prop_assert!((avg_power(q, &dist).unwrap() - p).abs() <= 1e-9 * p);
        // no outage inside served bins: P_j γ_j ≥ k at every left edge
        let k = rate_constant(rate).unwrap();
        for (j, lg) in q.ln_thresholds().iter().enumerate() {
            let lp = q.ln_powers()[j + 1];
            prop_assert!(lp + lg >= k.ln() - 1e-9, "bin {} under-inverts", j + 1);
        }
    }

    #[test]
    fn kkt_never_loses_to_equi(snr in 0.0f64..40.0, bins in 2usize..=4, rate in 0.5f64..4.0) {
        let dist = EigDistribution::smallest_analytic(AntennaConfig::new(1, 2).unwrap());
        let p = 10f64.powf(snr / 10.0);
        let e = design_equi_power(&dist, bins, p, rate).unwrap().quantizer;
        let k = design_kkt(&dist, bins, p, rate).unwrap();
        prop_assert!(k.residual_max() <= 1e-8);
        prop_assert!((k.avg_power_used - p).abs() <= 1e-8 * p);
        let (le, lk) = (ln_outage_analytic(&e, &dist).unwrap(), ln_outage_analytic(&k.quantizer, &dist).unwrap());
        prop_assert!(lk <= le + 1e-9, "kkt {} equi {}", lk, le);
    }

    #[test]
    fn analytic_cdf_is_monotone((m, n) in dims(), scale in 0.1f64..30.0) {
        let dist = EigDistribution::smallest_analytic(AntennaConfig::new(m, n).unwrap());
        let mut prev = 0.0;
        for k in 0..10_000 {
            let c = dist.cdf(scale * k as f64 / 9_999.0).unwrap();
            prop_assert!(c >= prev);
            prev = c;
        }
        prop_assert!((dist.mass(0.0, f64::INFINITY).unwrap() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn feedback_adds_diversity_at_integer_gains() {
    for m in 1..=4 {
        for n in m..=4 {
            for bins in 2..=8 {
                for r in 0..m {
                    let q = d_quantized(m, n, bins, r as f64).unwrap().d;
                    let c = d_no_csit(m, n, r as f64).unwrap();
                    assert!(q >= c, "({m},{n}) L={bins} r={r}: {q} < {c}");
                }
            }
        }
    }
}

#[test]
fn siso_feedback_diversity_equals_bins() {
    for bins in 1..=16 {
        assert_eq!(d_quantized(1, 1, bins, 0.0).unwrap().d, bins as f64);
    }
}

#[test]
fn empirical_cdf_is_monotone_with_unit_mass() {
    let cfg = AntennaConfig::new(2, 3).unwrap();
    let dist = EigDistribution::EmpiricalTable(build_empirical_seeded(cfg, 1, 100_000, 4).unwrap());
    let mut prev = 0.0;
    for k in 0..10_000 {
        let c = dist.cdf(25.0 * k as f64 / 9_999.0).unwrap();
        assert!(c >= prev, "drop at grid point {k}");
        prev = c;
    }
    assert_eq!(dist.mass(0.0, f64::INFINITY).unwrap(), 1.0);
}
