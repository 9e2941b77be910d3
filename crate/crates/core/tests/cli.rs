use std::ffi::OsString;
use std::fs;

use feedback_dmt::cli::{header_to_args, run_with};
use feedback_dmt::eigdist::EigDistribution;
use feedback_dmt::quantizer::{avg_power, QuantizerDoc};
use feedback_dmt::randmat::AntennaConfig;
use feedback_dmt::sim::SWEEP_COLUMNS;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[String]) -> Run {
    let a: Vec<OsString> = args.iter().map(OsString::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(a, &mut out, &mut err);
    Run { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn cmd(s: &str) -> Vec<String> {
    std::iter::once("fbdmt").chain(s.split_whitespace()).map(String::from).collect()
}

fn header_pairs(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn tradeoff_lists_the_zero_gain_point() {
    let r = run(&cmd("tradeoff --scheme quantized --m 2 --n 3 --bins 2"));
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.lines().any(|l| l == "0,42,1,quantized"), "{}", r.out);
    assert!(r.err.is_empty());
}

#[test]
fn single_bin_design_is_truncated_inversion() {
    let r = run(&cmd("design-quantizer --m 1 --n 1 --bins 1 --snr-db 20 --rate-bits 2"));
    assert_eq!(r.code, 0, "{}", r.err);
    let doc: QuantizerDoc = serde_json::from_str(&r.out).unwrap();
    assert_eq!(doc.powers.len(), 1);
    assert!((doc.powers[0] - 100.0).abs() < 1e-9);
    assert!((doc.gamma0 - 0.03).abs() < 1e-12);
}

#[test]
fn design_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.json");
    let r = run(&cmd(&format!(
        "design-quantizer --m 1 --n 2 --bins 3 --snr-db 15 --rate-bits 2 --method kkt --out {}",
        path.display()
    )));
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.is_empty());
    let doc: QuantizerDoc = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let q = doc.quantizer().unwrap();
    let dist = EigDistribution::smallest_analytic(AntennaConfig::new(1, 2).unwrap());
    assert!((avg_power(&q, &dist).unwrap() - doc.avg_power).abs() <= 1e-9 * doc.avg_power);
}

#[test]
fn fit_recovers_an_exact_power_law() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic.csv");
    let mut text = format!("# source=synthetic\n{SWEEP_COLUMNS}\n");
    for s in (10..=40).step_by(2) {
        let o = 10f64.powf(-3.0 * s as f64 / 10.0);
        text.push_str(&format!("{s},1,{o},0,0,1,0,{o},analytic\n"));
    }
    fs::write(&path, text).unwrap();
    let r = run(&cmd(&format!("fit --in {} --window-start-db 10 --window-stop-db 40", path.display())));
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.lines().any(|l| l == "d_hat = 3.000"), "{}", r.out);
}

#[test]
fn headers_rerun_to_identical_output() {
    for c in [
        "sweep --scheme quantized --m 1 --n 1 --bins 3 --mux 0.5 --snr-start 5 --snr-stop 30 --snr-step 5 --mode analytic",
        "sweep --scheme no-csit --m 2 --n 2 --rate-bits 2 --snr-start 0 --snr-stop 10 --trials 20000 --seed 5",
        "tradeoff --scheme joint --m 2 --n 3 --bins 2 --grid-points 9",
    ] {
        let first = run(&cmd(c));
        assert_eq!(first.code, 0, "{}", first.err);
        let again = run(&header_to_args(&header_pairs(&first.out)).unwrap());
        assert_eq!(again.code, 0, "{}", again.err);
        assert_eq!(first.out, again.out, "{c}");
    }
}

#[test]
fn design_config_reruns_to_identical_json() {
    let first = run(&cmd("design-quantizer --m 1 --n 1 --bins 2 --snr-db 25 --rate-bits 1 --method kkt"));
    let doc: serde_json::Value = serde_json::from_str(&first.out).unwrap();
    let pairs: Vec<(String, String)> = doc["config"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), v.as_str().unwrap().to_string()))
        .collect();
    let again = run(&header_to_args(&pairs).unwrap());
    assert_eq!(first.out, again.out);
}

#[test]
fn thread_count_does_not_change_results() {
    let base = "sweep --scheme joint --m 1 --n 2 --bins 3 --rate-bits 1 --snr-start 10 --snr-stop 14 --trials 100000";
    let a = run(&cmd(&format!("--threads 1 {base}")));
    let b = run(&cmd(&format!("{base} --threads 3")));
    assert_eq!(a.code, 0, "{}", a.err);
    assert_eq!(a.out, b.out);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "# no-csit SISO\nscheme = no-csit\nm = 1\nn = 1\nrate_bits = 1\nsnr_start = 0\nsnr_stop = 2\ntrials = 5000\nseed = 1\n").unwrap();
    let r = run(&cmd(&format!("--config {} sweep --seed 7", conf.display())));
    assert_eq!(r.code, 0, "{}", r.err);
    let h = header_pairs(&r.out);
    assert!(h.contains(&("seed".into(), "7".into())));
    assert!(h.contains(&("trials".into(), "5000".into())));
}

#[test]
fn usage_errors_exit_nonzero_on_stderr() {
    let r = run(&cmd("sweep --scheme no-csit --m 1 --n 1 --mux 0.5 --rate-bits 1 --snr-start 0 --snr-stop 1"));
    assert_ne!(r.code, 0);
    assert!(r.out.is_empty() && r.err.contains("--rate-bits"));

    let r = run(&cmd("design-quantizer --m 1 --n 1 --bins 1 --snr-db twenty --rate-bits 2"));
    assert_ne!(r.code, 0);
    assert!(r.err.contains("--snr-db"), "{}", r.err);

    let r = run(&cmd("tradeoff --scheme quantized --m 2 --n 3 --bogus 1"));
    assert_ne!(r.code, 0);

    let r = run(&cmd("design-quantizer --m 1 --n 1 --bins 0 --snr-db 10 --rate-bits 2"));
    assert_ne!(r.code, 0);
    assert!(r.out.is_empty() && !r.err.is_empty());
}

#[test]
fn cache_builds_lists_and_clears() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("cache");
    let b = run(&cmd(&format!("cache --build --m 2 --n 2 --eig-index 1 --samples 20000 --seed 3 --dir {}", d.display())));
    assert_eq!(b.code, 0, "{}", b.err);
    let l = run(&cmd(&format!("cache --list --dir {}", d.display())));
    assert_eq!(l.out.lines().count(), 1, "{}", l.out);
    let c = run(&cmd(&format!("cache --clear --dir {}", d.display())));
    assert!(c.out.contains("removed 1"), "{}", c.out);
    let l = run(&cmd(&format!("cache --list --dir {}", d.display())));
    assert!(l.out.is_empty());
}

#[test]
fn help_mentions_the_snr_convention() {
    let r = run(&cmd("--help"));
    assert_eq!(r.code, 0);
    assert!(r.out.contains("p_av doubles as SNR"));
}
