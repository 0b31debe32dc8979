use std::path::{Path, PathBuf};
use std::process::Command;

use shaping_cli::config::{ExperimentConfig, Scheme};
use shaping_cli::experiments::{load_model, run_ber};
use shaping_cli::CliError;
use shaping_core::channels::ChannelKind;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shaping"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("shaping-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, format!("version = 1\noutput_dir = \"out\"\n{body}")).unwrap();
    p
}

fn read_series(path: &Path) -> Vec<(f64, f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("es_n0_db,value,stderr"));
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}

#[test]
fn eval_bmi_writes_series_capacity_and_manifest() {
    let dir = scratch("bmi");
    let cfg = write_config(&dir, "scheme = \"uniform-qam\"\nsnr_db = [0.0, 10.0, 40.0]\nsamples = 4000\nseed = 5\n");
    let out = bin().arg("eval-bmi").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let series = read_series(&dir.join("out/uniform-qam-awgn-bmi.csv"));
    assert_eq!(series.len(), 3);
    assert!((series[2].1 - 6.0).abs() < 1e-6);
    let cap = read_series(&dir.join("out/awgn-capacity.csv"));
    assert!((cap[0].1 - 1.0).abs() < 1e-15);
    for (b, c) in series.iter().zip(&cap) {
        assert!(b.1 <= c.1 + 3.0 * b.2);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/uniform-qam-awgn-bmi.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn reruns_are_bit_identical_and_seed_dependent() {
    let dir = scratch("det");
    let cfg = write_config(&dir, "scheme = \"uniform-qam\"\nsnr_db = [3.0, 8.0]\nsamples = 3000\nseed = 11\n");
    let run = |extra: &[&str]| {
        let out = bin().arg("eval-bmi").arg(&cfg).args(extra).output().unwrap();
        assert!(out.status.success());
        std::fs::read(dir.join("out/uniform-qam-awgn-bmi.csv")).unwrap()
    };
    let a = run(&[]);
    assert_eq!(a, run(&[]));
    assert_ne!(a, run(&["--seed", "12"]));
}

#[test]
fn uniform_se_is_four() {
    let dir = scratch("se");
    let cfg = write_config(&dir, "scheme = \"uniform-qam\"\nsnr_db = [0.0, 20.0]\n");
    assert!(bin().arg("eval-se").arg(&cfg).output().unwrap().status.success());
    for p in read_series(&dir.join("out/uniform-qam-se.csv")) {
        assert!((p.1 - 4.0).abs() < 1e-12);
    }
}

#[test]
fn export_constellation_has_unit_power() {
    let dir = scratch("export");
    let cfg = write_config(&dir, "scheme = \"uniform-qam\"\nsnr_db = [10.0]\n");
    assert!(bin().arg("export-constellation").arg(&cfg).output().unwrap().status.success());
    let text = std::fs::read_to_string(dir.join("out/uniform-qam-constellation-10.0dB.csv")).unwrap();
    let power: f64 = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let (re, im, p): (f64, f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap(), f[4].parse().unwrap());
            p * (re * re + im * im)
        })
        .sum();
    assert!((power - 1.0).abs() < 1e-12);
}

#[test]
fn exit_codes_follow_categories() {
    let dir = scratch("codes");
    let bad = write_config(&dir, "scheme = \"gs\"\nsnr_db = [5.0, 1.0]\n");
    assert_eq!(bin().arg("eval-bmi").arg(&bad).output().unwrap().status.code(), Some(2));
    let missing = write_config(&dir, "scheme = \"psgs-2/3\"\nsnr_db = [5.0]\ncheckpoint = \"nope.model\"\n");
    assert_eq!(bin().arg("eval-bmi").arg(&missing).output().unwrap().status.code(), Some(3));
    let none = write_config(&dir, "scheme = \"mbqam-2/3\"\nsnr_db = [5.0]\n");
    assert_eq!(bin().arg("eval-ber").arg(&none).output().unwrap().status.code(), Some(3));
    assert_eq!(bin().arg("eval-bmi").arg(dir.join("absent.toml")).output().unwrap().status.code(), Some(2));
}

#[test]
fn train_then_evaluate_checkpoint() {
    let dir = scratch("train");
    let cfg = write_config(
        &dir,
        "scheme = \"psgs-2/3\"\nsnr_db = [5.0]\nsamples = 2000\ncheckpoint = \"m.model\"\n\
         [train]\niterations = 20\nbatch_size = 20\nseeds = [1, 2]\nvalidate_every = 10\nvalidation_realizations = 10\n",
    );
    let out = bin().arg("train").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("m.model").exists());
    assert!(dir.join("out/psgs-2-3-awgn-train/seed-2-history.csv").exists());
    let manifest = std::fs::read_to_string(dir.join("out/psgs-2-3-awgn-train/train.manifest.json")).unwrap();
    assert!(manifest.contains("best_seed"));
    assert!(bin().arg("eval-bmi").arg(&cfg).output().unwrap().status.success());

    // a checkpoint of another scheme is refused
    let other = write_config(&dir, "scheme = \"gs\"\nsnr_db = [5.0]\ncheckpoint = \"m.model\"\n");
    assert_eq!(bin().arg("eval-se").arg(&other).output().unwrap().status.code(), Some(3));
}

#[test]
fn noiseless_ber_is_zero() {
    let mut c = ExperimentConfig::new(Scheme::UniformQam, ChannelKind::Awgn, vec![200.0]);
    c.ber.min_codewords = 5;
    c.ber.max_codewords = 5;
    let model = load_model(&c).unwrap();
    let p = run_ber(&c, &model).unwrap()[0];
    assert_eq!((p.bit_errors, p.codewords, p.bits), (0, 5, 5 * 1296));
}

#[test]
fn ber_falls_with_snr_and_stops_on_errors() {
    let mut c = ExperimentConfig::new(Scheme::UniformQam, ChannelKind::Awgn, vec![8.0, 16.0]);
    c.ber.min_codewords = 3;
    c.ber.max_codewords = 50;
    c.ber.min_errors = 100;
    let model = load_model(&c).unwrap();
    let p = run_ber(&c, &model).unwrap();
    // far below threshold a few codewords exceed the error target
    assert_eq!(p[0].codewords, 3);
    assert!(p[0].ber > 0.01);
    assert_eq!(p[1].bit_errors, 0);
    assert_eq!(p[1].codewords, 50);
}

#[test]
fn fading_needs_a_demapper() {
    let c = ExperimentConfig::new(Scheme::UniformQam, ChannelKind::Rbf, vec![5.0]);
    assert!(matches!(load_model(&c), Err(CliError::Checkpoint(_))));
}
