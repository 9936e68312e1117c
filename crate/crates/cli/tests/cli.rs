//! The command line end to end on small synthetic data.

use std::path::{Path, PathBuf};

use protoshot_cli::features::{load_fresh, load_or_compute};
use protoshot_cli::infer::select_shots;
use protoshot_cli::manifest::Manifest;
use protoshot_cli::synth::{cmd_synth, Sound, SynthFile, SynthSpec};
use protoshot_cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use protoshot_core::dataset::parse_annotations;
use protoshot_core::{PipelineConfig, Scaling};

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("protoshot").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn file(name: &str, subset: &str, class: &str, sound: Sound, duration_s: f64, events: usize) -> SynthFile {
    SynthFile {
        name: name.into(),
        subset: subset.into(),
        class: class.into(),
        duration_s,
        sound,
        events,
        min_event_s: 0.2,
        max_event_s: 0.4,
        snr_db: None,
    }
}

/// Three 25 s training classes and one held-out file.
fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        snr_db: 10.0,
        files: vec![
            file("train/low.wav", "train", "LOW", Sound::Tone { freq_hz: 700.0 }, 25.0, 20),
            file("train/up.wav", "train", "UP", Sound::Chirp { start_hz: 1000.0, end_hz: 2500.0 }, 25.0, 20),
            file("train/high.wav", "train", "HIGH", Sound::Tone { freq_hz: 4500.0 }, 25.0, 20),
            file("eval/novel.wav", "eval", "NOVEL", Sound::Chirp { start_hz: 3000.0, end_hz: 4000.0 }, 15.0, 10),
        ],
    }
}

const SMALL_CONFIG: &str =
    r#"{"train": {"epochs": 5, "episodes_per_epoch": 2, "val_episodes": 1, "n_way": 3, "n_query": 2}}"#;

fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    std::env::remove_var("PROTOSHOT_CACHE_DIR");
    let data = dir.join("data");
    cmd_synth(&small_spec(3), &data).unwrap();
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    (data.join("manifest.json"), cfg)
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cli(&["no-such-verb"]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--manifest", "m.json"]), EXIT_USAGE);
    assert_eq!(cli(&["--threshold", "1.5", "eval", "--pred", "p.csv", "--ref", "r.csv"]), EXIT_USAGE);
    assert_eq!(cli(&["--config", "/nonexistent/config.json", "eval", "--pred", "p.csv", "--ref", "r.csv"]), EXIT_USAGE);
    assert_eq!(cli(&["synth", "--out", "x"]), EXIT_USAGE, "needs --spec or --preset");
    assert_eq!(cli(&["--help"]), EXIT_OK);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(cli(&["eval", "--pred", s(&missing), "--ref", s(&missing)]), EXIT_DATA);
    assert_eq!(cli(&["featurize", "--manifest", s(&dir.path().join("manifest.json"))]), EXIT_DATA);
}

#[test]
fn synthesis_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_synth(&small_spec(9), a.path()).unwrap();
    cmd_synth(&small_spec(9), b.path()).unwrap();
    for f in ["train/low.wav", "eval/novel.wav", "eval/novel.csv", "eval/novel_shots.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    cmd_synth(&small_spec(10), c.path()).unwrap();
    assert_ne!(std::fs::read(a.path().join("train/low.wav")).unwrap(), std::fs::read(c.path().join("train/low.wav")).unwrap());
}

#[test]
fn caches_are_reused_until_the_front_end_changes() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest_path, _) = setup(dir.path());
    let manifest = Manifest::load(&manifest_path).unwrap();
    let files: Vec<PathBuf> = manifest.all_files().map(|f| f.wav.clone()).collect();
    let pcen = PipelineConfig::default();
    let recomputed = |cfg: &PipelineConfig| {
        files.iter().filter(|w| load_or_compute(w, &manifest.cache_path(w), cfg).unwrap().1).count()
    };

    // Before featurizing, caches are reported missing.
    let err = load_fresh(&files[0], &manifest.cache_path(&files[0]), &pcen).unwrap_err();
    assert!(err.to_string().contains("featurize"), "{err}");

    assert_eq!(recomputed(&pcen), files.len());
    assert_eq!(recomputed(&pcen), 0);
    // Training-only settings do not touch the front end.
    let mut more_epochs = pcen.clone();
    more_epochs.train.epochs = 3;
    more_epochs.threshold = 0.7;
    assert_eq!(recomputed(&more_epochs), 0);

    let log = PipelineConfig { scaling: Scaling::Log, ..pcen.clone() };
    assert!(load_fresh(&files[0], &manifest.cache_path(&files[0]), &log).is_err(), "stale cache accepted");
    assert_eq!(recomputed(&log), files.len());
    assert_eq!(recomputed(&log), 0);
}

#[test]
fn shots_must_number_five() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest_path, _) = setup(dir.path());
    let data = manifest_path.parent().unwrap();
    let full = parse_annotations(data.join("eval/novel.csv")).unwrap();
    assert_eq!(full.len(), 10);
    assert!(select_shots(full.clone(), "novel.wav", false).is_err(), "ten rows accepted as shots");
    assert_eq!(select_shots(full.clone(), "novel.wav", true).unwrap().len(), 5);
    let four: Vec<_> = full.into_iter().take(4).collect();
    let err = select_shots(four, "novel.wav", true).unwrap_err();
    assert!(err.to_string().contains('4'), "{err}");
}

#[test]
fn train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, cfg) = setup(dir.path());
    let data = manifest.parent().unwrap();
    let run_dir = dir.path().join("run");
    let common = ["--config", s(&cfg), "--seed", "4"];
    let with = |args: &[&str]| cli(&[args, &common[..]].concat());

    // Training reads caches only.
    assert_eq!(with(&["train", "--manifest", s(&manifest), "--out", s(&run_dir)]), EXIT_DATA);
    assert_eq!(with(&["featurize", "--manifest", s(&manifest)]), EXIT_OK);
    assert_eq!(with(&["train", "--manifest", s(&manifest), "--out", s(&run_dir), "--epochs", "2"]), EXIT_OK);
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "header plus one row per epoch:\n{metrics}");

    let ckpt = run_dir.join("model.ckpt");
    let (wav, shots, reference) =
        (data.join("eval/novel.wav"), data.join("eval/novel_shots.csv"), data.join("eval/novel.csv"));
    let pred = dir.path().join("pred.csv");
    let infer = ["infer", "--checkpoint", s(&ckpt), "--wav", s(&wav), "--shots", s(&shots), "--out", s(&pred)];
    assert_eq!(with(&infer), EXIT_OK);
    let events = std::fs::read_to_string(&pred).unwrap();
    assert!(events.starts_with("Audiofilename,Starttime,Endtime"), "{events}");

    // A checkpoint is tied to its front end.
    let log_cfg = dir.path().join("log.json");
    std::fs::write(&log_cfg, r#"{"scaling": "log"}"#).unwrap();
    let mismatched = |extra: &[&str]| cli(&[&infer[..], &["--config", s(&log_cfg)], extra].concat());
    assert_eq!(mismatched(&[]), EXIT_DATA);
    assert_eq!(mismatched(&["--force"]), EXIT_OK);

    // The full CSV only works as shots with --first-five.
    let full = ["infer", "--checkpoint", s(&ckpt), "--wav", s(&wav), "--shots", s(&reference), "--out", s(&pred)];
    assert_eq!(with(&full), EXIT_DATA);
    assert_eq!(with(&[&full[..], &["--first-five"]].concat()), EXIT_OK);

    let report = dir.path().join("report.json");
    assert_eq!(cli(&["eval", "--pred", s(&pred), "--ref", s(&reference), "--json", s(&report)]), EXIT_OK);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let f = json["overall"]["f_measure"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f), "{json}");
    assert_eq!(json["subsets"][0]["subset"], "eval");
}

#[test]
fn augment_preview_writes_four_panels() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = setup(dir.path());
    let wav = manifest.parent().unwrap().join("eval/novel.wav");
    let out = dir.path().join("preview");
    assert_eq!(cli(&["augment-preview", "--in", s(&wav), "--out", s(&out)]), EXIT_OK);
    for panel in ["logmel.png", "pcen.png", "stretched.png", "masked.png"] {
        let bytes = std::fs::read(out.join(panel)).unwrap();
        assert_eq!(&bytes[1..4], b"PNG", "{panel}");
    }
}
