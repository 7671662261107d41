use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn synsem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synsem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dump(dir: &Path) {
    let out = synsem(&[
        "synth", "--output", path(dir), "--templates", "6", "--twins", "5", "--languages", "2", "--dim",
        "96", "--tokens", "6", "--b", "0.8,1.2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_ingest_and_every_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    let out_dir = tmp.path().join("out");
    small_dump(&dump);

    let out = synsem(&["ingest", path(&dump)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("records: 150  originals: 30"), "{text}");

    for (sub, kind) in [
        ("similarity", "syntax_similarity"),
        ("similarity", "shuffle_control"),
        ("ablate", "cross_ablation_syn_on_sem"),
        ("decompose", "decomposition"),
        ("probe", "probes"),
    ] {
        let out = synsem(&[sub, "--kind", kind, "--dump", path(&dump), "--output", path(&out_dir)]);
        assert!(out.status.success(), "{sub} {kind}: {}", String::from_utf8_lossy(&out.stderr));
        for ext in ["csv", "svg", "log"] {
            assert!(out_dir.join(format!("{kind}.{ext}")).is_file(), "{kind}.{ext}");
        }
    }

    let csv = out_dir.join("decomposition.csv");
    let svg = tmp.path().join("chart.svg");
    let out = synsem(&["report", path(&csv), "--output", path(&svg)]);
    assert!(out.status.success());
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn config_file_and_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    small_dump(&dump);
    let cfg = tmp.path().join("exp.toml");
    fs::write(
        &cfg,
        format!(
            "kind = \"semantic_similarity\"\ndump = {:?}\noutput = {:?}\naggregation = \"average\"\nn_tokens = 3\n",
            path(&dump),
            path(&tmp.path().join("a"))
        ),
    )
    .unwrap();
    let other = tmp.path().join("b");
    let out = synsem(&["similarity", "--config", path(&cfg), "--output", path(&other), "--layers", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(other.join("semantic_similarity.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("1,")), "{csv}");
    assert!(csv.contains("|average3|"));
    let log = fs::read_to_string(other.join("semantic_similarity.log")).unwrap();
    assert!(log.contains("tie=24301"));
}

#[test]
fn failures_exit_nonzero_and_leave_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    let out_dir = tmp.path().join("out");
    small_dump(&dump);

    let dry = synsem(&["similarity", "--dump", path(&dump), "--output", path(&out_dir), "--layers", "0,9", "--dry-run"]);
    assert!(!dry.status.success());
    assert!(String::from_utf8_lossy(&dry.stdout).contains("layer 9 is missing"));

    let run = synsem(&["similarity", "--dump", path(&dump), "--output", path(&out_dir), "--layers", "9"]);
    assert!(!run.status.success());
    assert!(!out_dir.join("syntax_similarity.csv").exists());

    let wrong = synsem(&["decompose", "--kind", "probes", "--dump", path(&dump), "--output", path(&out_dir)]);
    assert!(!wrong.status.success());

    let sweep = synsem(&["similarity", "--kind", "language_sweep", "--dump", path(&dump), "--output", path(&out_dir)]);
    assert!(!sweep.status.success());
    assert!(String::from_utf8_lossy(&sweep.stderr).contains("languages"));

    let missing = synsem(&["ingest", path(&tmp.path().join("nowhere"))]);
    assert!(!missing.status.success());
}

#[test]
fn ingest_converts_to_b16() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    let copy = tmp.path().join("copy");
    small_dump(&dump);
    let out = synsem(&["ingest", path(&dump), "--output", path(&copy), "--dtype", "b16"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let f32_len = fs::metadata(dump.join("original_layer0.bin")).unwrap().len();
    let b16_len = fs::metadata(copy.join("original_layer0.bin")).unwrap().len();
    // 32-byte header, then half the payload
    assert_eq!(b16_len - 32, (f32_len - 32) / 2);
    let again = synsem(&["ingest", path(&copy)]);
    assert!(String::from_utf8_lossy(&again.stdout).contains("B16"));
}
