use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_faultrange"));
    c.env_remove("FAULTRANGE_SEED");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line of a failing command.
fn fail(args: &[&str], dir: &Path) -> (i32, String) {
    let out = run(args, dir);
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
    (out.status.code().unwrap(), err.trim_end().to_string())
}

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_default();
    assert_eq!(actual, expected, "{name} differs; rerun with UPDATE_GOLDEN=1 to accept");
}

#[test]
fn help_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    golden("help.txt", &ok(&["--help"], dir.path()));
    for sub in ["gen-data", "train-fixture", "eval", "extract-bounds", "bit-hist", "plan", "run", "report", "dump-fmaps"] {
        golden(&format!("help_{sub}.txt"), &ok(&[sub, "--help"], dir.path()));
    }
}

#[test]
fn errors_are_single_lines_with_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, line) = fail(&["run", "--bogus"], d);
    assert_eq!(code, 2);
    assert!(line.starts_with("error kind=usage code=2: "), "{line}");

    let (code, line) = fail(&["eval", "--model", "nope.rres", "--data", "nope.rres"], d);
    assert_eq!(code, 3);
    assert!(line.starts_with("error kind=io code=3: "), "{line}");

    std::fs::write(d.join("junk.rres"), b"JUNKJUNKJUNKJUNK").unwrap();
    let (code, line) = fail(&["eval", "--model", "junk.rres", "--data", "junk.rres"], d);
    assert_eq!(code, 4);
    assert!(line.contains("bad magic"), "{line}");

    let (code, _) = fail(&["plan", "--model", "m.rres", "--bits", "9:2"], d);
    assert_eq!(code, 2);
    let (code, _) = fail(&["run", "--policy", "sometimes"], d);
    assert_eq!(code, 2);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&["gen-data", "--out", "data.rres", "--seed", "42", "--per-class", "20"], d);
    assert!(out.contains("120 images"), "{out}");

    let out = ok(&["train-fixture", "--data", "data.rres", "--out", "model.rres", "--seed", "1", "--epochs", "3"], d);
    assert!(out.contains("test accuracy"), "{out}");
    ok(&["eval", "--model", "model.rres", "--data", "data.rres", "--out", "subset.json"], d);
    ok(&["extract-bounds", "--model", "model.rres", "--data", "data.rres", "--out", "bounds.json"], d);

    let hist = ok(&["bit-hist", "--model", "model.rres"], d);
    assert_eq!(hist.lines().next(), Some("bit,fraction_one"));
    assert_eq!(hist.lines().count(), 10);

    let run_args = |policy: &'static str, out: &'static str| {
        vec![
            "run", "--model", "model.rres", "--data", "data.rres", "--bounds", "bounds.json", "--subset",
            "subset.json", "--policy", policy, "--k", "1", "--epochs", "4", "--seed", "3", "--workers", "2",
            "--out", out,
        ]
    };
    ok(&run_args("none", "none.json"), d);
    ok(&run_args("clipper", "clipper.json"), d);
    let table = ok(&["report", "none.json", "clipper.json", "--csv", "table.csv"], d);
    assert!(table.lines().nth(1).unwrap().starts_with("none"), "{table}");
    let csv = std::fs::read_to_string(d.join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("policy,kind,k,bits,"));

    // a plan printed by `plan` replays to the same outcomes as epoch 2 of the campaign
    let plan = ok(&["plan", "--model", "model.rres", "--kind", "weight", "--k", "1", "--seed", "3", "--epoch", "2"], d);
    std::fs::write(d.join("plan.json"), &plan).unwrap();
    let mut replay = run_args("none", "replay.json");
    replay.extend(["--replay", "plan.json", "--records", "replay.jsonl"]);
    ok(&replay, d);
    let mut full = run_args("none", "full.json");
    full.extend(["--records", "full.jsonl"]);
    ok(&full, d);
    let full_lines: Vec<String> = std::fs::read_to_string(d.join("full.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("{\"epoch\":2,"))
        .map(String::from)
        .collect();
    let replay_lines: Vec<String> = std::fs::read_to_string(d.join("replay.jsonl")).unwrap().lines().map(String::from).collect();
    assert!(!replay_lines.is_empty());
    assert_eq!(full_lines, replay_lines);

    let out = ok(&["dump-fmaps", "--model", "model.rres", "--data", "data.rres", "--index", "0", "--out-dir", "fm"], d);
    assert!(out.starts_with("wrote "), "{out}");
    assert!(d.join("fm/layer0_ch5.txt").exists());
    assert!(d.join("fm/layer11_ch0.txt").exists());
    let first = std::fs::read_to_string(d.join("fm/layer0_ch0.txt")).unwrap();
    assert_eq!(first.lines().count(), 24);
    assert_eq!(first.lines().next().unwrap().split(' ').count(), 24);

    let (code, line) = fail(&["dump-fmaps", "--model", "model.rres", "--data", "data.rres", "--policy", "clipper", "--out-dir", "x"], d);
    assert_eq!(code, 2, "{line}");
}

#[test]
fn seed_comes_from_flag_then_env_then_random() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-data", "--out", "a.rres", "--per-class", "2", "--seed", "5"], d);
    let env = bin()
        .args(["gen-data", "--out", "b.rres", "--per-class", "2"])
        .env("FAULTRANGE_SEED", "5")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(env.status.success());
    assert!(env.stderr.is_empty());
    assert_eq!(std::fs::read(d.join("a.rres")).unwrap(), std::fs::read(d.join("b.rres")).unwrap());
    let flag_wins = bin()
        .args(["gen-data", "--out", "c.rres", "--per-class", "2", "--seed", "5"])
        .env("FAULTRANGE_SEED", "6")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(flag_wins.status.success());
    assert_eq!(std::fs::read(d.join("a.rres")).unwrap(), std::fs::read(d.join("c.rres")).unwrap());
    let random = run(&["gen-data", "--out", "r.rres", "--per-class", "2"], d);
    assert!(random.status.success());
    let err = String::from_utf8(random.stderr).unwrap();
    assert!(err.starts_with("using random seed "), "{err}");
}

#[test]
fn idx_conversion() {
    use faultrange::idx::{encode_idx, IMAGES_MAGIC, LABELS_MAGIC};
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("img.idx"), encode_idx(IMAGES_MAGIC, &[2, 2, 2], &[0, 255, 0, 255, 10, 20, 30, 40])).unwrap();
    std::fs::write(d.join("lab.idx"), encode_idx(LABELS_MAGIC, &[2], &[3, 9])).unwrap();
    let out = ok(&["gen-data", "--out", "m.rres", "--idx-images", "img.idx", "--idx-labels", "lab.idx"], d);
    assert!(out.contains("2 images, 10 classes"), "{out}");
    let ds = faultrange::container::load_dataset(&d.join("m.rres")).unwrap();
    assert_eq!(ds.labels, vec![3, 9]);
    std::fs::write(d.join("lab.idx"), encode_idx(LABELS_MAGIC, &[3], &[3, 9, 1])).unwrap();
    let (code, line) = fail(&["gen-data", "--out", "m.rres", "--idx-images", "img.idx", "--idx-labels", "lab.idx"], d);
    assert_eq!(code, 4);
    assert!(line.contains("offset"), "{line}");
}
