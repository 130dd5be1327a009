use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn dner() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dner"));
    for var in [
        "DNER_CORPUS",
        "DNER_TRAIN",
        "DNER_DEV",
        "DNER_LEXICON",
        "DNER_EMBEDDINGS",
        "DNER_EMBEDDING_CACHE",
        "DNER_MODEL",
    ] {
        c.env_remove(var);
    }
    c
}

fn run(args: &[&str]) -> Output {
    dner().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = dner()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn key(report: &str, k: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{k}=")))
        .unwrap_or_else(|| panic!("no {k} in {report}"))
        .parse()
        .unwrap()
}

#[test]
fn decode_fixture_prints_worked_example() {
    let o = run(&["decode-fixture", fixture("worked_example.txt").to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "36 34 selected=(O,B-Disease,I-Disease,O)\n");
}

#[test]
fn stats_prints_counts() {
    let o = run(&["stats", fixture("toy_corpus.txt").to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o),
        "abstracts\tsentences\tmentions\tunique_mentions\n5\t10\t15\t13\n"
    );
    let o = dner()
        .arg("stats")
        .env("DNER_CORPUS", fixture("toy_corpus.txt"))
        .output()
        .unwrap();
    assert!(stdout(&o).ends_with("5\t10\t15\t13\n"));
}

#[test]
fn convert_sr_round_trips() {
    let iob2 = "colon\tNN\tB-Disease\ncarcinoma\tNN\tI-Disease\ncells\tNNS\tO\n\nAS\tNN\tB-Disease\n";
    let o = with_stdin(&["convert-sr", "--to", "iobes"], iob2);
    assert!(o.status.success());
    let iobes = stdout(&o);
    assert_eq!(
        iobes,
        "colon\tNN\tB-Disease\ncarcinoma\tNN\tE-Disease\ncells\tNNS\tO\n\nAS\tNN\tS-Disease\n"
    );
    assert_eq!(stdout(&with_stdin(&["convert-sr", "--to", "iobes"], &iobes)), iobes);
    assert_eq!(stdout(&with_stdin(&["convert-sr", "--to", "iob2"], &iobes)), iob2);
}

#[test]
fn convert_sr_rejects_foreign_tags() {
    let o = with_stdin(&["convert-sr", "--to", "iob2", "--from", "iob2"], "a X-Disease\n");
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error: sentence at line 1"), "{err}");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["convert-sr", "--to", "bio2"]).status.code(), Some(2));
    let o = run(&["stats", "/definitely/not/here.txt"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: cannot open"));
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--seed", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("suite=")).count(), 4);
}

#[test]
fn train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let config = path("toy.cfg");
    std::fs::write(
        &config,
        "epochs=3\nbatch_size=2\nlearning_rate=0.01\nchar_dim=8\nchar_lstm_units=8\n\
         word_dim=16\nword_lstm_units=16\n",
    )
    .unwrap();
    let corpus = fixture("toy_corpus.txt");
    let train = |out: &str| {
        dner()
            .args([
                "train",
                "--config",
                &config,
                "--set",
                "dropout=0.3",
                "--seed",
                "5",
                "-o",
                out,
            ])
            .args(["--lexicon", fixture("toy_medic.tsv").to_str().unwrap()])
            .args(["--embeddings", fixture("toy_vectors.txt").to_str().unwrap()])
            .args(["--embedding-cache", &path("vectors.bin")])
            .env("DNER_TRAIN", &corpus)
            .output()
            .unwrap()
    };
    let o = train(&path("a.ckpt"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = stdout(&o);
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 3);
    assert!(log.contains("best_epoch="));
    assert!(dir.path().join("vectors.bin").exists());

    // second run reads the cache and must reproduce the checkpoint
    assert!(train(&path("b.ckpt")).status.success());
    assert_eq!(
        std::fs::read(path("a.ckpt")).unwrap(),
        std::fs::read(path("b.ckpt")).unwrap()
    );

    let o = run(&[
        "predict",
        "--model",
        &path("a.ckpt"),
        corpus.to_str().unwrap(),
        "-o",
        &path("pred.txt"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["predict", "--model", &path("a.ckpt"), corpus.to_str().unwrap()]);
    assert_eq!(stdout(&o), std::fs::read_to_string(path("pred.txt")).unwrap());

    let o = run(&[
        "evaluate",
        corpus.to_str().unwrap(),
        &path("pred.txt"),
        "--format",
        "kv",
    ]);
    assert!(o.status.success());
    let report = stdout(&o);
    let f1 = key(&report, "f1");
    assert!((0.0..=1.0).contains(&f1));
    assert_eq!(key(&report, "tp") + key(&report, "fn"), 15.0);

    let o = run(&["evaluate", corpus.to_str().unwrap(), corpus.to_str().unwrap()]);
    let both = stdout(&o);
    assert!(both.starts_with("TP"));
    assert_eq!(key(&both, "f1"), 1.0);
}

#[test]
fn train_reports_missing_inputs() {
    let corpus = fixture("toy_corpus.txt");
    let o = run(&["train", "--train", corpus.to_str().unwrap(), "-o", "/dev/null"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("--lexicon"));
    let o = run(&[
        "train",
        "--train",
        corpus.to_str().unwrap(),
        "--set",
        "epochs",
        "-o",
        "/dev/null",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "train",
        "--train",
        corpus.to_str().unwrap(),
        "--set",
        "dropout=2",
        "-o",
        "/dev/null",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(run(&["train", "-o", "/dev/null"]).status.code(), Some(2));
}
