use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tgcnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgcnn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, file: &str, n: &str, c: &str, seed: &str) {
    let out = tgcnn(
        dir,
        &["synth", "--task", "temporal", "--n", n, "--t", "8", "--c", c, "--seed", seed, "--output", file],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

const SMALL_CONFIG: &str = "epochs=3\nfilters=4\nhidden=8\nbatch_size=8\nseed=7\n";

fn train_small(dir: &Path) {
    synth(dir, "train.csv", "24", "4", "1");
    synth(dir, "val.csv", "12", "4", "2");
    fs::write(dir.join("run.cfg"), SMALL_CONFIG).unwrap();
    let out = tgcnn(
        dir,
        &[
            "train", "--config", "run.cfg", "--train", "train.csv", "--val", "val.csv", "--out-model", "model.bin",
            "--history", "history.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn report_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("missing {key}"))
        .parse()
        .unwrap()
}

#[test]
fn synth_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synth", "--task", "temporal", "--n", "10", "--t", "12", "--c", "6", "--seed", "3"];
    let a = tgcnn(dir.path(), &[&args[..], &["--output", "a.csv"]].concat());
    let b = tgcnn(dir.path(), &[&args[..], &["--output", "b.csv"]].concat());
    assert_eq!((code(&a), code(&b)), (0, 0));
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    let rows = String::from_utf8(a).unwrap().lines().count() - 1;
    assert_eq!(rows, 120);
}

#[test]
fn synth_rejects_bad_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = tgcnn(
        dir.path(),
        &["synth", "--task", "temporal", "--n", "1", "--t", "12", "--c", "6", "--output", "x.csv"],
    );
    assert_eq!(code(&out), 2);
    let out = tgcnn(
        dir.path(),
        &["synth", "--task", "sideways", "--n", "4", "--t", "12", "--c", "6", "--output", "x.csv"],
    );
    assert_eq!(code(&out), 2);
}

fn write_band_data(dir: &Path) {
    let mut text = String::from("sample_id,t,nir,red,green,edge,b5,b6,label\n");
    for s in 0..3 {
        for t in 0..4 {
            let x = 0.1 * t as f64;
            text += &format!("p{s},{t},{},{},0.2,0.35,0.1,0.9,{}\n", 0.5 + x, 0.3 - 0.05 * x, s % 2);
        }
    }
    fs::write(dir.join("bands.csv"), text).unwrap();
}

#[test]
fn featurize_appends_eight_indices() {
    let dir = tempfile::tempdir().unwrap();
    write_band_data(dir.path());
    fs::write(
        dir.path().join("bands.txt"),
        "nir,0,842,NIR\nred,1,665,R\ngreen,2,560,G\nedge,3,705,RE\nb5,4,-,-\nb6,5,-,-\n",
    )
    .unwrap();
    let out = tgcnn(
        dir.path(),
        &["featurize", "--input", "bands.csv", "--manifest", "bands.txt", "--output", "out.csv", "--savi-l", "0"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 2 + 14 + 1);
    let ndvi = header.iter().position(|h| *h == "NDVI").unwrap();
    let savi = header.iter().position(|h| *h == "SAVI").unwrap();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[ndvi], f[savi]);
    }
}

#[test]
fn featurize_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_band_data(dir.path());
    fs::write(
        dir.path().join("no_nir.txt"),
        "nir,0,842,-\nred,1,665,R\ngreen,2,560,G\nedge,3,705,RE\nb5,4,-,-\nb6,5,-,-\n",
    )
    .unwrap();
    let out = tgcnn(
        dir.path(),
        &["featurize", "--input", "bands.csv", "--manifest", "no_nir.txt", "--output", "o.csv"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("NIR"));

    fs::write(
        dir.path().join("bands.txt"),
        "nir,0,842,NIR\nred,1,665,R\ngreen,2,560,G\nedge,3,705,RE\nb5,4,-,-\nb6,5,-,-\n",
    )
    .unwrap();
    let mut data = fs::read_to_string(dir.path().join("bands.csv")).unwrap();
    data += "p2,4,0.5,oops,0.2,0.35,0.1,0.9,0\n";
    fs::write(dir.path().join("broken.csv"), data).unwrap();
    let out = tgcnn(
        dir.path(),
        &["featurize", "--input", "broken.csv", "--manifest", "bands.txt", "--output", "o.csv"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(":14:"), "{}", stderr(&out));
}

#[test]
fn train_then_eval_reproduces_final_validation_f1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    train_small(d);
    let history = fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let last_f1: f64 = history.lines().last().unwrap().split(',').nth(3).unwrap().parse().unwrap();

    let out = tgcnn(d, &["eval", "--model", "model.bin", "--data", "val.csv", "--report", "report.txt"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(d.join("report.txt")).unwrap();
    for key in ["f1", "auc_roc", "iou", "accuracy", "tp", "fp", "tn", "fn", "threshold"] {
        report_value(&report, key);
    }
    assert_eq!(report_value(&report, "f1"), last_f1);

    let out = tgcnn(
        d,
        &["eval", "--model", "model.bin", "--data", "val.csv", "--report", "zero.txt", "--threshold", "0"],
    );
    assert_eq!(code(&out), 0);
    let zero = fs::read_to_string(d.join("zero.txt")).unwrap();
    assert_eq!(report_value(&zero, "fn"), 0.0);
    assert_eq!(report_value(&zero, "tn"), 0.0);
}

#[test]
fn training_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train_small(a.path());
    train_small(b.path());
    for f in ["model.bin", "history.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_and_eval_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    train_small(d);
    synth(d, "wide.csv", "12", "5", "3");

    let out = tgcnn(
        d,
        &[
            "train", "--config", "run.cfg", "--train", "train.csv", "--val", "wide.csv", "--out-model", "m.bin",
            "--history", "h.csv",
        ],
    );
    assert_eq!(code(&out), 3);

    let out = tgcnn(d, &["eval", "--model", "model.bin", "--data", "wide.csv", "--report", "r.txt"]);
    assert_eq!(code(&out), 3);

    fs::write(d.join("bad.cfg"), "epochs=2\nmomentum=0.9\n").unwrap();
    let out = tgcnn(
        d,
        &[
            "train", "--config", "bad.cfg", "--train", "train.csv", "--val", "val.csv", "--out-model", "m.bin",
            "--history", "h.csv",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("momentum"));

    fs::write(d.join("diverge.cfg"), "epochs=2\nlearning_rate=1e300\noptimizer=sgd\n").unwrap();
    let out = tgcnn(
        d,
        &[
            "train", "--config", "diverge.cfg", "--train", "train.csv", "--val", "val.csv", "--out-model", "m.bin",
            "--history", "h.csv",
        ],
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));

    let mut bytes = fs::read(d.join("model.bin")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    fs::write(d.join("corrupt.bin"), bytes).unwrap();
    let out = tgcnn(d, &["eval", "--model", "corrupt.bin", "--data", "val.csv", "--report", "r.txt"]);
    assert_eq!(code(&out), 5);
}

#[test]
fn gradcheck_default_passes_and_huge_step_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = tgcnn(dir.path(), &["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines = String::from_utf8(out.stdout).unwrap().lines().count();
    assert!(lines >= 10);

    let out = tgcnn(dir.path(), &["gradcheck", "--eps", "10"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("model_full"));
}

#[test]
fn ablate_runs_every_mode_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), "epochs=1\nfilters=2\nhidden=4\nblocks=1\n").unwrap();
    let out = tgcnn(
        dir.path(),
        &[
            "ablate", "--task", "temporal", "--seeds", "3", "--config", "tiny.cfg", "--n", "20", "--t", "8", "--c",
            "3", "--report", "ablation.txt",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("ablation.txt")).unwrap();
    let runs = text
        .lines()
        .filter(|l| ["full,", "stepwise_only,", "channelwise_only,"].iter().any(|m| l.starts_with(m)))
        .count();
    assert_eq!(runs, 9);
    assert!(text.contains("median_gap_stepwise_minus_channelwise="));
}
