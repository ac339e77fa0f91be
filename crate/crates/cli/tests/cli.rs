use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SPEC: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../core/specs/bn_inception_gsm.spec"
);

fn gsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsm"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

/// Small direction dataset: 4 frames of 8x8, 6 clips per class.
fn small_data(root: &Path, name: &str, seed: &str) -> PathBuf {
    let out = root.join(name);
    let o = gsm(&[
        "--seed",
        seed,
        "gen-data",
        "--frames",
        "4",
        "--size",
        "8",
        "--object-size",
        "3",
        "--per-class",
        "6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn accuracy(out: &Output) -> String {
    assert_eq!(code(out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    stdout(out)
        .lines()
        .find(|l| l.starts_with("accuracy "))
        .unwrap()
        .to_string()
}

#[test]
fn analyze_reports_overheads() {
    let o = gsm(&["analyze", SPEC, "--frames", "8"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let pct = |prefix: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(prefix)).unwrap();
        line.rsplit('+')
            .next()
            .unwrap()
            .trim_end_matches('%')
            .parse()
            .unwrap()
    };
    assert!((0.4..=0.7).contains(&pct("params:")));
    assert!((0.3..=0.8).contains(&pct("flops:")));

    let tsv = stdout(&gsm(&["analyze", SPEC, "--format", "tsv"]));
    assert!(tsv.lines().all(|l| l.starts_with('#') || l.contains('\t')));
    assert!(tsv.contains("# param_overhead_pct=0.4"));
}

#[test]
fn analyze_without_gsm_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let plain = tmp.path().join("plain.spec");
    std::fs::write(
        &plain,
        "input 3 8 32 32\nconv2d k=3x3 s=1 p=1 in=3 out=8\npool global_avg\nlinear in=8 out=2\n",
    )
    .unwrap();
    let text = stdout(&gsm(&["analyze", plain.to_str().unwrap()]));
    assert!(
        text.lines()
            .any(|l| l.starts_with("params:") && l.ends_with("+0.000%")),
        "{text}"
    );

    assert_eq!(
        code(&gsm(&[
            "analyze",
            tmp.path().join("missing.spec").to_str().unwrap()
        ])),
        1
    );
    let bad = tmp.path().join("bad.spec");
    std::fs::write(&bad, "input 3 8 32 32\nconv2d k=3x3 in=5 out=8\n").unwrap();
    let o = gsm(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains('2'));
}

#[test]
fn gen_data_is_deterministic_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_data(tmp.path(), "a", "3");
    let b = small_data(tmp.path(), "b", "3");
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_eq!(
        dir_bytes(&a)
            .keys()
            .filter(|k| k.ends_with(".gsmv"))
            .count(),
        12
    );

    let o = gsm(&[
        "gen-data",
        "--size",
        "4",
        "--out",
        tmp.path().join("c").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&gsm(&["gen-data", "--no-such-flag"])), 2);
}

#[test]
fn train_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_data(tmp.path(), "d", "5");
    let d = data.to_str().unwrap();
    let path = |n: &str| tmp.path().join(n).to_str().unwrap().to_string();

    let train = |gate: &str, epochs: &str, warmup: &str, out: &str| {
        let o = gsm(&[
            "--deterministic",
            "--seed",
            "2",
            "train",
            "--data",
            d,
            "--arch",
            "tiny",
            "--gate",
            gate,
            "--epochs",
            epochs,
            "--warmup",
            warmup,
            "--batch",
            "4",
            "--out",
            out,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };

    train("learned-tanh", "0", "0", &path("zero.ckpt"));
    train("learned-tanh", "0", "0", &path("zero2.ckpt"));
    assert_eq!(
        std::fs::read(path("zero.ckpt")).unwrap(),
        std::fs::read(path("zero2.ckpt")).unwrap()
    );

    train("learned-tanh", "2", "1", &path("a.ckpt"));
    train("learned-tanh", "2", "1", &path("b.ckpt"));
    assert_eq!(
        std::fs::read(path("a.ckpt")).unwrap(),
        std::fs::read(path("b.ckpt")).unwrap()
    );
    assert_ne!(
        std::fs::read(path("a.ckpt")).unwrap(),
        std::fs::read(path("zero.ckpt")).unwrap()
    );
    let metrics = std::fs::read_to_string(path("a.ckpt.metrics.tsv")).unwrap();
    assert_eq!(
        metrics,
        std::fs::read_to_string(path("b.ckpt.metrics.tsv")).unwrap()
    );
    assert_eq!(metrics.lines().count(), 3);

    let eval = |ckpt: &str, order: &str| {
        gsm(&["eval", "--ckpt", ckpt, "--data", d, "--frame-order", order])
    };
    let natural = accuracy(&eval(&path("a.ckpt"), "natural"));
    assert_eq!(accuracy(&eval(&path("a.ckpt"), "permute:0,1,2,3")), natural);

    train("frozen-zero", "2", "1", &path("f.ckpt"));
    let frozen = eval(&path("f.ckpt"), "natural");
    assert_eq!(stdout(&eval(&path("f.ckpt"), "reversed")), stdout(&frozen));
    assert_eq!(stdout(&eval(&path("f.ckpt"), "permute:7")), stdout(&frozen));
    assert_eq!(accuracy(&frozen), "accuracy 0.500000");

    let o = gsm(&[
        "gen-data",
        "--frames",
        "5",
        "--size",
        "8",
        "--object-size",
        "3",
        "--per-class",
        "2",
        "--out",
        &path("wide"),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        code(&gsm(&[
            "eval",
            "--ckpt",
            &path("a.ckpt"),
            "--data",
            &path("wide")
        ])),
        2
    );
    assert_eq!(
        code(&gsm(&[
            "eval",
            "--ckpt",
            &path("missing.ckpt"),
            "--data",
            d
        ])),
        1
    );
}

#[test]
fn gradcheck_exit_codes() {
    let o = gsm(&[
        "--deterministic",
        "gradcheck",
        "--scope",
        "gsm",
        "--instances",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = gsm(&[
        "gradcheck",
        "--scope",
        "primitives",
        "--instances",
        "2",
        "--inject-fault",
        "1.01",
    ]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("conv2d"));
    assert_eq!(code(&gsm(&["gradcheck", "--scope", "everything"])), 2);
    assert_eq!(code(&gsm(&["gradcheck", "--bogus"])), 2);
}
