use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn hseq<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hseq")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "encoder_layers = 2\ndecoder_layers = 2\nhidden_dim = 4\nembed_dim = 4\n\
residual_layers =\nbatch_size = 2\nsteps = 3\n";

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        write(dir.path(), "src.txt", "a b c\nb c\nc a , b\n");
        write(dir.path(), "tgt.txt", "x y z\ny z\nz x , y\n");
        write(dir.path(), "cfg.txt", TINY);
        Self { dir }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn vocabs(&self) {
        for (input, out) in [("src.txt", "vs.txt"), ("tgt.txt", "vt.txt")] {
            let o = hseq(&["build-vocab", "--input", s(&self.p(input)), "--output", s(&self.p(out))]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        }
    }

    fn train_coarse(&self) -> Output {
        hseq(&[
            "train-coarse",
            "--src", s(&self.p("src.txt")),
            "--tgt", s(&self.p("tgt.txt")),
            "--vocab-src", s(&self.p("vs.txt")),
            "--vocab-tgt", s(&self.p("vt.txt")),
            "--config", s(&self.p("cfg.txt")),
            "--metrics", s(&self.p("metrics.tsv")),
            "--output", s(&self.p("coarse.ckpt")),
        ])
    }
}

#[test]
fn help_exits_zero_and_bad_usage_exits_one() {
    assert_eq!(code(&hseq(&["--help"])), 0);
    assert_eq!(code(&hseq(&["translate", "--help"])), 0);
    assert_eq!(code(&hseq::<&str>(&[])), 1);
    assert_eq!(code(&hseq(&["frobnicate"])), 1);
    assert_eq!(code(&hseq(&["segment", "--input", "x"])), 1);
}

#[test]
fn segment_writes_one_segment_per_line() {
    let f = Fixture::new();
    let long: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    let input = write(f.dir.path(), "in.txt", &format!("{} , {}\nshort one\n", long.join(" "), long.join(" ")));
    let out = f.p("out.txt");
    let o = hseq(&["segment", "--input", s(&input), "--output", s(&out), "--threshold", "8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text, "w0 w1 w2 w3 w4 w5 ,\nw0 w1 w2 w3 w4 w5\n\nshort one\n\n");
}

#[test]
fn missing_input_is_a_data_error() {
    let f = Fixture::new();
    let o = hseq(&["segment", "--input", s(&f.p("absent.txt")), "--output", s(&f.p("o.txt"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn misaligned_corpus_is_a_data_error() {
    let f = Fixture::new();
    let short = write(f.dir.path(), "short.txt", "x\n");
    let o = hseq(&["stats", "--src", s(&f.p("src.txt")), "--tgt", s(&short)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not aligned"));
}

#[test]
fn stats_reports_counts() {
    let f = Fixture::new();
    let zh = write(f.dir.path(), "zh.txt", "一 二 三\ny z\n三 一 ， 二\n");
    let o = hseq(&["stats", "--src", s(&f.p("src.txt")), "--tgt", s(&zh), "--threshold", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("original_pairs\t3"), "{out}");
    assert!(out.contains("kept_pairs\t2"), "{out}");
    assert!(out.contains("long_ratio\t1.0000"), "{out}");
}

#[test]
fn bad_config_is_a_data_error() {
    let f = Fixture::new();
    f.vocabs();
    write(f.dir.path(), "cfg.txt", "hidden_dim = lots\n");
    let o = f.train_coarse();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn train_translate_evaluate_round_trip() {
    let f = Fixture::new();
    f.vocabs();
    let o = f.train_coarse();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(f.p("coarse.ckpt.meta.json").is_file());
    let metrics = fs::read_to_string(f.p("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.lines().all(|l| l.split('\t').count() == 3));

    let o = hseq(&[
        "train-fine",
        "--src", s(&f.p("src.txt")),
        "--tgt", s(&f.p("tgt.txt")),
        "--vocab-tgt", s(&f.p("vt.txt")),
        "--coarse", s(&f.p("coarse.ckpt")),
        "--config", s(&f.p("cfg.txt")),
        "--output", s(&f.p("fine.ckpt")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    for fine in [true, false] {
        let out = f.p("hyp.txt");
        let mut args = vec![
            "translate".into(),
            "--coarse".into(),
            f.p("coarse.ckpt"),
            "--input".into(),
            f.p("src.txt"),
            "--output".into(),
            out.clone(),
        ];
        if fine {
            args.extend(["--fine".into(), f.p("fine.ckpt")]);
        }
        let o = hseq(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3);
    }

    let tsv = f.p("scores.tsv");
    let o = hseq(&[
        "evaluate",
        "--hyp", s(&f.p("tgt.txt")),
        "--ref", s(&f.p("tgt.txt")),
        "--src", s(&f.p("src.txt")),
        "--model", s(&f.p("coarse.ckpt")),
        "--tsv", s(&tsv),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("100.00"), "{report}");
    assert!(report.to_lowercase().contains("perplexity"), "{report}");
    assert!(fs::read_to_string(tsv).unwrap().starts_with("section\trange\tcount\tbleu"));
}

#[test]
fn translate_without_checkpoint_is_usage_error() {
    let f = Fixture::new();
    let o = hseq(&[
        "translate",
        "--coarse", s(&f.p("none.ckpt")),
        "--input", s(&f.p("src.txt")),
        "--output", s(&f.p("o.txt")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&hseq(&["translate", "--input", s(&f.p("src.txt")), "--output", "o"])), 1);
}

#[test]
fn coarse_checkpoint_in_fine_slot_is_rejected() {
    let f = Fixture::new();
    f.vocabs();
    assert_eq!(code(&f.train_coarse()), 0);
    let o = hseq(&[
        "translate",
        "--coarse", s(&f.p("coarse.ckpt")),
        "--fine", s(&f.p("coarse.ckpt")),
        "--input", s(&f.p("src.txt")),
        "--output", s(&f.p("o.txt")),
    ]);
    assert_eq!(code(&o), 2);
}
