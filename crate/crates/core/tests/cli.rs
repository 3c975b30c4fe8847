use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nucnorm::cli::matrix_io::{read_coordinate, read_matrix};
use nucnorm::cli::pgm::GrayImage;
use nucnorm::problems::rows_from_csv;
use tempfile::TempDir;

fn nucnorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nucnorm"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nucnorm(args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Dir(TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }
    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }
    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> String {
        fs::write(self.path(name), contents).unwrap();
        self.s(name)
    }
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

#[test]
fn generate_then_solve_recovers_truth() {
    let d = Dir::new();
    let stats = json(&ok(&[
        "generate", "--rows", "40", "--cols", "40", "--rank", "2", "--samples", "800", "--seed", "1",
        "--out", &d.s("obs.txt"), "--truth", &d.s("truth.txt"),
    ]));
    assert_eq!(stats["r_m"], 11);
    let fr = stats["fr"].as_f64().unwrap();
    assert!((fr - 2.0 * 78.0 / 800.0).abs() < 1e-15);
    assert_eq!(read_coordinate(&d.path("obs.txt")).unwrap().entries.len(), 800);

    let report = json(&ok(&[
        "solve", "--input", &d.s("obs.txt"), "--truth", &d.s("truth.txt"), "--out", &d.s("x.txt"),
    ]));
    assert_eq!(report["profile"], "fpc1");
    assert!(report["rel_err"].as_f64().unwrap() < 1e-3, "{report}");
    let x = read_matrix(&d.path("x.txt")).unwrap();
    assert_eq!(x.shape(), (40, 40));
}

#[test]
fn solve_explicit_operator() {
    let d = Dir::new();
    // X is 2x2, vec(X) column-major; four independent measurements identify it.
    let op = d.write("a.csv", "1,0,0,0\n0,1,0,0\n0,0,1,0\n0,0,0,1\n1,1,1,1\n");
    let x = [2.0, 4.0, 1.0, 2.0]; // rank one: [[2, 1], [4, 2]]
    let rhs: String = [x[0], x[1], x[2], x[3], x.iter().sum()].iter().map(|v| format!("{v}\n")).collect();
    let rhs = d.write("b.txt", rhs);
    let truth = d.write("t.csv", "2,1\n4,2\n");
    let report = json(&ok(&[
        "solve", "--operator", &op, "--rhs", &rhs, "--rows", "2", "--cols", "2", "--truth", &truth,
        "--tau", "0.2",
    ]));
    assert!(report["rel_err"].as_f64().unwrap() < 1e-6, "{report}");
}

#[test]
fn two_by_two_single_entry() {
    let d = Dir::new();
    let input = d.write("one.txt", "2 2\n0 0 5.0\n");
    ok(&["solve", "--input", &input, "--out", &d.s("x.txt")]);
    let x = read_matrix(&d.path("x.txt")).unwrap();
    assert!((x.get(0, 0) - 5.0).abs() < 1e-6, "{}", x.get(0, 0));
    for (i, j) in [(0, 1), (1, 0), (1, 1)] {
        assert!(x.get(i, j).abs() < 1e-9);
    }
}

#[test]
fn input_errors_exit_2() {
    let d = Dir::new();
    let dup = d.write("dup.txt", "3 3\n0 0 1\n1 1 2\n# note\n0 0 3\n");
    let out = nucnorm(&["solve", "--input", &dup]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":5:") && err.contains("line 2"), "{err}");

    let missing = nucnorm(&["solve", "--input", &d.s("absent.txt")]);
    assert_eq!(missing.status.code(), Some(2));
    let usage = nucnorm(&["solve"]);
    assert_eq!(usage.status.code(), Some(2));
    let bad_tau = nucnorm(&["solve", "--input", &d.write("ok.txt", "2 2\n0 0 1\n"), "--tau", "2.5"]);
    assert_eq!(bad_tau.status.code(), Some(2));
    let exact_with_cs = nucnorm(&["solve", "--input", &d.s("ok.txt"), "--cs", "3"]);
    assert_eq!(exact_with_cs.status.code(), Some(2));
}

#[test]
fn inpaint_fully_observed_is_identity() {
    let d = Dir::new();
    let data: Vec<u16> = (0..12 * 9).map(|k| ((k * 37) % 256) as u16).collect();
    let img = GrayImage::new(12, 9, 255, data).unwrap();
    let input = d.write("in.pgm", img.to_p5());
    let text = ok(&["inpaint", "--image", &input, "--mask-fraction", "0", "--out", &d.s("out.pgm")]);
    assert_eq!(fs::read(d.path("out.pgm")).unwrap(), fs::read(&input).unwrap());
    assert!(text.contains("observed_fraction: 1.000000"), "{text}");
    assert!(text.contains("rel_err_composite: 0.000000e0"), "{text}");
}

#[test]
fn inpaint_low_rank_image() {
    let d = Dir::new();
    let (w, h) = (40usize, 30usize);
    let data: Vec<u16> = (0..w * h)
        .map(|k| {
            let (i, j) = ((k / w) as f64, (k % w) as f64);
            (1000.0 * (0.5 + 0.25 * (i / 5.0).sin() + 0.25 * (j / 7.0).cos())).round() as u16
        })
        .collect();
    let img = GrayImage::new(w, h, 1000, data).unwrap();
    let input = d.write("in.pgm", img.to_p2());
    let text = ok(&[
        "inpaint", "--image", &input, "--mask-fraction", "0.3", "--seed", "4", "--profile", "fpc1",
        "--out", &d.s("out.pgm"), "--report", &d.s("report.txt"),
    ]);
    assert_eq!(fs::read_to_string(d.path("report.txt")).unwrap(), text);
    let comp: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("rel_err_composite: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(comp < 1e-2, "{text}");
    let out = nucnorm::cli::pgm::read_pgm(&d.path("out.pgm")).unwrap();
    assert_eq!((out.width, out.height, out.maxval), (w, h, 1000));
}

#[test]
fn inpaint_with_mask_file() {
    let d = Dir::new();
    let img = GrayImage::new(6, 5, 255, vec![128; 30]).unwrap();
    let mut mask = vec![1u16; 30];
    mask[7] = 0;
    mask[20] = 0;
    let input = d.write("in.pgm", img.to_p5());
    let mask = d.write("mask.pgm", GrayImage::new(6, 5, 1, mask).unwrap().to_p5());
    let text = ok(&["inpaint", "--image", &input, "--mask-file", &mask, "--out", &d.s("out.pgm")]);
    assert!(text.contains("observed_fraction: 0.933333"), "{text}");
    let bad = d.write("bad.pgm", GrayImage::new(5, 6, 1, vec![1; 30]).unwrap().to_p5());
    assert_eq!(
        nucnorm(&["inpaint", "--image", &input, "--mask-file", &bad, "--out", &d.s("o.pgm")]).status.code(),
        Some(2)
    );
}

fn benchmark_csv(extra: &[&str]) -> String {
    let mut args = vec!["benchmark", "--rows", "20", "--cols", "20", "--samples", "240", "--ranks", "1,2", "--trials", "3"];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn benchmark_csv_parses_and_is_deterministic() {
    let one = benchmark_csv(&["--seed", "5", "--jobs", "1"]);
    let four = benchmark_csv(&["--seed", "5", "--jobs", "4"]);
    assert!(one.starts_with("r,FR,NS,AT,RA,RU,RL\n"), "{one}");
    let a = rows_from_csv(&one).unwrap();
    let b = rows_from_csv(&four).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(a[0].r, 1);
    assert!(a.iter().zip(&b).all(|(x, y)| x.same_statistics(y)));
    assert_eq!(a[0].ns, 3);
}

#[test]
fn benchmark_grid_file_and_details() {
    let d = Dir::new();
    let grid = d.write(
        "grid.toml",
        "trials = 2\nbase_seed = 9\n\n[[cells]]\nrows = 15\ncols = 15\nsamples = 150\nrank = 1\n\n[[cells]]\nrows = 15\ncols = 12\nsamples = 120\nranks = [1, 2]\n",
    );
    ok(&["benchmark", "--grid", &grid, "--out", &d.s("rows.csv"), "--details", &d.s("details.json")]);
    let rows = rows_from_csv(&fs::read_to_string(d.path("rows.csv")).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.r).collect::<Vec<_>>(), vec![1, 1, 2]);
    let details = json(&fs::read_to_string(d.path("details.json")).unwrap());
    let cells = details.as_array().unwrap();
    assert_eq!(cells.len(), 3);
    assert_eq!(cells[0]["trials"].as_array().unwrap().len(), 2);

    // --trials on the command line wins over the file.
    let out = ok(&["benchmark", "--grid", &grid, "--trials", "1", "--details", &d.s("d1.json")]);
    assert_eq!(rows_from_csv(&out).unwrap().len(), 3);
    let d1 = json(&fs::read_to_string(d.path("d1.json")).unwrap());
    assert_eq!(d1[0]["trials"].as_array().unwrap().len(), 1);

    let bad = d.write("bad.toml", "[[cells]]\nrows = 4\ncols = 4\nsamples = 8\nrank = 1\ncolour = 3\n");
    assert_eq!(nucnorm(&["benchmark", "--grid", &bad]).status.code(), Some(2));
}

#[test]
fn json_lines_log() {
    let d = Dir::new();
    let input = d.write("one.txt", "2 2\n0 0 5.0\n1 1 1.0\n");
    ok(&["--log", &d.s("log.jsonl"), "--log-level", "debug", "solve", "--input", &input]);
    let log = fs::read_to_string(d.path("log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(json).collect();
    assert!(!lines.is_empty());
    for l in &lines {
        for key in ["ts", "level", "target", "message"] {
            assert!(l.get(key).is_some(), "{l}");
        }
    }
    assert!(lines.iter().any(|l| l["level"] == "DEBUG"));
}

fn ratings_file(path: &Path) {
    // Rank two, values in [-10, 10], fully observed.
    let mut text = String::from("user,item,rating\n");
    for u in 0..100 {
        for i in 0..50 {
            let a = (u as f64 * 0.37).sin();
            let b = (u as f64 * 0.11).cos();
            let v = 5.0 * a * (i as f64 * 0.21).cos() + 4.0 * b * (i as f64 * 0.13).sin();
            text.push_str(&format!("u{u},i{i},{v:.6}\n"));
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn eval_nmae_on_low_rank_ratings() {
    let d = Dir::new();
    ratings_file(&d.path("r.csv"));
    ok(&["eval-nmae", "--ratings", &d.s("r.csv"), "--seed", "1", "--out", &d.s("nmae.json")]);
    let report = json(&fs::read_to_string(d.path("nmae.json")).unwrap());
    assert_eq!(report["users_evaluated"], 100);
    assert_eq!(report["train_ratings"], 100 * 48);
    let nmae = report["nmae"].as_f64().unwrap();
    assert!(nmae <= 0.05, "{report}");

    let bad = nucnorm(&["eval-nmae", "--ratings", &d.s("r.csv"), "--r-min", "3", "--r-max", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}
