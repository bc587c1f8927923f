use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pixmatch::io::{read_tensor, write_tensor};
use pixmatch::scene::make_random_scene;
use pixmatch::{FeatureMap, ProbMask, ScoreMap, Tensor};

fn pixmatch<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixmatch"))
        .args(args)
        .env_remove("PIXMATCH_THREADS")
        .output()
        .expect("spawn pixmatch")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) -> Output {
    pixmatch(&["synth", "--seed", seed, "--out-dir", p(dir)])
}

#[test]
fn synth_writes_tensors_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pixmatch"))
        .arg("synth")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ref.emt", "ref_mask.emt", "query.emt", "manifest.txt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("copies 3\n"));
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&synth(a.path(), "11")), 0);
    assert_eq!(code(&synth(b.path(), "11")), 0);
    for f in ["ref.emt", "ref_mask.emt", "query.emt", "manifest.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn synth_rejects_zero_copies_and_bad_dir() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&pixmatch(&[
            "synth",
            "--copies",
            "0",
            "--out-dir",
            p(dir.path())
        ])),
        3
    );
    let file = dir.path().join("plain");
    fs::write(&file, b"x").unwrap();
    assert_eq!(
        code(&pixmatch(&["synth", "--out-dir", p(&file.join("sub"))])),
        1
    );
}

fn match_scene(dir: &Path, extra: &[&str]) -> Output {
    let file = |name: &str| dir.join(name).into_os_string();
    let mut args = vec![
        "match".into(),
        "--ref".into(),
        file("ref.emt"),
        "--ref-mask".into(),
        file("ref_mask.emt"),
        "--query".into(),
        file("query.emt"),
        "--out".into(),
        file("scores.emt"),
    ];
    args.extend(extra.iter().map(Into::into));
    pixmatch(&args)
}

#[test]
fn synth_output_feeds_match_for_every_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "3")), 0);
    for extra in [
        &["--mechanism", "surjective"][..],
        &["--mechanism", "kernel", "--sigma", "32"],
        &["--mechanism", "topk", "--topk", "16"],
        &["--mechanism", "equalized"],
    ] {
        let o = match_scene(dir.path(), extra);
        assert_eq!(
            code(&o),
            0,
            "{extra:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let s = ScoreMap::try_from(read_tensor(dir.path().join("scores.emt")).unwrap()).unwrap();
        assert_eq!((s.height(), s.width()), (8, 8));
    }
}

#[test]
fn equalized_check_reports_row_sums() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "5")), 0);
    let o = match_scene(dir.path(), &["--mechanism", "equalized", "--check"]);
    assert_eq!(code(&o), 0);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("check passed: 64 affinity rows sum to 1"),
        "{err}"
    );
    let o = match_scene(
        dir.path(),
        &["--mechanism", "kernel", "--sigma", "4", "--check"],
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("within [0, 1]"));
}

#[test]
fn self_match_reproduces_mask_at_feature_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let s = make_random_scene(6, 6, 8, 21).unwrap();
    let feat = dir.path().join("f.emt");
    write_tensor(&feat, &Tensor::from(&s.reference)).unwrap();
    // Full-resolution mask at twice the feature grid; the CLI area-downsamples it.
    let fg = s.ref_mask.foreground();
    let full: Vec<f32> = (0..12 * 12)
        .map(|i| fg[(i / 12 / 2) * 6 + (i % 12) / 2])
        .collect();
    let full = ProbMask::from_foreground(12, 12, &full).unwrap();
    for (name, mask) in [("m.emt", &s.ref_mask), ("m_full.emt", &full)] {
        let mpath = dir.path().join(name);
        write_tensor(&mpath, &Tensor::from(mask)).unwrap();
        let out = dir.path().join("o.emt");
        let o = pixmatch(&[
            "match",
            "--ref",
            p(&feat),
            "--ref-mask",
            p(&mpath),
            "--query",
            p(&feat),
            "--mechanism",
            "surjective",
            "--out",
            p(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let scores = ScoreMap::try_from(read_tensor(&out).unwrap()).unwrap();
        for (i, &m) in fg.iter().enumerate() {
            if m == 1.0 {
                assert!((scores.foreground()[i] - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn flag_errors_exit_3_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "1")), 0);
    let o = match_scene(dir.path(), &["--mechanism", "topk"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("requires --topk"));
    assert_eq!(
        code(&match_scene(
            dir.path(),
            &["--mechanism", "equalized", "--sigma", "3"]
        )),
        3
    );
    assert_eq!(
        code(&match_scene(
            dir.path(),
            &["--mechanism", "kernel", "--sigma", "0"]
        )),
        3
    );
    assert_eq!(code(&match_scene(dir.path(), &["--mechanism", "bogus"])), 3);
    let o = pixmatch(&["match", "--mechanism", "surjective"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&pixmatch(&["--help"])), 0);
}

#[test]
fn malformed_and_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "1")), 0);
    fs::write(dir.path().join("query.emt"), b"XXXXnot a tensor").unwrap();
    assert_eq!(
        code(&match_scene(dir.path(), &["--mechanism", "surjective"])),
        1
    );

    let q = FeatureMap::new(3, 8, 8, vec![0.1; 192]).unwrap();
    write_tensor(dir.path().join("query.emt"), &Tensor::from(&q)).unwrap();
    assert_eq!(
        code(&match_scene(dir.path(), &["--mechanism", "surjective"])),
        2
    );

    assert_eq!(code(&synth(dir.path(), "1")), 0);
    let m = ProbMask::from_binary(3, 3, &[true; 9]).unwrap();
    write_tensor(dir.path().join("ref_mask.emt"), &Tensor::from(&m)).unwrap();
    assert_eq!(
        code(&match_scene(dir.path(), &["--mechanism", "surjective"])),
        2
    );

    fs::remove_file(dir.path().join("ref_mask.emt")).unwrap();
    assert_eq!(
        code(&match_scene(dir.path(), &["--mechanism", "surjective"])),
        1
    );
}

#[test]
fn compare_seed_7_passes_and_is_deterministic() {
    let args = [
        "compare",
        "--scene-seed",
        "7",
        "--copies",
        "3",
        "--grid",
        "8",
        "--channels",
        "16",
    ];
    let a = pixmatch(&args);
    let b = pixmatch(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let margin = |name: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    assert!(margin("equalized") >= margin("surjective"));
    let dmax = |name: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        line.split_whitespace().nth(3).unwrap().parse().unwrap()
    };
    assert!(dmax("equalized") < dmax("surjective"));
    assert!(text.contains("suppression ordering: ok"));
}

#[test]
fn compare_rejects_bad_scene() {
    assert_eq!(code(&pixmatch(&["compare", "--copies", "0"])), 3);
    assert_eq!(code(&pixmatch(&["compare", "--grid", "1"])), 3);
    assert_eq!(code(&pixmatch(&["compare", "--channels", "1"])), 3);
}

#[test]
fn bench_smoke_and_validation() {
    let o = pixmatch(&[
        "bench",
        "--grid",
        "24",
        "--channels",
        "64",
        "--mechanism",
        "surjective",
        "--threads",
        "1",
        "--runs",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], pixmatch_cli::BENCH_CSV_HEADER);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(
        fields[..6],
        ["surjective", "24x24", "24x24", "64", "1", "3"]
    );
    assert!(fields[6].parse::<f64>().unwrap() > 0.0);
    assert_eq!(code(&pixmatch(&["bench", "--runs", "2"])), 3);
    assert_eq!(
        code(&pixmatch(&[
            "bench",
            "--grid",
            "4",
            "--threads",
            "0",
            "--runs",
            "3"
        ])),
        3
    );
}

#[test]
fn threads_env_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_pixmatch"))
        .arg("compare")
        .env("PIXMATCH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn viz_exports_normalized_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.emt");
    let out = dir.path().join("s.pgm");
    let run = |s: &ScoreMap, ch: &str| {
        write_tensor(&input, &Tensor::from(s)).unwrap();
        let o = pixmatch(&["viz", "--in", p(&input), "--channel", ch, "--out", p(&out)]);
        assert_eq!(code(&o), 0);
        fs::read(&out).unwrap()
    };
    let constant = ScoreMap::new(2, 2, vec![0.4; 8]).unwrap();
    assert!(run(&constant, "fg")[11..].iter().all(|&b| b == 0));
    let three = ScoreMap::new(1, 3, vec![0.0, 0.5, 1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(run(&three, "bg"), b"P5\n3 1\n255\n\x00\x80\xff");

    let mask = ProbMask::from_binary(1, 1, &[true]).unwrap();
    write_tensor(
        &input,
        &Tensor::from(&FeatureMap::new(3, 1, 1, vec![1.0; 3]).unwrap()),
    )
    .unwrap();
    assert_eq!(
        code(&pixmatch(&[
            "viz",
            "--in",
            p(&input),
            "--channel",
            "fg",
            "--out",
            p(&out)
        ])),
        1
    );
    write_tensor(&input, &Tensor::from(&mask)).unwrap();
    assert_eq!(
        code(&pixmatch(&[
            "viz",
            "--in",
            p(&input),
            "--channel",
            "fg",
            "--out",
            "/nonexistent/a.pgm"
        ])),
        1
    );
}

#[test]
fn equalized_compare_scene_renders_distractors_no_brighter() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "7")), 0);
    assert_eq!(
        code(&match_scene(dir.path(), &["--mechanism", "equalized"])),
        0
    );
    let pgm = dir.path().join("fg.pgm");
    let o = pixmatch(&[
        "viz",
        "--in",
        p(&dir.path().join("scores.emt")),
        "--channel",
        "fg",
        "--out",
        p(&pgm),
    ]);
    assert_eq!(code(&o), 0);
    let img = fs::read(&pgm).unwrap();
    let px = &img[b"P5\n8 8\n255\n".len()..];
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    let indices = |key: &str| -> Vec<usize> {
        let line = manifest.lines().find(|l| l.starts_with(key)).unwrap();
        line.split_whitespace()
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect()
    };
    let fg = indices("fg_query_pixels")[0];
    let bright = px[fg];
    for d in indices("distractor_pixels") {
        assert!(px[d] <= bright);
    }
    // Every other query pixel is strictly darker than the foreground-feature pixels.
    let mut special = indices("distractor_pixels");
    special.push(fg);
    for (i, &v) in px.iter().enumerate() {
        if !special.contains(&i) {
            assert!(v < bright);
        }
    }
}
