use std::path::Path;
use std::process::{Command, Output};

use licp::codec::{Codec, ModelWeights, Raster};
use licp::rng::SplitMix64;

fn licp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_licp"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = licp(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str]) -> (i32, String) {
    let out = licp(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
    (out.status.code().unwrap(), err)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_image(path: &Path, w: usize, h: usize, seed: u64) -> Raster {
    let mut rng = SplitMix64::new(seed);
    let r = Raster::new(w, h, (0..w * h * 3).map(|_| rng.below(256) as u8).collect()).unwrap();
    r.save(path).unwrap();
    r
}

#[test]
fn init_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.licw"), dir.path().join("b.licw"));
    ok(&["init", "--config", "origin", "--seed", "7", "--out", p(&a)]);
    ok(&["init", "--config", "origin", "--seed", "7", "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn cli_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("m.licw");
    ok(&["init", "--config", "nas", "--seed", "3", "--out", p(&model)]);
    write_image(&d.join("x.bmp"), 75, 50, 1);
    ok(&[
        "encode",
        "--input",
        p(&d.join("x.bmp")),
        "--model",
        p(&model),
        "--out",
        p(&d.join("x.licp")),
    ]);
    ok(&[
        "decode",
        "--input",
        p(&d.join("x.licp")),
        "--model",
        p(&model),
        "--out",
        p(&d.join("y.png")),
        "--workers",
        "2",
    ]);

    let codec = Codec::new(ModelWeights::load(&model).unwrap()).unwrap();
    let bytes = std::fs::read(d.join("x.licp")).unwrap();
    let raster = Raster::load(d.join("x.bmp")).unwrap();
    assert_eq!(bytes, codec.encode_raster(&raster).unwrap());
    assert_eq!(
        Raster::load(d.join("y.png")).unwrap(),
        codec.decode_raster(&bytes).unwrap()
    );

    let info = ok(&["info", "--input", p(&d.join("x.licp"))]);
    let field = |k: &str| {
        info.lines()
            .find_map(|l| l.strip_prefix(&format!("{k} ")))
            .unwrap()
            .to_string()
    };
    assert_eq!(field("width"), "75");
    assert_eq!(field("height"), "50");
    assert_eq!(field("bytes"), bytes.len().to_string());
    assert_eq!(
        field("bpp"),
        format!("{:.6}", 8.0 * bytes.len() as f64 / (75.0 * 50.0))
    );
}

#[test]
fn errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, err) = fail(&["encode", "--bogus"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error: usage: "));
    assert!(fail(&[]).1.starts_with("error: usage: "));
    assert!(fail(&["info", "--input", p(&d.join("missing"))])
        .1
        .starts_with("error: io: "));

    let (a, b) = (d.join("a.licw"), d.join("b.licw"));
    ok(&["init", "--config", "origin", "--seed", "1", "--out", p(&a)]);
    ok(&["init", "--config", "origin", "--seed", "2", "--out", p(&b)]);
    write_image(&d.join("x.png"), 20, 20, 2);
    ok(&[
        "encode",
        "--input",
        p(&d.join("x.png")),
        "--model",
        p(&a),
        "--out",
        p(&d.join("x.licp")),
    ]);
    let (_, err) = fail(&[
        "decode",
        "--input",
        p(&d.join("x.licp")),
        "--model",
        p(&b),
        "--out",
        p(&d.join("y.png")),
    ]);
    assert!(err.starts_with("error: model-mismatch: "), "{err}");
    let (code, _) = fail(&[
        "encode",
        "--input",
        p(&d.join("x.png")),
        "--model",
        p(&a),
        "--out",
        p(&d.join("z")),
        "--workers",
        "0",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn help_lists_every_flag() {
    for (cmd, flags) in [
        ("init", &["--config", "--seed", "--out"][..]),
        (
            "encode",
            &["--input", "--model", "--out", "--quant-mode", "--workers"],
        ),
        (
            "bench",
            &[
                "--images",
                "--model",
                "--workers",
                "--warmup",
                "--quant-mode",
                "--json",
                "--csv",
            ],
        ),
        (
            "search",
            &[
                "--space",
                "--lut",
                "--max-flops",
                "--max-latency-ms",
                "--objective",
                "--scores",
                "--budget",
            ],
        ),
        (
            "calibrate",
            &["--model", "--images", "--quant-mode", "--policy", "--out"],
        ),
    ] {
        let help = ok(&[cmd, "--help"]);
        for f in flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn search_objectives_and_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let space = r#"{"image_channels": 3, "layers": [
        {"name": "a", "block": "a", "kind": "conv", "kernel": 3, "stride": 2, "input": null, "width": {"search": [4, 8, 16]}},
        {"name": "b", "block": "b", "kind": "conv", "kernel": 3, "stride": 1, "input": 0, "width": {"search": [2, 6]}}
    ]}"#;
    std::fs::write(d.join("space.json"), space).unwrap();
    std::fs::write(
        d.join("scores.json"),
        r#"[{"config": [8, 2], "score": 0.5}, {"config": [4, 6], "score": 0.25}]"#,
    )
    .unwrap();
    let sp = d.join("space.json");
    let out = ok(&[
        "search",
        "--space",
        p(&sp),
        "--height",
        "64",
        "--width",
        "64",
        "--objective",
        "flops",
    ]);
    assert!(out.starts_with("best [4, 2] "), "{out}");
    let out = ok(&[
        "search",
        "--space",
        p(&sp),
        "--height",
        "64",
        "--width",
        "64",
    ]);
    assert!(out.starts_with("best [16, 6] "), "{out}");
    let out = ok(&[
        "search",
        "--space",
        p(&sp),
        "--scores",
        p(&d.join("scores.json")),
        "--out",
        p(&d.join("o.json")),
    ]);
    assert!(out.starts_with("best [4, 6] "), "{out}");
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("o.json")).unwrap()).unwrap();
    assert_eq!(json["outcome"], "found");
    let (code, err) = fail(&["search", "--space", p(&sp), "--max-flops", "1"]);
    assert_eq!(code, 3);
    assert!(err.starts_with("error: infeasible: "));
}

#[test]
fn calibrate_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let imgs = d.join("imgs");
    std::fs::create_dir(&imgs).unwrap();
    for i in 0..3 {
        write_image(&imgs.join(format!("{i}.png")), 40, 30, i);
    }
    let cfg = d.join("tiny.json");
    std::fs::write(
        &cfg,
        r#"{"ga": [8, 12, 12, 16], "ha": [12, 12, 8], "hs": [12, 12, 16], "gs": [16, 12, 8, 3]}"#,
    )
    .unwrap();
    let (m, q) = (d.join("m.licw"), d.join("q.licw"));
    ok(&["init", "--config", p(&cfg), "--out", p(&m)]);
    ok(&[
        "calibrate",
        "--model",
        p(&m),
        "--images",
        p(&imgs),
        "--out",
        p(&q),
    ]);
    assert!(ok(&["info", "--input", p(&q)]).contains("full_int true"));
    let text = ok(&[
        "bench",
        "--images",
        p(&imgs),
        "--model",
        p(&q),
        "--quant-mode",
        "full-int",
        "--workers",
        "2",
        "--json",
        p(&d.join("r.json")),
        "--csv",
        p(&d.join("r.csv")),
    ]);
    assert!(text.contains("images 3"));
    let report =
        licp::bench::BenchReport::from_json(&std::fs::read_to_string(d.join("r.json")).unwrap())
            .unwrap();
    assert_eq!(report.records.len(), 3);
    assert_eq!(
        std::fs::read_to_string(d.join("r.csv"))
            .unwrap()
            .lines()
            .count(),
        7
    );
    let (_, err) = fail(&["bench", "--images", p(d), "--model", p(&q)]);
    assert!(err.starts_with("error: bench: "), "{err}");
}
