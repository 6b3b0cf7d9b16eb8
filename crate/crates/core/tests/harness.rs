//! Command line, evaluation reports and the analysis experiments on a tiny
//! trained model.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use deepfgs::cli;
use deepfgs::coder::{Codec, Container};
use deepfgs::entropy::rate;
use deepfgs::harness::data::{synthetic_image, Image};
use deepfgs::harness::eval::{
    analyze_entropy, channel_energies, dump_features, plane_energy, rd_sweep,
};
use deepfgs::Mode;
use fgs_autograd::{no_grad, Tensor};

const GOLDEN: &str = "tests/data/golden_eval.csv";

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("deepfgs-harness")
        .join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("deepfgs").chain(args.iter().copied()))
}

fn tiny_train_args(out: &Path) -> Vec<String> {
    [
        "--seed",
        "3",
        "--deterministic",
        "train",
        "--steps",
        "24",
        "--set",
        "model.c1=4",
        "--set",
        "model.c2=4",
        "--set",
        "model.n_hidden=8",
        "--set",
        "model.hyper_channels=4",
        "--set",
        "crop=32",
        "--set",
        "batch=2",
        "--set",
        "synthetic_images=4",
        "--set",
        "synthetic_size=48",
        "--set",
        "log_every=0",
        "--set",
        "checkpoint_every=0",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.display().to_string()])
    .collect()
}

/// A checkpoint trained once through the command line.
fn checkpoint() -> &'static Path {
    static CKPT: OnceLock<PathBuf> = OnceLock::new();
    CKPT.get_or_init(|| {
        let dir = scratch("train");
        let args = tiny_train_args(&dir);
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(run(&argv), 0);
        dir.join("final.ckpt")
    })
}

fn images(n: usize, size: usize) -> Vec<Image> {
    (0..n)
        .map(|i| synthetic_image(format!("img{i}"), size, size, 9001 + i as u64))
        .collect()
}

#[test]
fn training_writes_log_and_checkpoint() {
    let ckpt = checkpoint();
    let dir = ckpt.parent().unwrap();
    let log = std::fs::read_to_string(dir.join("train_log.csv")).unwrap();
    assert_eq!(
        log.lines().next().unwrap(),
        "step,lr,total,rate_b,rate_s,dist_b,dist_s,j,w_j,grad_norm"
    );
    assert_eq!(log.lines().count(), 25);
    assert!(dir.join("config.toml").exists());
    Codec::load(ckpt).unwrap();
}

#[test]
fn encode_truncate_decode_gives_the_basic_reconstruction() {
    let dir = scratch("pipeline");
    let ckpt = checkpoint().display().to_string();
    let input = dir.join("in.png");
    synthetic_image("in".into(), 48, 64, 77)
        .save(&input)
        .unwrap();
    let p = |name: &str| dir.join(name).display().to_string();

    assert_eq!(
        run(&[
            "encode",
            "--checkpoint",
            &ckpt,
            "--out",
            &p("full.fgs"),
            &p("in.png")
        ]),
        0
    );
    assert_eq!(
        run(&[
            "truncate",
            &p("full.fgs"),
            "--channels",
            "0",
            "--out",
            &p("basic.fgs")
        ]),
        0
    );
    assert_eq!(
        run(&[
            "decode",
            "--checkpoint",
            &ckpt,
            "--out",
            &p("basic.png"),
            "--json",
            &p("stats.json"),
            &p("basic.fgs")
        ]),
        0
    );

    let codec = Codec::load(checkpoint()).unwrap();
    let x = Image::load(&input).unwrap().to_batch().unwrap();
    let fp = no_grad(|| codec.model.forward(x.tensor(), Mode::Infer)).unwrap();
    let expect = Image::from_tensor("basic", &fp.x_hat_b, 0).to_rgb();
    let got = image::open(dir.join("basic.png")).unwrap().to_rgb8();
    assert_eq!(got.dimensions(), (64, 48));
    let worst = got
        .as_raw()
        .iter()
        .zip(expect.as_raw())
        .map(|(a, b)| a.abs_diff(*b))
        .max()
        .unwrap();
    assert!(worst <= 1, "basic reconstruction differs by {worst} levels");

    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["n_present"], 0);
    assert_eq!(stats["scalable_bytes"], 0);
}

#[test]
fn inspect_reports_a_truncated_table() {
    let dir = scratch("inspect");
    let ckpt = checkpoint().display().to_string();
    let p = |name: &str| dir.join(name).display().to_string();
    synthetic_image("in".into(), 32, 32, 5)
        .save(&dir.join("in.png"))
        .unwrap();
    assert_eq!(
        run(&[
            "encode",
            "--checkpoint",
            &ckpt,
            "--out",
            &p("full.fgs"),
            &p("in.png")
        ]),
        0
    );
    assert_eq!(
        run(&[
            "truncate",
            &p("full.fgs"),
            "--channels",
            "2",
            "--out",
            &p("two.fgs")
        ]),
        0
    );
    assert_eq!(
        run(&["inspect", &p("two.fgs"), "--json", &p("two.json")]),
        0
    );

    let full = Container::from_bytes(&std::fs::read(p("full.fgs")).unwrap()).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("two.json")).unwrap()).unwrap();
    assert_eq!(summary["n_present"], 2);
    assert_eq!(summary["c2"], 4);
    let segments = summary["segments"].as_array().unwrap();
    let full_segments = full.summary().segments;
    assert_eq!(segments.len(), full_segments.len() - 2);
    for (s, f) in segments.iter().zip(&full_segments) {
        assert_eq!(s["name"], f.name.as_str());
        assert_eq!(s["bytes"], f.bytes);
    }
}

#[test]
fn exit_codes() {
    let dir = scratch("exit");
    let p = |name: &str| dir.join(name).display().to_string();
    assert_eq!(run(&["encode", "--bogus"]), 1);
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(
        run(&["truncate", &p("missing.fgs"), "--out", &p("x.fgs")]),
        1
    );
    assert_eq!(run(&["inspect", &p("missing.fgs")]), 2);
    std::fs::write(p("junk.fgs"), b"not a container").unwrap();
    assert_eq!(run(&["inspect", &p("junk.fgs")]), 2);
    assert_eq!(run(&["train", "--set", "crop=40", "--out", &p("run")]), 2);
}

#[test]
fn golden_eval_report() {
    let dir = scratch("golden");
    let ckpt = checkpoint().display().to_string();
    let out = dir.join("eval").display().to_string();
    let code = run(&[
        "--seed",
        "9001",
        "--deterministic",
        "eval",
        "--checkpoint",
        &ckpt,
        "--synthetic",
        "2",
        "--size",
        "32",
        "--interval",
        "2",
        "--out",
        &out,
    ]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.join("eval").join("eval.csv")).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN);
    if std::env::var_os("DEEPFGS_BLESS").is_some() {
        std::fs::write(&golden, &csv).unwrap();
    }
    let expect =
        std::fs::read_to_string(&golden).expect("golden file missing; rerun with DEEPFGS_BLESS=1");
    assert_eq!(csv, expect);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval").join("eval.json")).unwrap())
            .unwrap();
    assert_eq!(report["meta"]["schema"], 1);
    assert_eq!(report["meta"]["seed"], 9001);
}

#[test]
fn rd_sweep_rows_are_sorted_and_rate_monotone() {
    let codec = Codec::load(checkpoint()).unwrap();
    let imgs = images(2, 32);
    let report = rd_sweep(&codec, &imgs, 1, 1, "test").unwrap();
    report.check_integrity().unwrap();
    assert_eq!(report.rows.len(), 2 * 5);
    for img in &imgs {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.image == img.name).collect();
        assert!(rows.windows(2).all(|w| w[0].n_channels < w[1].n_channels));
        let enc = codec.encode(&img.to_batch().unwrap()).unwrap().container;
        let all_positive = enc.summary().segments.iter().all(|s| s.bytes > 0);
        for w in rows.windows(2) {
            assert!(w[1].bytes >= w[0].bytes);
            if all_positive {
                assert!(w[1].bpp > w[0].bpp);
            }
        }
    }
    let ends = rd_sweep(&codec, &imgs, 4, 1, "test").unwrap();
    assert_eq!(
        ends.rows.iter().map(|r| r.n_channels).collect::<Vec<_>>(),
        vec![0, 4, 0, 4]
    );
}

#[test]
fn entropy_groups_partition_the_scalable_rate() {
    let codec = Codec::load(checkpoint()).unwrap();
    let imgs = images(3, 32);
    let mut total = 0.0;
    let mut full_psnr = 0.0;
    for img in &imgs {
        let x = img.to_batch().unwrap();
        let fp = no_grad(|| codec.model.forward(x.tensor(), Mode::Infer)).unwrap();
        total += rate(&fp.lik_y_s).item() as f64;
        let x_hat = no_grad(|| codec.model.reconstruct(&fp.y_b_hat, &fp.y_s_hat, 4, true)).unwrap();
        full_psnr += deepfgs::objective::psnr(x.tensor(), &x_hat);
    }
    total /= 3.0;
    full_psnr /= 3.0;

    for groups in [1, 2, 4] {
        let a = analyze_entropy(&codec, &imgs, groups).unwrap();
        assert_eq!(a.groups.len(), groups);
        let sum: f64 = a.groups.iter().map(|g| g.bits).sum();
        // the model accumulates in f32; the partition itself is exact
        assert!(((sum - a.total_bits()) / sum).abs() <= 1e-10);
        assert!(((sum - total) / total).abs() <= 1e-5, "{sum} vs {total}");
        let last = a.groups.last().unwrap();
        assert_eq!(last.last_channel, 4);
        assert!((last.psnr - full_psnr).abs() < 1e-9);
    }
    assert!(analyze_entropy(&codec, &imgs, 3).is_err());
}

#[test]
fn feature_table_recomputes_from_the_dump() {
    let dir = scratch("features");
    let codec = Codec::load(checkpoint()).unwrap();
    let img = synthetic_image("f".into(), 32, 48, 8);
    let dump = dump_features(&codec, &img).unwrap();
    let [_, c, h, w] = dump.shape;
    assert_eq!(c, 8);
    let energies = |v: &[f32]| channel_energies(&Tensor::from_vec(v.to_vec(), dump.shape));
    let (basic, full, diff) = (
        energies(&dump.basic),
        energies(&dump.full),
        energies(&dump.difference),
    );
    for (i, row) in dump.rows.iter().enumerate() {
        assert_eq!(row.basic, basic[i]);
        assert_eq!(row.full, full[i]);
        assert_eq!(row.difference, diff[i]);
        assert_eq!(
            row.basic,
            plane_energy(&dump.basic[i * h * w..(i + 1) * h * w])
        );
        assert!(row.basic >= 0.0 && row.full >= 0.0 && row.difference >= 0.0);
    }

    // without the fusion gate the basic channels never see ŷ_s
    let cfg = deepfgs::ModelConfig {
        n_hidden: 8,
        hyper_channels: 4,
        ..deepfgs::ModelConfig::desk(4, 4).with_ablation(deepfgs::AblationCase::Case4)
    };
    let plain = Codec::new(deepfgs::DeepFgs::new(cfg).unwrap());
    let rows = dump_features(&plain, &img).unwrap().rows;
    assert!(rows[..4]
        .iter()
        .all(|r| r.difference == 0.0 && r.basic == r.full));

    let ckpt = checkpoint().display().to_string();
    img.save(&dir.join("f.png")).unwrap();
    let out = dir.display().to_string();
    let png = dir.join("f.png").display().to_string();
    assert_eq!(
        run(&["dump-features", "--checkpoint", &ckpt, "--out", &out, &png]),
        0
    );
    let csv = std::fs::read_to_string(dir.join("features.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
}
