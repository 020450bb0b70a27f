use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sdu_seg::cli::digest_path;
use sdu_seg::data::{load_root, make_folds};
use sdu_seg::models::{BlockKind, ModelConfig, SegModel};
use sdu_seg::nn::Layer;
use sdu_seg::train::{Checkpoint, History};

fn sdu_seg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdu-seg"))
        .args(args)
        .env("SDU_SEG_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sdu_seg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    sdu_seg(args).status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, size: usize, seed: u64) {
    ok(&["synth", "--out", p(dir), "--n", &n.to_string(), "--size", &size.to_string(), "--seed", &seed.to_string()]);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    synth(&a, 6, 16, 3);
    synth(&b, 6, 16, 3);
    synth(&c, 6, 16, 4);
    for sub in ["images", "masks"] {
        assert_eq!(digest_path(&a.join(sub)).unwrap(), digest_path(&b.join(sub)).unwrap());
        assert_ne!(digest_path(&a.join(sub)).unwrap(), digest_path(&c.join(sub)).unwrap());
    }
    let manifest = |d: &Path| fs::read_to_string(d.join("manifest.json")).unwrap().replace(p(d), "<out>");
    assert_eq!(manifest(&a), manifest(&b));
    assert_eq!(load_root(&a).unwrap().len(), 6);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["params", "--widths", "10,20,30,40"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["train", "--data", p(&t.path().join("missing")), "--out", p(&t.path().join("o"))]), 2);

    let bad = t.path().join("bad.sduc");
    fs::write(&bad, b"NOPE0000000000000000").unwrap();
    let data = t.path().join("data");
    synth(&data, 4, 16, 1);
    let out = sdu_seg(&["eval", "--checkpoint", p(&bad), "--data", p(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));

    assert_eq!(code(&["crossval", "--data", p(&data), "--k", "1"]), 1);
    let cfg = t.path().join("run.cfg");
    fs::write(&cfg, "epochs = 2\nbogus = 1\n").unwrap();
    let out = sdu_seg(&["train", "--data", p(&data), "--out", p(&t.path().join("o2")), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn params_and_rf_reports() {
    let text = ok(&["params"]);
    for needle in ["6,028,833", "14,787,777", "ratio sdu/unet", "delta vs reference"] {
        assert!(text.contains(needle), "missing {needle}:\n{text}");
    }
    let t = tempfile::tempdir().unwrap();
    let json = t.path().join("rf.json");
    let text = ok(&["rf", "--arch", "sdu", "--out", p(&json)]);
    assert!(text.contains("{3,7,15,31,63}"), "{text}");
    assert!(json.exists() && t.path().join("rf.json.manifest.json").exists());
    let text = ok(&["rf", "--arch", "unet"]);
    assert!(text.contains("{5}"), "{text}");
}

/// Single-conv network wired so that the input flows unchanged through the
/// top skip path and the head thresholds it between the two gray levels.
fn oracle_checkpoint(path: &Path) {
    let cfg = ModelConfig::new(BlockKind::SingleConv).with_widths(&[16, 32, 48, 64]).with_norm(false);
    let mut model = SegModel::<f32>::new(cfg).unwrap();
    model.visit_mut("", &mut |name, p| {
        let d = p.value_mut().data_mut();
        match name {
            "enc1.branch0.conv.weight" | "dec1.branch0.conv.weight" => d[4] = 1.0,
            "head.weight" => d[0] = 40.0,
            "head.bias" => d[0] = -17.2,
            _ => {}
        }
    });
    Checkpoint::from_model(&model, None, 0, &History::default(), None, None).save(path).unwrap();
}

#[test]
fn eval_scores_an_exact_model_perfectly() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, 5, 32, 8);
    let ck = t.path().join("oracle.sduc");
    oracle_checkpoint(&ck);
    let out = t.path().join("eval");
    let overlays = t.path().join("overlays");
    let text = ok(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&out), "--overlay-dir", p(&overlays)]);
    assert!(text.contains("class 0: dice 1.000000 ± 0.000000"), "{text}");
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert!(scores.starts_with("id,class,dice,loss\n"));
    assert_eq!(scores.lines().count(), 6);
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), "class,mean,std,n\n0,1,0,5\n");
    assert_eq!(fs::read_dir(&overlays).unwrap().count(), 5);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn train_writes_artifacts_and_replays_bit_exactly() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, 20, 16, 2);
    let run = t.path().join("run");
    let text = ok(&[
        "train", "--data", p(&data), "--out", p(&run), "--epochs", "2", "--widths", "16,32,48,64", "--seed", "5", "--quiet",
        "--lr", "1e-3",
    ]);
    assert!(text.contains("train dice"), "{text}");
    for f in ["manifest.json", "config.txt", "history.csv", "best.sduc", "last.sduc", "fold_plan.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,split,class,loss,dice\n"));
    assert_eq!(history.lines().count(), 1 + 3 * 2);

    let set = load_root(&data).unwrap();
    assert_eq!(fs::read_to_string(run.join("fold_plan.csv")).unwrap(), make_folds(&set, 5, 5).unwrap().to_csv());

    let again = t.path().join("again");
    ok(&["replay", "--manifest", p(&run.join("manifest.json")), "--out", p(&again)]);
    for f in ["last.sduc", "best.sduc", "history.csv", "config.txt"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f} differs after replay");
    }

    // Resuming from the last checkpoint continues the epoch count.
    let more = t.path().join("more");
    ok(&["train", "--data", p(&data), "--out", p(&more), "--epochs", "3", "--resume", p(&run.join("last.sduc")), "--quiet", "--seed", "5", "--lr", "1e-3"]);
    let ck = Checkpoint::load(&more.join("last.sduc")).unwrap();
    assert_eq!(ck.meta.epoch, 3);

    // A poisoned checkpoint makes the loss non-finite.
    let mut poisoned = Checkpoint::load(&run.join("last.sduc")).unwrap();
    poisoned.weights.iter_mut().for_each(|w| *w = f32::NAN);
    let bad = t.path().join("nan.sduc");
    poisoned.save(&bad).unwrap();
    assert_eq!(
        code(&["train", "--data", p(&data), "--out", p(&t.path().join("nan")), "--epochs", "3", "--resume", p(&bad), "--quiet"]),
        3
    );
}

#[test]
fn crossval_on_identical_configs_is_degenerate() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, 8, 16, 6);
    let out = t.path().join("cv");
    let text = ok(&[
        "crossval", "--data", p(&data), "--arch-a", "sdu", "--arch-b", "sdu", "--k", "2", "--epochs", "1", "--widths",
        "16,32,48,64", "--out", p(&out), "--quiet",
    ]);
    assert!(text.contains("degenerate"), "{text}");
    let folds = fs::read_to_string(out.join("folds.csv")).unwrap();
    assert_eq!(folds.lines().count(), 1 + 4);
    let set = load_root(&data).unwrap();
    assert_eq!(fs::read_to_string(out.join("fold_plan.csv")).unwrap(), make_folds(&set, 2, 0).unwrap().to_csv());
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert!(scores.starts_with("arch,fold,id,class,dice\n"));
    assert_eq!(scores.lines().count(), 1 + 2 * 8);
}
