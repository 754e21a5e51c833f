//! Acceptance criterion for the command-line surface: rerunning every
//! command with identical seeds produces byte-identical outputs. Run with
//! `--nocapture` to see the pass line.

use std::path::{Path, PathBuf};
use std::process::Command;

fn dioptra(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_dioptra"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn compare_trees(a: &Path, b: &Path) {
    let list = |p: &Path| {
        let mut names: Vec<_> = std::fs::read_dir(p)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        names
    };
    let names = list(a);
    assert_eq!(names, list(b), "{} vs {}", a.display(), b.display());
    for name in names {
        let (pa, pb) = (a.join(&name), b.join(&name));
        if pa.is_dir() {
            compare_trees(&pa, &pb);
        } else {
            assert_eq!(
                std::fs::read(&pa).unwrap(),
                std::fs::read(&pb).unwrap(),
                "{} differs",
                pa.display()
            );
        }
    }
}

/// One full pipeline pass into `root`, everything seed-pinned.
fn pipeline(root: &Path) -> [PathBuf; 4] {
    let data = root.join("data");
    let models = root.join("models");
    let eval = root.join("eval");
    let maps = root.join("maps");
    dioptra(&[
        "generate",
        "--out",
        data.to_str().unwrap(),
        "--n-train",
        "16",
        "--n-tune",
        "6",
        "--n-val",
        "16",
        "--resolution",
        "48",
        "--seed",
        "5",
    ]);
    let manifest = data.join("manifest.csv");
    dioptra(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        models.to_str().unwrap(),
        "--target",
        "se",
        "--ensemble",
        "2",
        "--seed",
        "3",
        "--resolution",
        "32",
        "--max-epochs",
        "2",
        "--batch-size",
        "8",
    ]);
    dioptra(&[
        "evaluate",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoints",
        models.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
        "--bootstrap",
        "400",
        "--seed",
        "11",
        "--slice",
        "no_amd",
    ]);
    dioptra(&[
        "attend",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        models.join("model_se_0.ckpt").to_str().unwrap(),
        "--out",
        maps.to_str().unwrap(),
        "--aggregate",
        "--min-count",
        "2",
    ]);
    [data, models, eval, maps]
}

#[test]
fn criterion_09_identical_seeds_give_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = pipeline(&dir.path().join("run1"));
    let second = pipeline(&dir.path().join("run2"));
    for (a, b) in first.iter().zip(&second) {
        compare_trees(a, b);
    }
    println!(
        "[PASS] determinism: generate/train/evaluate/attend reruns are byte-identical across {} output trees",
        first.len()
    );
}
