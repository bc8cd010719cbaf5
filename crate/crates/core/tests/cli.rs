//! The `dmpt` binary end to end: artefacts and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dmpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmpt")).args(args).output().expect("spawn dmpt")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_data(dir: &Path) -> String {
    let data = dir.join("data");
    let o = dmpt(&["gen-data", "--data", path(&data), "--samples_per_class", "8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    data.to_str().unwrap().to_string()
}

#[test]
fn gen_train_eval_attmap() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    assert!(Path::new(&data).join("manifest.tsv").exists());
    let out = dir.path().join("runs");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("# tiny run\nvariant = dpt\nshots = 2\nepochs = 2\nwarmup_epochs = 1\nfixed_warmup_epochs = 1\ndata = {data}\nattmaps = 2\n")).unwrap();

    let o = dmpt(&["train", "-c", path(&cfg), "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("variant,shots,seed,accuracy,epochs,seconds\n"));
    assert!(csv.lines().nth(1).unwrap().starts_with("dpt,2,1,"));
    let log = fs::read_to_string(out.join("dpt_2shot_seed1.log.tsv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch\tstep\tphase\tlr\tl_ce\tl_ca\tl_coop\tl_vpt\ttotal");
    assert!(out.join("attmaps/dpt_2shot_seed1/001.pgm").exists());
    let pack = out.join("dpt_2shot_seed1.dptp");
    assert_eq!(&fs::read(&pack).unwrap()[..8], b"DPTP0001");

    let o = dmpt(&["eval", "-c", path(&cfg), "--prompts", path(&pack)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("accuracy"));

    let img = Path::new(&data).join("red_square/0000.ppm");
    let map = dir.path().join("map.pgm");
    let o = dmpt(&["attmap", "-c", path(&cfg), "--prompts", path(&pack), "--image", path(&img), "--output", path(&map)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(&fs::read(&map).unwrap()[..2], b"P5");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&dmpt(&[])), 1);
    assert_eq!(code(&dmpt(&["frobnicate"])), 1);
    let o = dmpt(&["train", "--variant", "nope"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("coop"), "valid variants are listed");
    assert_eq!(code(&dmpt(&["train", "--no_such_key", "1"])), 1);
    assert_eq!(code(&dmpt(&["attmap", "--output", "x.pgm"])), 1);
    assert_eq!(code(&dmpt(&["--help"])), 0);
}

#[test]
fn missing_or_broken_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = dmpt(&["train", "--data", path(&dir.path().join("absent"))]);
    assert_eq!(code(&o), 2);
    let data = small_data(dir.path());
    // more shots than images per class
    assert_eq!(code(&dmpt(&["train", "--data", &data, "--shots", "9", "--out", path(&dir.path().join("o"))])), 2);
    fs::write(Path::new(&data).join("red_square/0000.ppm"), b"P6\n2 2\n255\n").unwrap();
    assert_eq!(code(&dmpt(&["eval", "--data", &data])), 2);
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let o = dmpt(&[
        "train", "--data", &data, "--variant", "coop", "--shots", "2", "--epochs", "20", "--warmup_epochs", "0",
        "--lr_text", "1e38", "--out", path(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
