use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segrefine::format::{read_pgm, write_pgm};
use segrefine::LabelMap;

const SCENE: &str = "height = 16\nwidth = 24\nlabels = 3\nbackground = 20,20,30\n\
                     shape = rect 1 2 2 10 12 200,40,40 4\n\
                     shape = disk 2 17 8 5 40,180,60 4\nblur = 2\nnoise = 1.0\nseed = 5\n";

fn segrefine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segrefine"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn make_scene(dir: &Path, text: &str) {
    fs::write(dir.join("scene.txt"), text).unwrap();
    let out = segrefine(&[
        "synth",
        "--spec",
        &p(dir, "scene.txt"),
        "--image",
        &p(dir, "img.ppm"),
        "--gt",
        &p(dir, "gt.pgm"),
        "--unary",
        &p(dir, "unary.dlt"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn refine(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["refine", "--factor", "1", "--unary"];
    let (u, i, o) = (p(dir, "unary.dlt"), p(dir, "img.ppm"), p(dir, out));
    args.extend([u.as_str(), "--image", i.as_str(), "--out", o.as_str()]);
    args.extend(extra);
    segrefine(&args)
}

fn miou(dir: &Path, pred: &str) -> f64 {
    let out = segrefine(&["eval", "--pred", &p(dir, pred), "--gt", &p(dir, "gt.pgm")]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("metric,class,value\n"));
    let line = text.lines().find(|l| l.starts_with("mean_iou,")).unwrap();
    line.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn synth_refine_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), SCENE);
    assert_eq!(code(&refine(dir.path(), "crf.pgm", &[])), 0);
    assert_eq!(code(&refine(dir.path(), "raw.pgm", &["--iters", "0"])), 0);
    assert!(miou(dir.path(), "crf.pgm") >= miou(dir.path(), "raw.pgm"));
}

#[test]
fn clean_unary_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(
        dir.path(),
        &SCENE
            .replace("blur = 2", "blur = 0")
            .replace("noise = 1.0", "noise = 0"),
    );
    assert_eq!(code(&refine(dir.path(), "crf.pgm", &["--iters", "0"])), 0);
    assert_eq!(miou(dir.path(), "crf.pgm"), 1.0);
}

#[test]
fn pairwise_off_keeps_unary_labels() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), SCENE);
    assert_eq!(code(&refine(dir.path(), "raw.pgm", &["--iters", "0"])), 0);
    assert_eq!(
        code(&refine(
            dir.path(),
            "off.pgm",
            &["--w1", "0", "--w2", "0", "--iters", "5"]
        )),
        0
    );
    assert_eq!(
        read_pgm(dir.path().join("raw.pgm")).unwrap(),
        read_pgm(dir.path().join("off.pgm")).unwrap()
    );
}

#[test]
fn eval_of_identical_maps_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let map = LabelMap::from_fn(10, 10, |y, x| ((x / 4 + y / 5) % 3) as u8);
    write_pgm(&map, dir.path().join("a.pgm")).unwrap();
    let csv = p(dir.path(), "m.csv");
    let out = segrefine(&[
        "eval",
        "--pred",
        &p(dir.path(), "a.pgm"),
        "--gt",
        &p(dir.path(), "a.pgm"),
        "--trimap",
        "1",
        "--trimap",
        "3",
        "--out",
        &csv,
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.contains("mean_iou,,1\n"), "{text}");
    assert!(
        text.contains("trimap_miou,1,1\n") && text.contains("trimap_miou,3,1\n"),
        "{text}"
    );
}

#[test]
fn missing_file_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let map = LabelMap::filled(2, 2, 0);
    write_pgm(&map, dir.path().join("a.pgm")).unwrap();
    let out = segrefine(&[
        "eval",
        "--pred",
        &p(dir.path(), "a.pgm"),
        "--gt",
        &p(dir.path(), "none.pgm"),
    ]);
    assert_eq!(code(&out), 3);
    fs::write(dir.path().join("bad.pgm"), b"P5 nonsense").unwrap();
    let out = segrefine(&[
        "eval",
        "--pred",
        &p(dir.path(), "a.pgm"),
        "--gt",
        &p(dir.path(), "bad.pgm"),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn invalid_arguments_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), SCENE);
    assert_eq!(
        code(&refine(dir.path(), "x.pgm", &["--sigma-alpha", "0"])),
        2
    );
    assert_eq!(
        code(&refine(dir.path(), "x.pgm", &["--backend", "fast"])),
        2
    );
    // The 16x24 unary does not upsample by 8 to a 16x24 image.
    let out = segrefine(&[
        "refine",
        "--unary",
        &p(dir.path(), "unary.dlt"),
        "--image",
        &p(dir.path(), "img.ppm"),
        "--out",
        &p(dir.path(), "x.pgm"),
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&segrefine(&["frobnicate"])), 2);
}

#[test]
fn mismatched_eval_maps_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(&LabelMap::filled(2, 2, 0), dir.path().join("a.pgm")).unwrap();
    write_pgm(&LabelMap::filled(3, 2, 0), dir.path().join("b.pgm")).unwrap();
    let out = segrefine(&[
        "eval",
        "--pred",
        &p(dir.path(), "a.pgm"),
        "--gt",
        &p(dir.path(), "b.pgm"),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn tune_single_point_echoes_it() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), SCENE);
    fs::write(dir.path().join("val.txt"), "unary.dlt img.ppm gt.pgm\n").unwrap();
    let csv = p(dir.path(), "grid.csv");
    let out = segrefine(&[
        "tune",
        "--manifest",
        &p(dir.path(), "val.txt"),
        "--factor",
        "1",
        "--w1",
        "5",
        "--sigma-alpha",
        "40",
        "--sigma-beta",
        "4",
        "--iters",
        "3",
        "--out",
        &csv,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("w1,sigma_alpha,sigma_beta,mean_miou"));
    assert!(lines.next().unwrap().starts_with("5,40,4,"));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.contains("best w1=5 sigma_alpha=40 sigma_beta=4"),
        "{stderr}"
    );
}

#[test]
fn tune_rejects_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("val.txt"), "# nothing\n").unwrap();
    assert_eq!(
        code(&segrefine(&[
            "tune",
            "--manifest",
            &p(dir.path(), "val.txt")
        ])),
        2
    );
}

#[test]
fn bench_runs_on_a_single_pixel() {
    let out = segrefine(&[
        "bench", "--height", "1", "--width", "1", "--labels", "2", "--iters", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("height,width,labels,iters,threads,"));
    assert!(text.lines().nth(1).unwrap().starts_with("1,1,2,2,"));
}

#[test]
fn synth_without_shapes_is_all_background() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), "height = 5\nwidth = 7\n");
    let gt = read_pgm(dir.path().join("gt.pgm")).unwrap();
    assert!(gt.as_slice().iter().all(|&l| l == 0));
}

#[test]
fn synth_seed_override_changes_unary() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), SCENE);
    let first = fs::read(dir.path().join("unary.dlt")).unwrap();
    let out = segrefine(&[
        "synth",
        "--spec",
        &p(dir.path(), "scene.txt"),
        "--seed",
        "6",
        "--image",
        &p(dir.path(), "img.ppm"),
        "--gt",
        &p(dir.path(), "gt.pgm"),
        "--unary",
        &p(dir.path(), "unary.dlt"),
    ]);
    assert_eq!(code(&out), 0);
    assert_ne!(first, fs::read(dir.path().join("unary.dlt")).unwrap());
}
