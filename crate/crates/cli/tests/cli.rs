use std::path::Path;
use std::process::Command;

fn semsplat(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_semsplat")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix(' '))
        .unwrap_or_else(|| panic!("no {key} in {report}"))
        .parse()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_train_eval_render_bench() {
    let root = std::env::temp_dir().join(format!("semsplat-cli-{}", std::process::id()));
    let (data, ckpt) = (root.join("data"), root.join("ckpt"));
    std::fs::create_dir_all(&root).unwrap();
    std::fs::write(root.join("spec.cfg"), "width = 32\nheight = 32\nfocal = 38\ncamera_count = 5\nholdout_count = 1\n").unwrap();
    std::fs::write(root.join("train.cfg"), "total_iterations = 120\nphase_switch = 80\ndensify_from = 20\ndensify_until = 80\n").unwrap();

    let gen = semsplat(&["gen", "--spec", path(&root.join("spec.cfg")), "--out", path(&data)]);
    assert_eq!(value(&gen, "test_views"), 1.0);

    let train = semsplat(&["train", "--data", path(&data), "--config", path(&root.join("train.cfg")), "--out", path(&ckpt), "--no-pdr"]);
    assert_eq!(value(&train, "iterations"), 120.0);
    let log = std::fs::read_to_string(ckpt.join("log.txt")).unwrap();
    assert_eq!(log.lines().count(), 121);
    assert!(std::fs::read_to_string(ckpt.join("config.txt")).unwrap().contains("enable_pdr = false"));

    let report = root.join("report.txt");
    let eval = semsplat(&["eval", "--ckpt", path(&ckpt), "--data", path(&data), "--report", path(&report)]);
    assert_eq!(value(&eval, "views"), 1.0);
    let miou = value(&eval, "miou");
    assert!((0.0..=1.0).contains(&miou));
    assert!(value(&eval, "psnr") > 10.0);
    assert!(std::fs::read_to_string(&report).unwrap().contains("ssim "));

    let (rgb, sem) = (root.join("view.ppm"), root.join("sem.ppm"));
    semsplat(&["render", "--ckpt", path(&ckpt), "--camera", "4", "--out", path(&rgb), "--semantic", path(&sem)]);
    for p in [&rgb, &sem] {
        let bytes = std::fs::read(p).unwrap();
        assert!(bytes.starts_with(b"P6\n32 32\n255\n"));
        assert_eq!(bytes.len(), 13 + 32 * 32 * 3);
    }
    let pose = root.join("pose.txt");
    let cams = std::fs::read_to_string(ckpt.join("cameras.txt")).unwrap();
    std::fs::write(&pose, &cams).unwrap();
    semsplat(&["render", "--ckpt", path(&ckpt), "--camera", path(&pose), "--out", path(&rgb)]);

    let bench = semsplat(&["bench", "--ckpt", path(&ckpt), "--iters", "10", "--warmup", "1"]);
    assert!(value(&bench, "fps_color") > 0.0 && value(&bench, "fps_semantic") > 0.0);
    assert_eq!(value(&bench, "width"), 32.0);

    std::fs::remove_dir_all(&root).unwrap();
}
