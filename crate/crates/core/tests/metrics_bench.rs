mod common;

use common::*;
use semsplat::camera::Camera;
use semsplat::image::LabelMap;
use semsplat::metrics::{bench_render, evaluate, EvalView};
use semsplat::rasterizer::rasterize;
use semsplat::sac::Decoder;

#[test]
fn doubling_resolution_lowers_throughput() {
    let mut rng = rng(21);
    let scene = random_scene(&mut rng, 3000, 3, 0.8);
    let small = Camera::look_at([0.3, 0.4, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 80.0, 64, 64).unwrap();
    let large = small.scaled(2.0);
    let a = bench_render(&scene, &small, 2, 10).unwrap();
    let b = bench_render(&scene, &large, 2, 10).unwrap();
    assert_eq!((b.width, b.height), (128, 128));
    assert!(b.color.median < a.color.median, "{} vs {}", a.color.median, b.color.median);
    assert!(b.semantic.median < a.semantic.median);
    assert!(a.color.p5 <= a.color.median && a.color.median <= a.color.p95);
}

#[test]
fn evaluating_the_rendered_image_scores_perfect_psnr() {
    let mut rng = rng(22);
    let scene = random_scene(&mut rng, 30, 3, 0.9);
    let cam = test_camera(32);
    let out = rasterize(&scene, &cam);
    let target = semsplat::image::Image::new(32, 32, out.color.clone()).unwrap();
    // decoder that copies the first feature channel into class 1 and leaves class 0 at zero
    let mut dec = Decoder::zeros(2, 3);
    dec.weight[3] = 1.0;
    let truth = LabelMap {
        width: 32,
        height: 32,
        data: out.feature.chunks_exact(3).map(|f| if f[0] > 0.0 { 1 } else { 0 }).collect(),
    };
    let r = evaluate(&scene, &dec, &[EvalView { camera: &cam, target: &target, truth: &truth }]).unwrap();
    assert_eq!(r.psnr, semsplat::metrics::PSNR_CAP);
    assert!((r.ssim - 1.0).abs() < 1e-12);
    assert_eq!((r.miou, r.macc), (1.0, 1.0));
}
