//! Photometric reconstruction loss: `(1 − λ)·L1 + λ·(1 − SSIM)/2`.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), zero padding to keep the
//! output the size of the input, `k₁ = 0.01`, `k₂ = 0.03` and a dynamic range
//! of 1. The same kernel backs the evaluation metric.

use crate::error::Result;
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable zero-padded "same" filtering of one plane. Self-adjoint since the window is symmetric.
fn blur(plane: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let sx = x as isize + k as isize - r;
                if sx >= 0 && (sx as usize) < width {
                    acc += wk * row[sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for (k, wk) in w.iter().enumerate() {
            let sy = y as isize + k as isize - r;
            if sy < 0 || sy as usize >= height {
                continue;
            }
            let src = &tmp[sy as usize * width..(sy as usize + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += wk * s;
            }
        }
    }
    out
}

fn planes(img: &Image) -> [Vec<f64>; 3] {
    std::array::from_fn(|c| img.data.iter().skip(c).step_by(3).copied().collect())
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    Ok(ssim_impl(a, b, false).0)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    a.same_shape(b)?;
    let (v, g) = ssim_impl(a, b, true);
    Ok((v, g.unwrap()))
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (w, h) = (a.width, a.height);
    let n = (w * h * 3) as f64;
    let win = window();
    let pa = planes(a);
    let pb = planes(b);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.data.len()]);
    for c in 0..3 {
        let x = &pa[c];
        let y = &pb[c];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();
        let mx = blur(x, w, h, &win);
        let my = blur(y, w, h, &win);
        let exx = blur(&xx, w, h, &win);
        let eyy = blur(&yy, w, h, &win);
        let exy = blur(&xy, w, h, &win);
        let len = x.len();
        let mut g_mu = vec![0.0; len];
        let mut g_xx = vec![0.0; len];
        let mut g_xy = vec![0.0; len];
        for i in 0..len {
            let (ux, uy) = (mx[i], my[i]);
            let sxx = exx[i] - ux * ux;
            let syy = eyy[i] - uy * uy;
            let sxy = exy[i] - ux * uy;
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = sxx + syy + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_dux = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
                let ds_dsxx = -s / b2;
                let ds_dsxy = 2.0 * a1 / (b1 * b2);
                // σxx = E[x²] − μx², σxy = E[xy] − μx μy
                g_mu[i] = (ds_dux - 2.0 * ux * ds_dsxx - uy * ds_dsxy) / n;
                g_xx[i] = ds_dsxx / n;
                g_xy[i] = ds_dsxy / n;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let bmu = blur(&g_mu, w, h, &win);
            let bxx = blur(&g_xx, w, h, &win);
            let bxy = blur(&g_xy, w, h, &win);
            for i in 0..len {
                grad[3 * i + c] = bmu[i] + 2.0 * x[i] * bxx[i] + y[i] * bxy[i];
            }
        }
    }
    (total / n, grad)
}

/// `(1 − λ)·mean|r − t| + λ·(1 − SSIM(r, t))/2` and its gradient with respect to `rendered`.
pub fn reconstruction_loss(rendered: &Image, target: &Image, lambda: f64) -> Result<(f64, Vec<f64>)> {
    rendered.same_shape(target)?;
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| {
            let d = r - t;
            l1 += d.abs();
            (1.0 - lambda) * sign(d) / n
        })
        .collect();
    l1 /= n;
    if lambda == 0.0 {
        return Ok(((1.0 - lambda) * l1, grad));
    }
    let (s, gs) = ssim_with_grad(rendered, target)?;
    for (g, d) in grad.iter_mut().zip(&gs) {
        *g -= 0.5 * lambda * d;
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - s) / 2.0, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::new(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    /// Direct 2D window sums, no separability, written independently of `blur`.
    fn sliding_window_ssim(a: &Image, b: &Image) -> f64 {
        let half = 5isize;
        let mut g = [[0.0; 11]; 11];
        let mut sum = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                sum += *v;
            }
        }
        let mut total = 0.0;
        for c in 0..3 {
            for y in 0..a.height as isize {
                for x in 0..a.width as isize {
                    let (mut mx, mut my, mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let (sx, sy) = (x + dx, y + dy);
                            if sx < 0 || sy < 0 || sx >= a.width as isize || sy >= a.height as isize {
                                continue;
                            }
                            let w = g[(dy + half) as usize][(dx + half) as usize] / sum;
                            let u = a.pixel(sx as usize, sy as usize)[c];
                            let v = b.pixel(sx as usize, sy as usize)[c];
                            mx += w * u;
                            my += w * v;
                            exx += w * u * u;
                            eyy += w * v * v;
                            exy += w * u * v;
                        }
                    }
                    let (sxx, syy, sxy) = (exx - mx * mx, eyy - my * my, exy - mx * my);
                    total += (2.0 * mx * my + C1) * (2.0 * sxy + C2) / ((mx * mx + my * my + C1) * (sxx + syy + C2));
                }
            }
        }
        total / (a.width * a.height * 3) as f64
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 13, 9);
        let (loss, grad) = reconstruction_loss(&img, &img, 0.2).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn constant_offset_l1_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Image::new(16, 16, (0..16 * 16 * 3).map(|_| rng.random_range(0.0..0.8)).collect()).unwrap();
        let shifted = Image::new(16, 16, img.data.iter().map(|v| v + 0.1).collect()).unwrap();
        let (loss, _) = reconstruction_loss(&img, &shifted, 0.2).unwrap();
        let s = sliding_window_ssim(&img, &shifted);
        let l1_term = loss - 0.2 * (1.0 - s) / 2.0;
        assert!((l1_term - 0.08).abs() < 1e-9, "{l1_term}");
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 19, 14);
        let b = random_image(&mut rng, 19, 14);
        let fast = ssim(&a, &b).unwrap();
        let slow = sliding_window_ssim(&a, &b);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_image(&mut rng, 12, 10);
        let b = random_image(&mut rng, 12, 10);
        let (_, grad) = reconstruction_loss(&a, &b, 0.2).unwrap();
        for idx in [0, 7, 100, 211, 359] {
            let h = 1e-6;
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[idx] += h;
            m.data[idx] -= h;
            let fd = (reconstruction_loss(&p, &b, 0.2).unwrap().0 - reconstruction_loss(&m, &b, 0.2).unwrap().0) / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-7, "{idx}: {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Image::filled(4, 4, [0.0; 3]);
        let b = Image::filled(4, 5, [0.0; 3]);
        assert!(reconstruction_loss(&a, &b, 0.2).is_err());
    }
}
