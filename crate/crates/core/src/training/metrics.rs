//! Tonemapped-domain loss and quality metrics.

use ndarray::{s, Array2, ArrayView2};

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::imaging::tonemap_mu;
use crate::FeatureMap;

pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(pred: &FeatureMap<f64>, gt: &FeatureMap<f64>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(invalid(format!("shape mismatch: pred {:?} vs gt {:?}", pred.dim(), gt.dim())));
    }
    Ok(())
}

fn tonemap_pair(pred: &FeatureMap<f64>, gt: &FeatureMap<f64>, mu: f64) -> Result<(FeatureMap<f64>, FeatureMap<f64>)> {
    check_pair(pred, gt)?;
    let tp = tonemap_mu(&pred.mapv(|v| v.clamp(0.0, 1.0)), mu)?;
    let tg = tonemap_mu(gt, mu)?;
    Ok((tp, tg))
}

/// Mean absolute difference of the tonemapped images; `pred` is clamped
/// to `[0, 1]` first.
pub fn mu_l1_loss(pred: &FeatureMap<f64>, gt: &FeatureMap<f64>, mu: f64) -> Result<f64> {
    let (tp, tg) = tonemap_pair(pred, gt, mu)?;
    Ok((&tp - &tg).mapv(f64::abs).mean().unwrap_or(0.0))
}

/// Graph form of [`mu_l1_loss`]; `gt` is a constant already in `[0, 1]`.
pub fn mu_l1_loss_graph(g: &Graph, pred: Var, gt: Var, mu: f64) -> Result<Var> {
    let (sp, sg) = (g.shape(pred), g.shape(gt));
    if sp != sg {
        return Err(invalid(format!("shape mismatch: pred {sp:?} vs gt {sg:?}")));
    }
    let tp = g.mu_law(g.clamp_unit(pred), mu);
    let tg = g.mu_law(gt, mu);
    Ok(g.mean(g.abs(g.sub(tp, tg))))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr_mu(pred: &FeatureMap<f64>, gt: &FeatureMap<f64>, mu: f64) -> Result<f64> {
    let (tp, tg) = tonemap_pair(pred, gt, mu)?;
    let mse = (&tp - &tg).mapv(|d| d * d).mean().unwrap_or(0.0);
    Ok(psnr_from_mse(mse))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable valid-mode filtering with a symmetric 1-D kernel.
fn filter_valid(x: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let n = k.len();
    let (h, w) = x.dim();
    let horiz = Array2::from_shape_fn((h, w + 1 - n), |(y, c)| (0..n).map(|j| k[j] * x[[y, c + j]]).sum::<f64>());
    Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(y, c)| {
        (0..n).map(|j| k[j] * horiz[[y + j, c]]).sum::<f64>()
    })
}

fn ssim_plane(a: ArrayView2<f64>, b: ArrayView2<f64>, k: &[f64]) -> (f64, usize) {
    let (a, b) = (a.to_owned(), b.to_owned());
    let mu_a = filter_valid(&a, k);
    let mu_b = filter_valid(&b, k);
    let aa = filter_valid(&(&a * &a), k);
    let bb = filter_valid(&(&b * &b), k);
    let ab = filter_valid(&(&a * &b), k);
    let mut sum = 0.0;
    for (((ma, mb), (saa, sbb)), sab) in mu_a.iter().zip(&mu_b).zip(aa.iter().zip(&bb)).zip(&ab) {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    (sum, mu_a.len())
}

/// Structural similarity of images already in the display domain, averaged
/// over batch, channels and valid window positions.
pub fn ssim(a: &FeatureMap<f64>, b: &FeatureMap<f64>) -> Result<f64> {
    check_pair(a, b)?;
    let (n, c, h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let k = gaussian_window();
    let (mut total, mut count) = (0.0, 0usize);
    for i in 0..n {
        for ch in 0..c {
            let (s_, cnt) = ssim_plane(a.slice(s![i, ch, .., ..]), b.slice(s![i, ch, .., ..]), &k);
            total += s_;
            count += cnt;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim_mu(pred: &FeatureMap<f64>, gt: &FeatureMap<f64>, mu: f64) -> Result<f64> {
    let (tp, tg) = tonemap_pair(pred, gt, mu)?;
    ssim(&tp, &tg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{tonemap_mu_inv, DEFAULT_MU};
    use ndarray::Array4;
    use rand::Rng;

    fn random(seed: u64, shape: (usize, usize, usize, usize)) -> FeatureMap<f64> {
        let mut rng = crate::rng::seeded(seed);
        Array4::from_shape_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn loss_endpoints() {
        let gt = random(1, (1, 2, 8, 8));
        assert_eq!(mu_l1_loss(&gt, &gt, DEFAULT_MU).unwrap(), 0.0);
        let zero = Array4::zeros((1, 1, 4, 4));
        let one = Array4::ones((1, 1, 4, 4));
        assert!((mu_l1_loss(&one, &zero, DEFAULT_MU).unwrap() - 1.0).abs() < 1e-12);
        assert!(mu_l1_loss(&one, &Array4::zeros((1, 1, 4, 5)), DEFAULT_MU).is_err());
    }

    #[test]
    fn psnr_fixtures() {
        let t_gt = random(2, (1, 1, 16, 16)).mapv(|v| v * 0.85);
        for (offset, db) in [(0.1, 20.0), (0.01, 40.0)] {
            let gt = tonemap_mu_inv(&t_gt, DEFAULT_MU).unwrap();
            let pred = tonemap_mu_inv(&t_gt.mapv(|v| v + offset), DEFAULT_MU).unwrap();
            let p = psnr_mu(&pred, &gt, DEFAULT_MU).unwrap();
            assert!((p - db).abs() <= 0.01, "{p}");
        }
        let gt = random(3, (1, 1, 8, 8));
        assert_eq!(psnr_mu(&gt, &gt, DEFAULT_MU).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn ssim_identity_symmetry_and_inversion() {
        let a = random(4, (1, 2, 24, 24));
        let b = random(5, (1, 2, 24, 24));
        assert!((ssim_mu(&a, &a, DEFAULT_MU).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim_mu(&a, &b, DEFAULT_MU).unwrap();
        let ba = ssim_mu(&b, &a, DEFAULT_MU).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let ta = tonemap_mu(&a, DEFAULT_MU).unwrap();
        let inv = tonemap_mu_inv(&ta.mapv(|v| 1.0 - v), DEFAULT_MU).unwrap();
        assert!(ssim_mu(&inv, &a, DEFAULT_MU).unwrap() < 0.2);
        assert!(ssim(&random(6, (1, 1, 10, 24)), &random(7, (1, 1, 10, 24))).is_err());
    }

    #[test]
    fn window_is_normalized() {
        let k = gaussian_window();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((k[5] - 0.2660117).abs() < 1e-6);
    }
}
