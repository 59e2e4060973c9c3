//! Salient keypoint detector: Gaussian smoothing, Sobel gradient magnitude,
//! per-grid-cell max pooling, non-max suppression, gradient thresholding and
//! top-k selection. Keypoints are grid-aligned so each one indexes a distinct
//! coarse feature cell.

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Gaussian kernel size, must be odd.
    pub kernel_size: usize,
    pub sigma: f64,
    /// Grid cell / feature patch size in pixels.
    pub patch: usize,
    /// Chebyshev suppression radius.
    pub nms_radius: usize,
    pub threshold: f64,
    pub top_k: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kernel_size: 5,
            sigma: 2.0,
            patch: 14,
            nms_radius: 8,
            threshold: 0.01,
            top_k: 512,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid("gaussian kernel size must be odd"));
        }
        if self.nms_radius < 1 {
            return Err(Error::invalid("NMS radius must be >= 1"));
        }
        if self.threshold < 0.0 {
            return Err(Error::invalid("gradient threshold must be >= 0"));
        }
        if self.top_k < 8 {
            return Err(Error::invalid("top-k must be >= 8"));
        }
        if self.patch < 1 {
            return Err(Error::invalid("patch size must be >= 1"));
        }
        Ok(())
    }
}

/// Keypoint with x = row index, y = column index (integer pixel centers from
/// the detector; fractional values allowed for externally supplied points).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct KeypointSet {
    pub keypoints: Vec<Keypoint>,
    pub height: usize,
    pub width: usize,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Pixel coordinates (u = column, v = row) of keypoint `i`.
    pub fn pixel(&self, i: usize) -> (f64, f64) {
        (self.keypoints[i].y, self.keypoints[i].x)
    }

    /// Keypoint position normalized to the unit square.
    pub fn normalized(&self, i: usize) -> (f64, f64) {
        let kp = &self.keypoints[i];
        (
            kp.x / (self.height.max(2) - 1) as f64,
            kp.y / (self.width.max(2) - 1) as f64,
        )
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn gaussian_smooth(img: &GrayImage, size: usize, sigma: f64) -> GrayImage {
    let k = gaussian_kernel(size, sigma);
    let half = (size / 2) as isize;
    let (h, w) = (img.height, img.width);
    // horizontal then vertical pass; equivalent to the 2D product kernel
    // because replicate clamping acts per axis
    let mut tmp = GrayImage::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img.get_clamped(r as isize, c as isize + i as isize - half);
            }
            tmp.set(r, c, acc.clamp(0.0, 1.0));
        }
    }
    let mut out = GrayImage::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp.get_clamped(r as isize + i as isize - half, c as isize);
            }
            out.set(r, c, acc.clamp(0.0, 1.0));
        }
    }
    out
}

/// Dense Sobel gradient magnitude of the Gaussian-smoothed image, with
/// replicate border padding.
pub fn gradient_map(img: &GrayImage, cfg: &DetectorConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let smooth = gaussian_smooth(img, cfg.kernel_size, cfg.sigma);
    let (h, w) = (img.height, img.width);
    let mut mag = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let at = |dr: isize, dc: isize| smooth.get_clamped(r as isize + dr, c as isize + dc);
            let gx = -at(-1, -1) + at(-1, 1) - 2.0 * at(0, -1) + 2.0 * at(0, 1) - at(1, -1) + at(1, 1);
            let gy = -at(-1, -1) - 2.0 * at(-1, 0) - at(-1, 1) + at(1, -1) + 2.0 * at(1, 0) + at(1, 1);
            mag[r * w + c] = (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(mag)
}

/// Per-cell maxima of the gradient map: at most one candidate per
/// patch x patch grid cell, ties broken by first occurrence in row-major scan.
pub fn grid_candidates(img: &GrayImage, cfg: &DetectorConfig) -> Result<Vec<Keypoint>> {
    if img.height < cfg.patch || img.width < cfg.patch {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than one {}px grid cell",
            img.height, img.width, cfg.patch
        )));
    }
    let grad = gradient_map(img, cfg)?;
    let (gh, gw) = (img.height / cfg.patch, img.width / cfg.patch);
    let mut out = Vec::with_capacity(gh * gw);
    for cr in 0..gh {
        for cc in 0..gw {
            let mut best = Keypoint {
                x: (cr * cfg.patch) as f64,
                y: (cc * cfg.patch) as f64,
                score: f64::NEG_INFINITY,
            };
            for r in cr * cfg.patch..(cr + 1) * cfg.patch {
                for c in cc * cfg.patch..(cc + 1) * cfg.patch {
                    let s = grad[r * img.width + c];
                    if s > best.score {
                        best = Keypoint {
                            x: r as f64,
                            y: c as f64,
                            score: s,
                        };
                    }
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

fn score_order(a: &Keypoint, b: &Keypoint) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
}

/// Full detection procedure: grid max pooling, NMS, threshold, top-k.
pub fn detect(img: &GrayImage, cfg: &DetectorConfig) -> Result<KeypointSet> {
    cfg.validate()?;
    let mut candidates = grid_candidates(img, cfg)?;
    candidates.sort_by(score_order);

    let r = cfg.nms_radius as f64;
    let mut kept: Vec<Keypoint> = Vec::new();
    for cand in candidates {
        let suppressed = kept
            .iter()
            .any(|k| (k.x - cand.x).abs().max((k.y - cand.y).abs()) <= r);
        if !suppressed {
            kept.push(cand);
        }
    }
    kept.retain(|k| k.score >= cfg.threshold);
    kept.truncate(cfg.top_k);

    Ok(KeypointSet {
        keypoints: kept,
        height: img.height,
        width: img.width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> GrayImage {
        GrayImage::new(h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let img = GrayImage::new(20, 20, vec![0.4; 400]).unwrap();
        let g = gradient_map(&img, &DetectorConfig::default()).unwrap();
        // zero up to rounding of the smoothing pass
        assert!(g.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn step_edge_peaks_at_edge() {
        let w = 40;
        let edge_col = 20;
        let data: Vec<f64> = (0..40 * w)
            .map(|i| if i % w < edge_col { 0.0 } else { 1.0 })
            .collect();
        let img = GrayImage::new(40, w, data).unwrap();
        let g = gradient_map(&img, &DetectorConfig::default()).unwrap();
        let row = &g[20 * w..21 * w];
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((best as isize - edge_col as isize).abs() <= 1, "peak at {best}");
    }

    // Naive full-2D-kernel convolution oracle.
    fn naive_gradient(img: &GrayImage, cfg: &DetectorConfig) -> Vec<f64> {
        let k1 = gaussian_kernel(cfg.kernel_size, cfg.sigma);
        let half = (cfg.kernel_size / 2) as isize;
        let (h, w) = (img.height, img.width);
        let mut smooth = GrayImage::zeros(h, w);
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for i in 0..cfg.kernel_size {
                    for j in 0..cfg.kernel_size {
                        acc += k1[i]
                            * k1[j]
                            * img.get_clamped(
                                r as isize + i as isize - half,
                                c as isize + j as isize - half,
                            );
                    }
                }
                smooth.set(r, c, acc.clamp(0.0, 1.0));
            }
        }
        let sx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut gx = 0.0;
                let mut gy = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        let v = smooth.get_clamped(r as isize + i - 1, c as isize + j - 1);
                        gx += sx[i as usize][j as usize] * v;
                        gy += sx[j as usize][i as usize] * v;
                    }
                }
                out[r * w + c] = (gx * gx + gy * gy).sqrt();
            }
        }
        out
    }

    #[test]
    fn gradient_matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let img = random_image(&mut rng, 32, 32);
        let cfg = DetectorConfig::default();
        let fast = gradient_map(&img, &cfg).unwrap();
        let naive = naive_gradient(&img, &cfg);
        for (a, b) in fast.iter().zip(&naive) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_image_detects_nothing() {
        let img = GrayImage::new(56, 56, vec![0.7; 56 * 56]).unwrap();
        let kp = detect(&img, &DetectorConfig::default()).unwrap();
        assert!(kp.is_empty());
    }

    #[test]
    fn single_bright_pixel_collapses_to_one_keypoint() {
        let mut img = GrayImage::zeros(224, 224);
        img.set(100, 200, 1.0);
        let cfg = DetectorConfig::default();
        let kp = detect(&img, &cfg).unwrap();
        assert_eq!(kp.len(), 1, "NMS should collapse the blob to one point");
        let k = kp.keypoints[0];
        assert!((k.x - 100.0).abs() <= 3.0 && (k.y - 200.0).abs() <= 3.0);

        // brute-force oracle: strongest gradient pixel survives everything
        let grad = gradient_map(&img, &cfg).unwrap();
        let best = grad
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let (br, bc) = (best / 224, best % 224);
        assert!((k.x - br as f64).abs() <= cfg.nms_radius as f64);
        assert!((k.y - bc as f64).abs() <= cfg.nms_radius as f64);
    }

    #[test]
    fn candidate_grid_count_for_paper_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = random_image(&mut rng, 476, 630);
        let cands = grid_candidates(&img, &DetectorConfig::default()).unwrap();
        assert_eq!(cands.len(), 34 * 45);
    }

    #[test]
    fn rejects_image_smaller_than_one_cell() {
        let img = GrayImage::zeros(10, 40);
        assert!(detect(&img, &DetectorConfig::default()).is_err());
    }

    #[test]
    fn invariants_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = DetectorConfig::default();
        for _ in 0..20 {
            let h = rng.gen_range(28..120);
            let w = rng.gen_range(28..120);
            let img = random_image(&mut rng, h, w);
            let kp = detect(&img, &cfg).unwrap();
            assert!(kp.len() <= cfg.top_k.min((h / 14) * (w / 14)));
            let mut cells = std::collections::HashSet::new();
            for k in &kp.keypoints {
                assert!(k.score >= cfg.threshold);
                assert!((k.x as usize) < h && (k.y as usize) < w);
                assert!(cells.insert((k.x as usize / 14, k.y as usize / 14)), "grid cell reused");
            }
            for (i, a) in kp.keypoints.iter().enumerate() {
                for b in &kp.keypoints[i + 1..] {
                    let cheb = (a.x - b.x).abs().max((a.y - b.y).abs());
                    assert!(cheb > cfg.nms_radius as f64);
                }
            }
        }
    }

    #[test]
    fn threshold_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let img = random_image(&mut rng, 70, 70);
        let mut prev = usize::MAX;
        for t in [0.0, 0.01, 0.05, 0.2, 1.0] {
            let cfg = DetectorConfig {
                threshold: t,
                ..DetectorConfig::default()
            };
            let n = detect(&img, &cfg).unwrap().len();
            assert!(n <= prev, "raising threshold added keypoints");
            prev = n;
        }
    }

    #[test]
    fn detection_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let img = random_image(&mut rng, 98, 84);
        let cfg = DetectorConfig::default();
        let a = detect(&img, &cfg).unwrap();
        let b = detect(&img, &cfg).unwrap();
        assert_eq!(a.keypoints.len(), b.keypoints.len());
        for (x, y) in a.keypoints.iter().zip(&b.keypoints) {
            assert_eq!(x.x.to_bits(), y.x.to_bits());
            assert_eq!(x.y.to_bits(), y.y.to_bits());
            assert_eq!(x.score.to_bits(), y.score.to_bits());
        }
    }
}
