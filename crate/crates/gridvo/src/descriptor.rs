//! Dense feature maps (coarse 1/14-stride and fine pixel-stride), grid-aware
//! querying, and linear fusion into 192-d per-keypoint descriptors.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detector::KeypointSet;
use crate::error::{Error, Result};
use crate::fmap::Tensor;
use crate::image::GrayImage;
use crate::numeric::randn;

pub const COARSE_DIM: usize = 384;
pub const FINE_DIM: usize = 64;
pub const FUSED_DIM: usize = 192;
pub const PATCH: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stride {
    /// One cell per 14x14 pixel patch.
    Coarse14,
    /// One cell per pixel.
    Fine1,
}

#[derive(Debug, Clone)]
pub struct DenseFeatureMap {
    pub tensor: Tensor,
    pub stride: Stride,
}

impl DenseFeatureMap {
    pub fn new(tensor: Tensor, stride: Stride) -> Result<Self> {
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(DenseFeatureMap { tensor, stride })
    }

    fn cell_of(&self, x: f64, y: f64) -> Result<(usize, usize)> {
        let (r, c) = match self.stride {
            Stride::Coarse14 => ((x / PATCH as f64).floor(), (y / PATCH as f64).floor()),
            Stride::Fine1 => (x.floor(), y.floor()),
        };
        if r < 0.0 || c < 0.0 || r as usize >= self.tensor.rows || c as usize >= self.tensor.cols {
            return Err(Error::OutOfBounds(format!(
                "keypoint ({x}, {y}) maps outside the {}x{} feature grid",
                self.tensor.rows, self.tensor.cols
            )));
        }
        Ok((r as usize, c as usize))
    }

    fn query(&self, kp: &KeypointSet, expected_dim: usize) -> Result<DMatrix<f64>> {
        if self.tensor.channels != expected_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected_dim} channels"),
                got: format!("{}", self.tensor.channels),
            });
        }
        let mut out = DMatrix::zeros(kp.len(), expected_dim);
        for (i, k) in kp.keypoints.iter().enumerate() {
            let (r, c) = self.cell_of(k.x, k.y)?;
            for ch in 0..expected_dim {
                out[(i, ch)] = self.tensor.at(r, c, ch) as f64;
            }
        }
        Ok(out)
    }
}

/// Coarse feature lookup at cell (floor(x/14), floor(y/14)) per keypoint.
pub fn query_coarse(map: &DenseFeatureMap, kp: &KeypointSet) -> Result<DMatrix<f64>> {
    if map.stride != Stride::Coarse14 {
        return Err(Error::invalid("query_coarse requires a coarse-14 map"));
    }
    map.query(kp, COARSE_DIM)
}

/// Fine feature lookup at pixel (floor(x), floor(y)) per keypoint.
pub fn query_fine(map: &DenseFeatureMap, kp: &KeypointSet) -> Result<DMatrix<f64>> {
    if map.stride != Stride::Fine1 {
        return Err(Error::invalid("query_fine requires a fine-1 map"));
    }
    map.query(kp, FINE_DIM)
}

/// Linear fusion projector: 192 x (384 + 64) matrix plus bias.
#[derive(Debug, Clone)]
pub struct FusionWeights {
    pub matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl FusionWeights {
    pub fn new(matrix: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != FUSED_DIM || matrix.ncols() != COARSE_DIM + FINE_DIM {
            return Err(Error::ShapeMismatch {
                expected: format!("{FUSED_DIM}x{}", COARSE_DIM + FINE_DIM),
                got: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        if bias.len() != FUSED_DIM {
            return Err(Error::ShapeMismatch {
                expected: format!("bias of {FUSED_DIM}"),
                got: format!("{}", bias.len()),
            });
        }
        if matrix.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("fusion weights contain non-finite values"));
        }
        Ok(FusionWeights { matrix, bias })
    }

    /// Deterministic random initialization used when no weight file is given.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf05e_d001);
        let n_in = COARSE_DIM + FINE_DIM;
        let scale = 1.0 / (n_in as f64).sqrt();
        let matrix = DMatrix::from_fn(FUSED_DIM, n_in, |_, _| randn(&mut rng) * scale);
        FusionWeights {
            matrix,
            bias: DVector::zeros(FUSED_DIM),
        }
    }

    /// Stored as a single FMAP tensor of shape 192 x 449 (matrix | bias).
    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let n_in = COARSE_DIM + FINE_DIM;
        let mut t = Tensor::zeros(FUSED_DIM, n_in + 1, 1);
        for r in 0..FUSED_DIM {
            for c in 0..n_in {
                *t.at_mut(r, c, 0) = self.matrix[(r, c)] as f32;
            }
            *t.at_mut(r, n_in, 0) = self.bias[r] as f32;
        }
        t.write(path)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let t = Tensor::read(path)?;
        let n_in = COARSE_DIM + FINE_DIM;
        if t.rows != FUSED_DIM || t.cols != n_in + 1 || t.channels != 1 {
            return Err(Error::ShapeMismatch {
                expected: format!("{FUSED_DIM}x{}x1 fusion tensor", n_in + 1),
                got: format!("{}x{}x{}", t.rows, t.cols, t.channels),
            });
        }
        let matrix = DMatrix::from_fn(FUSED_DIM, n_in, |r, c| t.at(r, c, 0) as f64);
        let bias = DVector::from_fn(FUSED_DIM, |r, _| t.at(r, n_in, 0) as f64);
        FusionWeights::new(matrix, bias)
    }
}

/// Fused per-keypoint descriptors plus normalized positions for the matcher.
#[derive(Debug, Clone)]
pub struct DescriptorSet {
    /// K x 192, row per keypoint.
    pub descriptors: DMatrix<f64>,
    /// Keypoint positions normalized to the unit square, (x, y) = (row, col).
    pub positions: Vec<(f64, f64)>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.descriptors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.descriptors.ncols()
    }
}

/// Per-keypoint fusion f_i = W [coarse_i | fine_i] + b.
pub fn fuse(
    coarse: &DMatrix<f64>,
    fine: &DMatrix<f64>,
    weights: &FusionWeights,
    kp: &KeypointSet,
) -> Result<DescriptorSet> {
    let k = kp.len();
    if coarse.nrows() != k || fine.nrows() != k {
        return Err(Error::ShapeMismatch {
            expected: format!("{k} feature rows"),
            got: format!("{}/{}", coarse.nrows(), fine.nrows()),
        });
    }
    if coarse.ncols() != COARSE_DIM || fine.ncols() != FINE_DIM {
        return Err(Error::ShapeMismatch {
            expected: format!("{COARSE_DIM}+{FINE_DIM} channels"),
            got: format!("{}+{}", coarse.ncols(), fine.ncols()),
        });
    }
    let mut descriptors = DMatrix::zeros(k, FUSED_DIM);
    for i in 0..k {
        let mut input = DVector::zeros(COARSE_DIM + FINE_DIM);
        input.rows_mut(0, COARSE_DIM).copy_from(&coarse.row(i).transpose());
        input
            .rows_mut(COARSE_DIM, FINE_DIM)
            .copy_from(&fine.row(i).transpose());
        let f = &weights.matrix * input + &weights.bias;
        descriptors.row_mut(i).copy_from(&f.transpose());
    }
    let positions = (0..k).map(|i| kp.normalized(i)).collect();
    Ok(DescriptorSet {
        descriptors,
        positions,
    })
}

/// Queries both maps and fuses; optionally L2-normalizes each descriptor.
pub fn describe(
    coarse_map: &DenseFeatureMap,
    fine_map: &DenseFeatureMap,
    kp: &KeypointSet,
    weights: &FusionWeights,
    normalize: bool,
) -> Result<DescriptorSet> {
    let coarse = query_coarse(coarse_map, kp)?;
    let fine = query_fine(fine_map, kp)?;
    let mut set = fuse(&coarse, &fine, weights, kp)?;
    if normalize {
        for mut row in set.descriptors.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
    }
    Ok(set)
}

/// Deterministic hand-crafted provider: oriented intensity samples at fixed
/// offsets for the fine map, pseudorandom-pattern pooled cell statistics for
/// the coarse map. A stand-in with the exact map shapes the pipeline needs,
/// so it runs without any learned feature files.
pub fn provider_classical(img: &GrayImage) -> Result<(DenseFeatureMap, DenseFeatureMap)> {
    let (h, w) = (img.height, img.width);
    if h < PATCH || w < PATCH {
        return Err(Error::invalid("image smaller than one feature patch"));
    }

    // 3x3 mean prefilter, replicate padded
    let mut smooth = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    acc += img.get_clamped(r as isize + dr, c as isize + dc);
                }
            }
            smooth[r * w + c] = acc / 9.0;
        }
    }
    let sample = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        smooth[r * w + c]
    };

    // fine: 8x8 grid of smoothed samples around each pixel
    const OFFSETS: [isize; 8] = [-7, -5, -3, -1, 1, 3, 5, 7];
    let mut fine = Tensor::zeros(h, w, FINE_DIM);
    for r in 0..h {
        for c in 0..w {
            for (i, &dr) in OFFSETS.iter().enumerate() {
                for (j, &dc) in OFFSETS.iter().enumerate() {
                    *fine.at_mut(r, c, i * 8 + j) = sample(r as isize + dr, c as isize + dc) as f32;
                }
            }
        }
    }

    // coarse: per-cell projections onto fixed pseudorandom +-1 patterns
    let (gh, gw) = (h / PATCH, w / PATCH);
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0a2_5e00);
    let patterns: Vec<Vec<f32>> = (0..COARSE_DIM)
        .map(|_| {
            (0..PATCH * PATCH)
                .map(|_| if rand::Rng::gen::<bool>(&mut rng) { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let mut coarse = Tensor::zeros(gh, gw, COARSE_DIM);
    let inv = 1.0 / (PATCH * PATCH) as f32;
    for cr in 0..gh {
        for cc in 0..gw {
            for (ch, pat) in patterns.iter().enumerate() {
                let mut acc = 0.0f32;
                for pr in 0..PATCH {
                    for pc in 0..PATCH {
                        acc += pat[pr * PATCH + pc]
                            * smooth[(cr * PATCH + pr) * w + (cc * PATCH + pc)] as f32;
                    }
                }
                *coarse.at_mut(cr, cc, ch) = acc * inv;
            }
        }
    }

    Ok((
        DenseFeatureMap::new(coarse, Stride::Coarse14)?,
        DenseFeatureMap::new(fine, Stride::Fine1)?,
    ))
}
