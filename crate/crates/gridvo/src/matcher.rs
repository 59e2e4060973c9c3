//! Sparse feature matching: stacked self/cross-attention layers with rotary
//! position encoding, soft partial assignment, mutual-argmax correspondence
//! extraction with a confidence head, and a classical mutual-NN backend.
//!
//! All reductions over keypoint indices go through `invariant_sum`, so the
//! outputs are bitwise equivariant under keypoint permutations.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::fmap::Tensor;
use crate::numeric::{invariant_sum, randn};

pub const DIM: usize = 192;
pub const HEADS: usize = 3;
pub const HEAD_DIM: usize = 64;
pub const DEFAULT_LAYERS: usize = 12;
pub const DEFAULT_THRESHOLD: f64 = 0.2;

const CONF_HIDDEN: usize = 128;

#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: DMatrix<f64>, // 2d x 2d
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>, // d x 2d
    pub b2: DVector<f64>,
}

impl Mlp {
    fn forward(&self, input: &DVector<f64>) -> DVector<f64> {
        let mut h = &self.w1 * input + &self.b1;
        h.apply(|v| *v = v.max(0.0));
        &self.w2 * h + &self.b2
    }
}

#[derive(Debug, Clone)]
pub struct SelfUnit {
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Rotary frequencies, (HEAD_DIM / 2) x 2; angles are freq * delta.
    pub freq: DMatrix<f64>,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct CrossUnit {
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct MatcherLayer {
    pub self_unit: SelfUnit,
    pub cross_unit: CrossUnit,
}

#[derive(Debug, Clone)]
pub struct MatcherWeights {
    pub layers: Vec<MatcherLayer>,
    pub sim_a: DMatrix<f64>,
    pub sim_b: DMatrix<f64>,
    pub match_a_w: DVector<f64>,
    pub match_a_b: f64,
    pub match_b_w: DVector<f64>,
    pub match_b_b: f64,
    pub conf_w1: DMatrix<f64>, // 128 x 384
    pub conf_b1: DVector<f64>,
    pub conf_w2: DVector<f64>, // 128
    pub conf_b2: f64,
}

/// Soft partial assignment P plus the per-side matchability vectors.
#[derive(Debug, Clone)]
pub struct AssignmentMatrix {
    pub p: DMatrix<f64>,
    pub sigma_a: DVector<f64>,
    pub sigma_b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub probability: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

// ---------------------------------------------------------------------------
// rotary encoding

/// In-place rotary action: rotates consecutive pairs of `vec` by the angles
/// freq * delta. `vec` has HEAD_DIM entries, freq has HEAD_DIM/2 rows.
pub fn rotary_apply(freq: &DMatrix<f64>, delta: (f64, f64), vec: &mut [f64]) {
    debug_assert_eq!(vec.len(), 2 * freq.nrows());
    for m in 0..freq.nrows() {
        let theta = freq[(m, 0)] * delta.0 + freq[(m, 1)] * delta.1;
        let (s, c) = theta.sin_cos();
        let a = vec[2 * m];
        let b = vec[2 * m + 1];
        vec[2 * m] = c * a - s * b;
        vec[2 * m + 1] = s * a + c * b;
    }
}

/// Explicit block-diagonal rotation matrix R_P(delta). Only used by oracles
/// and demos; the hot path applies the paired rotations directly.
pub fn rotary_matrix(freq: &DMatrix<f64>, delta: (f64, f64)) -> DMatrix<f64> {
    let d = 2 * freq.nrows();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..freq.nrows() {
        let theta = freq[(i, 0)] * delta.0 + freq[(i, 1)] * delta.1;
        let (s, c) = theta.sin_cos();
        m[(2 * i, 2 * i)] = c;
        m[(2 * i, 2 * i + 1)] = -s;
        m[(2 * i + 1, 2 * i)] = s;
        m[(2 * i + 1, 2 * i + 1)] = c;
    }
    m
}

// ---------------------------------------------------------------------------
// attention

fn check_dims(a: &DescriptorSet, b: &DescriptorSet) -> Result<()> {
    if a.dim() != DIM || b.dim() != DIM {
        return Err(Error::ShapeMismatch {
            expected: format!("{DIM}-d descriptors"),
            got: format!("{}/{}", a.dim(), b.dim()),
        });
    }
    Ok(())
}

/// Row-wise projection: X (K x d) times W^T, giving K x d projected vectors.
fn project(x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    x * w.transpose()
}

fn softmax_weights(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let denom = invariant_sum(exps.iter().copied());
    exps.iter().map(|&e| e / denom).collect()
}

/// Aggregates messages sum_j a_ij v_j with order-invariant summation.
fn aggregate(weights: &[f64], values: &DMatrix<f64>, head: usize, out: &mut DVector<f64>) {
    let base = head * HEAD_DIM;
    for ch in 0..HEAD_DIM {
        let products: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(j, &w)| w * values[(j, base + ch)])
            .collect();
        out[base + ch] = invariant_sum(products.iter().copied());
    }
}

fn self_attention_update(
    x: &mut DMatrix<f64>,
    positions: &[(f64, f64)],
    unit: &SelfUnit,
) {
    let k_count = x.nrows();
    let q = project(x, &unit.q);
    let k = project(x, &unit.k);
    let v = project(x, &unit.v);
    let scale = 1.0 / (HEAD_DIM as f64).sqrt();

    // rotate q_i and k_i by their own position angles; the score then equals
    // q_i^T R(p_j - p_i) k_j because planar rotations compose additively
    let mut qr = q.clone();
    let mut kr = k.clone();
    let mut buf = [0.0f64; HEAD_DIM];
    let mut rotate_rows = |m: &mut DMatrix<f64>| {
        for i in 0..k_count {
            for h in 0..HEADS {
                let base = h * HEAD_DIM;
                for (ch, b) in buf.iter_mut().enumerate() {
                    *b = m[(i, base + ch)];
                }
                rotary_apply(&unit.freq, positions[i], &mut buf);
                for (ch, b) in buf.iter().enumerate() {
                    m[(i, base + ch)] = *b;
                }
            }
        }
    };
    rotate_rows(&mut qr);
    rotate_rows(&mut kr);

    let mut messages = DMatrix::zeros(k_count, DIM);
    let mut msg = DVector::zeros(DIM);
    for i in 0..k_count {
        for h in 0..HEADS {
            let base = h * HEAD_DIM;
            let scores: Vec<f64> = (0..k_count)
                .map(|j| {
                    let mut s = 0.0;
                    for ch in 0..HEAD_DIM {
                        s += qr[(i, base + ch)] * kr[(j, base + ch)];
                    }
                    s * scale
                })
                .collect();
            let w = softmax_weights(&scores);
            aggregate(&w, &v, h, &mut msg);
        }
        messages.row_mut(i).copy_from(&msg.transpose());
    }

    apply_mlp_residual(x, &messages, &unit.mlp);
}

fn apply_mlp_residual(x: &mut DMatrix<f64>, messages: &DMatrix<f64>, mlp: &Mlp) {
    let mut input = DVector::zeros(2 * DIM);
    for i in 0..x.nrows() {
        input.rows_mut(0, DIM).copy_from(&x.row(i).transpose());
        input.rows_mut(DIM, DIM).copy_from(&messages.row(i).transpose());
        let delta = mlp.forward(&input);
        for ch in 0..DIM {
            x[(i, ch)] += delta[ch];
        }
    }
}

/// Cross-attention scores per head, shared between both directions:
/// score(i, j) = k_a_i . k_b_j / sqrt(HEAD_DIM). The b->a pass uses this
/// matrix and the a->b pass uses its transpose.
pub fn cross_scores(
    x_a: &DMatrix<f64>,
    x_b: &DMatrix<f64>,
    unit: &CrossUnit,
) -> Vec<DMatrix<f64>> {
    let ka = project(x_a, &unit.k);
    let kb = project(x_b, &unit.k);
    let scale = 1.0 / (HEAD_DIM as f64).sqrt();
    (0..HEADS)
        .map(|h| {
            let base = h * HEAD_DIM;
            DMatrix::from_fn(x_a.nrows(), x_b.nrows(), |i, j| {
                let mut s = 0.0;
                for ch in 0..HEAD_DIM {
                    s += ka[(i, base + ch)] * kb[(j, base + ch)];
                }
                s * scale
            })
        })
        .collect()
}

fn cross_attention_update(x_a: &mut DMatrix<f64>, x_b: &mut DMatrix<f64>, unit: &CrossUnit) {
    let scores = cross_scores(x_a, x_b, unit);
    let va = project(x_a, &unit.v);
    let vb = project(x_b, &unit.v);

    let mut messages_a = DMatrix::zeros(x_a.nrows(), DIM);
    let mut messages_b = DMatrix::zeros(x_b.nrows(), DIM);
    let mut msg = DVector::zeros(DIM);
    for i in 0..x_a.nrows() {
        for (h, s) in scores.iter().enumerate() {
            let row: Vec<f64> = (0..x_b.nrows()).map(|j| s[(i, j)]).collect();
            let w = softmax_weights(&row);
            aggregate(&w, &vb, h, &mut msg);
        }
        messages_a.row_mut(i).copy_from(&msg.transpose());
    }
    for j in 0..x_b.nrows() {
        for (h, s) in scores.iter().enumerate() {
            let col: Vec<f64> = (0..x_a.nrows()).map(|i| s[(i, j)]).collect();
            let w = softmax_weights(&col);
            aggregate(&w, &va, h, &mut msg);
        }
        messages_b.row_mut(j).copy_from(&msg.transpose());
    }

    apply_mlp_residual(x_a, &messages_a, &unit.mlp);
    apply_mlp_residual(x_b, &messages_b, &unit.mlp);
}

/// Runs all layers, returning the descriptor pair after each layer.
pub fn attend_all_layers(
    desc_a: &DescriptorSet,
    desc_b: &DescriptorSet,
    weights: &MatcherWeights,
) -> Result<Vec<(DescriptorSet, DescriptorSet)>> {
    check_dims(desc_a, desc_b)?;
    let mut xa = desc_a.descriptors.clone();
    let mut xb = desc_b.descriptors.clone();
    let mut out = Vec::with_capacity(weights.layers.len());
    for layer in &weights.layers {
        self_attention_update(&mut xa, &desc_a.positions, &layer.self_unit);
        self_attention_update(&mut xb, &desc_b.positions, &layer.self_unit);
        cross_attention_update(&mut xa, &mut xb, &layer.cross_unit);
        out.push((
            DescriptorSet {
                descriptors: xa.clone(),
                positions: desc_a.positions.clone(),
            },
            DescriptorSet {
                descriptors: xb.clone(),
                positions: desc_b.positions.clone(),
            },
        ));
    }
    Ok(out)
}

/// L layers of self- then cross-attention with residual MLP updates.
pub fn attend(
    desc_a: &DescriptorSet,
    desc_b: &DescriptorSet,
    weights: &MatcherWeights,
) -> Result<(DescriptorSet, DescriptorSet)> {
    let mut all = attend_all_layers(desc_a, desc_b, weights)?;
    all.pop()
        .ok_or_else(|| Error::invalid("matcher has no layers"))
}

// ---------------------------------------------------------------------------
// assignment

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_softmax_terms(scores: &DMatrix<f64>, along_rows: bool) -> DMatrix<f64> {
    // log-sum-exp over k of each column (along_rows = true sums over row
    // index, i.e. normalizes each column)
    if along_rows {
        let mut out = scores.clone();
        for j in 0..scores.ncols() {
            let col: Vec<f64> = (0..scores.nrows()).map(|i| scores[(i, j)]).collect();
            let max = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + invariant_sum(col.iter().map(|&s| (s - max).exp())).ln();
            for i in 0..scores.nrows() {
                out[(i, j)] -= lse;
            }
        }
        out
    } else {
        let mut out = scores.clone();
        for i in 0..scores.nrows() {
            let row: Vec<f64> = (0..scores.ncols()).map(|j| scores[(i, j)]).collect();
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + invariant_sum(row.iter().map(|&s| (s - max).exp())).ln();
            for j in 0..scores.ncols() {
                out[(i, j)] -= lse;
            }
        }
        out
    }
}

/// P from raw similarity scores and matchability vectors:
/// P_ij = sigma_i sigma_j softmax_col(S)_ij softmax_row(S)_ij, computed in
/// the log domain.
pub fn assignment_from_scores(
    scores: &DMatrix<f64>,
    sigma_a: DVector<f64>,
    sigma_b: DVector<f64>,
) -> AssignmentMatrix {
    let col_sm = log_softmax_terms(scores, true);
    let row_sm = log_softmax_terms(scores, false);
    let p = DMatrix::from_fn(scores.nrows(), scores.ncols(), |i, j| {
        let log_p = sigma_a[i].ln() + sigma_b[j].ln() + col_sm[(i, j)] + row_sm[(i, j)];
        log_p.exp()
    });
    AssignmentMatrix { p, sigma_a, sigma_b }
}

/// Similarity scores S_ij = (sim_a f_i) . (sim_b f_j) on post-attention
/// descriptors, combined with the sigmoid matchability heads.
pub fn assignment(
    desc_a: &DescriptorSet,
    desc_b: &DescriptorSet,
    weights: &MatcherWeights,
) -> Result<AssignmentMatrix> {
    check_dims(desc_a, desc_b)?;
    let ua = project(&desc_a.descriptors, &weights.sim_a);
    let ub = project(&desc_b.descriptors, &weights.sim_b);
    let scores = &ua * ub.transpose();
    let sigma_a = DVector::from_fn(desc_a.len(), |i, _| {
        sigmoid(desc_a.descriptors.row(i).transpose().dot(&weights.match_a_w) + weights.match_a_b)
    });
    let sigma_b = DVector::from_fn(desc_b.len(), |j, _| {
        sigmoid(desc_b.descriptors.row(j).transpose().dot(&weights.match_b_w) + weights.match_b_b)
    });
    Ok(assignment_from_scores(&scores, sigma_a, sigma_b))
}

/// Confidence head: softplus(w2 . relu(W1 [f_i | f_j] + b1) + b2).
pub fn confidence(
    desc_a: &DescriptorSet,
    desc_b: &DescriptorSet,
    weights: &MatcherWeights,
    i: usize,
    j: usize,
) -> f64 {
    let mut input = DVector::zeros(2 * DIM);
    input.rows_mut(0, DIM).copy_from(&desc_a.descriptors.row(i).transpose());
    input.rows_mut(DIM, DIM).copy_from(&desc_b.descriptors.row(j).transpose());
    let mut h = &weights.conf_w1 * input + &weights.conf_b1;
    h.apply(|v| *v = v.max(0.0));
    let z = weights.conf_w2.dot(&h) + weights.conf_b2;
    // softplus keeps the solver weights nonnegative
    if z > 30.0 {
        z
    } else {
        (1.0 + z.exp()).ln()
    }
}

/// Mutual-argmax correspondence extraction with threshold gating; each
/// accepted pair gets a confidence weight from the confidence head.
pub fn extract_matches(
    assign: &AssignmentMatrix,
    desc_a: &DescriptorSet,
    desc_b: &DescriptorSet,
    weights: &MatcherWeights,
    threshold: f64,
) -> MatchSet {
    let p = &assign.p;
    let pairs = mutual_argmax(p, threshold)
        .into_iter()
        .map(|(i, j)| Match {
            a: i,
            b: j,
            probability: p[(i, j)],
            weight: confidence(desc_a, desc_b, weights, i, j),
        })
        .collect();
    MatchSet { pairs }
}

fn mutual_argmax(p: &DMatrix<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let argmax_row: Vec<Option<usize>> = (0..p.nrows())
        .map(|i| {
            (0..p.ncols()).max_by(|&a, &b| p[(i, a)].total_cmp(&p[(i, b)]))
        })
        .collect();
    let argmax_col: Vec<Option<usize>> = (0..p.ncols())
        .map(|j| {
            (0..p.nrows()).max_by(|&a, &b| p[(a, j)].total_cmp(&p[(b, j)]))
        })
        .collect();
    let mut out = Vec::new();
    for (i, &aj) in argmax_row.iter().enumerate() {
        if let Some(j) = aj {
            if argmax_col[j] == Some(i) && p[(i, j)] >= threshold {
                out.push((i, j));
            }
        }
    }
    out
}

/// Classical baseline: mutual nearest neighbors under cosine similarity.
/// Confidences are fixed at 1.
pub fn match_mutual_nn(
    desc_a: &DescriptorSet,
    desc_b: &DescriptorSet,
    threshold: f64,
) -> Result<MatchSet> {
    if desc_a.dim() != desc_b.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}-d descriptors", desc_a.dim()),
            got: format!("{}", desc_b.dim()),
        });
    }
    if desc_a.is_empty() || desc_b.is_empty() {
        return Ok(MatchSet::default());
    }
    let norm = |m: &DMatrix<f64>| -> Vec<f64> {
        (0..m.nrows()).map(|i| m.row(i).norm().max(1e-30)).collect()
    };
    let na = norm(&desc_a.descriptors);
    let nb = norm(&desc_b.descriptors);
    let sim = DMatrix::from_fn(desc_a.len(), desc_b.len(), |i, j| {
        desc_a.descriptors.row(i).dot(&desc_b.descriptors.row(j)) / (na[i] * nb[j])
    });
    let pairs = mutual_argmax(&sim, threshold)
        .into_iter()
        .map(|(i, j)| Match {
            a: i,
            b: j,
            probability: sim[(i, j)],
            weight: 1.0,
        })
        .collect();
    Ok(MatchSet { pairs })
}

// ---------------------------------------------------------------------------
// weights: seeded init and FMAP manifest IO

impl MatcherWeights {
    /// Deterministic random initialization (no trained weights available).
    pub fn seeded(seed: u64) -> Self {
        Self::seeded_with_layers(seed, DEFAULT_LAYERS)
    }

    pub fn seeded_with_layers(seed: u64, layer_count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3a7c_4e01);
        let mat = |rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64| {
            DMatrix::from_fn(r, c, |_, _| randn(rng) * scale)
        };
        let proj_scale = 1.0 / (DIM as f64).sqrt();
        let mlp = |rng: &mut ChaCha8Rng| Mlp {
            w1: mat(rng, 2 * DIM, 2 * DIM, 1.0 / (2.0 * DIM as f64).sqrt()),
            b1: DVector::zeros(2 * DIM),
            w2: mat(rng, DIM, 2 * DIM, 0.5 / (2.0 * DIM as f64).sqrt()),
            b2: DVector::zeros(DIM),
        };
        let layers = (0..layer_count)
            .map(|_| MatcherLayer {
                self_unit: SelfUnit {
                    q: mat(&mut rng, DIM, DIM, proj_scale),
                    k: mat(&mut rng, DIM, DIM, proj_scale),
                    v: mat(&mut rng, DIM, DIM, proj_scale),
                    freq: mat(&mut rng, HEAD_DIM / 2, 2, 4.0),
                    mlp: mlp(&mut rng),
                },
                cross_unit: CrossUnit {
                    k: mat(&mut rng, DIM, DIM, proj_scale),
                    v: mat(&mut rng, DIM, DIM, proj_scale),
                    mlp: mlp(&mut rng),
                },
            })
            .collect();
        MatcherWeights {
            layers,
            sim_a: mat(&mut rng, DIM, DIM, proj_scale),
            sim_b: mat(&mut rng, DIM, DIM, proj_scale),
            match_a_w: DVector::from_fn(DIM, |_, _| randn(&mut rng) * proj_scale),
            match_a_b: 0.0,
            match_b_w: DVector::from_fn(DIM, |_, _| randn(&mut rng) * proj_scale),
            match_b_b: 0.0,
            conf_w1: mat(&mut rng, CONF_HIDDEN, 2 * DIM, 1.0 / (2.0 * DIM as f64).sqrt()),
            conf_b1: DVector::zeros(CONF_HIDDEN),
            conf_w2: DVector::from_fn(CONF_HIDDEN, |_, _| randn(&mut rng) / (CONF_HIDDEN as f64).sqrt()),
            conf_b2: 0.5,
        }
    }

    fn named_tensors(&self) -> Vec<(String, DMatrix<f64>)> {
        let mut out: Vec<(String, DMatrix<f64>)> = Vec::new();
        let vec_as_mat = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        for (n, layer) in self.layers.iter().enumerate() {
            let s = &layer.self_unit;
            out.push((format!("layer{n}.self.q"), s.q.clone()));
            out.push((format!("layer{n}.self.k"), s.k.clone()));
            out.push((format!("layer{n}.self.v"), s.v.clone()));
            out.push((format!("layer{n}.self.freq"), s.freq.clone()));
            out.push((format!("layer{n}.self.mlp.w1"), s.mlp.w1.clone()));
            out.push((format!("layer{n}.self.mlp.b1"), vec_as_mat(&s.mlp.b1)));
            out.push((format!("layer{n}.self.mlp.w2"), s.mlp.w2.clone()));
            out.push((format!("layer{n}.self.mlp.b2"), vec_as_mat(&s.mlp.b2)));
            let c = &layer.cross_unit;
            out.push((format!("layer{n}.cross.k"), c.k.clone()));
            out.push((format!("layer{n}.cross.v"), c.v.clone()));
            out.push((format!("layer{n}.cross.mlp.w1"), c.mlp.w1.clone()));
            out.push((format!("layer{n}.cross.mlp.b1"), vec_as_mat(&c.mlp.b1)));
            out.push((format!("layer{n}.cross.mlp.w2"), c.mlp.w2.clone()));
            out.push((format!("layer{n}.cross.mlp.b2"), vec_as_mat(&c.mlp.b2)));
        }
        out.push(("sim.a".into(), self.sim_a.clone()));
        out.push(("sim.b".into(), self.sim_b.clone()));
        out.push(("matchability.a.w".into(), vec_as_mat(&self.match_a_w)));
        out.push(("matchability.a.b".into(), DMatrix::from_element(1, 1, self.match_a_b)));
        out.push(("matchability.b.w".into(), vec_as_mat(&self.match_b_w)));
        out.push(("matchability.b.b".into(), DMatrix::from_element(1, 1, self.match_b_b)));
        out.push(("conf.w1".into(), self.conf_w1.clone()));
        out.push(("conf.b1".into(), vec_as_mat(&self.conf_b1)));
        out.push(("conf.w2".into(), vec_as_mat(&self.conf_w2)));
        out.push(("conf.b2".into(), DMatrix::from_element(1, 1, self.conf_b2)));
        out
    }

    /// Writes one FMAP tensor per named weight plus a `manifest.txt` listing
    /// `name file` pairs. Returns the manifest path.
    pub fn save_manifest(&self, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut lines = Vec::new();
        for (name, m) in self.named_tensors() {
            let file = format!("{name}.fmap");
            let mut t = Tensor::zeros(m.nrows(), m.ncols(), 1);
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    *t.at_mut(r, c, 0) = m[(r, c)] as f32;
                }
            }
            t.write(dir.join(&file))?;
            lines.push(format!("{name} {file}"));
        }
        let manifest = dir.join("manifest.txt");
        std::fs::write(&manifest, lines.join("\n") + "\n")?;
        Ok(manifest)
    }

    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let text = std::fs::read_to_string(path)?;
        let mut tensors: HashMap<String, DMatrix<f64>> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (name, file) = match (it.next(), it.next()) {
                (Some(n), Some(f)) => (n, f),
                _ => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        msg: "expected `name file`".into(),
                    })
                }
            };
            let t = Tensor::read(dir.join(file))?;
            if t.channels != 1 {
                return Err(Error::Format(format!("{name}: weight tensors must have 1 channel")));
            }
            let m = DMatrix::from_fn(t.rows, t.cols, |r, c| t.at(r, c, 0) as f64);
            tensors.insert(name.to_string(), m);
        }
        Self::from_named_tensors(&tensors)
    }

    fn from_named_tensors(tensors: &HashMap<String, DMatrix<f64>>) -> Result<Self> {
        let get = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let m = tensors
                .get(name)
                .ok_or_else(|| Error::Format(format!("weight manifest missing tensor {name}")))?;
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name}: {rows}x{cols}"),
                    got: format!("{}x{}", m.nrows(), m.ncols()),
                });
            }
            Ok(m.clone())
        };
        let get_vec = |name: &str, len: usize| -> Result<DVector<f64>> {
            Ok(DVector::from_column_slice(get(name, len, 1)?.as_slice()))
        };
        let get_scalar = |name: &str| -> Result<f64> { Ok(get(name, 1, 1)?[(0, 0)]) };

        let layer_count = (0..)
            .take_while(|n| tensors.contains_key(&format!("layer{n}.self.q")))
            .count();
        if layer_count == 0 {
            return Err(Error::Format("weight manifest has no layers".into()));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for n in 0..layer_count {
            layers.push(MatcherLayer {
                self_unit: SelfUnit {
                    q: get(&format!("layer{n}.self.q"), DIM, DIM)?,
                    k: get(&format!("layer{n}.self.k"), DIM, DIM)?,
                    v: get(&format!("layer{n}.self.v"), DIM, DIM)?,
                    freq: get(&format!("layer{n}.self.freq"), HEAD_DIM / 2, 2)?,
                    mlp: Mlp {
                        w1: get(&format!("layer{n}.self.mlp.w1"), 2 * DIM, 2 * DIM)?,
                        b1: get_vec(&format!("layer{n}.self.mlp.b1"), 2 * DIM)?,
                        w2: get(&format!("layer{n}.self.mlp.w2"), DIM, 2 * DIM)?,
                        b2: get_vec(&format!("layer{n}.self.mlp.b2"), DIM)?,
                    },
                },
                cross_unit: CrossUnit {
                    k: get(&format!("layer{n}.cross.k"), DIM, DIM)?,
                    v: get(&format!("layer{n}.cross.v"), DIM, DIM)?,
                    mlp: Mlp {
                        w1: get(&format!("layer{n}.cross.mlp.w1"), 2 * DIM, 2 * DIM)?,
                        b1: get_vec(&format!("layer{n}.cross.mlp.b1"), 2 * DIM)?,
                        w2: get(&format!("layer{n}.cross.mlp.w2"), DIM, 2 * DIM)?,
                        b2: get_vec(&format!("layer{n}.cross.mlp.b2"), DIM)?,
                    },
                },
            });
        }
        Ok(MatcherWeights {
            layers,
            sim_a: get("sim.a", DIM, DIM)?,
            sim_b: get("sim.b", DIM, DIM)?,
            match_a_w: get_vec("matchability.a.w", DIM)?,
            match_a_b: get_scalar("matchability.a.b")?,
            match_b_w: get_vec("matchability.b.w", DIM)?,
            match_b_b: get_scalar("matchability.b.b")?,
            conf_w1: get("conf.w1", CONF_HIDDEN, 2 * DIM)?,
            conf_b1: get_vec("conf.b1", CONF_HIDDEN)?,
            conf_w2: get_vec("conf.w2", CONF_HIDDEN)?,
            conf_b2: get_scalar("conf.b2")?,
        })
    }
}
