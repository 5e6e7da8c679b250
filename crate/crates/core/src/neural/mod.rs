//! SDF-Net / Hyper-Net model: shape codes, pose refinement codes, the
//! differentiable loss pipeline, and checkpoint I/O.
//!
//! Each shape is represented by a latent code fed to per-tensor hyper-MLPs
//! that emit the SDF network's weights, and by a pose refinement code
//! (se(3) twist + per-axis scale) whose warp carries query points into the
//! shared alignment frame. Training optimizes everything jointly; at
//! inference the network is frozen and only codes are fit.

mod checkpoint;
mod engine;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use engine::{hyper_backward, hyper_forward, HyperCache, PoseGeometry, PoseGrad};
pub use params::{init_params, ModelConfig, ModelLayout, SdfLayout, TensorDescriptor};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, ScaleCode, TwistVector};
use crate::sampling::SdfSampleSet;

/// Per-shape latent vector optimized by the auto-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCode(pub DVector<f64>);

impl ShapeCode {
    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    /// Zero-mean Gaussian initialization with a small sigma so early
    /// hypernetwork outputs stay near their bias values.
    pub fn random(dim: usize, sigma: f64, rng: &mut impl rand::Rng) -> Self {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        Self(DVector::from_fn(dim, |_, _| normal.sample(rng)))
    }
}

/// The pair (β, C): twist plus scale, defining the alignment warp `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRefinementCode {
    pub beta: TwistVector,
    pub scale: ScaleCode,
}

impl PoseRefinementCode {
    pub fn identity() -> Self {
        Self {
            beta: TwistVector::zero(),
            scale: ScaleCode::identity(),
        }
    }

    /// The nine free parameters in (ω, t, c) order.
    pub fn as_array(&self) -> [f64; 9] {
        let b = self.beta.as_array();
        let c = self.scale.as_array();
        [b[0], b[1], b[2], b[3], b[4], b[5], c[0], c[1], c[2]]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        Self {
            beta: TwistVector::from_array([a[0], a[1], a[2], a[3], a[4], a[5]]),
            scale: ScaleCode {
                c: Vector3::new(a[6], a[7], a[8]),
            },
        }
    }

    /// The affine warp `H = exp(β) · diag(C, 1)`.
    pub fn warp(&self) -> Result<crate::geometry::AffineTransform> {
        crate::geometry::compose_alignment(&self.beta, &self.scale)
    }
}

/// Mean and standard deviation of the final per-shape training residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub std: f64,
}

impl ResidualStats {
    pub fn acceptance_threshold(&self) -> f64 {
        self.mean + 2.0 * self.std
    }
}

/// A trained (or freshly initialized) local-surface model.
/// `residual_stats` is `None` until training populates it.
#[derive(Debug, Clone)]
pub struct LocalSurfaceModel {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub align_to_grasp: RigidTransform,
    pub residual_stats: Option<ResidualStats>,
}

impl LocalSurfaceModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: init_params(&config, seed),
            config,
            align_to_grasp: RigidTransform::identity(),
            residual_stats: None,
        })
    }

    pub fn layout(&self) -> ModelLayout {
        ModelLayout::new(&self.config)
    }

    pub fn sdf_layout(&self) -> SdfLayout {
        SdfLayout::new(&self.config)
    }

    pub fn sphere_radius(&self) -> f64 {
        self.config.sphere_radius
    }
}

/// Loss term weights; defaults follow the training recipe
/// (w₁ = 3·10³ on the L1 SDF term, w₂ = 10⁴ on shape codes, w₃ = 10² on
/// twist translations, w₄ = 2.5·10² on the scale deviation at inference).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sdf: f64,
    pub shape: f64,
    pub translation: f64,
    pub scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sdf: 3e3,
            shape: 1e4,
            translation: 1e2,
            scale: 2.5e2,
        }
    }
}

/// Exact partial derivatives of a loss evaluation with respect to every
/// trainable quantity, in the flat layouts used by the optimizer.
#[derive(Debug, Clone)]
pub struct GradientTape {
    pub model: Option<Vec<f64>>,
    pub codes: Vec<DVector<f64>>,
    pub poses: Vec<PoseGrad>,
    /// Mean |SDF residual| over retained (in-sphere) samples, unweighted.
    pub sdf_residual_mean: f64,
    pub retained: usize,
}

/// Evaluates one shape's SDF parameter set once per (model, code) pair so
/// grids and sample sweeps do not re-run the hypernetwork per point.
pub struct SdfEvaluator<'a> {
    model: &'a LocalSurfaceModel,
    sdf_layout: SdfLayout,
    sdf_params: Vec<f64>,
}

impl<'a> SdfEvaluator<'a> {
    pub fn new(model: &'a LocalSurfaceModel, code: &ShapeCode) -> Result<Self> {
        if code.0.len() != model.config.code_dim {
            return Err(Error::DimensionMismatch {
                expected: model.config.code_dim,
                got: code.0.len(),
            });
        }
        let layout = model.layout();
        let sdf_layout = model.sdf_layout();
        let mut sdf_params = vec![0.0; sdf_layout.total];
        hyper_forward(
            &model.config,
            &layout,
            &sdf_layout,
            &model.params,
            &code.0,
            &mut sdf_params,
            None,
        );
        Ok(Self {
            model,
            sdf_layout,
            sdf_params,
        })
    }

    /// Network value at an alignment-frame point (no pose warp).
    pub fn eval_aligned(&self, x: &Vector3<f64>, alpha: f64) -> f64 {
        let config = &self.model.config;
        let weights = crate::encoding::band_weights(alpha, config.encoding.num_bands);
        let mut e = vec![0.0; config.input_dim()];
        crate::encoding::encode_masked_into(&[x.x, x.y, x.z], &weights, &mut e);
        let mut h = DVector::from_vec(e);
        for l in 0..config.hidden_layers {
            let w = self.sdf_layout.view(&self.sdf_params, 2 * l);
            let b = self.sdf_layout.slice(&self.sdf_params, 2 * l + 1);
            let mut z = DVector::from_column_slice(b);
            z.gemv(1.0, &w, &h, 1.0);
            h = z.map(|v| v.max(0.0));
        }
        let hl = config.hidden_layers;
        let w_out = self.sdf_layout.view(&self.sdf_params, 2 * hl);
        let b_out = self.sdf_layout.slice(&self.sdf_params, 2 * hl + 1)[0];
        (w_out * &h)[(0, 0)] + b_out
    }

    /// Full pipeline value: warp `x` by the pose, then evaluate.
    pub fn eval(&self, pose: &PoseRefinementCode, x: &Vector3<f64>, alpha: f64) -> f64 {
        let geom = PoseGeometry::new(pose);
        self.eval_aligned(&geom.warp(x), alpha)
    }
}

/// Signed distance predicted for one query point through the full chain
/// (pose warp, masked encoding, hypernetwork-conditioned SDF-Net).
pub fn predict_sdf(
    model: &LocalSurfaceModel,
    code: &ShapeCode,
    pose: &PoseRefinementCode,
    x: &Vector3<f64>,
    alpha: f64,
) -> Result<f64> {
    Ok(SdfEvaluator::new(model, code)?.eval(pose, x, alpha))
}

struct LossOptions {
    trainable_network: bool,
    scale_penalty: bool,
}

fn loss_impl(
    model: &LocalSurfaceModel,
    codes: &[ShapeCode],
    poses: &[PoseRefinementCode],
    samples: &SdfSampleSet,
    weights: &LossWeights,
    alpha: f64,
    options: LossOptions,
) -> Result<(f64, GradientTape)> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if codes.len() != poses.len() {
        return Err(Error::DimensionMismatch {
            expected: codes.len(),
            got: poses.len(),
        });
    }
    let config = &model.config;
    let layout = model.layout();
    let sdf_layout = model.sdf_layout();
    let n_shapes = codes.len();
    let r = model.sphere_radius();

    // Group retained (in-sphere, under each shape's current warp) samples.
    let mut grouped: Vec<(Vec<Vector3<f64>>, Vec<f64>, Vec<bool>)> =
        vec![(Vec::new(), Vec::new(), Vec::new()); n_shapes];
    let geoms: Vec<PoseGeometry> = poses.iter().map(PoseGeometry::new).collect();
    for s in &samples.samples {
        let i = s.shape_index as usize;
        if i >= n_shapes {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: n_shapes,
            });
        }
        if geoms[i].warp(&s.position).norm() <= r {
            grouped[i].0.push(s.position);
            grouped[i].1.push(s.distance);
            grouped[i].2.push(s.unsigned);
        }
    }
    let retained: usize = grouped.iter().map(|g| g.0.len()).sum();
    if retained == 0 {
        return Err(Error::EmptySampleSet);
    }
    let loss_scale = weights.sdf / retained as f64;

    let mut model_grad = options
        .trainable_network
        .then(|| vec![0.0; layout.total]);
    let mut code_grads: Vec<DVector<f64>> =
        codes.iter().map(|c| DVector::zeros(c.0.len())).collect();
    let mut pose_grads: Vec<PoseGrad> = vec![[0.0; 9]; n_shapes];

    let mut abs_sum = 0.0;
    let mut sdf_params = vec![0.0; sdf_layout.total];
    let mut scratch = Vec::new();
    for i in 0..n_shapes {
        if grouped[i].0.is_empty() {
            continue;
        }
        if codes[i].0.len() != config.code_dim {
            return Err(Error::DimensionMismatch {
                expected: config.code_dim,
                got: codes[i].0.len(),
            });
        }
        let mut cache = HyperCache {
            z: vec![DVector::zeros(0); layout.head_tensors.len()],
        };
        hyper_forward(
            config,
            &layout,
            &sdf_layout,
            &model.params,
            &codes[i].0,
            &mut sdf_params,
            Some(&mut cache),
        );
        let out = engine::shape_pass(
            config,
            &layout,
            &sdf_layout,
            &model.params,
            &sdf_params,
            &codes[i].0,
            &geoms[i],
            &grouped[i].0,
            &grouped[i].1,
            &grouped[i].2,
            alpha,
            loss_scale,
            Some(engine::ShapeGradSink {
                hyper_cache: &cache,
                model_grad: model_grad.as_deref_mut(),
                code_grad: &mut code_grads[i],
                pose_grad: &mut pose_grads[i],
                sdf_grad_scratch: &mut scratch,
            }),
        );
        abs_sum += out.abs_error_sum;
    }

    // Regularizers (means over shapes so the scale is corpus-size free).
    let inv = 1.0 / n_shapes as f64;
    let mut reg = 0.0;
    for i in 0..n_shapes {
        reg += weights.shape * codes[i].0.norm_squared() * inv;
        code_grads[i].axpy(2.0 * weights.shape * inv, &codes[i].0, 1.0);
        let t = poses[i].beta.t;
        reg += weights.translation * t.norm_squared() * inv;
        for k in 0..3 {
            pose_grads[i][3 + k] += 2.0 * weights.translation * inv * t[k];
        }
        if options.scale_penalty {
            let dc = poses[i].scale.c - Vector3::repeat(1.0);
            reg += weights.scale * dc.norm_squared() * inv;
            for k in 0..3 {
                pose_grads[i][6 + k] += 2.0 * weights.scale * inv * dc[k];
            }
        }
    }

    let sdf_residual_mean = abs_sum / retained as f64;
    let total = weights.sdf * sdf_residual_mean + reg;
    Ok((
        total,
        GradientTape {
            model: model_grad,
            codes: code_grads,
            poses: pose_grads,
            sdf_residual_mean,
            retained,
        },
    ))
}

/// Training loss `w₁·L_SDF + w₂·L_shape + w₃·L_tr` over a multi-shape
/// minibatch, with analytic gradients for network parameters, shape codes,
/// and pose codes. Samples outside each shape's warped sphere are dropped.
pub fn batch_loss(
    model: &LocalSurfaceModel,
    codes: &[ShapeCode],
    poses: &[PoseRefinementCode],
    samples: &SdfSampleSet,
    weights: &LossWeights,
    alpha: f64,
) -> Result<(f64, GradientTape)> {
    loss_impl(
        model,
        codes,
        poses,
        samples,
        weights,
        alpha,
        LossOptions {
            trainable_network: true,
            scale_penalty: false,
        },
    )
}

/// Inference loss: the training terms plus `w₄·‖C − 1‖²`, with the network
/// frozen. Unsigned samples compare |prediction| against the target.
pub fn inference_loss(
    model: &LocalSurfaceModel,
    code: &ShapeCode,
    pose: &PoseRefinementCode,
    samples: &SdfSampleSet,
    weights: &LossWeights,
    alpha: f64,
) -> Result<(f64, GradientTape)> {
    loss_impl(
        model,
        std::slice::from_ref(code),
        std::slice::from_ref(pose),
        samples,
        weights,
        alpha,
        LossOptions {
            trainable_network: false,
            scale_penalty: true,
        },
    )
}

#[cfg(test)]
mod tests;
