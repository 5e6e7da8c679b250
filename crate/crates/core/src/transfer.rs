//! Inference-time grasp transfer: candidate frames around the object,
//! frozen-network code/pose fitting against cloud distance samples,
//! residual-threshold acceptance, and the naive / normalized-coordinate
//! baselines.

use nalgebra::{DVector, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{invert, FrameSet, RigidTransform};
use crate::neural::{
    inference_loss, LocalSurfaceModel, LossWeights, PoseGeometry, PoseRefinementCode, ShapeCode,
};
use crate::sampling::{cloud_unsigned_samples, PointCloud, SdfSample, SdfSampleSet};
use crate::training::{adam_step, AdamState};

/// A hypothesized grasp-region frame on the observed object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateFrame {
    pub index: usize,
    pub world: RigidTransform,
}

/// Candidate frames obtained by rotating `reference` about the vertical
/// axis through the world origin in `yaw_step` increments.
pub fn sample_candidates(reference: &RigidTransform, n: usize, yaw_step: f64) -> Vec<CandidateFrame> {
    sample_candidates_about(reference, n, yaw_step, &Vector3::zeros())
}

/// As [`sample_candidates`], but rotating about the vertical axis through
/// `center` (its z component is irrelevant).
pub fn sample_candidates_about(
    reference: &RigidTransform,
    n: usize,
    yaw_step: f64,
    center: &Vector3<f64>,
) -> Vec<CandidateFrame> {
    assert!(n >= 1, "need at least one candidate");
    assert!(yaw_step > 0.0, "yaw step must be positive");
    let pivot = Vector3::new(center.x, center.y, 0.0);
    (0..n)
        .map(|j| {
            let rot = RigidTransform::from_yaw(j as f64 * yaw_step);
            let world = RigidTransform {
                rotation: rot.rotation * reference.rotation,
                translation: rot.rotation * (reference.translation - pivot) + pivot,
            };
            CandidateFrame { index: j, world }
        })
        .collect()
}

/// Inference optimization settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferConfig {
    pub candidates: usize,
    pub yaw_step_deg: f64,
    pub iterations: usize,
    /// Samples drawn per optimization step from the in-sphere pool.
    pub minibatch: usize,
    pub learning_rate: f64,
    pub pose_lr_scale: f64,
    pub weights: LossWeights,
    /// Uniform unsigned-distance samples added around the cloud.
    pub cloud_samples: usize,
    /// Overrides the model's statistics-based acceptance threshold.
    pub accept_threshold: Option<f64>,
    /// Ramp the encoding mask over the fit so pose converges on coarse
    /// structure first.
    pub coarse_to_fine: bool,
    /// Vertical axis the candidate ring rotates about; defaults to the
    /// cloud's horizontal centroid.
    pub rotation_center: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            candidates: 12,
            yaw_step_deg: 30.0,
            iterations: 300,
            minibatch: 256,
            learning_rate: 1e-3,
            pose_lr_scale: 0.1,
            weights: LossWeights::default(),
            cloud_samples: 1000,
            accept_threshold: None,
            coarse_to_fine: true,
            rotation_center: None,
            seed: 0,
        }
    }
}

/// Outcome of fitting one candidate.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub candidate_index: usize,
    pub code: ShapeCode,
    pub pose: PoseRefinementCode,
    /// Mean |SDF| error over in-sphere samples after optimization;
    /// infinite when the sphere intersection stayed empty.
    pub residual: f64,
    pub accepted: bool,
}

/// An accepted candidate's world-frame grasp.
#[derive(Debug, Clone)]
pub struct GraspSolution {
    pub world_grasp: RigidTransform,
    pub fit: FitResult,
}

/// All per-candidate fits plus the accepted solutions sorted by residual.
#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub solutions: Vec<GraspSolution>,
    pub fits: Vec<FitResult>,
    pub threshold: f64,
}

fn acceptance_threshold(model: &LocalSurfaceModel, config: &TransferConfig) -> Result<f64> {
    if let Some(t) = config.accept_threshold {
        return Ok(t);
    }
    model
        .residual_stats
        .map(|s| s.acceptance_threshold())
        .ok_or_else(|| {
            Error::InvalidParameter(
                "model has no residual statistics; set an explicit acceptance threshold".into(),
            )
        })
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Optimizes a shape code and pose refinement code against `samples`
/// (world frame) from the given initialization, with the network frozen.
pub fn fit_candidate_from(
    model: &LocalSurfaceModel,
    samples: &SdfSampleSet,
    candidate: &CandidateFrame,
    config: &TransferConfig,
    init_code: ShapeCode,
    init_pose: PoseRefinementCode,
) -> Result<FitResult> {
    let threshold = acceptance_threshold(model, config)?;
    // re-express in the candidate frame
    let to_candidate = candidate.world.inverse();
    let local: Vec<SdfSample> = samples
        .samples
        .iter()
        .map(|s| SdfSample {
            position: to_candidate.apply(&s.position),
            ..*s
        })
        .collect();
    let local = SdfSampleSet { samples: local };

    let mut code = init_code;
    let mut pose = init_pose;
    let mut code_adam = AdamState::new(model.config.code_dim);
    let mut pose_adam = AdamState::new(9);
    let mut rng = StdRng::seed_from_u64(config.seed ^ splitmix(candidate.index as u64));
    let r = model.sphere_radius();
    let l = model.config.encoding.num_bands as f64;
    let ramp_end = (config.iterations as f64 * 0.3).max(1.0);

    for iter in 0..config.iterations {
        let alpha = if config.coarse_to_fine {
            (l * iter as f64 / ramp_end).min(l)
        } else {
            l
        };
        let geom = PoseGeometry::new(&pose);
        let pool: Vec<usize> = local
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| geom.warp(&s.position).norm() <= r)
            .map(|(i, _)| i)
            .collect();
        if pool.is_empty() {
            continue;
        }
        let batch = SdfSampleSet {
            samples: (0..config.minibatch.min(pool.len()))
                .map(|_| {
                    let mut s = local.samples[pool[rng.gen_range(0..pool.len())]];
                    s.shape_index = 0;
                    s
                })
                .collect(),
        };
        let (_, tape) = inference_loss(model, &code, &pose, &batch, &config.weights, alpha)?;
        let code_grad: Vec<f64> = tape.codes[0].iter().copied().collect();
        let mut code_values: Vec<f64> = code.0.iter().copied().collect();
        adam_step(&mut code_adam, &mut code_values, &code_grad, config.learning_rate)?;
        code.0 = DVector::from_vec(code_values);
        let mut arr = pose.as_array();
        adam_step(
            &mut pose_adam,
            &mut arr,
            &tape.poses[0],
            config.learning_rate * config.pose_lr_scale,
        )?;
        for k in 6..9 {
            arr[k] = arr[k].max(0.05);
        }
        pose = PoseRefinementCode::from_array(arr);
    }

    // final residual over the full in-sphere set
    let mut renumbered = local.clone();
    for s in &mut renumbered.samples {
        s.shape_index = 0;
    }
    let residual = match inference_loss(
        model,
        &code,
        &pose,
        &renumbered,
        &LossWeights {
            sdf: 1.0,
            shape: 0.0,
            translation: 0.0,
            scale: 0.0,
        },
        l,
    ) {
        Ok((_, tape)) => tape.sdf_residual_mean,
        Err(Error::EmptySampleSet) => f64::INFINITY,
        Err(e) => return Err(e),
    };

    Ok(FitResult {
        candidate_index: candidate.index,
        code,
        pose,
        residual,
        accepted: residual < threshold,
    })
}

/// [`fit_candidate_from`] starting at a zero shape code and the identity
/// pose refinement code.
pub fn fit_candidate(
    model: &LocalSurfaceModel,
    samples: &SdfSampleSet,
    candidate: &CandidateFrame,
    config: &TransferConfig,
) -> Result<FitResult> {
    fit_candidate_from(
        model,
        samples,
        candidate,
        config,
        ShapeCode::zeros(model.config.code_dim),
        PoseRefinementCode::identity(),
    )
}

/// Full transfer: builds unsigned-distance samples from the cloud, fits
/// every candidate independently, and returns accepted solutions sorted by
/// residual (empty, with per-candidate diagnostics, when nothing clears the
/// threshold).
pub fn transfer_grasp(
    model: &LocalSurfaceModel,
    cloud: &PointCloud,
    reference: &RigidTransform,
    config: &TransferConfig,
) -> Result<TransferOutcome> {
    if cloud.points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    let threshold = acceptance_threshold(model, config)?;
    let (lo, hi) = cloud.bounding_box();
    let pad = (hi - lo) * 0.10;
    let samples = cloud_unsigned_samples(
        cloud,
        (lo - pad, hi + pad),
        config.cloud_samples,
        config.seed,
    )?;

    let center = config.rotation_center.map(|c| Vector3::new(c[0], c[1], 0.0)).unwrap_or_else(|| {
        let mut c = Vector3::zeros();
        for p in &cloud.points {
            c += p;
        }
        c /= cloud.points.len() as f64;
        Vector3::new(c.x, c.y, 0.0)
    });
    let candidates = sample_candidates_about(
        reference,
        config.candidates,
        config.yaw_step_deg.to_radians(),
        &center,
    );

    let fits: Vec<FitResult> = candidates
        .par_iter()
        .map(|cand| fit_candidate(model, &samples, cand, config))
        .collect::<Result<_>>()?;

    // frame bookkeeping: T_AG comes from the model; the anchor entry is its
    // inverse so FrameSet's construction invariant reproduces it
    let frames = FrameSet::new(
        *reference,
        vec![model.align_to_grasp.inverse().to_affine()],
        0,
        candidates.iter().map(|c| c.world).collect(),
    )?;

    let mut solutions = Vec::new();
    for fit in &fits {
        if fit.accepted {
            let t_ca = invert(&fit.pose.warp()?)?;
            let world_grasp =
                crate::geometry::inference_grasp_pose(&frames, fit.candidate_index, &t_ca)?;
            solutions.push(GraspSolution {
                world_grasp,
                fit: fit.clone(),
            });
        }
    }
    solutions.sort_by(|a, b| a.fit.residual.partial_cmp(&b.fit.residual).unwrap());
    Ok(TransferOutcome {
        solutions,
        fits,
        threshold,
    })
}

/// The no-adaptation baseline: the demonstrated grasp, unchanged.
pub fn naive_transfer(anchor_grasp: &RigidTransform) -> RigidTransform {
    *anchor_grasp
}

/// Bounding-box normalization convention for the coordinate-space baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NocsConvention {
    /// Scale uniformly by the largest extent; the longest axis spans
    /// [0, 1] and the others are centered.
    Uniform,
    /// Scale each axis independently to [0, 1].
    PerAxis,
}

struct BoxNormalization {
    center: Vector3<f64>,
    scale: Vector3<f64>,
}

impl BoxNormalization {
    fn fit(points: &[Vector3<f64>], convention: NocsConvention) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointCloud);
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = hi - lo;
        let scale = match convention {
            NocsConvention::Uniform => {
                let m = extent.max();
                if m <= 0.0 {
                    return Err(Error::DegeneratePointSet);
                }
                Vector3::repeat(1.0 / m)
            }
            NocsConvention::PerAxis => {
                if extent.iter().any(|e| *e <= 0.0) {
                    return Err(Error::DegeneratePointSet);
                }
                Vector3::new(1.0 / extent.x, 1.0 / extent.y, 1.0 / extent.z)
            }
        };
        Ok(Self {
            center: (lo + hi) / 2.0,
            scale,
        })
    }

    fn to_nocs(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center).component_mul(&self.scale) + Vector3::repeat(0.5)
    }

    fn from_nocs(&self, n: &Vector3<f64>) -> Vector3<f64> {
        (n - Vector3::repeat(0.5)).component_div(&self.scale) + self.center
    }
}

/// Transfers `source_grasp` onto the target through bounding-box
/// normalized coordinates, then applies the injected yaw error about the
/// target's vertical center axis (simulating an imperfect canonical-pose
/// estimate). Grasp orientation passes through unchanged except for the
/// injected yaw.
pub fn nocs_transfer(
    source_points: &[Vector3<f64>],
    target_points: &[Vector3<f64>],
    source_grasp: &RigidTransform,
    injected_yaw_error: f64,
    convention: NocsConvention,
) -> Result<RigidTransform> {
    let source = BoxNormalization::fit(source_points, convention)?;
    let target = BoxNormalization::fit(target_points, convention)?;
    let nocs_pos = source.to_nocs(&source_grasp.translation);
    let raw_pos = target.from_nocs(&nocs_pos);
    let yaw = RigidTransform::from_yaw(injected_yaw_error);
    let pivot = Vector3::new(target.center.x, target.center.y, 0.0);
    Ok(RigidTransform {
        rotation: yaw.rotation * source_grasp.rotation,
        translation: yaw.rotation * (raw_pos - pivot) + pivot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::EncodingConfig;
    use crate::geometry::{ScaleCode, TwistVector};
    use crate::neural::{ModelConfig, ResidualStats, SdfEvaluator};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn single_candidate_is_the_reference() {
        let reference = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.2));
        let c = sample_candidates(&reference, 1, PI / 6.0);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].world, reference);
    }

    #[test]
    fn twelve_candidates_cover_the_circle() {
        let reference = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let c = sample_candidates(&reference, 12, PI / 6.0);
        assert_eq!(c.len(), 12);
        // positions all on the radius-0.1 circle, uniformly spread
        for (j, cand) in c.iter().enumerate() {
            let expected = PI / 6.0 * j as f64;
            let angle = cand.world.translation.y.atan2(cand.world.translation.x);
            let wrapped = (angle - expected + 3.0 * PI).rem_euclid(2.0 * PI) - PI;
            assert!(wrapped.abs() < 1e-12);
            assert_relative_eq!(cand.world.translation.norm(), 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn fourth_candidate_at_ninety_degrees_is_opposite() {
        let reference = RigidTransform::from_translation(Vector3::new(0.2, 0.0, 0.0));
        let c = sample_candidates(&reference, 4, PI / 2.0);
        let opposite = &c[2].world;
        assert_relative_eq!(
            opposite.translation,
            Vector3::new(-0.2, 0.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn candidates_rotate_about_the_given_center() {
        let reference = RigidTransform::from_translation(Vector3::new(0.3, 0.0, 0.1));
        let center = Vector3::new(0.3, 0.0, 0.0);
        let c = sample_candidates_about(&reference, 4, PI / 2.0, &center);
        // reference sits on the axis, so every candidate keeps its position
        for cand in &c {
            assert_relative_eq!(cand.world.translation, reference.translation, epsilon = 1e-12);
        }
    }

    #[test]
    fn naive_transfer_is_identity_on_transforms() {
        let id = RigidTransform::identity();
        assert_eq!(naive_transfer(&id), id);
        let t = RigidTransform::from_yaw(0.3)
            .compose(&RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0)));
        assert_eq!(naive_transfer(&t), t);
    }

    fn box_points(center: Vector3<f64>, half: Vector3<f64>) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for &sx in &[-1.0, 1.0] {
            for &sy in &[-1.0, 1.0] {
                for &sz in &[-1.0, 1.0] {
                    pts.push(center + Vector3::new(sx * half.x, sy * half.y, sz * half.z));
                }
            }
        }
        pts
    }

    #[test]
    fn nocs_identity_case() {
        let pts = box_points(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.2, 0.1, 0.15));
        let grasp = RigidTransform::from_yaw(0.4)
            .compose(&RigidTransform::from_translation(Vector3::new(0.25, 0.2, 0.35)));
        let out = nocs_transfer(&pts, &pts, &grasp, 0.0, NocsConvention::Uniform).unwrap();
        assert!((out.translation - grasp.translation).norm() < 1e-12);
        assert!((out.rotation - grasp.rotation).abs().max() < 1e-12);
    }

    #[test]
    fn nocs_uniform_scaling_doubles_offsets() {
        let src = box_points(Vector3::zeros(), Vector3::new(0.2, 0.1, 0.15));
        let dst = box_points(Vector3::zeros(), Vector3::new(0.4, 0.2, 0.3));
        let grasp = RigidTransform::from_translation(Vector3::new(0.2, 0.05, 0.1));
        let out = nocs_transfer(&src, &dst, &grasp, 0.0, NocsConvention::Uniform).unwrap();
        assert_relative_eq!(
            out.translation,
            Vector3::new(0.4, 0.1, 0.2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn nocs_injected_yaw_rotates_about_target_center() {
        let pts = box_points(Vector3::new(0.5, 0.0, 0.0), Vector3::new(0.1, 0.1, 0.1));
        let grasp = RigidTransform::from_translation(Vector3::new(0.6, 0.0, 0.05));
        let e = 40f64.to_radians();
        let out = nocs_transfer(&pts, &pts, &grasp, e, NocsConvention::Uniform).unwrap();
        // offset from the vertical axis through the center rotates by e
        let offset = Vector3::new(0.1, 0.0, 0.0);
        let expected = Vector3::new(0.5, 0.0, 0.0)
            + RigidTransform::from_yaw(e).rotation * offset
            + Vector3::new(0.0, 0.0, 0.05);
        assert_relative_eq!(out.translation, expected, epsilon = 1e-12);
    }

    #[test]
    fn nocs_rejects_degenerate_sets() {
        let flat: Vec<Vector3<f64>> = vec![Vector3::zeros(); 4];
        let ok = box_points(Vector3::zeros(), Vector3::repeat(0.1));
        assert!(matches!(
            nocs_transfer(&flat, &ok, &RigidTransform::identity(), 0.0, NocsConvention::Uniform),
            Err(Error::DegeneratePointSet)
        ));
        // a plane is fine under the uniform convention but degenerate per axis
        let plane: Vec<Vector3<f64>> = box_points(Vector3::zeros(), Vector3::new(0.1, 0.1, 0.0));
        assert!(nocs_transfer(&plane, &ok, &RigidTransform::identity(), 0.0, NocsConvention::Uniform).is_ok());
        assert!(matches!(
            nocs_transfer(&plane, &ok, &RigidTransform::identity(), 0.0, NocsConvention::PerAxis),
            Err(Error::DegeneratePointSet)
        ));
    }

    fn tiny_model(seed: u64) -> LocalSurfaceModel {
        let config = ModelConfig {
            hidden_width: 16,
            hidden_layers: 3,
            code_dim: 4,
            hyper_hidden: 8,
            hyper_predicted_layers: 2,
            encoding: EncodingConfig::new(2, 0, 100),
            sphere_radius: 0.6,
        };
        let mut m = LocalSurfaceModel::new(config, seed).unwrap();
        m.residual_stats = Some(ResidualStats {
            mean: 0.002,
            std: 0.001,
        });
        m
    }

    fn synthetic_samples(
        model: &LocalSurfaceModel,
        code: &ShapeCode,
        pose: &PoseRefinementCode,
        n: usize,
        seed: u64,
    ) -> SdfSampleSet {
        // targets generated by the model itself, so a perfect fit exists
        let eval = SdfEvaluator::new(model, code).unwrap();
        let alpha = model.config.encoding.num_bands as f64;
        let mut rng = StdRng::seed_from_u64(seed);
        SdfSampleSet {
            samples: (0..n)
                .map(|_| {
                    let p = Vector3::new(
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                    );
                    SdfSample {
                        position: p,
                        distance: eval.eval(pose, &p, alpha),
                        unsigned: false,
                        shape_index: 0,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn zero_iterations_returns_initial_residual() {
        let model = tiny_model(31);
        let gt_code = ShapeCode::zeros(model.config.code_dim);
        let gt_pose = PoseRefinementCode::identity();
        let samples = synthetic_samples(&model, &gt_code, &gt_pose, 64, 5);
        let candidate = CandidateFrame {
            index: 0,
            world: RigidTransform::identity(),
        };
        let config = TransferConfig {
            iterations: 0,
            ..TransferConfig::default()
        };
        let fit = fit_candidate(&model, &samples, &candidate, &config).unwrap();
        // initial codes are the generating ones here, so the fit is exact
        assert!(fit.residual < 1e-12);
        assert_eq!(fit.code, gt_code);
        assert_eq!(fit.pose.as_array(), gt_pose.as_array());
    }

    #[test]
    fn ground_truth_initialization_is_never_beaten() {
        let model = tiny_model(32);
        let mut rng = StdRng::seed_from_u64(6);
        let gt_code = ShapeCode(DVector::from_fn(model.config.code_dim, |_, _| {
            rng.gen_range(-0.01..0.01)
        }));
        let gt_pose = PoseRefinementCode {
            beta: TwistVector::new(
                Vector3::new(0.0, 0.0, 0.05),
                Vector3::new(0.01, -0.01, 0.0),
            ),
            scale: ScaleCode::identity(),
        };
        let samples = synthetic_samples(&model, &gt_code, &gt_pose, 128, 7);
        let candidate = CandidateFrame {
            index: 0,
            world: RigidTransform::identity(),
        };
        let config = TransferConfig {
            iterations: 60,
            minibatch: 64,
            coarse_to_fine: false,
            ..TransferConfig::default()
        };
        let from_gt = fit_candidate_from(
            &model,
            &samples,
            &candidate,
            &config,
            gt_code.clone(),
            gt_pose,
        )
        .unwrap();
        let from_default = fit_candidate(&model, &samples, &candidate, &config).unwrap();
        assert!(
            from_gt.residual <= from_default.residual + 1e-6,
            "gt-init residual {} vs default-init {}",
            from_gt.residual,
            from_default.residual
        );
    }

    #[test]
    fn candidate_order_does_not_change_results() {
        let model = tiny_model(33);
        let samples = synthetic_samples(
            &model,
            &ShapeCode::zeros(model.config.code_dim),
            &PoseRefinementCode::identity(),
            64,
            8,
        );
        let config = TransferConfig {
            iterations: 10,
            minibatch: 32,
            ..TransferConfig::default()
        };
        let mk = |index: usize, yaw: f64| CandidateFrame {
            index,
            world: RigidTransform::from_yaw(yaw),
        };
        let a = fit_candidate(&model, &samples, &mk(0, 0.0), &config).unwrap();
        let b = fit_candidate(&model, &samples, &mk(1, 0.4), &config).unwrap();
        // permuted evaluation order, same indices
        let b2 = fit_candidate(&model, &samples, &mk(1, 0.4), &config).unwrap();
        let a2 = fit_candidate(&model, &samples, &mk(0, 0.0), &config).unwrap();
        assert_eq!(a.residual, a2.residual);
        assert_eq!(b.residual, b2.residual);
        assert_eq!(a.pose.as_array(), a2.pose.as_array());
        assert_eq!(b.code, b2.code);
    }

    #[test]
    fn transfer_with_no_matching_surface_returns_diagnostics() {
        let mut model = tiny_model(34);
        // force an unreachably tight threshold
        model.residual_stats = Some(ResidualStats {
            mean: 1e-9,
            std: 0.0,
        });
        let cloud = PointCloud::new(
            (0..100)
                .map(|i| {
                    let t = i as f64 / 100.0;
                    Vector3::new(t - 0.5, (t * 7.0).sin() * 0.4, 0.0)
                })
                .collect(),
        );
        let config = TransferConfig {
            candidates: 3,
            iterations: 5,
            minibatch: 32,
            cloud_samples: 50,
            ..TransferConfig::default()
        };
        let outcome =
            transfer_grasp(&model, &cloud, &RigidTransform::identity(), &config).unwrap();
        assert!(outcome.solutions.is_empty());
        assert_eq!(outcome.fits.len(), 3);
        for fit in &outcome.fits {
            assert!(!fit.accepted);
            assert!(fit.residual.is_finite());
        }
    }

    #[test]
    fn solutions_are_sorted_by_residual() {
        let model = tiny_model(35);
        let cloud = PointCloud::new(
            (0..200)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / 200.0;
                    Vector3::new(0.3 * a.cos(), 0.3 * a.sin(), 0.1 * (3.0 * a).sin())
                })
                .collect(),
        );
        let config = TransferConfig {
            candidates: 4,
            yaw_step_deg: 90.0,
            iterations: 8,
            minibatch: 32,
            cloud_samples: 64,
            accept_threshold: Some(f64::INFINITY),
            ..TransferConfig::default()
        };
        let outcome =
            transfer_grasp(&model, &cloud, &RigidTransform::identity(), &config).unwrap();
        assert_eq!(outcome.solutions.len(), 4);
        for w in outcome.solutions.windows(2) {
            assert!(w[0].fit.residual <= w[1].fit.residual);
        }
    }
}
