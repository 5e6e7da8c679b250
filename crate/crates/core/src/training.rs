//! Joint optimization of network parameters, shape codes, and pose
//! refinement codes over sphere-filtered local-surface samples.
//!
//! The anchor shape's pose code is pinned to the identity for the entire
//! run, so the alignment frame coincides with the anchor's demonstration
//! frame and `align_to_grasp` is the identity by construction. The sphere
//! gate is re-evaluated from each shape's current warp at every step:
//! minibatches are drawn only from currently in-sphere samples, with
//! replacement so batch sizes stay constant.

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{invert, AffineTransform, FrameSet, RigidTransform};
use crate::neural::{
    batch_loss, GradientTape, LocalSurfaceModel, LossWeights, ModelConfig, PoseGeometry,
    PoseRefinementCode, ResidualStats, ShapeCode,
};
use crate::sampling::{SdfSample, SdfSampleSet};

/// Training-run hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    /// Learning-rate multiplier for pose refinement codes.
    pub pose_lr_scale: f64,
    pub weights: LossWeights,
    pub iterations: usize,
    /// Samples drawn per shape per step.
    pub minibatch: usize,
    pub anchor_index: usize,
    /// Cylinder-model mode: β and C stay at their initial values.
    pub freeze_pose_codes: bool,
    /// Shape-alignment mode: C stays exactly (1, 1, 1).
    pub freeze_scale_codes: bool,
    /// Shape-code initialization sigma.
    pub code_init_sigma: f64,
    /// Optional starting pose codes (defaults to the identity for every
    /// shape). The anchor's entry must be the identity.
    #[serde(default)]
    pub initial_poses: Option<Vec<PoseRefinementCode>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            pose_lr_scale: 0.1,
            weights: LossWeights::default(),
            iterations: 20_000,
            minibatch: 512,
            anchor_index: 0,
            freeze_pose_codes: false,
            freeze_scale_codes: false,
            code_init_sigma: 1e-4,
            initial_poses: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, corpus_len: usize) -> Result<()> {
        self.model.validate()?;
        if self.learning_rate <= 0.0 || self.pose_lr_scale <= 0.0 {
            return Err(Error::InvalidParameter("learning rates must be positive".into()));
        }
        if self.iterations == 0 || self.minibatch == 0 {
            return Err(Error::InvalidParameter(
                "iterations and minibatch must be positive".into(),
            ));
        }
        if self.anchor_index >= corpus_len {
            return Err(Error::IndexOutOfRange {
                index: self.anchor_index,
                len: corpus_len,
            });
        }
        if let Some(poses) = &self.initial_poses {
            if poses.len() != corpus_len {
                return Err(Error::DimensionMismatch {
                    expected: corpus_len,
                    got: poses.len(),
                });
            }
            let anchor = &poses[self.anchor_index];
            if anchor.as_array() != PoseRefinementCode::identity().as_array() {
                return Err(Error::InvalidParameter(
                    "the anchor's initial pose code must be the identity".into(),
                ));
            }
        }
        Ok(())
    }
}

/// First/second-moment state for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], gradients: &[f64], lr: f64) -> Result<()> {
    if params.len() != state.m.len() || gradients.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            got: params.len().max(gradients.len()),
        });
    }
    state.step += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(gradients)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// One recorded loss-history row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub sdf_residual: f64,
    pub alpha: f64,
    /// Number of in-sphere samples drawn this step across shapes.
    pub retained: usize,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainedBundle {
    pub model: LocalSurfaceModel,
    pub codes: Vec<ShapeCode>,
    pub poses: Vec<PoseRefinementCode>,
    pub loss_history: Vec<LossRecord>,
    /// Per-shape in-sphere counts sampled every 50 iterations, for
    /// diagnosing the dynamic sphere gate.
    pub gate_history: Vec<(usize, Vec<usize>)>,
    pub world_to_demo: RigidTransform,
    pub anchor_index: usize,
}

impl TrainedBundle {
    /// Frame bookkeeping for grasp recovery: `demo_to_align[i]` is the
    /// inverse of shape i's learned warp.
    pub fn frame_set(&self, candidates: Vec<RigidTransform>) -> Result<FrameSet> {
        let demo_to_align: Vec<AffineTransform> = self
            .poses
            .iter()
            .map(|p| invert(&p.warp()?))
            .collect::<Result<_>>()?;
        FrameSet::new(self.world_to_demo, demo_to_align, self.anchor_index, candidates)
    }

    /// Predicted world-frame grasp for training shape `i`.
    pub fn grasp_pose(&self, i: usize) -> Result<RigidTransform> {
        let frames = self.frame_set(Vec::new())?;
        crate::geometry::training_grasp_pose(&frames, i)
    }
}

/// Count of samples currently inside the sphere under a pose's warp.
fn in_sphere_indices(samples: &SdfSampleSet, pose: &PoseRefinementCode, r: f64) -> Vec<usize> {
    let geom = PoseGeometry::new(pose);
    samples
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| geom.warp(&s.position).norm() <= r)
        .map(|(i, _)| i)
        .collect()
}

/// Jointly trains the network, shape codes, and pose codes on per-shape
/// sample sets already expressed in the demonstration frame.
///
/// Shapes whose sphere intersection is empty at a step are skipped for
/// that step (and listed in `gate_history`); training aborts with a
/// diagnostic if the loss turns non-finite.
pub fn train(
    corpus: &[SdfSampleSet],
    world_to_demo: RigidTransform,
    config: &TrainConfig,
) -> Result<TrainedBundle> {
    if corpus.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    config.validate(corpus.len())?;
    let n_shapes = corpus.len();
    let mut model = LocalSurfaceModel::new(config.model, config.seed)?;
    let mut rng = StdRng::seed_from_u64(config.seed.wrapping_add(0x9e3779b97f4a7c15));

    let mut codes: Vec<ShapeCode> = (0..n_shapes)
        .map(|_| ShapeCode::random(config.model.code_dim, config.code_init_sigma, &mut rng))
        .collect();
    let mut poses = config
        .initial_poses
        .clone()
        .unwrap_or_else(|| vec![PoseRefinementCode::identity(); n_shapes]);

    let mut model_adam = AdamState::new(model.params.len());
    let mut code_adam: Vec<AdamState> = (0..n_shapes)
        .map(|_| AdamState::new(config.model.code_dim))
        .collect();
    let mut pose_adam: Vec<AdamState> = (0..n_shapes).map(|_| AdamState::new(9)).collect();

    let r = config.model.sphere_radius;
    let mut loss_history = Vec::with_capacity(config.iterations);
    let mut gate_history = Vec::new();
    let mut warned_empty = vec![false; n_shapes];

    for iter in 0..config.iterations {
        let alpha = config.model.encoding.alpha_at(iter);

        // Re-evaluate the sphere gate against each shape's current warp and
        // draw this step's minibatch from the in-sphere pool.
        let mut batch = SdfSampleSet::default();
        let mut gate_counts = vec![0usize; n_shapes];
        for (i, shape_samples) in corpus.iter().enumerate() {
            let pool = in_sphere_indices(shape_samples, &poses[i], r);
            gate_counts[i] = pool.len();
            if pool.is_empty() {
                if !warned_empty[i] {
                    eprintln!(
                        "warning: shape {i} has no samples inside the sphere at iteration {iter}; skipping it this step"
                    );
                    warned_empty[i] = true;
                }
                continue;
            }
            for _ in 0..config.minibatch {
                let pick = pool[rng.gen_range(0..pool.len())];
                let mut s: SdfSample = shape_samples.samples[pick];
                s.shape_index = i as u32;
                batch.samples.push(s);
            }
        }
        if iter % 50 == 0 {
            gate_history.push((iter, gate_counts));
        }
        if batch.is_empty() {
            return Err(Error::Divergence(format!(
                "no shape has in-sphere samples at iteration {iter}"
            )));
        }

        let (total, tape) = batch_loss(&model, &codes, &poses, &batch, &config.weights, alpha)?;
        if !total.is_finite() {
            return Err(Error::Divergence(format!(
                "loss became non-finite at iteration {iter}"
            )));
        }

        apply_updates(
            &mut model,
            &mut codes,
            &mut poses,
            &tape,
            config,
            &mut model_adam,
            &mut code_adam,
            &mut pose_adam,
        )?;

        loss_history.push(LossRecord {
            iteration: iter,
            total,
            sdf_residual: tape.sdf_residual_mean,
            alpha,
            retained: tape.retained,
        });
    }

    // Final per-shape residuals over each shape's full in-sphere set.
    let residuals = per_shape_residuals(&model, &codes, &poses, corpus)?;
    let finite: Vec<f64> = residuals.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    let var = finite
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / finite.len().max(1) as f64;
    model.residual_stats = Some(ResidualStats {
        mean,
        std: var.sqrt(),
    });
    // anchor is pinned at identity, so this is the identity by construction
    model.align_to_grasp =
        crate::geometry::anchor_align_to_grasp(&invert(&poses[config.anchor_index].warp()?)?)?;

    Ok(TrainedBundle {
        model,
        codes,
        poses,
        loss_history,
        gate_history,
        world_to_demo,
        anchor_index: config.anchor_index,
    })
}

#[allow(clippy::too_many_arguments)]
fn apply_updates(
    model: &mut LocalSurfaceModel,
    codes: &mut [ShapeCode],
    poses: &mut [PoseRefinementCode],
    tape: &GradientTape,
    config: &TrainConfig,
    model_adam: &mut AdamState,
    code_adam: &mut [AdamState],
    pose_adam: &mut [AdamState],
) -> Result<()> {
    let model_grad = tape
        .model
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("training tape lacks model gradients".into()))?;
    adam_step(model_adam, &mut model.params, model_grad, config.learning_rate)?;

    for (i, code) in codes.iter_mut().enumerate() {
        let grad: Vec<f64> = tape.codes[i].iter().copied().collect();
        let mut values: Vec<f64> = code.0.iter().copied().collect();
        adam_step(&mut code_adam[i], &mut values, &grad, config.learning_rate)?;
        code.0 = DVector::from_vec(values);
    }

    let pose_lr = config.learning_rate * config.pose_lr_scale;
    for (i, pose) in poses.iter_mut().enumerate() {
        // the anchor stays pinned to the identity; frozen codes skip the
        // optimizer entirely so their state remains bitwise unchanged
        if i == config.anchor_index || config.freeze_pose_codes {
            continue;
        }
        let mut arr = pose.as_array();
        let mut grad = tape.poses[i];
        if config.freeze_scale_codes {
            grad[6] = 0.0;
            grad[7] = 0.0;
            grad[8] = 0.0;
        }
        adam_step(&mut pose_adam[i], &mut arr, &grad, pose_lr)?;
        if config.freeze_scale_codes {
            arr[6] = 1.0;
            arr[7] = 1.0;
            arr[8] = 1.0;
        } else {
            // keep the scale in its valid (strictly positive) range
            for k in 6..9 {
                arr[k] = arr[k].max(0.05);
            }
        }
        *pose = PoseRefinementCode::from_array(arr);
    }
    Ok(())
}

/// Mean |SDF residual| per shape over its full in-sphere sample set; ∞ for
/// shapes with an empty sphere intersection.
pub fn per_shape_residuals(
    model: &LocalSurfaceModel,
    codes: &[ShapeCode],
    poses: &[PoseRefinementCode],
    corpus: &[SdfSampleSet],
) -> Result<Vec<f64>> {
    let alpha = model.config.encoding.num_bands as f64;
    let mut out = Vec::with_capacity(corpus.len());
    for (i, samples) in corpus.iter().enumerate() {
        let mut renumbered = samples.clone();
        for s in &mut renumbered.samples {
            s.shape_index = 0;
        }
        match crate::neural::inference_loss(
            model,
            &codes[i],
            &poses[i],
            &renumbered,
            &LossWeights {
                sdf: 1.0,
                shape: 0.0,
                translation: 0.0,
                scale: 0.0,
            },
            alpha,
        ) {
            Ok((_, tape)) => out.push(tape.sdf_residual_mean),
            Err(Error::EmptySampleSet) => out.push(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Writes the loss history as CSV (iteration, total, sdf_residual, alpha,
/// retained).
pub fn save_loss_history(history: &[LossRecord], path: &std::path::Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::Csv)?;
    writer
        .write_record(["iteration", "total", "sdf_residual", "alpha", "retained"])
        .map_err(Error::Csv)?;
    for rec in history {
        writer
            .write_record([
                rec.iteration.to_string(),
                format!("{:.12e}", rec.total),
                format!("{:.12e}", rec.sdf_residual),
                format!("{:.6}", rec.alpha),
                rec.retained.to_string(),
            ])
            .map_err(Error::Csv)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-shape alignment outcome against recorded ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub shape_index: usize,
    pub recovered: RigidTransform,
    pub ground_truth: Option<RigidTransform>,
    pub rotation_error_deg: Option<f64>,
    pub translation_error: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TwistVector;
    use approx::assert_relative_eq;

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut state = AdamState::new(3);
        let mut params = vec![1.0, -2.0, 0.5];
        let orig = params.clone();
        for _ in 0..5 {
            adam_step(&mut state, &mut params, &[0.0, 0.0, 0.0], 1e-2).unwrap();
        }
        assert_eq!(params, orig);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        // from zero moments with gradient g: m̂ = g, v̂ = g², so the update
        // is -lr·g/(|g| + ε) ≈ -lr·sign(g)
        let mut state = AdamState::new(2);
        let mut params = vec![0.0, 0.0];
        adam_step(&mut state, &mut params, &[3.0, -0.25], 1e-3).unwrap();
        assert_relative_eq!(params[0], -1e-3, max_relative = 1e-6);
        assert_relative_eq!(params[1], 1e-3, max_relative = 1e-6);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        // with a constant gradient the moment recursions converge to
        // m̂ = g and v̂ = g², so steps tend to lr in magnitude
        let mut state = AdamState::new(1);
        let mut params = vec![10.0];
        let mut prev = params[0];
        let mut last_step = 0.0;
        for _ in 0..500 {
            adam_step(&mut state, &mut params, &[2.5], 1e-3).unwrap();
            last_step = prev - params[0];
            prev = params[0];
        }
        assert_relative_eq!(last_step, 1e-3, max_relative = 1e-6);
    }

    #[test]
    fn adam_shape_mismatch_rejected() {
        let mut state = AdamState::new(2);
        let mut params = vec![0.0, 0.0];
        assert!(adam_step(&mut state, &mut params, &[1.0], 1e-3).is_err());
    }

    fn tiny_train_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                hidden_width: 16,
                hidden_layers: 2,
                code_dim: 4,
                hyper_hidden: 8,
                hyper_predicted_layers: 2,
                encoding: crate::encoding::EncodingConfig::new(2, 0, iterations / 3),
                sphere_radius: 1.0,
            },
            learning_rate: 1e-3,
            pose_lr_scale: 1.0,
            weights: LossWeights::default(),
            iterations,
            minibatch: 32,
            anchor_index: 0,
            freeze_pose_codes: false,
            freeze_scale_codes: false,
            code_init_sigma: 1e-4,
            initial_poses: None,
            seed: 42,
        }
    }

    fn sphere_corpus(offsets: &[Vector3<f64>]) -> Vec<SdfSampleSet> {
        // points labeled by the SDF of a sphere of radius 0.3 around each
        // shape's offset
        offsets
            .iter()
            .map(|off| {
                let mut rng = StdRng::seed_from_u64(7);
                SdfSampleSet {
                    samples: (0..256)
                        .map(|_| {
                            let p = Vector3::new(
                                rng.gen_range(-0.6..0.6),
                                rng.gen_range(-0.6..0.6),
                                rng.gen_range(-0.6..0.6),
                            ) + off;
                            SdfSample {
                                position: p,
                                distance: (p - off).norm() - 0.3,
                                unsigned: false,
                                shape_index: 0,
                            }
                        })
                        .collect(),
                }
            })
            .collect()
    }

    #[test]
    fn frozen_pose_codes_stay_bitwise_identical() {
        let corpus = sphere_corpus(&[Vector3::zeros(), Vector3::new(0.2, 0.0, 0.0)]);
        let mut config = tiny_train_config(40);
        config.freeze_pose_codes = true;
        let bundle = train(&corpus, RigidTransform::identity(), &config).unwrap();
        for pose in &bundle.poses {
            assert_eq!(pose.as_array(), PoseRefinementCode::identity().as_array());
        }
    }

    #[test]
    fn frozen_scale_codes_stay_exactly_one() {
        let corpus = sphere_corpus(&[Vector3::zeros(), Vector3::new(0.2, 0.0, 0.0)]);
        let mut config = tiny_train_config(60);
        config.freeze_scale_codes = true;
        let bundle = train(&corpus, RigidTransform::identity(), &config).unwrap();
        for pose in &bundle.poses {
            assert_eq!(pose.scale.c, Vector3::new(1.0, 1.0, 1.0));
        }
        // but the twists were free to move
        assert!(bundle.poses[1].beta.as_array().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn anchor_pose_is_pinned_and_align_to_grasp_identity() {
        let corpus = sphere_corpus(&[Vector3::zeros(), Vector3::new(0.15, 0.1, 0.0)]);
        let config = tiny_train_config(60);
        let bundle = train(&corpus, RigidTransform::identity(), &config).unwrap();
        assert_eq!(
            bundle.poses[0].as_array(),
            PoseRefinementCode::identity().as_array()
        );
        let t_ag = bundle.model.align_to_grasp;
        assert!((t_ag.rotation - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
        assert!(t_ag.translation.norm() < 1e-12);
        assert!(bundle.model.residual_stats.is_some());
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = sphere_corpus(&[Vector3::zeros(), Vector3::new(0.1, 0.0, 0.1)]);
        let config = tiny_train_config(50);
        let a = train(&corpus, RigidTransform::identity(), &config).unwrap();
        let b = train(&corpus, RigidTransform::identity(), &config).unwrap();
        assert_eq!(
            a.loss_history.last().unwrap().total,
            b.loss_history.last().unwrap().total
        );
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn gated_out_shape_reenters_mid_training() {
        // Shape 1's surface sits at the origin but its initial warp pushes
        // every sample outside the sphere. The translation regularizer
        // shrinks the twist each step, so the samples re-enter the
        // dynamically re-evaluated gate partway through training.
        let corpus = sphere_corpus(&[Vector3::zeros(), Vector3::zeros()]);
        let mut config = tiny_train_config(200);
        config.model.sphere_radius = 1.0;
        config.pose_lr_scale = 10.0;
        config.initial_poses = Some(vec![
            PoseRefinementCode::identity(),
            PoseRefinementCode {
                beta: TwistVector::new(Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0)),
                scale: crate::geometry::ScaleCode::identity(),
            },
        ]);
        assert_eq!(
            in_sphere_indices(
                &corpus[1],
                &config.initial_poses.as_ref().unwrap()[1],
                1.0
            )
            .len(),
            0
        );
        let bundle = train(&corpus, RigidTransform::identity(), &config).unwrap();
        let first = &bundle.gate_history.first().unwrap().1;
        assert_eq!(first[1], 0, "shape 1 must start fully gated out");
        assert!(first[0] > 0);
        let reentered = bundle
            .gate_history
            .iter()
            .any(|(_, counts)| counts[1] > 0);
        assert!(
            reentered,
            "gate history never saw shape 1 re-enter: {:?}",
            bundle.gate_history
        );
    }

    #[test]
    fn divergent_loss_aborts_with_diagnostic() {
        let corpus = sphere_corpus(&[Vector3::zeros()]);
        let mut config = tiny_train_config(50);
        config.learning_rate = 1e200; // force overflow to non-finite
        let result = train(&corpus, RigidTransform::identity(), &config);
        match result {
            Err(Error::Divergence(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn loss_history_csv_round_trip() {
        let history = vec![
            LossRecord {
                iteration: 0,
                total: 1.5,
                sdf_residual: 0.01,
                alpha: 0.0,
                retained: 64,
            },
            LossRecord {
                iteration: 1,
                total: 1.2,
                sdf_residual: 0.008,
                alpha: 0.1,
                retained: 64,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        save_loss_history(&history, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iteration,total,sdf_residual,alpha,retained\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
