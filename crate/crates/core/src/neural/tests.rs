use nalgebra::{DVector, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::encoding::EncodingConfig;
use crate::geometry::{ScaleCode, TwistVector};
use crate::sampling::{SdfSample, SdfSampleSet};
use approx::assert_relative_eq;

pub(crate) fn small_config() -> ModelConfig {
    ModelConfig {
        hidden_width: 16,
        hidden_layers: 5,
        code_dim: 4,
        hyper_hidden: 8,
        hyper_predicted_layers: 3,
        encoding: EncodingConfig::new(2, 0, 100),
        sphere_radius: 2.0,
    }
}

fn random_code(dim: usize, rng: &mut StdRng) -> ShapeCode {
    ShapeCode(DVector::from_fn(dim, |_, _| rng.gen_range(-0.5..0.5)))
}

fn random_pose(rng: &mut StdRng) -> PoseRefinementCode {
    PoseRefinementCode {
        beta: TwistVector::new(
            Vector3::new(
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            ),
            Vector3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            ),
        ),
        scale: ScaleCode::new(Vector3::new(
            rng.gen_range(0.8..1.3),
            rng.gen_range(0.8..1.3),
            rng.gen_range(0.8..1.3),
        ))
        .unwrap(),
    }
}

fn random_samples(
    n: usize,
    shapes: usize,
    unsigned: bool,
    rng: &mut StdRng,
) -> SdfSampleSet {
    SdfSampleSet {
        samples: (0..n)
            .map(|i| SdfSample {
                position: Vector3::new(
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.4..0.4),
                ),
                // keep targets far from the predictions so the L1 kink is
                // never straddled by finite-difference probes
                distance: rng.gen_range(0.5..1.5) * if unsigned { 1.0 } else { -1.0f64 }.powi(i as i32),
                unsigned,
                shape_index: (i % shapes) as u32,
            })
            .collect(),
    }
}

#[test]
fn hyper_forward_zero_code_equals_bias_propagation() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 11).unwrap();
    let layout = model.layout();
    let sdf_layout = model.sdf_layout();
    let mut sdf_params = vec![0.0; sdf_layout.total];
    hyper_forward(
        &config,
        &layout,
        &sdf_layout,
        &model.params,
        &DVector::zeros(config.code_dim),
        &mut sdf_params,
        None,
    );
    // manually: out = B·relu(a_b) + b_b for the first predicted tensor
    let [a_w, a_b, b_w, b_b] = layout.head_tensors[0];
    let _ = a_w;
    let u = DVector::from_column_slice(layout.slice(&model.params, a_b)).map(|v: f64| v.max(0.0));
    let expected = DVector::from_column_slice(layout.slice(&model.params, b_b))
        + layout.view(&model.params, b_w) * u;
    let got = sdf_layout.slice(&sdf_params, 0);
    for (g, e) in got.iter().zip(expected.iter()) {
        assert_relative_eq!(g, e, epsilon = 1e-15);
    }
}

#[test]
fn hyper_forward_distinct_codes_distinct_params() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 12).unwrap();
    let layout = model.layout();
    let sdf_layout = model.sdf_layout();
    let mut a = vec![0.0; sdf_layout.total];
    let mut b = vec![0.0; sdf_layout.total];
    let mut rng = StdRng::seed_from_u64(1);
    let ca = random_code(config.code_dim, &mut rng);
    let cb = random_code(config.code_dim, &mut rng);
    hyper_forward(&config, &layout, &sdf_layout, &model.params, &ca.0, &mut a, None);
    hyper_forward(&config, &layout, &sdf_layout, &model.params, &cb.0, &mut b, None);
    assert_ne!(a, b);
}

#[test]
fn hyper_forward_is_lipschitz_in_the_code() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 13).unwrap();
    let layout = model.layout();
    let sdf_layout = model.sdf_layout();
    let mut rng = StdRng::seed_from_u64(2);
    let code = random_code(config.code_dim, &mut rng);
    let delta = DVector::from_fn(config.code_dim, |_, _| rng.gen_range(-1e-3..1e-3));
    let perturbed = ShapeCode(&code.0 + &delta);
    let mut a = vec![0.0; sdf_layout.total];
    let mut b = vec![0.0; sdf_layout.total];
    hyper_forward(&config, &layout, &sdf_layout, &model.params, &code.0, &mut a, None);
    hyper_forward(&config, &layout, &sdf_layout, &model.params, &perturbed.0, &mut b, None);
    for (head_idx, head) in layout.head_tensors.iter().enumerate() {
        let [a_w, _, b_w, _] = *head;
        let frob = |id: usize| -> f64 {
            layout.slice(&model.params, id).iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let bound = frob(b_w) * frob(a_w) * delta.norm();
        let target_id = config.predicted_tensor_ids()[head_idx];
        let change: f64 = sdf_layout
            .slice(&a, target_id)
            .iter()
            .zip(sdf_layout.slice(&b, target_id))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(
            change <= bound * (1.0 + 1e-9),
            "head {head_idx}: change {change} exceeds Lipschitz bound {bound}"
        );
    }
}

#[test]
fn predict_sdf_identity_pose_equals_direct_evaluation() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 14).unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    let code = random_code(config.code_dim, &mut rng);
    let x = Vector3::new(0.2, -0.3, 0.4);
    let alpha = 2.0;
    let through_pose =
        predict_sdf(&model, &code, &PoseRefinementCode::identity(), &x, alpha).unwrap();
    let direct = SdfEvaluator::new(&model, &code).unwrap().eval_aligned(&x, alpha);
    assert_eq!(through_pose, direct);
}

#[test]
fn predict_sdf_translation_shift_invariance() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 15).unwrap();
    let mut rng = StdRng::seed_from_u64(4);
    let code = random_code(config.code_dim, &mut rng);
    let d = Vector3::new(0.05, -0.1, 0.2);
    let pose = PoseRefinementCode {
        beta: TwistVector::new(Vector3::zeros(), d),
        scale: ScaleCode::identity(),
    };
    let x = Vector3::new(0.1, 0.2, -0.3);
    let a = predict_sdf(&model, &code, &pose, &x, 2.0).unwrap();
    let b = predict_sdf(
        &model,
        &code,
        &PoseRefinementCode::identity(),
        &(x + d),
        2.0,
    )
    .unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn batch_loss_perfect_fit_is_zero() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 16).unwrap();
    let codes = vec![ShapeCode::zeros(config.code_dim)];
    let poses = vec![PoseRefinementCode::identity()];
    let eval = SdfEvaluator::new(&model, &codes[0]).unwrap();
    let positions = [
        Vector3::new(0.1, 0.0, 0.0),
        Vector3::new(-0.2, 0.1, 0.3),
        Vector3::new(0.0, -0.1, 0.2),
    ];
    let alpha = config.encoding.num_bands as f64;
    let samples = SdfSampleSet {
        samples: positions
            .iter()
            .map(|p| SdfSample {
                position: *p,
                distance: eval.eval_aligned(p, alpha),
                unsigned: false,
                shape_index: 0,
            })
            .collect(),
    };
    let (loss, tape) = batch_loss(
        &model,
        &codes,
        &poses,
        &samples,
        &LossWeights::default(),
        alpha,
    )
    .unwrap();
    assert!(loss.abs() < 1e-12);
    assert_eq!(tape.retained, 3);
}

#[test]
fn batch_loss_single_sample_weighting() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 17).unwrap();
    let codes = vec![ShapeCode::zeros(config.code_dim)];
    let poses = vec![PoseRefinementCode::identity()];
    let alpha = config.encoding.num_bands as f64;
    let eval = SdfEvaluator::new(&model, &codes[0]).unwrap();
    let p = Vector3::new(0.05, 0.1, -0.2);
    let samples = SdfSampleSet {
        samples: vec![SdfSample {
            position: p,
            distance: eval.eval_aligned(&p, alpha) - 0.1,
            unsigned: false,
            shape_index: 0,
        }],
    };
    let (loss, _) = batch_loss(
        &model,
        &codes,
        &poses,
        &samples,
        &LossWeights::default(),
        alpha,
    )
    .unwrap();
    // w1 * 0.1 with zero regularizers
    assert_relative_eq!(loss, 300.0, epsilon = 1e-9);
}

#[test]
fn inference_loss_scale_penalty() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 18).unwrap();
    let code = ShapeCode::zeros(config.code_dim);
    let alpha = config.encoding.num_bands as f64;

    let unit = PoseRefinementCode::identity();
    let eval = SdfEvaluator::new(&model, &code).unwrap();
    let p = Vector3::new(0.02, -0.04, 0.06);
    let perfect = SdfSampleSet {
        samples: vec![SdfSample {
            position: p,
            distance: eval.eval_aligned(&p, alpha),
            unsigned: false,
            shape_index: 0,
        }],
    };
    let (loss, _) = inference_loss(&model, &code, &unit, &perfect, &LossWeights::default(), alpha)
        .unwrap();
    assert!(loss.abs() < 1e-12, "unit scale must incur no penalty, got {loss}");

    let scaled = PoseRefinementCode {
        beta: TwistVector::zero(),
        scale: ScaleCode::new(Vector3::new(1.1, 1.0, 1.0)).unwrap(),
    };
    let geom = PoseGeometry::new(&scaled);
    let warped_target = SdfSampleSet {
        samples: vec![SdfSample {
            position: p,
            distance: eval.eval_aligned(&geom.warp(&p), alpha),
            unsigned: false,
            shape_index: 0,
        }],
    };
    let (loss, _) = inference_loss(
        &model,
        &code,
        &scaled,
        &warped_target,
        &LossWeights::default(),
        alpha,
    )
    .unwrap();
    // w4 * 0.1^2 = 2.5 with every other term zero
    assert_relative_eq!(loss, 2.5, epsilon = 1e-9);
}

#[test]
fn empty_sample_set_is_an_error() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 19).unwrap();
    let r = batch_loss(
        &model,
        &[ShapeCode::zeros(config.code_dim)],
        &[PoseRefinementCode::identity()],
        &SdfSampleSet::default(),
        &LossWeights::default(),
        2.0,
    );
    assert!(matches!(r, Err(crate::error::Error::EmptySampleSet)));
}

/// Central-difference gradient check over sampled coordinates of every
/// trainable quantity.
pub(crate) fn gradient_check(seed: u64, unsigned: bool) -> (f64, usize) {
    let config = small_config();
    let mut model = LocalSurfaceModel::new(config, seed).unwrap();
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    let shapes = 2;
    let codes: Vec<ShapeCode> = (0..shapes)
        .map(|_| random_code(config.code_dim, &mut rng))
        .collect();
    let poses: Vec<PoseRefinementCode> = (0..shapes).map(|_| random_pose(&mut rng)).collect();
    let samples = random_samples(8, shapes, unsigned, &mut rng);
    let weights = LossWeights::default();
    let alpha = 1.3;
    let h = 1e-5;

    let loss_of = |model: &LocalSurfaceModel,
                   codes: &[ShapeCode],
                   poses: &[PoseRefinementCode]|
     -> f64 {
        batch_loss(model, codes, poses, &samples, &weights, alpha)
            .unwrap()
            .0
    };

    let (_, tape) = batch_loss(&model, &codes, &poses, &samples, &weights, alpha).unwrap();
    let model_grad = tape.model.as_ref().unwrap();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;

    let mut check = |analytic: f64, fd: f64| {
        let denom = analytic.abs().max(fd.abs()).max(1e-3);
        let rel = (analytic - fd).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
        checked += 1;
    };

    // sampled coordinates across every model tensor
    let layout = model.layout();
    for t in &layout.tensors {
        for &idx in &[t.offset, t.offset + t.len() / 2] {
            let orig = model.params[idx];
            model.params[idx] = orig + h;
            let lp = loss_of(&model, &codes, &poses);
            model.params[idx] = orig - h;
            let lm = loss_of(&model, &codes, &poses);
            model.params[idx] = orig;
            check(model_grad[idx], (lp - lm) / (2.0 * h));
        }
    }
    // every code coordinate
    for i in 0..shapes {
        for d in 0..config.code_dim {
            let mut cp = codes.clone();
            cp[i].0[d] += h;
            let lp = loss_of(&model, &cp, &poses);
            cp[i].0[d] -= 2.0 * h;
            let lm = loss_of(&model, &cp, &poses);
            check(tape.codes[i][d], (lp - lm) / (2.0 * h));
        }
    }
    // every pose coordinate
    for i in 0..shapes {
        for d in 0..9 {
            let mut arr = poses[i].as_array();
            arr[d] += h;
            let mut pp = poses.clone();
            pp[i] = PoseRefinementCode::from_array(arr);
            let lp = loss_of(&model, &codes, &pp);
            arr[d] -= 2.0 * h;
            pp[i] = PoseRefinementCode::from_array(arr);
            let lm = loss_of(&model, &codes, &pp);
            check(tape.poses[i][d], (lp - lm) / (2.0 * h));
        }
    }
    (max_rel, checked)
}

#[test]
fn gradients_match_finite_differences_signed() {
    let (max_rel, checked) = gradient_check(101, false);
    assert!(checked > 80);
    assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
}

#[test]
fn gradients_match_finite_differences_unsigned() {
    let (max_rel, checked) = gradient_check(202, true);
    assert!(checked > 80);
    assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let config = small_config();
    let mut model = LocalSurfaceModel::new(config, 77).unwrap();
    model.residual_stats = Some(ResidualStats {
        mean: 0.004,
        std: 0.001,
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(model.params, back.params);
    assert_eq!(model.config, back.config);
    assert_eq!(model.residual_stats, back.residual_stats);

    let mut rng = StdRng::seed_from_u64(5);
    let code = random_code(config.code_dim, &mut rng);
    let pose = random_pose(&mut rng);
    let x = Vector3::new(0.1, -0.2, 0.15);
    let a = predict_sdf(&model, &code, &pose, &x, 2.0).unwrap();
    let b = predict_sdf(&back, &code, &pose, &x, 2.0).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn corrupt_checkpoint_rejected() {
    let config = small_config();
    let model = LocalSurfaceModel::new(config, 78).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 16);
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}
