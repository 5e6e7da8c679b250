//! Scratch experiment: does joint training recover mug pose perturbations?

use nalgebra::Vector3;
use sais_core::corpus::{generate_shapes, FamilySpec, MugParams, ShapeFamilySpec};
use sais_core::encoding::EncodingConfig;
use sais_core::evaluation::{chamfer, pose_error, reconstruct_aligned, surface_points};
use sais_core::geometry::RigidTransform;
use sais_core::neural::{LossWeights, ModelConfig};
use sais_core::sampling::{sample_training_set, SdfSampleSet};
use sais_core::training::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let iterations = get("--iters", 3000.0) as usize;
    let pose_lr_scale = get("--pose-lr", 1.0);
    let width = get("--width", 32.0) as usize;
    let code_dim = get("--code", 16.0) as usize;
    let hyper_hidden = get("--hyper", 64.0) as usize;
    let bands = get("--bands", 4.0) as usize;
    let minibatch = get("--batch", 96.0) as usize;
    let sigma = get("--sigma", 4e-4);
    let n_surface = get("--surface", 3000.0) as usize;
    let radius = get("--radius", 0.30);
    let yaw = get("--yaw", 40.0);
    let trans = get("--trans", 0.1);
    let ramp = get("--ramp", 0.3);
    let seed = get("--seed", 11.0) as u64;

    let spec = ShapeFamilySpec {
        family: FamilySpec::Mug {
            base: MugParams::default(),
            size_range: [get("--size-lo", 0.95), get("--size-hi", 1.1)],
            jitter: get("--jitter", 0.03),
        },
        count: 8,
        yaw_range_deg: yaw,
        translation_range: trans,
        seed,
    };
    let mut shapes = generate_shapes(&spec).unwrap();
    // anchor in canonical pose
    let inv = shapes[0].ground_truth_pose.inverse();
    shapes[0].mesh = shapes[0].mesh.transformed(&inv);
    shapes[0].ground_truth_pose = RigidTransform::identity();

    // demo frame = anchor handle grasp (canonical)
    let t_wd = shapes[0].annotations.handle_grasp.unwrap();
    let to_demo = t_wd.inverse();

    let t0 = std::time::Instant::now();
    let corpus: Vec<SdfSampleSet> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut set =
                sample_training_set(&s.mesh, n_surface, n_surface / 5, sigma, 0, seed + 100 + i as u64)
                    .unwrap();
            for smp in &mut set.samples {
                smp.position = to_demo.apply(&smp.position);
            }
            set
        })
        .collect();
    println!("data generation: {:.1?}", t0.elapsed());

    let config = TrainConfig {
        model: ModelConfig {
            hidden_width: width,
            hidden_layers: 5,
            code_dim,
            hyper_hidden,
            hyper_predicted_layers: 5,
            encoding: EncodingConfig::new(bands, 0, (iterations as f64 * ramp) as usize),
            sphere_radius: radius,
        },
        learning_rate: 1e-3,
        pose_lr_scale,
        weights: LossWeights::default(),
        iterations,
        minibatch,
        anchor_index: 0,
        freeze_pose_codes: false,
        freeze_scale_codes: true,
        code_init_sigma: 1e-4,
        initial_poses: None,
        seed,
    };

    let t0 = std::time::Instant::now();
    let bundle = train(&corpus, t_wd, &config).unwrap();
    println!("training: {:.1?}", t0.elapsed());
    let last = bundle.loss_history.last().unwrap();
    println!(
        "final loss {:.4}, sdf residual {:.6}",
        last.total, last.sdf_residual
    );

    let mut ok = 0;
    for (i, shape) in shapes.iter().enumerate() {
        let pred = bundle.grasp_pose(i).unwrap();
        let truth = shape.ground_truth_pose.compose(&t_wd);
        let (dt, dr) = pose_error(&pred, &truth);
        let pass = dr < 5.0 && dt < 0.02;
        if pass {
            ok += 1;
        }
        println!(
            "shape {i}: rot err {dr:.2} deg, trans err {dt:.4} {}",
            if pass { "ok" } else { "MISS" }
        );
    }
    println!("recovered {ok}/8");

    // Chamfer ratio check on a couple of shapes
    let t0 = std::time::Instant::now();
    let mut rec_sum = 0.0;
    let mut pert_sum = 0.0;
    for (i, shape) in shapes.iter().enumerate() {
        let truth_mesh = shape.mesh.transformed(&shape.ground_truth_pose.inverse());
        // truth in demo frame
        let truth_demo: Vec<Vector3<f64>> = surface_points(&truth_mesh, 4000, 55 + i as u64)
            .iter()
            .map(|p| to_demo.apply(p))
            .collect();
        let pert_demo: Vec<Vector3<f64>> = surface_points(&shape.mesh, 4000, 77 + i as u64)
            .iter()
            .map(|p| to_demo.apply(p))
            .collect();
        match reconstruct_aligned(&bundle.model, &bundle.codes[i], 64) {
            Ok(mesh) => {
                let rec_points = surface_points(&mesh, 4000, 99 + i as u64);
                let rec = chamfer(&rec_points, &truth_demo).unwrap();
                let pert = chamfer(&pert_demo, &truth_demo).unwrap();
                rec_sum += rec;
                pert_sum += pert;
                println!("shape {i}: chamfer rec {rec:.6e} pert {pert:.6e}");
            }
            Err(e) => println!("shape {i}: reconstruction failed: {e}"),
        }
    }
    println!(
        "mean rec {:.6e} mean pert {:.6e} ratio {:.1}",
        rec_sum / 8.0,
        pert_sum / 8.0,
        pert_sum / rec_sum.max(1e-12)
    );
    println!("evaluation: {:.1?}", t0.elapsed());
}
