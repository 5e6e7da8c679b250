//! Batched forward pass and hand-derived reverse pass through the full
//! pipeline: pose warp → positional encoding → hypernetwork-predicted
//! SDF-Net → L1 distance loss.
//!
//! The architecture is fixed, so gradients are propagated analytically
//! with dense matrix products instead of a general tape. The pose warp
//! `x' = R·(c∘x) + V·t` differentiates through the Rodrigues coefficients;
//! `d(exp([ω])p)/dω` uses the closed form assembled from the θ-normalized
//! coefficient derivatives in [`crate::geometry::se3_coeffs`].

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::encoding::{band_weights, encode_backward_into, encode_masked_into};
use crate::geometry::{se3_coeffs, skew, Se3Coeffs, SMALL_ANGLE_THRESHOLD};

use super::params::{ModelConfig, ModelLayout, SdfLayout};
use super::PoseRefinementCode;

/// Pose warp matrices with their derivatives w.r.t. the twist rotation.
#[derive(Debug, Clone)]
pub struct PoseGeometry {
    pub rotation: Matrix3<f64>,
    pub v_matrix: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub twist_t: Vector3<f64>,
    d_rotation: [Matrix3<f64>; 3],
    d_v: [Matrix3<f64>; 3],
}

fn coeff_matrix(k: &Matrix3<f64>, k2: &Matrix3<f64>, a: f64, b: f64) -> Matrix3<f64> {
    Matrix3::identity() + k * a + k2 * b
}

/// d(I + a(θ)[ω] + b(θ)[ω]²)/dω_j with c_a = a'(θ)/θ, c_b = b'(θ)/θ.
fn coeff_matrix_derivative(
    omega: &Vector3<f64>,
    k: &Matrix3<f64>,
    k2: &Matrix3<f64>,
    a: f64,
    b: f64,
    c_a: f64,
    c_b: f64,
    j: usize,
) -> Matrix3<f64> {
    let mut e = Vector3::zeros();
    e[j] = 1.0;
    let ke = skew(&e);
    k * (c_a * omega[j]) + ke * a + k2 * (c_b * omega[j]) + (ke * k + k * ke) * b
}

impl PoseGeometry {
    pub fn new(pose: &PoseRefinementCode) -> Self {
        let omega = pose.beta.omega;
        let theta_sq = omega.norm_squared();
        let taylor = theta_sq.sqrt() < SMALL_ANGLE_THRESHOLD;
        let Se3Coeffs {
            a_r,
            b_r,
            b_v,
            c_ar,
            c_br,
            c_bv,
        } = se3_coeffs(theta_sq, taylor);
        let k = skew(&omega);
        let k2 = k * k;
        let rotation = coeff_matrix(&k, &k2, a_r, b_r);
        let v_matrix = coeff_matrix(&k, &k2, b_r, b_v);
        let mut d_rotation = [Matrix3::zeros(); 3];
        let mut d_v = [Matrix3::zeros(); 3];
        for j in 0..3 {
            d_rotation[j] = coeff_matrix_derivative(&omega, &k, &k2, a_r, b_r, c_ar, c_br, j);
            d_v[j] = coeff_matrix_derivative(&omega, &k, &k2, b_r, b_v, c_br, c_bv, j);
        }
        Self {
            rotation,
            v_matrix,
            translation: v_matrix * pose.beta.t,
            scale: pose.scale.c,
            twist_t: pose.beta.t,
            d_rotation,
            d_v,
        }
    }

    /// `x' = R (c ∘ x) + V t`.
    pub fn warp(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x.component_mul(&self.scale) + self.translation
    }
}

/// Gradients of a scalar loss w.r.t. one shape's pose code, ordered
/// (ω, t, c).
pub type PoseGrad = [f64; 9];

/// Per-head hypernetwork activations kept for the reverse pass.
pub struct HyperCache {
    /// pre-activation of each head's hidden layer
    pub z: Vec<DVector<f64>>,
}

/// Runs every hyper-MLP head and assembles the complete SDF parameter set
/// for `code` (predicted tensors from the heads, remainder copied from the
/// shared parameters).
pub fn hyper_forward(
    config: &ModelConfig,
    layout: &ModelLayout,
    sdf_layout: &SdfLayout,
    params: &[f64],
    code: &DVector<f64>,
    sdf_params: &mut [f64],
    mut cache: Option<&mut HyperCache>,
) {
    debug_assert_eq!(code.len(), config.code_dim);
    debug_assert_eq!(sdf_params.len(), sdf_layout.total);
    for (head_idx, (&target_id, head)) in config
        .predicted_tensor_ids()
        .iter()
        .zip(&layout.head_tensors)
        .enumerate()
    {
        let [a_w, a_b, b_w, b_b] = *head;
        let mut z = DVector::from_column_slice(layout.slice(params, a_b));
        z.gemv(1.0, &layout.view(params, a_w), code, 1.0);
        let u = z.map(|v| v.max(0.0));
        let out = sdf_layout.slice_mut(sdf_params, target_id);
        out.copy_from_slice(layout.slice(params, b_b));
        let mut out_vec = nalgebra::DVectorViewMut::from_slice(out, sdf_layout.tensors[target_id].len());
        out_vec.gemv(1.0, &layout.view(params, b_w), &u, 1.0);
        if let Some(cache) = cache.as_deref_mut() {
            cache.z[head_idx] = z;
        }
    }
    for &(sdf_id, model_id) in &layout.shared_tensors {
        sdf_layout
            .slice_mut(sdf_params, sdf_id)
            .copy_from_slice(layout.slice(params, model_id));
    }
}

/// Backpropagates per-shape SDF-parameter gradients through the hyper
/// heads into the shape-code gradient and (when the network is trainable)
/// the flat model gradient; shared tensors accumulate directly.
#[allow(clippy::too_many_arguments)]
pub fn hyper_backward(
    config: &ModelConfig,
    layout: &ModelLayout,
    sdf_layout: &SdfLayout,
    params: &[f64],
    code: &DVector<f64>,
    cache: &HyperCache,
    sdf_grad: &[f64],
    mut model_grad: Option<&mut [f64]>,
    code_grad: &mut DVector<f64>,
) {
    for (head_idx, (&target_id, head)) in config
        .predicted_tensor_ids()
        .iter()
        .zip(&layout.head_tensors)
        .enumerate()
    {
        let [a_w, a_b, b_w, b_b] = *head;
        let g = nalgebra::DVectorView::from_slice(
            sdf_layout.slice(sdf_grad, target_id),
            sdf_layout.tensors[target_id].len(),
        );
        let z = &cache.z[head_idx];

        if let Some(model_grad) = model_grad.as_deref_mut() {
            let u = z.map(|v| v.max(0.0));
            // gB_w += g uᵀ, gB_b += g
            let t = &layout.tensors[b_w];
            let mut view = nalgebra::DMatrixViewMut::from_slice(
                &mut model_grad[t.offset..t.offset + t.len()],
                t.rows,
                t.cols,
            );
            view.ger(1.0, &g, &u, 1.0);
            let t = &layout.tensors[b_b];
            for (dst, src) in model_grad[t.offset..t.offset + t.len()].iter_mut().zip(g.iter()) {
                *dst += src;
            }
        }

        // gu = B_wᵀ g, masked by the hidden relu
        let mut gu = DVector::zeros(config.hyper_hidden);
        gu.gemv_tr(1.0, &layout.view(params, b_w), &g, 0.0);
        let gz = DVector::from_iterator(
            config.hyper_hidden,
            gu.iter().zip(z.iter()).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }),
        );

        if let Some(model_grad) = model_grad.as_deref_mut() {
            let t = &layout.tensors[a_w];
            let mut view = nalgebra::DMatrixViewMut::from_slice(
                &mut model_grad[t.offset..t.offset + t.len()],
                t.rows,
                t.cols,
            );
            view.ger(1.0, &gz, code, 1.0);
            let t = &layout.tensors[a_b];
            for (dst, src) in model_grad[t.offset..t.offset + t.len()].iter_mut().zip(gz.iter()) {
                *dst += src;
            }
        }
        code_grad.gemv_tr(1.0, &layout.view(params, a_w), &gz, 1.0);
    }
    if let Some(model_grad) = model_grad {
        for &(sdf_id, model_id) in &layout.shared_tensors {
            let src = sdf_layout.slice(sdf_grad, sdf_id);
            let t = &layout.tensors[model_id];
            for (dst, s) in model_grad[t.offset..t.offset + t.len()].iter_mut().zip(src) {
                *dst += s;
            }
        }
    }
}

/// Output of one shape's batched forward (and optional reverse) pass.
pub struct ShapePassOutput {
    /// Σ |residual| over the batch.
    pub abs_error_sum: f64,
    pub count: usize,
    pub predictions: Vec<f64>,
}

/// Accumulators the reverse pass writes into. `model_grad` is `None` when
/// the network is frozen (inference-time code/pose fitting).
pub struct ShapeGradSink<'a> {
    pub hyper_cache: &'a HyperCache,
    pub model_grad: Option<&'a mut [f64]>,
    pub code_grad: &'a mut DVector<f64>,
    pub pose_grad: &'a mut PoseGrad,
    /// scratch buffer of length `sdf_layout.total`, zeroed by the pass
    pub sdf_grad_scratch: &'a mut Vec<f64>,
}

/// Forward (and, when `sink` is given, reverse) pass for one shape batch.
///
/// `loss_scale` multiplies each sample's subgradient; the caller sets it to
/// `w_sdf / N` so per-sample contributions already carry the final weight.
#[allow(clippy::too_many_arguments)]
pub fn shape_pass(
    config: &ModelConfig,
    layout: &ModelLayout,
    sdf_layout: &SdfLayout,
    params: &[f64],
    sdf_params: &[f64],
    code: &DVector<f64>,
    geom: &PoseGeometry,
    positions: &[Vector3<f64>],
    targets: &[f64],
    unsigned: &[bool],
    alpha: f64,
    loss_scale: f64,
    sink: Option<ShapeGradSink<'_>>,
) -> ShapePassOutput {
    let n = positions.len();
    let d = config.input_dim();
    let weights = band_weights(alpha, config.encoding.num_bands);
    let hl = config.hidden_layers;

    // Warp and encode.
    let mut warped = Vec::with_capacity(n);
    let mut e = DMatrix::zeros(d, n);
    for (i, x) in positions.iter().enumerate() {
        let xw = geom.warp(x);
        warped.push(xw);
        encode_masked_into(&[xw.x, xw.y, xw.z], &weights, e.column_mut(i).as_mut_slice());
    }

    // Hidden layers with cached pre-activations.
    let mut zs: Vec<DMatrix<f64>> = Vec::with_capacity(hl);
    let mut hs: Vec<DMatrix<f64>> = Vec::with_capacity(hl);
    let mut input = e;
    for l in 0..hl {
        let w = sdf_layout.view(sdf_params, 2 * l);
        let b = sdf_layout.slice(sdf_params, 2 * l + 1);
        let mut z = DMatrix::zeros(config.hidden_width, n);
        z.gemm(1.0, &w, &input, 0.0);
        for mut col in z.column_iter_mut() {
            for (v, bias) in col.iter_mut().zip(b) {
                *v += bias;
            }
        }
        let h = z.map(|v| v.max(0.0));
        zs.push(z);
        hs.push(input);
        input = h;
    }
    let w_out = sdf_layout.view(sdf_params, 2 * hl);
    let b_out = sdf_layout.slice(sdf_params, 2 * hl + 1)[0];
    let mut pred_row = DMatrix::zeros(1, n);
    pred_row.gemm(1.0, &w_out, &input, 0.0);
    let predictions: Vec<f64> = (0..n).map(|i| pred_row[(0, i)] + b_out).collect();

    // Residuals: unsigned targets compare |prediction| to the distance.
    let mut abs_error_sum = 0.0;
    let mut gpred = DMatrix::zeros(1, n);
    for i in 0..n {
        let (residual, dpred) = if unsigned[i] {
            let r = predictions[i].abs() - targets[i];
            (r, predictions[i].signum() * r.signum())
        } else {
            let r = predictions[i] - targets[i];
            (r, r.signum())
        };
        abs_error_sum += residual.abs();
        gpred[(0, i)] = loss_scale * dpred;
    }

    let sink = match sink {
        Some(s) => s,
        None => {
            return ShapePassOutput {
                abs_error_sum,
                count: n,
                predictions,
            }
        }
    };

    // Reverse pass through the MLP into a per-shape SDF-parameter gradient.
    let sdf_grad = sink.sdf_grad_scratch;
    sdf_grad.clear();
    sdf_grad.resize(sdf_layout.total, 0.0);

    // output layer
    {
        let t = &sdf_layout.tensors[2 * hl];
        let mut gw = nalgebra::DMatrixViewMut::from_slice(
            &mut sdf_grad[t.offset..t.offset + t.len()],
            t.rows,
            t.cols,
        );
        gw.gemm(1.0, &gpred, &input.transpose(), 1.0);
        let tb = &sdf_layout.tensors[2 * hl + 1];
        sdf_grad[tb.offset] += gpred.sum();
    }
    let mut gh = DMatrix::zeros(config.hidden_width, n);
    gh.gemm_tr(1.0, &w_out, &gpred, 0.0);

    for l in (0..hl).rev() {
        // relu mask
        let z = &zs[l];
        let mut gz = gh;
        for (gz_v, z_v) in gz.iter_mut().zip(z.iter()) {
            if *z_v <= 0.0 {
                *gz_v = 0.0;
            }
        }
        {
            let t = &sdf_layout.tensors[2 * l];
            let mut gw = nalgebra::DMatrixViewMut::from_slice(
                &mut sdf_grad[t.offset..t.offset + t.len()],
                t.rows,
                t.cols,
            );
            gw.gemm(1.0, &gz, &hs[l].transpose(), 1.0);
            let tb = &sdf_layout.tensors[2 * l + 1];
            let gb = &mut sdf_grad[tb.offset..tb.offset + tb.len()];
            for col in gz.column_iter() {
                for (dst, v) in gb.iter_mut().zip(col.iter()) {
                    *dst += v;
                }
            }
        }
        let w = sdf_layout.view(sdf_params, 2 * l);
        let rows_in = if l == 0 { d } else { config.hidden_width };
        let mut gprev = DMatrix::zeros(rows_in, n);
        gprev.gemm_tr(1.0, &w, &gz, 0.0);
        gh = gprev;
    }

    // encoding backward: gh is now d×n upstream of the encoder
    let mut gx_cols: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut gx = [0.0; 3];
        let xw = warped[i];
        encode_backward_into(
            &[xw.x, xw.y, xw.z],
            &weights,
            gh.column(i).as_slice(),
            &mut gx,
        );
        gx_cols.push(Vector3::new(gx[0], gx[1], gx[2]));
    }

    // pose backward
    let mut gv = Vector3::zeros();
    let mut gomega: Vector3<f64> = Vector3::zeros();
    let mut gscale = Vector3::zeros();
    for i in 0..n {
        let g = gx_cols[i];
        gv += g;
        let q = positions[i].component_mul(&geom.scale);
        for j in 0..3 {
            gomega[j] += g.dot(&(geom.d_rotation[j] * q));
        }
        let rt_g = geom.rotation.transpose() * g;
        gscale += rt_g.component_mul(&positions[i]);
    }
    for j in 0..3 {
        gomega[j] += gv.dot(&(geom.d_v[j] * geom.twist_t));
    }
    let gt = geom.v_matrix.transpose() * gv;
    for j in 0..3 {
        sink.pose_grad[j] += gomega[j];
        sink.pose_grad[3 + j] += gt[j];
        sink.pose_grad[6 + j] += gscale[j];
    }

    hyper_backward(
        config,
        layout,
        sdf_layout,
        params,
        code,
        sink.hyper_cache,
        sdf_grad,
        sink.model_grad,
        sink.code_grad,
    );

    ShapePassOutput {
        abs_error_sum,
        count: n,
        predictions,
    }
}
