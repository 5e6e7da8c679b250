//! SE(3) and affine transform algebra.
//!
//! Pose-refinement codes are twists `β = ⟨ω, t⟩` in se(3) plus a per-axis
//! scale `C`. The exponential map turns a twist into a rigid transform via
//! the Rodrigues form
//!
//! ```text
//! R = I + sinθ/θ [ω] + (1-cosθ)/θ² [ω]²,
//! V = I + (1-cosθ)/θ² [ω] + (θ-sinθ)/θ³ [ω]²,      v = V t,
//! ```
//!
//! with `θ = ‖ω‖` and `[ω]` the skew matrix of `ω`. Below a small-angle
//! threshold both matrices switch to Taylor expansions so the map stays
//! well defined and differentiable through θ = 0. Composing with the
//! scaling matrix `diag(C, 1)` gives the affine warp `H` used to carry
//! query points from an observation frame into the shared alignment frame.
//!
//! Frame bookkeeping for grasp transfer lives in [`FrameSet`]: a learned
//! warp `H` maps source-frame points into the alignment frame, so the pose
//! of the alignment frame expressed in the source frame is `H⁻¹`, and world
//! grasps chain as `T_WD · rigid(H⁻¹) · T_AG`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angle threshold below which the exponential map uses Taylor expansions.
pub const SMALL_ANGLE_THRESHOLD: f64 = 1e-4;

/// Orthonormality / inversion tolerance for rigid transforms.
pub const RIGID_TOLERANCE: f64 = 1e-9;

/// se(3) twist: axis-angle rotation part `omega` and translation generator `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistVector {
    pub omega: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl TwistVector {
    pub fn new(omega: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self { omega, t }
    }

    pub fn zero() -> Self {
        Self {
            omega: Vector3::zeros(),
            t: Vector3::zeros(),
        }
    }

    /// Rotation angle θ = ‖ω‖.
    pub fn angle(&self) -> f64 {
        self.omega.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.t.iter()).all(|v| v.is_finite())
    }

    /// The six components in (ω, t) order.
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.t.x,
            self.t.y,
            self.t.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            omega: Vector3::new(a[0], a[1], a[2]),
            t: Vector3::new(a[3], a[4], a[5]),
        }
    }
}

/// Per-axis scale code; all components strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleCode {
    pub c: Vector3<f64>,
}

impl ScaleCode {
    pub fn new(c: Vector3<f64>) -> Result<Self> {
        if c.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(Self { c })
        } else {
            Err(Error::InvalidScale(c.x, c.y, c.z))
        }
    }

    pub fn identity() -> Self {
        Self {
            c: Vector3::new(1.0, 1.0, 1.0),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.c.x, self.c.y, self.c.z]
    }
}

/// Rotation + translation with `Rᵀ R = I`, `det R = +1` within [`RIGID_TOLERANCE`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates orthonormality and determinant before constructing.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !t.is_valid(RIGID_TOLERANCE * 10.0) {
            return Err(Error::NonUnitScale(
                "rotation block is not orthonormal with det +1".into(),
            ));
        }
        Ok(t)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about the world z axis.
    pub fn from_yaw(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::zeros(),
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let gram = self.rotation.transpose() * self.rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        let det_err = (self.rotation.determinant() - 1.0).abs();
        ortho_err <= tol && det_err <= tol && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_affine(&self) -> AffineTransform {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        AffineTransform { matrix: m }
    }

    /// Row-major 16-element array, for JSON artifacts.
    pub fn to_row_major(&self) -> [f64; 16] {
        self.to_affine().to_row_major()
    }

    pub fn from_row_major(values: &[f64; 16]) -> Result<Self> {
        AffineTransform::from_row_major(values)?.to_rigid()
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = <[f64; 16]>::deserialize(d)?;
        RigidTransform::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

/// 4×4 homogeneous transform; bottom row is exactly `[0, 0, 0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub matrix: Matrix4<f64>,
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    /// Constructs from a full 4×4 matrix, normalizing the bottom row check.
    pub fn new(matrix: Matrix4<f64>) -> Result<Self> {
        let bottom = matrix.row(3);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(Error::InvalidParameter(
                "affine transform bottom row must be [0, 0, 0, 1]".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn linear(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        AffineTransform {
            matrix: self.matrix * other.matrix,
        }
    }

    /// Interprets the transform as rigid; fails when the linear block is not
    /// orthonormal with det +1.
    pub fn to_rigid(&self) -> Result<RigidTransform> {
        RigidTransform::new(self.linear(), self.translation())
    }

    /// Nearest rotation to the linear block (polar factor via SVD), keeping
    /// the translation. Used to strip learned scale out of grasp frames.
    pub fn to_rigid_polar(&self) -> Result<RigidTransform> {
        let rotation = polar_rotation(&self.linear())?;
        Ok(RigidTransform {
            rotation,
            translation: self.translation(),
        })
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64; 16]) -> Result<Self> {
        let mut m = Matrix4::zeros();
        for r in 0..4 {
            for c in 0..4 {
                m[(r, c)] = values[r * 4 + c];
            }
        }
        AffineTransform::new(m)
    }
}

impl Serialize for AffineTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AffineTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = <[f64; 16]>::deserialize(d)?;
        AffineTransform::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

/// Skew-symmetric matrix `[ω]` with `[ω] x = ω × x`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues coefficients for `R = I + a_r [ω] + b_r [ω]²` and
/// `V = I + b_r [ω] + b_v [ω]²`, plus their θ-normalized derivatives
/// `c_x = x'(θ)/θ` used by the pose gradient.
#[derive(Debug, Clone, Copy)]
pub struct Se3Coeffs {
    pub a_r: f64,
    pub b_r: f64,
    pub b_v: f64,
    pub c_ar: f64,
    pub c_br: f64,
    pub c_bv: f64,
}

/// Evaluates the Rodrigues coefficients at `θ² = theta_sq`, selecting the
/// Taylor branch when requested (4th-order truncations, exact through θ = 0).
pub fn se3_coeffs(theta_sq: f64, taylor: bool) -> Se3Coeffs {
    if taylor {
        let t2 = theta_sq;
        let t4 = t2 * t2;
        Se3Coeffs {
            a_r: 1.0 - t2 / 6.0 + t4 / 120.0,
            b_r: 0.5 - t2 / 24.0 + t4 / 720.0,
            b_v: 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            c_ar: -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            c_br: -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
            c_bv: -1.0 / 60.0 + t2 / 1260.0 - t4 / 60480.0,
        }
    } else {
        let theta = theta_sq.sqrt();
        let (sin_t, cos_t) = theta.sin_cos();
        let t3 = theta_sq * theta;
        let t4 = theta_sq * theta_sq;
        let t5 = t4 * theta;
        Se3Coeffs {
            a_r: sin_t / theta,
            b_r: (1.0 - cos_t) / theta_sq,
            b_v: (theta - sin_t) / t3,
            c_ar: (theta * cos_t - sin_t) / t3,
            c_br: (theta * sin_t - 2.0 * (1.0 - cos_t)) / t4,
            c_bv: (theta * (1.0 - cos_t) - 3.0 * (theta - sin_t)) / t5,
        }
    }
}

/// Rotation and left-Jacobian matrices for a twist, via the given branch.
pub(crate) fn rotation_and_jacobian(
    omega: &Vector3<f64>,
    taylor: bool,
) -> (Matrix3<f64>, Matrix3<f64>, Se3Coeffs) {
    let theta_sq = omega.norm_squared();
    let coeffs = se3_coeffs(theta_sq, taylor);
    let k = skew(omega);
    let k2 = k * k;
    let r = Matrix3::identity() + k * coeffs.a_r + k2 * coeffs.b_r;
    let v = Matrix3::identity() + k * coeffs.b_r + k2 * coeffs.b_v;
    (r, v, coeffs)
}

/// Exponential map se(3) → SE(3) with an explicit small-angle threshold.
///
/// `threshold = 0` forces the closed form everywhere; `threshold = ∞`
/// forces the Taylor branch. [`exp_se3`] uses [`SMALL_ANGLE_THRESHOLD`].
pub fn exp_se3_with_threshold(beta: &TwistVector, threshold: f64) -> RigidTransform {
    let taylor = beta.angle() < threshold;
    let (r, v, _) = rotation_and_jacobian(&beta.omega, taylor);
    RigidTransform {
        rotation: r,
        translation: v * beta.t,
    }
}

/// Exponential map se(3) → SE(3). Total on finite twists; `exp_se3(0) = I`.
pub fn exp_se3(beta: &TwistVector) -> RigidTransform {
    exp_se3_with_threshold(beta, SMALL_ANGLE_THRESHOLD)
}

/// Scaling transform `diag(c₁, c₂, c₃, 1)`.
pub fn scale_transform(c: &ScaleCode) -> Result<AffineTransform> {
    if !(c.c.iter().all(|v| v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidScale(c.c.x, c.c.y, c.c.z));
    }
    let mut m = Matrix4::identity();
    m[(0, 0)] = c.c.x;
    m[(1, 1)] = c.c.y;
    m[(2, 2)] = c.c.z;
    Ok(AffineTransform { matrix: m })
}

/// Alignment warp `H = exp(β) · diag(C, 1)`: scales the input point along
/// the source axes, then applies the rigid transform.
pub fn compose_alignment(beta: &TwistVector, c: &ScaleCode) -> Result<AffineTransform> {
    let rigid = exp_se3(beta);
    Ok(rigid.to_affine().compose(&scale_transform(c)?))
}

/// Homogeneous application `x ↦ (H [x 1]ᵀ)` truncated to 3 components.
pub fn apply_transform(h: &AffineTransform, x: &Vector3<f64>) -> Vector3<f64> {
    h.linear() * x + h.translation()
}

/// Full affine inverse; fails on singular matrices.
pub fn invert(t: &AffineTransform) -> Result<AffineTransform> {
    let linear = t.linear();
    let inv_linear = linear.try_inverse().ok_or(Error::SingularTransform)?;
    let mut m = Matrix4::identity();
    let ti = -(inv_linear * t.translation());
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&inv_linear);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&ti);
    Ok(AffineTransform { matrix: m })
}

/// Nearest rotation factor of a 3×3 matrix (polar decomposition via SVD,
/// determinant corrected to +1).
pub fn polar_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::SingularTransform),
    };
    if svd.singular_values.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
        return Err(Error::SingularTransform);
    }
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Flip the weakest singular direction to land on SO(3).
        let mut u_fixed = u;
        let mut col = u_fixed.column_mut(2);
        col *= -1.0;
        r = u_fixed * v_t;
    }
    Ok(r)
}

/// Grasp-frame transform `T_AG` from the anchor's alignment transform.
///
/// The anchor's pose code is pinned to identity during training, so this is
/// the identity in the normal pipeline; the general form is the inverse of
/// the anchor's warp, which must carry unit scale.
pub fn anchor_align_to_grasp(anchor_h: &AffineTransform) -> Result<RigidTransform> {
    let linear = anchor_h.linear();
    let gram = linear.transpose() * linear;
    let scale_err = (gram - Matrix3::identity()).abs().max();
    if scale_err > 1e-6 {
        return Err(Error::NonUnitScale(format!(
            "anchor alignment has non-unit scale (Gram deviation {scale_err:.3e})"
        )));
    }
    invert(anchor_h)?.to_rigid_polar()
}

/// Frame bookkeeping for grasp recovery.
///
/// `world_to_demo` is the demonstrated grasp pose (the pose of the
/// demonstration frame in the world). `demo_to_align[i]` is the pose of the
/// alignment frame expressed in shape `i`'s demonstration frame, i.e. the
/// inverse of shape `i`'s learned warp. `align_to_grasp` is pinned at
/// construction to the inverse of the anchor entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameSet {
    pub world_to_demo: RigidTransform,
    pub demo_to_align: Vec<AffineTransform>,
    pub anchor_index: usize,
    pub align_to_grasp: RigidTransform,
    pub candidates: Vec<RigidTransform>,
}

impl FrameSet {
    pub fn new(
        world_to_demo: RigidTransform,
        demo_to_align: Vec<AffineTransform>,
        anchor_index: usize,
        candidates: Vec<RigidTransform>,
    ) -> Result<Self> {
        let anchor = demo_to_align
            .get(anchor_index)
            .ok_or(Error::IndexOutOfRange {
                index: anchor_index,
                len: demo_to_align.len(),
            })?;
        // T_AG = inverse of the anchor's demo_to_align, which is the anchor
        // warp itself; training_grasp_pose(anchor) then returns T_WD exactly.
        let align_to_grasp = anchor_align_to_grasp(anchor)?;
        Ok(Self {
            world_to_demo,
            demo_to_align,
            anchor_index,
            align_to_grasp,
            candidates,
        })
    }
}

/// World-frame grasp predicted for training shape `i`:
/// `T_WD · rigid(demo_to_align[i]) · T_AG`.
pub fn training_grasp_pose(frames: &FrameSet, i: usize) -> Result<RigidTransform> {
    let t_da = frames.demo_to_align.get(i).ok_or(Error::IndexOutOfRange {
        index: i,
        len: frames.demo_to_align.len(),
    })?;
    let rigid_da = t_da.to_rigid_polar()?;
    Ok(frames
        .world_to_demo
        .compose(&rigid_da)
        .compose(&frames.align_to_grasp))
}

/// World-frame grasp for candidate `j` given the optimized candidate-to-
/// alignment transform `h` (the inverse of the fitted warp):
/// `T_WC_j · rigid(h) · T_AG`.
pub fn inference_grasp_pose(
    frames: &FrameSet,
    j: usize,
    h: &AffineTransform,
) -> Result<RigidTransform> {
    let candidate = frames.candidates.get(j).ok_or(Error::IndexOutOfRange {
        index: j,
        len: frames.candidates.len(),
    })?;
    let rigid_ca = h.to_rigid_polar()?;
    Ok(candidate.compose(&rigid_ca).compose(&frames.align_to_grasp))
}
