//! Rotation algebra on unit quaternions.
//!
//! Conventions used throughout the crate:
//!
//! - Hamilton product, rotations act on column vectors.
//! - Absolute orientations are world-from-camera; the world up axis is `+y`.
//! - The relative orientation of a directed edge `u -> v` is `q_v ⋆ q_u⁻¹`.
//! - Quaternions are stored canonically: unit norm and non-negative scalar part.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tolerances::{
    CANONICAL_ZERO_W, DEGENERATE_NORM, MATRIX_ORTHO, RENORMALIZE_LIMIT, SMALL_ANGLE,
};

/// A rotation stored as a canonical unit quaternion `(w, x, y, z)`.
#[derive(Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

/// Rotation axis and angle, angle in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub axis: [f64; 3],
    pub angle: f64,
}

/// Row-major 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl fmt::Debug for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

impl fmt::Display for UnitQuaternion {
    /// `qw qx qy qz` with 17 significant digits.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.16e} {:.16e} {:.16e} {:.16e}",
            self.w, self.x, self.y, self.z
        )
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Normalises and canonicalises an arbitrary non-zero 4-vector.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n >= DEGENERATE_NORM) || !n.is_finite() {
            return Err(Error::DegenerateQuaternion {
                norm: n,
                min: DEGENERATE_NORM,
            });
        }
        Ok(Self::canonical(w, x, y, z))
    }

    /// Accepts a 4-vector that is already unit up to [`RENORMALIZE_LIMIT`],
    /// renormalising the residual error away.
    pub fn from_unit_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > RENORMALIZE_LIMIT {
            return Err(Error::InvalidInput(format!(
                "quaternion norm {n} deviates from 1 by more than {RENORMALIZE_LIMIT:e}"
            )));
        }
        Ok(Self::canonical(w, x, y, z))
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self> {
        Self::from_wxyz(q[0], q[1], q[2], q[3])
    }

    // Idempotent: a second pass sees |n² − 1| ≤ 1e-15 and leaves the bits alone.
    fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n2 = w * w + x * x + y * y + z * z;
        let (mut w, mut x, mut y, mut z) = (w, x, y, z);
        if (n2 - 1.0).abs() > 1e-15 {
            let n = n2.sqrt();
            w /= n;
            x /= n;
            y /= n;
            z /= n;
        }
        let flip = if w.abs() <= CANONICAL_ZERO_W {
            let lead = if x != 0.0 {
                x
            } else if y != 0.0 {
                y
            } else {
                z
            };
            lead < 0.0
        } else {
            w < 0.0
        };
        if flip {
            w = -w;
            x = -x;
            y = -y;
            z = -z;
        }
        UnitQuaternion { w, x, y, z }
    }

    /// Re-applies normalisation and sign canonicalisation.
    pub fn renormalized(self) -> Self {
        Self::canonical(self.w, self.x, self.y, self.z)
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }
    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }
    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }
    #[inline]
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Rotation of `angle` radians about `axis` (need not be unit).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n < DEGENERATE_NORM {
            return Err(Error::InvalidInput("zero rotation axis".into()));
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / n;
        Ok(Self::canonical(c, axis[0] * k, axis[1] * k, axis[2] * k))
    }

    /// Rotation about the world up axis (`+y`), in degrees.
    pub fn yaw_deg(deg: f64) -> Self {
        let (s, c) = (0.5 * deg.to_radians()).sin_cos();
        Self::canonical(c, 0.0, s, 0.0)
    }

    /// Hamilton product `self ⋆ rhs`.
    pub fn compose(&self, rhs: &Self) -> Self {
        let [w, x, y, z] = hamilton(self.to_array(), rhs.to_array());
        Self::canonical(w, x, y, z)
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.w, -self.x, -self.y, -self.z)
    }

    /// Relative orientation of the directed edge `from -> to`: `to ⋆ from⁻¹`.
    pub fn relative(from: &Self, to: &Self) -> Self {
        to.compose(&from.inverse())
    }

    /// Rotates a column vector.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = [0.0, v[0], v[1], v[2]];
        let r = hamilton(hamilton(self.to_array(), p), self.inverse().to_array());
        [r[1], r[2], r[3]]
    }

    pub fn to_axis_angle(&self) -> AxisAngle {
        let s = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        let angle = 2.0 * s.atan2(self.w.abs());
        if s < DEGENERATE_NORM {
            return AxisAngle {
                axis: [1.0, 0.0, 0.0],
                angle,
            };
        }
        let sign = if self.w < 0.0 { -1.0 } else { 1.0 };
        AxisAngle {
            axis: [sign * self.x / s, sign * self.y / s, sign * self.z / s],
            angle,
        }
    }

    /// Rotation vector (axis × angle, radians).
    pub fn log(&self) -> [f64; 3] {
        let s = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        let theta = 2.0 * s.atan2(self.w);
        let k = if theta < SMALL_ANGLE {
            // θ / sin(θ/2) → 2/w near the identity
            2.0 / self.w
        } else {
            theta / s
        };
        [self.x * k, self.y * k, self.z * k]
    }

    pub fn exp(v: [f64; 3]) -> Self {
        let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let (w, k) = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            (1.0 - t2 / 8.0, 0.5 - t2 / 48.0)
        } else {
            let (s, c) = (0.5 * theta).sin_cos();
            (c, s / theta)
        };
        Self::canonical(w, v[0] * k, v[1] * k, v[2] * k)
    }

    pub fn to_matrix(&self) -> RotationMatrix {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        RotationMatrix([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    /// Shepperd's method; rejects matrices that are not rotations within
    /// [`MATRIX_ORTHO`].
    pub fn from_matrix(m: &RotationMatrix) -> Result<Self> {
        m.validate()?;
        let r = &m.0;
        let tr = r[0][0] + r[1][1] + r[2][2];
        let (w, x, y, z);
        if tr > r[0][0] && tr > r[1][1] && tr > r[2][2] {
            let s = 2.0 * (1.0 + tr).sqrt();
            w = 0.25 * s;
            x = (r[2][1] - r[1][2]) / s;
            y = (r[0][2] - r[2][0]) / s;
            z = (r[1][0] - r[0][1]) / s;
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = 2.0 * (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt();
            w = (r[2][1] - r[1][2]) / s;
            x = 0.25 * s;
            y = (r[0][1] + r[1][0]) / s;
            z = (r[0][2] + r[2][0]) / s;
        } else if r[1][1] > r[2][2] {
            let s = 2.0 * (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt();
            w = (r[0][2] - r[2][0]) / s;
            x = (r[0][1] + r[1][0]) / s;
            y = 0.25 * s;
            z = (r[1][2] + r[2][1]) / s;
        } else {
            let s = 2.0 * (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt();
            w = (r[1][0] - r[0][1]) / s;
            x = (r[0][2] + r[2][0]) / s;
            y = (r[1][2] + r[2][1]) / s;
            z = 0.25 * s;
        }
        Self::from_wxyz(w, x, y, z)
    }
}

impl std::ops::Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: Self) -> Self::Output {
        self.compose(&rhs)
    }
}

/// Raw Hamilton product on 4-arrays `(w, x, y, z)`.
#[inline]
pub fn hamilton(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        RotationMatrix(out)
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        RotationMatrix([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn frobenius_dist(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.0[i][j] - other.0[i][j];
                s += d * d;
            }
        }
        s.sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let rtr = self.transpose().mul(self);
        let off = rtr.frobenius_dist(&RotationMatrix::identity());
        if off > MATRIX_ORTHO {
            return Err(Error::InvalidRotation(format!(
                "‖RᵀR − I‖ = {off:e} exceeds {MATRIX_ORTHO:e}"
            )));
        }
        let det = self.determinant();
        if (det - 1.0).abs() > MATRIX_ORTHO {
            return Err(Error::InvalidRotation(format!("det = {det}")));
        }
        Ok(())
    }
}

/// Geodesic angle between two rotations, in degrees (`[0, 180]`).
pub fn geodesic_deg(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    geodesic_rad(a, b).to_degrees()
}

pub fn geodesic_rad(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let r = hamilton(a.inverse().to_array(), b.to_array());
    let s = (r[1] * r[1] + r[2] * r[2] + r[3] * r[3]).sqrt();
    2.0 * s.atan2(r[0].abs())
}

/// Quaternion metric `min(‖a − b‖, ‖a + b‖)`.
pub fn quat_dist(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    quat_dist_raw(a.to_array(), b.to_array())
}

/// [`quat_dist`] on raw 4-vectors, invariant to sign flips of either argument.
pub fn quat_dist_raw(a: [f64; 4], b: [f64; 4]) -> f64 {
    let mut minus = 0.0;
    let mut plus = 0.0;
    for i in 0..4 {
        minus += (a[i] - b[i]) * (a[i] - b[i]);
        plus += (a[i] + b[i]) * (a[i] + b[i]);
    }
    minus.min(plus).sqrt()
}

/// Chordal metric `‖R_a − R_b‖_F`.
pub fn chordal_dist(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    a.to_matrix().frobenius_dist(&b.to_matrix())
}

/// Haar-uniform random rotation (normalised 4-D Gaussian).
pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        if let Ok(q) = UnitQuaternion::from_wxyz(w, x, y, z) {
            return q;
        }
    }
}

/// Distribution of noise rotation axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseAxis {
    /// Uniform on the unit sphere.
    Sphere,
    /// Uniform on the unit circle in the x–z plane (zero up component).
    Horizontal,
    /// Clustered around world up: `|y| ~ U[min_cos, 1]`, uniform azimuth,
    /// random sign.
    NearVertical { min_cos: f64 },
}

/// Default clustering of near-vertical noise axes.
pub const DEFAULT_AXIS_CONCENTRATION: f64 = 0.7;

/// Noise rotation with half-normal angle `|N(0, σ)|` (clipped to 180°).
///
/// `vertical_axis` selects [`NoiseAxis::NearVertical`] with the default
/// concentration; otherwise axes are uniform on the sphere.
pub fn sample_noise<R: Rng + ?Sized>(
    sigma_deg: f64,
    vertical_axis: bool,
    rng: &mut R,
) -> UnitQuaternion {
    let axis = if vertical_axis {
        NoiseAxis::NearVertical {
            min_cos: DEFAULT_AXIS_CONCENTRATION,
        }
    } else {
        NoiseAxis::Sphere
    };
    sample_noise_with(sigma_deg, axis, rng)
}

pub fn sample_noise_with<R: Rng + ?Sized>(
    sigma_deg: f64,
    axis: NoiseAxis,
    rng: &mut R,
) -> UnitQuaternion {
    if sigma_deg <= 0.0 {
        return UnitQuaternion::IDENTITY;
    }
    let g: f64 = rng.sample(StandardNormal);
    let angle = (g.abs() * sigma_deg).min(180.0).to_radians();
    let dir = sample_axis(axis, rng);
    let (s, c) = (0.5 * angle).sin_cos();
    UnitQuaternion::canonical(c, dir[0] * s, dir[1] * s, dir[2] * s)
}

fn sample_axis<R: Rng + ?Sized>(axis: NoiseAxis, rng: &mut R) -> [f64; 3] {
    match axis {
        NoiseAxis::Sphere => loop {
            let v: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-9 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        },
        NoiseAxis::Horizontal => {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            [phi.cos(), 0.0, phi.sin()]
        }
        NoiseAxis::NearVertical { min_cos } => {
            let c = rng.random_range(min_cos.clamp(0.0, 1.0)..=1.0);
            let s = (1.0 - c * c).max(0.0).sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            [sign * phi.sin() * s, sign * c, sign * phi.cos() * s]
        }
    }
}
