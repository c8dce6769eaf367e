use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const ORIGIN: Point2D = Point2D { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point2D { x, y }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Pixel-center pivot of a `height × width` raster.
    pub fn image_center(height: usize, width: usize) -> Self {
        Point2D::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    /// The four pixel-center corners, clockwise from the top-left.
    pub fn image_corners(height: usize, width: usize) -> [Point2D; 4] {
        let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
        [
            Point2D::new(0.0, 0.0),
            Point2D::new(w, 0.0),
            Point2D::new(w, h),
            Point2D::new(0.0, h),
        ]
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Rotation by `angle` about `center` followed by a translation.
///
/// `apply(p) = R(angle)·(p − center) + center + translation`, where
/// `R(θ) = [[cos θ, −sin θ], [sin θ, cos θ]]` acts on raster coordinates
/// (x right, y down). Registration transforms map reference coordinates to
/// floating-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2D {
    pub angle: f64,
    pub tx: f64,
    pub ty: f64,
    pub center: Point2D,
}

impl Default for RigidTransform2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for RigidTransform2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rot {:.4} rad ({:.2}°), t=({:.3}, {:.3}) about ({:.1}, {:.1})",
            self.angle,
            self.angle.to_degrees(),
            self.tx,
            self.ty,
            self.center.x,
            self.center.y
        )
    }
}

impl RigidTransform2D {
    pub fn new(angle: f64, tx: f64, ty: f64, center: Point2D) -> Self {
        RigidTransform2D {
            angle,
            tx,
            ty,
            center,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0, Point2D::ORIGIN)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(0.0, tx, ty, Point2D::ORIGIN)
    }

    pub fn rotation_about(angle: f64, center: Point2D) -> Self {
        Self::new(angle, 0.0, 0.0, center)
    }

    pub fn is_finite(&self) -> bool {
        self.angle.is_finite()
            && self.tx.is_finite()
            && self.ty.is_finite()
            && self.center.x.is_finite()
            && self.center.y.is_finite()
    }

    /// Affine form `p ↦ A·p + b`, returned as `(cos, sin, bx, by)`.
    pub fn affine(&self) -> (f64, f64, f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (cx, cy) = (self.center.x, self.center.y);
        let bx = cx + self.tx - (c * cx - s * cy);
        let by = cy + self.ty - (s * cx + c * cy);
        (c, s, bx, by)
    }

    fn from_affine(angle: f64, bx: f64, by: f64, center: Point2D) -> Self {
        let (s, c) = angle.sin_cos();
        let (cx, cy) = (center.x, center.y);
        RigidTransform2D {
            angle,
            tx: bx - cx + (c * cx - s * cy),
            ty: by - cy + (s * cx + c * cy),
            center,
        }
    }

    #[inline]
    pub fn apply(&self, p: Point2D) -> Point2D {
        let (s, c) = self.angle.sin_cos();
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        Point2D::new(
            c * dx - s * dy + self.center.x + self.tx,
            s * dx + c * dy + self.center.y + self.ty,
        )
    }

    /// `compose(t1, t2)(p) == t1(t2(p))`; the result pivots about `t2.center`.
    pub fn compose(t1: &RigidTransform2D, t2: &RigidTransform2D) -> RigidTransform2D {
        let (c1, s1, b1x, b1y) = t1.affine();
        let (_, _, b2x, b2y) = t2.affine();
        let bx = c1 * b2x - s1 * b2y + b1x;
        let by = s1 * b2x + c1 * b2y + b1y;
        Self::from_affine(wrap_angle(t1.angle + t2.angle), bx, by, t2.center)
    }

    pub fn then(&self, next: &RigidTransform2D) -> RigidTransform2D {
        Self::compose(next, self)
    }

    pub fn inverse(&self) -> RigidTransform2D {
        let (c, s, bx, by) = self.affine();
        // R⁻¹ = Rᵀ, b' = −Rᵀ·b
        let ibx = -(c * bx + s * by);
        let iby = -(-s * bx + c * by);
        Self::from_affine(wrap_angle(-self.angle), ibx, iby, self.center)
    }

    /// Same mapping expressed about a different pivot.
    pub fn with_center(&self, center: Point2D) -> RigidTransform2D {
        let (_, _, bx, by) = self.affine();
        Self::from_affine(self.angle, bx, by, center)
    }

    /// Mean corner displacement `¼ Σ ‖C_i − t(C_i)‖` over the image corners.
    pub fn corner_displacement(&self, height: usize, width: usize) -> f64 {
        Point2D::image_corners(height, width)
            .iter()
            .map(|c| c.distance(&self.apply(*c)))
            .sum::<f64>()
            / 4.0
    }
}

pub fn apply_rigid(t: &RigidTransform2D, p: Point2D) -> Point2D {
    t.apply(p)
}

pub fn compose(t1: &RigidTransform2D, t2: &RigidTransform2D) -> RigidTransform2D {
    RigidTransform2D::compose(t1, t2)
}

pub fn invert(t: &RigidTransform2D) -> RigidTransform2D {
    t.inverse()
}

/// Element of the cyclic group of quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct C4Element(u8);

impl C4Element {
    pub const IDENTITY: C4Element = C4Element(0);
    pub const ALL: [C4Element; 4] = [C4Element(0), C4Element(1), C4Element(2), C4Element(3)];

    /// `k` quarter turns; any integer is reduced modulo 4.
    pub fn new(k: i64) -> Self {
        C4Element(k.rem_euclid(4) as u8)
    }

    pub fn k(self) -> usize {
        self.0 as usize
    }

    pub fn compose(self, other: C4Element) -> C4Element {
        C4Element((self.0 + other.0) % 4)
    }

    pub fn inverse(self) -> C4Element {
        C4Element((4 - self.0) % 4)
    }

    pub fn is_identity(self) -> bool {
        self.0 == 0
    }

    pub fn angle(self) -> f64 {
        self.0 as f64 * PI / 2.0
    }
}
