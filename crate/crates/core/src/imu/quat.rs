use crate::scalar::Scalar;

/// Hamilton quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

/// Largest accepted deviation of `|q|` from one.
pub const UNIT_TOLERANCE: f64 = 1e-6;

impl<T: Scalar> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Rotation by `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: [T; 3], angle: T) -> Self {
        let half = angle * T::lit(0.5);
        let s = half.sin();
        Self::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    pub fn yaw(angle: T) -> Self {
        Self::from_axis_angle([T::zero(), T::zero(), T::one()], angle)
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conj(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - T::one()).abs() <= T::lit(UNIT_TOLERANCE)
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Normalized linear interpolation along the shorter arc.
    pub fn nlerp(&self, o: &Self, t: T) -> Self {
        let o = if self.dot(o) < T::zero() { Self::new(-o.w, -o.x, -o.y, -o.z) } else { *o };
        let s = T::one() - t;
        Self::new(s * self.w + t * o.w, s * self.x + t * o.x, s * self.y + t * o.y, s * self.z + t * o.z).normalized()
    }
}

/// Vector part of `q · (0, v) · q*`: maps a device-frame vector into the global frame.
///
/// Returns `None` when `q` is not unit within [`UNIT_TOLERANCE`].
pub fn rotate_to_global<T: Scalar>(v: [T; 3], q: &Quat<T>) -> Option<[T; 3]> {
    if !q.is_unit() {
        return None;
    }
    let p = Quat::new(T::zero(), v[0], v[1], v[2]);
    let r = q.mul(&p).mul(&q.conj());
    Some([r.x, r.y, r.z])
}
