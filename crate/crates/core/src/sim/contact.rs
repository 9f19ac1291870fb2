use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

/// Penetration beyond this depth produces no additional force.
pub const MAX_PENETRATION: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// Half-space; solid on the side opposite `normal`.
    Plane { point: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

/// Penalty contact primitive (spring-damper along the surface normal).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSurface {
    pub name: String,
    #[serde(flatten)]
    pub shape: Shape,
    /// N/m.
    pub stiffness: f64,
    /// N·s/m.
    #[serde(default)]
    pub damping: f64,
}

impl ContactSurface {
    pub fn plane(name: &str, point: Vec3, normal: Vec3, stiffness: f64, damping: f64) -> Self {
        ContactSurface {
            name: name.into(),
            shape: Shape::Plane {
                point: point.into(),
                normal: normal.normalize().into(),
            },
            stiffness,
            damping,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.stiffness > 0.0) || !self.stiffness.is_finite() {
            return Err(format!("surface `{}`: stiffness must be positive", self.name));
        }
        if !(self.damping >= 0.0) {
            return Err(format!("surface `{}`: damping must be non-negative", self.name));
        }
        match self.shape {
            Shape::Plane { normal, .. } if !(Vec3::from(normal).norm() > 1e-12) => {
                Err(format!("surface `{}`: plane normal is zero", self.name))
            }
            Shape::Sphere { radius, .. } if !(radius > 0.0) => {
                Err(format!("surface `{}`: sphere radius must be positive", self.name))
            }
            _ => Ok(()),
        }
    }

    /// Outward unit normal at (or nearest to) `p`.
    pub fn normal_at(&self, p: &Vec3) -> Vec3 {
        match self.shape {
            Shape::Plane { normal, .. } => Vec3::from(normal).normalize(),
            Shape::Sphere { center, .. } => {
                let d = p - Vec3::from(center);
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Vec3::z()
                }
            }
        }
    }

    /// Signed penetration depth of `p` (positive inside the solid).
    pub fn depth(&self, p: &Vec3) -> f64 {
        match self.shape {
            Shape::Plane { point, normal } => {
                -(p - Vec3::from(point)).dot(&Vec3::from(normal).normalize())
            }
            Shape::Sphere { center, radius } => radius - (p - Vec3::from(center)).norm(),
        }
    }

    /// Penetration used for force computation, in `[0, MAX_PENETRATION]`.
    pub fn capped_depth(&self, p: &Vec3) -> f64 {
        self.depth(p).clamp(0.0, MAX_PENETRATION)
    }

    /// Force the surface exerts on a point at capped depth `d`, penetrating
    /// at rate `d_rate`. Never pulls.
    pub fn force(&self, p: &Vec3, d: f64, d_rate: f64) -> Vec3 {
        if d <= 0.0 {
            return Vec3::zeros();
        }
        let mag = (self.stiffness * d + self.damping * d_rate).max(0.0);
        self.normal_at(p) * mag
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_millimetre_into_stiff_plane() {
        let s = ContactSurface::plane("table", Vec3::zeros(), Vec3::z(), 1000.0, 5.0);
        let p = Vec3::new(0.2, 0.1, -0.001);
        let d = s.capped_depth(&p);
        let f = s.force(&p, d, 0.0);
        assert!((f.z - 1.0).abs() < 1e-12);
        assert_eq!(s.force(&Vec3::new(0.0, 0.0, 0.01), 0.0, 0.0), Vec3::zeros());
    }

    #[test]
    fn penetration_is_capped() {
        let s = ContactSurface::plane("table", Vec3::zeros(), Vec3::z(), 1000.0, 0.0);
        assert_eq!(s.capped_depth(&Vec3::new(0.0, 0.0, -0.5)), MAX_PENETRATION);
    }

    #[test]
    fn sphere_normal_points_outward() {
        let s = ContactSurface {
            name: "ball".into(),
            shape: Shape::Sphere {
                center: [0.0, 0.0, 0.0],
                radius: 0.1,
            },
            stiffness: 100.0,
            damping: 0.0,
        };
        let p = Vec3::new(0.0, 0.099, 0.0);
        assert!((s.depth(&p) - 0.001).abs() < 1e-12);
        assert!((s.normal_at(&p) - Vec3::y()).norm() < 1e-12);
    }
}
