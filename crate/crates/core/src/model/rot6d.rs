//! Continuous 6D rotation representation: two 3-vectors whose Gram-Schmidt
//! orthonormalization gives the first two columns of the rotation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub fn from_columns(a: &Vec3, b: &Vec3) -> Self {
        Self([a.x, a.y, a.z, b.x, b.y, b.z])
    }

    pub fn from_matrix(m: &Mat3) -> Self {
        Self::from_columns(&m.column(0).into_owned(), &m.column(1).into_owned())
    }

    pub fn a(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn b(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn decode(&self) -> Result<Mat3> {
        let (a, b) = (self.a(), self.b());
        let an = a.norm();
        if !(an > 1e-12) || !an.is_finite() {
            return Err(Error::Rotation("first vector is zero".into()));
        }
        let c0 = a / an;
        let b_perp = b - c0 * c0.dot(&b);
        let bn = b_perp.norm();
        if !(bn > 1e-9 * b.norm()) {
            return Err(Error::Rotation("vectors are parallel".into()));
        }
        let c1 = b_perp / bn;
        Ok(Mat3::from_columns(&[c0, c1, c0.cross(&c1)]))
    }

    /// Re-encoding of the decoded rotation.
    pub fn canonical(&self) -> Result<Rotation6D> {
        Ok(Rotation6D::from_matrix(&self.decode()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::is_rotation;

    #[test]
    fn canonical_basis_decodes_to_identity() {
        let r = Rotation6D::from_columns(&Vec3::x(), &Vec3::y()).decode().unwrap();
        assert_eq!(r, Mat3::identity());
    }

    #[test]
    fn parallel_vectors_fail() {
        let r = Rotation6D::from_columns(&Vec3::new(1.0, 2.0, 3.0), &Vec3::new(2.0, 4.0, 6.0));
        assert!(matches!(r.decode(), Err(Error::Rotation(_))));
    }

    #[test]
    fn decode_is_a_rotation() {
        let r = Rotation6D([0.3, -1.2, 0.5, 2.0, 0.1, -0.7]).decode().unwrap();
        assert!(is_rotation(&r, 1e-9));
    }
}
