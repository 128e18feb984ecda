use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use super::QuadrotorParams;
use crate::error::{Error, Result};

const MAX_CONDITION: f64 = 1e6;

/// Control-effectiveness model: `[T, τx, τy, τz]ᵀ = G u`, plus the 3×3
/// reduced model `[T, τx, τy]ᵀ = G̃ ũ` once a rotor has failed.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationModel {
    pub full: Matrix4<f64>,
    pub full_inverse: Matrix4<f64>,
    pub reduced: Option<ReducedAllocation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedAllocation {
    /// Failed rotor, 1-based.
    pub failed_rotor: usize,
    pub matrix: Matrix3<f64>,
    pub inverse: Matrix3<f64>,
}

fn condition_number<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> f64 {
    let sv = nalgebra::DMatrix::from_column_slice(N, N, m.as_slice()).singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Builds the full effectiveness matrix from rotor geometry.
///
/// Row 1 sums thrusts, rows 2–3 are the moment arms `(y_i, -x_i)` and row 4
/// is `κ · s_i`.
pub fn build_allocation_matrix(params: &QuadrotorParams) -> Result<AllocationModel> {
    params.validate()?;
    let mut g = Matrix4::zeros();
    for i in 0..4 {
        let r = params.rotor_position(i + 1);
        g[(0, i)] = 1.0;
        g[(1, i)] = r.y;
        g[(2, i)] = -r.x;
        g[(3, i)] = params.torque_ratio * params.spin_directions[i];
    }
    let condition = condition_number(&g);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularAllocation { condition });
    }
    let full_inverse = g.try_inverse().ok_or(Error::SingularAllocation { condition })?;
    Ok(AllocationModel { full: g, full_inverse, reduced: None })
}

impl AllocationModel {
    /// Drops the yaw row and the column of the failed rotor.
    pub fn reduce(&self, rotor: usize) -> Result<AllocationModel> {
        if !(1..=4).contains(&rotor) {
            return Err(Error::InvalidRotor(rotor));
        }
        let cols: Vec<usize> = (0..4).filter(|&c| c != rotor - 1).collect();
        let m = Matrix3::from_fn(|r, c| self.full[(r, cols[c])]);
        let condition = condition_number(&m);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::SingularReducedAllocation { rotor, condition });
        }
        let inverse = m.try_inverse().ok_or(Error::SingularReducedAllocation { rotor, condition })?;
        Ok(AllocationModel {
            full: self.full,
            full_inverse: self.full_inverse,
            reduced: Some(ReducedAllocation { failed_rotor: rotor, matrix: m, inverse }),
        })
    }

    pub fn failed_rotor(&self) -> Option<usize> {
        self.reduced.as_ref().map(|r| r.failed_rotor)
    }

    /// `[T, τx, τy, τz]` produced by per-rotor thrusts.
    pub fn wrench(&self, thrusts: &Vector4<f64>) -> Vector4<f64> {
        self.full * thrusts
    }
}

/// Convenience wrapper matching the operation name used across the crate.
pub fn reduce_allocation(model: &AllocationModel, rotor: usize) -> Result<AllocationModel> {
    model.reduce(rotor)
}

/// Inserts a zero for the failed rotor into a 3-vector of remaining thrusts.
pub fn embed_reduced(reduced: &Vector3<f64>, failed_rotor: usize) -> Vector4<f64> {
    let mut out = Vector4::zeros();
    let mut k = 0;
    for i in 0..4 {
        if i + 1 == failed_rotor {
            continue;
        }
        out[i] = reduced[k];
        k += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn default_model() -> AllocationModel {
        build_allocation_matrix(&QuadrotorParams::default()).unwrap()
    }

    /// Sum of individual rotor wrenches, computed from first principles.
    fn wrench_oracle(p: &QuadrotorParams, u: &Vector4<f64>) -> Vector4<f64> {
        let mut force = Vector3::zeros();
        let mut torque = Vector3::zeros();
        for i in 0..4 {
            let f = Vector3::new(0.0, 0.0, u[i]);
            force += f;
            torque += p.rotor_position(i + 1).cross(&f);
            torque.z += p.torque_ratio * p.spin_directions[i] * u[i];
        }
        Vector4::new(force.z, torque.x, torque.y, torque.z)
    }

    #[test]
    fn equal_thrusts_give_pure_collective() {
        let m = default_model();
        let w = m.wrench(&Vector4::repeat(1.7));
        assert_relative_eq!(w[0], 6.8, epsilon = 1e-12);
        for k in 1..4 {
            assert!(w[k].abs() < 1e-12, "row {k}: {}", w[k]);
        }
    }

    #[test]
    fn yaw_row_alternates() {
        let m = default_model();
        assert_relative_eq!(m.full[(3, 0)], 0.016);
        assert_relative_eq!(m.full[(3, 1)], -0.016);
        assert_relative_eq!(m.full[(3, 2)], 0.016);
        assert_relative_eq!(m.full[(3, 3)], -0.016);
        for c in 0..4 {
            assert_eq!(m.full[(0, c)], 1.0);
        }
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let p = QuadrotorParams { rotor_azimuths_deg: [45.0; 4], ..Default::default() };
        assert!(matches!(build_allocation_matrix(&p), Err(Error::SingularAllocation { .. })));
    }

    #[test]
    fn reduction_drops_row_and_column() {
        let m = default_model();
        let r = m.reduce(4).unwrap();
        let red = r.reduced.as_ref().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(red.matrix[(i, j)], m.full[(i, j)]);
            }
        }
        assert_relative_eq!(red.matrix * red.inverse, Matrix3::identity(), epsilon = 1e-10);
        assert!(matches!(m.reduce(0), Err(Error::InvalidRotor(0))));
        assert!(matches!(m.reduce(5), Err(Error::InvalidRotor(5))));
    }

    #[test]
    fn every_failure_is_invertible() {
        let m = default_model();
        for i in 1..=4 {
            let r = m.reduce(i).unwrap();
            assert_eq!(r.failed_rotor(), Some(i));
        }
    }

    proptest! {
        #[test]
        fn full_matrix_matches_wrench_sum(
            arm in 0.05f64..0.4,
            kappa in 0.001f64..0.05,
            u in proptest::array::uniform4(0.0f64..8.0),
            jitter in proptest::array::uniform4(-10.0f64..10.0),
        ) {
            let mut p = QuadrotorParams { arm_length: arm, torque_ratio: kappa, ..Default::default() };
            for (a, j) in p.rotor_azimuths_deg.iter_mut().zip(jitter) {
                *a += j;
            }
            let m = build_allocation_matrix(&p).unwrap();
            let u = Vector4::from(u);
            let diff = m.wrench(&u) - wrench_oracle(&p, &u);
            prop_assert!(diff.amax() < 1e-12);
        }

        #[test]
        fn reduced_model_agrees_with_full(
            failed in 1usize..=4,
            ut in proptest::array::uniform3(0.0f64..8.0),
        ) {
            let m = default_model().reduce(failed).unwrap();
            let ut = Vector3::from(ut);
            let red = m.reduced.as_ref().unwrap();
            let reduced_wrench = red.matrix * ut;
            let full = m.wrench(&embed_reduced(&ut, failed));
            for k in 0..3 {
                prop_assert_eq!(reduced_wrench[k], full[k]);
            }
        }
    }
}
