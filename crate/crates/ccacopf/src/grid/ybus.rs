use super::{AdmittanceMatrix, GridError, NetworkCase};
use crate::scalar::Scalar;
use nalgebra::DMatrix;

/// Builds the bus admittance matrix from branch and shunt data.
///
/// For a branch between i and j with series impedance z = r + jx and total
/// charging b_sh (supported subset: unit taps, no phase shift):
///
/// ```text
/// y        = 1 / z
/// Y[i][i] += y + j·b_sh/2      (same at j)
/// Y[i][j] -= y                 (same transposed)
/// ```
///
/// Bus shunts gs + j·bs add to the diagonal. The result is symmetric.
pub fn build_admittance<T: Scalar>(
    case: &NetworkCase<T>,
) -> Result<AdmittanceMatrix<T>, GridError> {
    let n = case.n_buses();
    let mut g = DMatrix::<T>::zeros(n, n);
    let mut b = DMatrix::<T>::zeros(n, n);

    for br in &case.branches {
        let d = br.r * br.r + br.x * br.x;
        if d == T::zero() {
            return Err(GridError::SingularBranch {
                from: case.buses[br.from].ext_id,
                to: case.buses[br.to].ext_id,
            });
        }
        let gs = br.r / d;
        let bs = -br.x / d;
        let half_charge = br.b_sh / T::c(2.0);
        let (i, j) = (br.from, br.to);

        g[(i, i)] += gs;
        g[(j, j)] += gs;
        b[(i, i)] += bs + half_charge;
        b[(j, j)] += bs + half_charge;
        g[(i, j)] -= gs;
        g[(j, i)] -= gs;
        b[(i, j)] -= bs;
        b[(j, i)] -= bs;
    }

    for bus in &case.buses {
        g[(bus.id, bus.id)] += bus.gs;
        b[(bus.id, bus.id)] += bus.bs;
    }

    Ok(AdmittanceMatrix { g, b })
}
