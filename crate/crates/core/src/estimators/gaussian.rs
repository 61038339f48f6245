use nalgebra::DMatrix;

use super::{MiEstimate, MiMethod};
use crate::error::{Error, Result};
use crate::linalg::log_det_spd;

/// `1/2 ln(det Sxx det Syy / det S)` for jointly Gaussian `X`, `Y`.
pub fn gaussian_mi(
    cov_xx: &DMatrix<f64>,
    cov_yy: &DMatrix<f64>,
    cov_xy: &DMatrix<f64>,
) -> Result<MiEstimate> {
    let (dx, dy) = (cov_xx.nrows(), cov_yy.nrows());
    if cov_xx.ncols() != dx || cov_yy.ncols() != dy {
        return Err(Error::Domain("covariance blocks must be square".into()));
    }
    if cov_xy.nrows() != dx || cov_xy.ncols() != dy {
        return Err(Error::DimensionMismatch {
            expected: dx * dy,
            got: cov_xy.nrows() * cov_xy.ncols(),
        });
    }
    let mut joint = DMatrix::zeros(dx + dy, dx + dy);
    joint.view_mut((0, 0), (dx, dx)).copy_from(cov_xx);
    joint.view_mut((dx, dx), (dy, dy)).copy_from(cov_yy);
    joint.view_mut((0, dx), (dx, dy)).copy_from(cov_xy);
    joint
        .view_mut((dx, 0), (dy, dx))
        .copy_from(&cov_xy.transpose());
    gaussian_mi_joint(&joint, dx)
}

/// Same as [`gaussian_mi`] on a stacked covariance whose first `split`
/// coordinates are `X`.
pub fn gaussian_mi_joint(joint: &DMatrix<f64>, split: usize) -> Result<MiEstimate> {
    let n = joint.nrows();
    if split == 0 || split >= n {
        return Err(Error::InvalidDimension(format!(
            "split {split} must leave both blocks nonempty (n = {n})"
        )));
    }
    let lx = log_det_spd(&joint.view((0, 0), (split, split)).into_owned())?;
    let ly = log_det_spd(&joint.view((split, split), (n - split, n - split)).into_owned())?;
    let lj = log_det_spd(joint)?;
    Ok(MiEstimate {
        value: (0.5 * (lx + ly - lj)).max(0.0),
        method: MiMethod::GaussianClosedForm,
        n_samples: None,
        k: None,
        saturated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthonormal;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_examples() {
        let eye = DMatrix::identity(2, 2);
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(gaussian_mi(&eye, &eye, &zero).unwrap().value, 0.0);

        let one = DMatrix::from_element(1, 1, 1.0);
        let c = DMatrix::from_element(1, 1, 0.5);
        let mi = gaussian_mi(&one, &one, &c).unwrap().value;
        assert!((mi - 0.14384103622589045).abs() < 1e-14);

        let c = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            gaussian_mi(&one, &one, &c),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    proptest! {
        #[test]
        fn invariant_under_block_rotations(seed in 0u64..200, r1 in 0.0f64..0.95, r2 in 0.0f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_orthonormal(3, 2, &mut rng).unwrap();
            let v = random_orthonormal(3, 2, &mut rng).unwrap();
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![r1, r2]));
            let c = &u * d * v.transpose();
            let eye = DMatrix::identity(3, 3);
            let base = gaussian_mi(&eye, &eye, &c).unwrap().value;
            let qx = random_orthonormal(3, 3, &mut rng).unwrap();
            let qy = random_orthonormal(3, 3, &mut rng).unwrap();
            let rotated = gaussian_mi(
                &(&qx * &eye * qx.transpose()),
                &(&qy * &eye * qy.transpose()),
                &(&qx * &c * qy.transpose()),
            ).unwrap().value;
            let truth = -0.5 * ((1.0 - r1 * r1).ln() + (1.0 - r2 * r2).ln());
            prop_assert!((base - truth).abs() < 1e-9);
            prop_assert!((rotated - base).abs() < 1e-9);
        }
    }
}
