//! Direct O(D²) circular convolution and correlation.
//!
//! Reference path for the transform kernel and the cost model behind the
//! `2BD²` FLOP count. Not used on the training hot path.

use super::Scalar;
use crate::error::{check_dims, Result};

/// `V_j = Σ_k K_k · Z_{(j−k) mod D}`
pub fn bind<T: Scalar>(key: &[T], z: &[T]) -> Result<Vec<T>> {
    check_dims("bind", key.len(), z.len())?;
    let d = key.len();
    let mut out = vec![T::zero(); d];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (k, &kk) in key.iter().enumerate() {
            acc = acc + kk * z[(j + d - k) % d];
        }
        *o = acc;
    }
    Ok(out)
}

/// `Ẑ_j = Σ_k K_k · S_{(j+k) mod D}`
pub fn unbind<T: Scalar>(key: &[T], s: &[T]) -> Result<Vec<T>> {
    check_dims("unbind", key.len(), s.len())?;
    let d = key.len();
    let mut out = vec![T::zero(); d];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (k, &kk) in key.iter().enumerate() {
            acc = acc + kk * s[(j + k) % d];
        }
        *o = acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_shifts() {
        assert_eq!(
            bind(&[0.0, 1.0, 0.0, 0.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![4.0, 1.0, 2.0, 3.0]
        );
        assert_eq!(
            unbind(&[0.0, 1.0, 0.0, 0.0], &[4.0, 1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn mismatch_is_rejected() {
        assert!(bind(&[1.0, 0.0], &[1.0]).is_err());
        assert!(unbind(&[1.0f32], &[1.0, 2.0]).is_err());
    }
}
