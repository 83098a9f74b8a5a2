//! Dense tensor arithmetic with reverse-mode automatic differentiation and
//! an Adam optimizer; the substrate every other module computes on.
//!
//! Double precision throughout. No broadcasting except scalar scaling and
//! bias row-broadcast; shape mismatches are hard errors rather than silent
//! promotion.

mod adam;
mod tensor;
mod tape;

pub use adam::{adam_step, AdamState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Central-difference gradient estimate of a scalar-valued function,
/// `(f(x+step) - f(x-step)) / (2 step)` per entry. The independent oracle
/// used by every gradient check.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, step: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(step > 0.0, "finite difference step must be positive");
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_sum_is_all_ones() {
        let x = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let g = finite_difference_grad(|t| t.data().iter().sum(), &x, 1e-6);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fd_of_square_at_three() {
        let x = Tensor::scalar(3.0);
        let g = finite_difference_grad(|t| t.data()[0] * t.data()[0], &x, 1e-6);
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }
}
