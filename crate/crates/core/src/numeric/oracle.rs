use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `w` with step `h`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("core", format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = w.to_vec();
    let mut grad = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric("core", format!("f is not finite around parameter {i}")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}
