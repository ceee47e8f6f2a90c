use super::Scalar;

/// Huber threshold; equal to the LAP priority floor.
pub const HUBER_THRESHOLD: f64 = 1.0;

/// `0.5·r²` for `|r| ≤ κ`, `κ·(|r| − 0.5·κ)` beyond.
pub fn huber<S: Scalar>(residual: S, threshold: S) -> S {
    let a = residual.abs();
    let half = S::of(0.5);
    if a <= threshold {
        half * residual * residual
    } else {
        threshold * (a - half * threshold)
    }
}

/// Derivative of [`huber`] with respect to the residual.
pub fn huber_grad<S: Scalar>(residual: S, threshold: S) -> S {
    if residual.abs() <= threshold {
        residual
    } else {
        threshold * residual.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branches() {
        assert_eq!(huber(0.5f64, 1.0), 0.125);
        assert_eq!(huber(0.0f64, 1.0), 0.0);
        assert_eq!(huber(2.0f64, 1.0), 1.5);
        assert_eq!(huber(-2.0f64, 1.0), 1.5);
    }

    #[test]
    fn continuous_and_c1_at_threshold() {
        let k = 1.0f64;
        let h = 1e-6;
        for t in [k, -k] {
            let below = huber(t - h * t.signum(), k);
            let above = huber(t + h * t.signum(), k);
            assert!((below - above).abs() < 1e-5);
            let gb = huber_grad(t - h * t.signum(), k);
            let ga = huber_grad(t + h * t.signum(), k);
            assert!((gb - ga).abs() < 1e-5);
        }
    }
}
