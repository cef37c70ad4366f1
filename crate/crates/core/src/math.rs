//! Scalar numerics shared across modules: stable sigmoids, log-sum-exp,
//! compensated summation, and central finite differences.

/// Numerically stable logistic function.
///
/// Both branches divide by the same `1 + exp(-|z|)`, so `sigmoid(z)` and
/// `sigmoid(-z)` sum to 1 up to one rounding each.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function, `sigmoid'(z) = sigmoid(z)sigmoid(-z)`.
pub fn sigmoid_prime(z: f64) -> f64 {
    sigmoid(z) * sigmoid(-z)
}

/// `ln(sigmoid(z))` without overflow for large `|z|`.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Log-sum-exp with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Neumaier compensated accumulator.
///
/// Keeps the running compensation separate so that sums over the enumerated
/// response space are accurate to a few ulps regardless of term ordering.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_gradient<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = point.to_vec();
    let mut g = vec![0.0; point.len()];
    for i in 0..point.len() {
        p[i] = point[i] + h;
        let fp = f(&p);
        p[i] = point[i] - h;
        let fm = f(&p);
        p[i] = point[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector function, returned row-major as
/// `jac[i][j] = d f_i / d x_j`. Used to build finite-difference Hessians
/// from analytic gradients.
pub fn finite_diff_jacobian<F>(f: F, point: &[f64], h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let d = point.len();
    let mut p = point.to_vec();
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        p[j] = point[j] + h;
        let fp = f(&p);
        p[j] = point[j] - h;
        let fm = f(&p);
        p[j] = point[j];
        for i in 0..fp.len() {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative L2 distance `|a - b| / max(|b|, floor)`.
pub fn rel_l2_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / l2_norm(b).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_pair_sums_to_one() {
        for &z in &[0.0, 0.3, -0.7, 4.2, -11.0, 35.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15, "z={z}");
        }
    }

    #[test]
    fn sigmoid_prime_matches_definition() {
        for &z in &[-3.0, -0.1, 0.0, 0.5, 2.0] {
            let fd = (sigmoid(z + 1e-6) - sigmoid(z - 1e-6)) / 2e-6;
            assert!((sigmoid_prime(z) - fd).abs() < 1e-9);
        }
    }

    #[test]
    fn log_sigmoid_stable_at_extremes() {
        assert!((log_sigmoid(50.0)).abs() < 2e-22);
        assert!((log_sigmoid(-1000.0) + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn compensated_sum_beats_naive_on_cancellation() {
        let terms = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(terms.iter().copied()), 1.0);
        let naive: f64 = terms.iter().sum();
        assert_eq!(naive, 0.0);
    }

    #[test]
    fn finite_diff_gradient_quadratic() {
        let f = |v: &[f64]| v[0] * v[0] + 3.0 * v[0] * v[1];
        let g = finite_diff_gradient(f, &[1.0, 2.0], 1e-6);
        assert!((g[0] - 8.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }
}
