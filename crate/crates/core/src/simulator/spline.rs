use super::SimError;

/// Natural cubic spline through `(knots[i], values[i])`; C² with zero second
/// derivative at both ends.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(knots: &[f64], values: &[f64]) -> Result<Self, SimError> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(SimError::DegenerateSpline(format!("need at least 2 controls, got {n}")));
        }
        if knots.iter().chain(values).any(|v| !v.is_finite()) {
            return Err(SimError::DegenerateSpline("non-finite control".into()));
        }
        if let Some(i) = knots.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SimError::DegenerateSpline(format!(
                "control times must be strictly increasing (controls {i} and {})",
                i + 1
            )));
        }
        // Tridiagonal system for the interior second derivatives (Thomas algorithm).
        let mut second = vec![0.0; n];
        if n > 2 {
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for j in 0..m {
                let i = j + 1;
                let (h0, h1) = (knots[i] - knots[i - 1], knots[i + 1] - knots[i]);
                diag[j] = 2.0 * (h0 + h1);
                upper[j] = h1;
                rhs[j] = 6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
            }
            for j in 1..m {
                let lower = knots[j + 1] - knots[j];
                let f = lower / diag[j - 1];
                diag[j] -= f * upper[j - 1];
                rhs[j] -= f * rhs[j - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for j in (0..m - 1).rev() {
                second[j + 1] = (rhs[j] - upper[j] * second[j + 2]) / diag[j];
            }
        }
        Ok(CubicSpline { knots: knots.to_vec(), values: values.to_vec(), second })
    }

    /// Value, first and second derivative at `t` (clamped to the knot span).
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.knots.len();
        let t = t.clamp(self.knots[0], self.knots[n - 1]);
        let i = match self.knots.partition_point(|&k| k <= t) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.knots[i + 1] - self.knots[i];
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let a = (self.knots[i + 1] - t) / h;
        let b = (t - self.knots[i]) / h;
        let y = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let dy = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let ddy = a * m0 + b * m1;
        (y, dy, ddy)
    }
}
