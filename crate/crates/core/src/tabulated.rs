//! Two-column tabulated functions with linear interpolation.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::error::{LabError, Result};

/// Piecewise-linear function through `(x, y)` knots. Queries outside the
/// knot range clamp to the end values, raise [`Tabulated::clamped`] and warn
/// once on stderr.
#[derive(Debug)]
pub struct Tabulated {
    xs: Vec<f64>,
    ys: Vec<f64>,
    clamped: AtomicBool,
}

impl Clone for Tabulated {
    fn clone(&self) -> Self {
        Self {
            xs: self.xs.clone(),
            ys: self.ys.clone(),
            clamped: AtomicBool::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl Tabulated {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(LabError::InvalidParameter(format!(
                "tabulated function needs >= 2 matching knots, got {} x and {} y",
                xs.len(),
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::InvalidParameter("knots must be strictly increasing".into()));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite("tabulated function has non-finite entries".into()));
        }
        Ok(Self {
            xs,
            ys,
            clamped: AtomicBool::new(false),
        })
    }

    /// Samples `f` on `n` equispaced knots over `[a, b]`.
    pub fn sample<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Result<Self> {
        let xs: Vec<f64> = (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect();
        let ys = xs.iter().map(|&x| f(x)).collect();
        Self::new(xs, ys)
    }

    /// Reads a headerless or headed two-column CSV (`x,value`).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)?;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(LabError::InvalidParameter(format!(
                    "{}: row {row} has {} columns, expected 2",
                    path.display(),
                    rec.len()
                )));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    xs.push(x);
                    ys.push(y);
                }
                // A non-numeric first row is a header.
                _ if row == 0 => continue,
                _ => {
                    return Err(LabError::InvalidParameter(format!(
                        "{}: row {row} is not numeric",
                        path.display()
                    )))
                }
            }
        }
        Self::new(xs, ys)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Whether any query so far fell outside the knot range.
    pub fn clamped(&self) -> bool {
        self.clamped.load(Ordering::Relaxed)
    }

    fn locate(&self, x: f64) -> Option<usize> {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            if !self.clamped.swap(true, Ordering::Relaxed) {
                eprintln!(
                    "warning: tabulated function queried at {x} outside [{}, {}]; clamping",
                    self.xs[0],
                    self.xs[n - 1]
                );
            }
            return None;
        }
        Some(self.xs.partition_point(|&k| k <= x).clamp(1, n - 1) - 1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.locate(x) {
            Some(k) => {
                let s = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
                self.ys[k] + s * (self.ys[k + 1] - self.ys[k])
            }
            None if x < self.xs[0] => self.ys[0],
            None => self.ys[self.ys.len() - 1],
        }
    }

    /// Slope of the interpolant (zero in the clamped region).
    pub fn derivative(&self, x: f64) -> f64 {
        match self.locate(x) {
            Some(k) => (self.ys[k + 1] - self.ys[k]) / (self.xs[k + 1] - self.xs[k]),
            None => 0.0,
        }
    }

    /// Largest knot-to-knot slope: the Lipschitz constant of the interpolant.
    pub fn lipschitz(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.ys.iter().fold(0.0, |m, y| m.max(y.abs()))
    }
}

/// Shared scalar function of one variable.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

impl Tabulated {
    pub fn into_fn(self) -> ScalarFn {
        let t = Arc::new(self);
        Arc::new(move |x| t.eval(x))
    }
}

/// Gaussian mollification of `f` at standard deviation `scale`, by
/// composite Simpson quadrature over ±6 standard deviations.
pub fn mollify(f: ScalarFn, scale: f64) -> ScalarFn {
    if scale <= 0.0 {
        return f;
    }
    const PANELS: usize = 96;
    let width = 12.0 * scale;
    let step = width / PANELS as f64;
    let weights: Vec<(f64, f64)> = (0..=PANELS)
        .map(|k| {
            let z = -6.0 * scale + k as f64 * step;
            let simpson = if k == 0 || k == PANELS {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let kernel = (-0.5 * (z / scale).powi(2)).exp() / (scale * (2.0 * std::f64::consts::PI).sqrt());
            (z, simpson * step / 3.0 * kernel)
        })
        .collect();
    let norm: f64 = weights.iter().map(|w| w.1).sum();
    Arc::new(move |x| weights.iter().map(|&(z, w)| w * f(x - z)).sum::<f64>() / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn interpolates_and_clamps() {
        let t = Tabulated::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(2.0), 1.0);
        assert_eq!(t.derivative(2.0), -1.0);
        assert_eq!(t.lipschitz(), 2.0);
        assert!(!t.clamped());
        assert_eq!(t.eval(5.0), 0.0);
        assert!(t.clamped());
        assert!(Tabulated::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn reads_csv_with_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,value\n-1,1\n0,0\n1,1").unwrap();
        let t = Tabulated::read_csv(f.path()).unwrap();
        assert_eq!(t.domain(), (-1.0, 1.0));
        assert_eq!(t.eval(-0.5), 0.5);
    }

    #[test]
    fn mollified_abs_matches_closed_form() {
        let s = 0.1;
        let f: ScalarFn = Arc::new(|x: f64| -x.abs());
        let m = mollify(f, s);
        // E|x + sZ| = s sqrt(2/π) exp(-x²/2s²) + x (1 - 2Φ(-x/s)).
        for &x in &[0.0, 0.05, 0.3, 1.0] {
            let phi = 0.5 * libm::erfc(x / (s * std::f64::consts::SQRT_2));
            let exact = s * (2.0 / std::f64::consts::PI).sqrt() * (-x * x / (2.0 * s * s)).exp()
                + x * (1.0 - 2.0 * phi);
            assert!((m(x) + exact).abs() < 1e-6, "x={x}");
        }
    }
}
