use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value for the null hypothesis of no correlation.
    pub p: f64,
}

/// Pearson correlation with a two-sided Student-t p-value on `k - 2`
/// degrees of freedom.
///
/// With `t = r * sqrt(df / (1 - r^2))`, the two-sided tail mass is the
/// regularized incomplete beta `I_{df / (df + t^2)}(df / 2, 1 / 2)`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    let k = x.len();
    if k < 3 {
        return Err(Error::Parameter(format!("pearson needs at least 3 pairs, got {k}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (k - 2) as f64;
    let one_minus = 1.0 - r * r;
    let p = if one_minus <= 0.0 {
        0.0
    } else {
        let t2 = r * r * df / one_minus;
        beta_reg(df / 2.0, 0.5, df / (df + t2)).clamp(0.0, 1.0)
    };
    Ok(Correlation { r, p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_correlations() {
        let x = [1.0, 2.0, 3.0, 4.5, 7.0];
        let c = pearson(&x, &x).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
        assert!(c.p < 1e-10);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_route_matches_t_cdf() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let y = [2.0, 1.0, 4.0, 3.0, 7.0, 5.0, 6.0, 9.0, 8.0, 4.0];
        let c = pearson(&x, &y).unwrap();
        let t = c.r * (8.0 / (1.0 - c.r * c.r)).sqrt();
        let p_from_t = {
            use statrs::distribution::{ContinuousCDF, StudentsT};
            2.0 * StudentsT::new(0.0, 1.0, 8.0).unwrap().cdf(-t.abs())
        };
        assert!((c.p - p_from_t).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Parameter(_))));
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn uncorrelated_has_p_one() {
        let c = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, -1.0, 1.0]).unwrap();
        assert!(c.r.abs() < 1e-12);
        assert!((c.p - 1.0).abs() < 1e-12);
    }
}
