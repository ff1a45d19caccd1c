//! Fit of the low-dimensional kernel `1 / (1 + a d^(2b))`.

use crate::error::ProjectionError;

/// Parameters for `min_dist = 0.1`, `spread = 1.0`, used when a fit fails.
pub const DEFAULT_CURVE: (f64, f64) = (1.577, 0.895);

const GRID: usize = 300;
const MAX_ITER: usize = 500;

/// Target membership: flat at 1 up to `min_dist`, then exponential decay.
pub fn target_curve(d: f64, min_dist: f64, spread: f64) -> f64 {
    if d <= min_dist {
        1.0
    } else {
        (-(d - min_dist) / spread).exp()
    }
}

/// Sample positions in `(0, 3 * spread]`.
pub fn fit_grid(spread: f64) -> impl Iterator<Item = f64> {
    (1..=GRID).map(move |k| 3.0 * spread * k as f64 / GRID as f64)
}

fn kernel(d: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * d.powf(2.0 * b))
}

fn sse(a: f64, b: f64, min_dist: f64, spread: f64) -> f64 {
    fit_grid(spread)
        .map(|d| (kernel(d, a, b) - target_curve(d, min_dist, spread)).powi(2))
        .sum()
}

/// Least-squares fit of `(a, b)` by Levenberg-Marquardt in log-parameters,
/// which keeps both strictly positive.
pub fn fit_curve(min_dist: f64, spread: f64) -> Result<(f64, f64), ProjectionError> {
    if !(min_dist > 0.0 && min_dist < spread && spread.is_finite()) {
        return Err(ProjectionError::BadParams(format!(
            "need 0 < min_dist < spread, got min_dist={min_dist}, spread={spread}"
        )));
    }
    let diverged = ProjectionError::CurveFit { min_dist, spread };
    let (mut la, mut lb) = (0.0f64, 0.0f64);
    let mut cost = sse(la.exp(), lb.exp(), min_dist, spread);
    let mut mu = 1e-3;
    for _ in 0..MAX_ITER {
        let (a, b) = (la.exp(), lb.exp());
        // normal equations for the 2x2 system
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for d in fit_grid(spread) {
            let u = a * d.powf(2.0 * b);
            let f = 1.0 / (1.0 + u);
            let r = f - target_curve(d, min_dist, spread);
            let df_dla = -u * f * f;
            let df_dlb = -u * f * f * 2.0 * b * d.ln();
            jaa += df_dla * df_dla;
            jab += df_dla * df_dlb;
            jbb += df_dlb * df_dlb;
            ga += df_dla * r;
            gb += df_dlb * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let (m00, m11) = (jaa * (1.0 + mu), jbb * (1.0 + mu));
            let det = m00 * m11 - jab * jab;
            if det.abs() < f64::MIN_POSITIVE {
                mu *= 10.0;
                continue;
            }
            let da = -(m11 * ga - jab * gb) / det;
            let db = -(m00 * gb - jab * ga) / det;
            let trial = sse((la + da).exp(), (lb + db).exp(), min_dist, spread);
            if trial.is_finite() && trial <= cost {
                let step = da.abs().max(db.abs());
                la += da;
                lb += db;
                let gain = cost - trial;
                cost = trial;
                mu = (mu * 0.3).max(1e-12);
                improved = true;
                if step < 1e-12 || gain <= 1e-16 * cost.max(1e-300) {
                    return finish(la, lb, diverged);
                }
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    finish(la, lb, diverged)
}

fn finish(la: f64, lb: f64, diverged: ProjectionError) -> Result<(f64, f64), ProjectionError> {
    let (a, b) = (la.exp(), lb.exp());
    if a.is_finite() && b.is_finite() && a > 1e-8 && b > 1e-8 && a < 1e8 && b < 1e8 {
        Ok((a, b))
    } else {
        Err(diverged)
    }
}
