//! Squeezing diagnostics: the direction-resolved squeezing parameter, its
//! z-axis specialization 2J <Jz^2>/<Jx>^2, the closed-form squeezing curve
//! e^{Mt}/(1 + 2JMt) with its calculus minimum, numeric minimum refinement,
//! and 1/J scaling fits.

use nalgebra::{DMatrix, Matrix3};

use crate::error::Error;
use crate::spin::{expectation, spin_operators, DensityMatrix};
use crate::{Result, C64};

/// Orthonormality tolerance for squeezing frames.
const FRAME_TOL: f64 = 1e-10;

/// Denominator floor, as a fraction of J^2, below which the squeezing
/// parameter is undefined.
const DEGENERATE_FACTOR: f64 = 1e-12;

/// Squeezing parameter along n1, referenced to the polarization in the
/// (n2, n3) plane: 2J Var(J_n1) / (<J_n2>^2 + <J_n3>^2).
///
/// The frame {n1, n2, n3} must be orthonormal to 1e-10. Values below 1 mean
/// the n1 fluctuations beat the coherent-state (projection-noise) level.
pub fn xi2_direction(rho: &DensityMatrix, n1: [f64; 3], n2: [f64; 3], n3: [f64; 3]) -> Result<f64> {
    let frame = Matrix3::from_rows(&[
        nalgebra::RowVector3::from_row_slice(&n1),
        nalgebra::RowVector3::from_row_slice(&n2),
        nalgebra::RowVector3::from_row_slice(&n3),
    ]);
    let gram = frame * frame.transpose();
    let deviation = (gram - Matrix3::identity())
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    if deviation > FRAME_TOL {
        return Err(Error::NotOrthonormal {
            deviation,
            tolerance: FRAME_TOL,
        });
    }

    let spin = rho.spin();
    let j = spin.j();
    let (jx, jy, jz) = spin_operators(spin)?;
    let along = |n: [f64; 3]| -> DMatrix<C64> {
        jx.mat() * C64::new(n[0], 0.0)
            + jy.mat() * C64::new(n[1], 0.0)
            + jz.mat() * C64::new(n[2], 0.0)
    };

    let op1 = along(n1);
    let mean1 = expectation(&op1, rho)?;
    let second1 = expectation(&(&op1 * &op1), rho)?;
    let var = second1 - mean1 * mean1;

    let mean2 = expectation(&along(n2), rho)?;
    let mean3 = expectation(&along(n3), rho)?;
    let denominator = mean2 * mean2 + mean3 * mean3;
    if denominator <= DEGENERATE_FACTOR * j * j {
        return Err(Error::DegenerateDirection {
            denominator,
            tolerance: DEGENERATE_FACTOR * j * j,
        });
    }
    Ok(2.0 * j * var / denominator)
}

/// z-axis squeezing parameter 2J <Jz^2> / <Jx>^2.
///
/// Coincides with `xi2_direction(z, x, y)` whenever <Jy> = <Jz> = 0, which
/// the feedback dynamics maintains exactly from the x-polarized start.
pub fn xi2_z(rho: &DensityMatrix) -> Result<f64> {
    let spin = rho.spin();
    let j = spin.j();
    let (jx, _, jz) = spin_operators(spin)?;
    let jx_mean = expectation(jx.mat(), rho)?;
    let jz2_mean = expectation(&(jz.mat() * jz.mat()), rho)?;
    let denominator = jx_mean * jx_mean;
    if denominator <= DEGENERATE_FACTOR * j * j {
        return Err(Error::DegenerateDirection {
            denominator,
            tolerance: DEGENERATE_FACTOR * j * j,
        });
    }
    Ok(2.0 * j * jz2_mean / denominator)
}

/// Closed-form squeezing curve e^{Mt} / (1 + 2JMt) for t >= 0.
pub fn xi2_analytic(t: f64, m: f64, j: f64) -> f64 {
    debug_assert!(t >= 0.0, "squeezing curve evaluated at negative time {t}");
    (m * t).exp() / (1.0 + 2.0 * j * m * t)
}

/// Calculus minimum of the closed-form curve: t* = (1 - 1/(2J))/M with
/// value e^{1 - 1/(2J)}/(2J), approaching e/(2J) at t* = 1/M for large J.
pub fn xi2_analytic_minimum(m: f64, j: f64) -> (f64, f64) {
    let exponent = 1.0 - 1.0 / (2.0 * j);
    (exponent / m, exponent.exp() / (2.0 * j))
}

/// A sampled squeezing trace, tagged with the spin and the gain that
/// produced it.
#[derive(Clone, Debug)]
pub struct SqueezingCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub j: f64,
    pub label: String,
}

impl SqueezingCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>, j: f64, label: &str) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::InvalidParameter {
                reason: format!(
                    "curve needs matching non-empty samples, got {} times and {} values",
                    times.len(),
                    values.len()
                ),
            });
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter {
                reason: "curve times must be strictly increasing".into(),
            });
        }
        if j <= 0.0 {
            return Err(Error::InvalidParameter {
                reason: format!("curve spin must be positive, got {j}"),
            });
        }
        Ok(SqueezingCurve {
            times,
            values,
            j,
            label: label.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Refined location of a curve's interior minimum.
#[derive(Clone, Copy, Debug)]
pub struct CurveMinimum {
    pub t: f64,
    pub value: f64,
    /// Index of the smallest raw sample the refinement was anchored to.
    pub index: usize,
}

/// Locate the minimum of a sampled curve: take the smallest sample, then
/// sharpen it with the parabola through that sample and its neighbors.
///
/// Errors with `MinimumAtBoundary` when the smallest sample sits on either
/// grid edge (the window missed the minimum; extend the horizon, typically
/// to 3/M) and with `InsufficientPoints` below three samples.
pub fn find_minimum(curve: &SqueezingCurve) -> Result<CurveMinimum> {
    let n = curve.len();
    if n < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: n });
    }
    let mut index = 0;
    for (i, v) in curve.values.iter().enumerate() {
        if *v < curve.values[index] {
            index = i;
        }
    }
    if index == 0 {
        return Err(Error::MinimumAtBoundary { end: "start" });
    }
    if index == n - 1 {
        return Err(Error::MinimumAtBoundary { end: "end" });
    }

    let (t0, t1, t2) = (
        curve.times[index - 1],
        curve.times[index],
        curve.times[index + 1],
    );
    let (y0, y1, y2) = (
        curve.values[index - 1],
        curve.values[index],
        curve.values[index + 1],
    );

    // Vertex of the interpolating parabola; fall back to the raw sample when
    // the three points are (numerically) collinear or not convex.
    let a = (t1 - t0) * (y1 - y2);
    let b = (t1 - t2) * (y1 - y0);
    let denominator = 2.0 * (a - b);
    let scale = y0.abs().max(y1.abs()).max(y2.abs()).max(f64::MIN_POSITIVE);
    let curvature = y0 - 2.0 * y1 + y2;
    if !denominator.is_finite() || denominator.abs() <= 1e-14 * scale || curvature <= 0.0 {
        return Ok(CurveMinimum {
            t: t1,
            value: y1,
            index,
        });
    }
    let t_vertex = (t1 - ((t1 - t0) * a - (t1 - t2) * b) / denominator).clamp(t0, t2);

    // Lagrange quadratic through the three samples, evaluated at the vertex.
    let l0 = (t_vertex - t1) * (t_vertex - t2) / ((t0 - t1) * (t0 - t2));
    let l1 = (t_vertex - t0) * (t_vertex - t2) / ((t1 - t0) * (t1 - t2));
    let l2 = (t_vertex - t0) * (t_vertex - t1) / ((t2 - t0) * (t2 - t1));
    let value = (y0 * l0 + y1 * l1 + y2 * l2).min(y1);

    Ok(CurveMinimum {
        t: t_vertex,
        value,
        index,
    })
}

/// Result of fitting minimum squeezing against spin: the forced c/J
/// coefficient with its RMS residual, and a free power law a J^{-b} fitted
/// in log-log coordinates so the exponent is measured rather than assumed.
#[derive(Clone, Debug)]
pub struct ScalingFit {
    pub j_values: Vec<f64>,
    pub t_min_values: Vec<f64>,
    pub xi2_min_values: Vec<f64>,
    /// Least-squares c in xi2_min = c/J (through the origin in 1/J).
    pub coefficient: f64,
    /// RMS deviation of the samples from c/J.
    pub residual: f64,
    /// Exponent b of the free fit xi2_min = a J^{-b}.
    pub exponent: f64,
    /// Amplitude a of the free fit.
    pub amplitude: f64,
}

/// Fit (J, t_min, xi2_min) triples to the 1/J law. Needs at least three
/// distinct spins and positive minima.
pub fn fit_scaling(points: &[(f64, f64, f64)]) -> Result<ScalingFit> {
    let mut js: Vec<f64> = points.iter().map(|p| p.0).collect();
    js.sort_by(|a, b| a.total_cmp(b));
    js.dedup();
    if js.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: js.len(),
        });
    }
    for &(j, _, xi2) in points {
        if !(j > 0.0 && xi2 > 0.0 && xi2.is_finite()) {
            return Err(Error::InvalidParameter {
                reason: format!("scaling fit needs positive finite samples, got ({j}, {xi2})"),
            });
        }
    }

    // Forced model y = c x with x = 1/J: c = sum(x y) / sum(x^2).
    let mut num = 0.0;
    let mut den = 0.0;
    for &(j, _, y) in points {
        let x = 1.0 / j;
        num += x * y;
        den += x * x;
    }
    let coefficient = num / den;
    let residual = (points
        .iter()
        .map(|&(j, _, y)| {
            let r = y - coefficient / j;
            r * r
        })
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();

    // Free model ln y = ln a - b ln J by ordinary least squares.
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(j, _, y) in points {
        let lx = j.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;

    Ok(ScalingFit {
        j_values: points.iter().map(|p| p.0).collect(),
        t_min_values: points.iter().map(|p| p.1).collect(),
        xi2_min_values: points.iter().map(|p| p.2).collect(),
        coefficient,
        residual,
        exponent: -slope,
        amplitude: intercept.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{css_x, DensityMatrix, Spin};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    const X: [f64; 3] = [1.0, 0.0, 0.0];
    const Y: [f64; 3] = [0.0, 1.0, 0.0];
    const Z: [f64; 3] = [0.0, 0.0, 1.0];

    fn analytic_curve(j: f64, m: f64, t_end: f64, dt: f64) -> SqueezingCurve {
        let n = (t_end / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
        let values: Vec<f64> = times.iter().map(|&t| xi2_analytic(t, m, j)).collect();
        SqueezingCurve::new(times, values, j, "analytic").unwrap()
    }

    #[test]
    fn coherent_state_sits_at_the_projection_noise_level() {
        for two_j in [1u32, 2, 10, 50, 200] {
            let spin = Spin::new(two_j).unwrap();
            let rho = css_x(spin).unwrap();
            assert_abs_diff_eq!(xi2_z(&rho).unwrap(), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(xi2_direction(&rho, Z, X, Y).unwrap(), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(xi2_direction(&rho, Y, X, Z).unwrap(), 1.0, epsilon = 1e-10);
        }
    }

    /// Rigidly rotating the (n1, n3) plane about the polarization axis
    /// leaves the coherent state's squeezing parameter at 1.
    #[test]
    fn frame_rotation_about_x_is_a_symmetry_of_the_coherent_state() {
        let spin = Spin::new(20).unwrap();
        let rho = css_x(spin).unwrap();
        for theta in [0.3, 1.0, 2.2_f64] {
            let n1 = [0.0, -theta.sin(), theta.cos()];
            let n3 = [0.0, theta.cos(), theta.sin()];
            let v = xi2_direction(&rho, n1, X, n3).unwrap();
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn frames_must_be_orthonormal() {
        let spin = Spin::new(4).unwrap();
        let rho = css_x(spin).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let skewed = [s, s, 0.0]; // unit, but not orthogonal to x
        assert!(matches!(
            xi2_direction(&rho, Z, X, skewed).unwrap_err(),
            Error::NotOrthonormal { .. }
        ));
        let long = [0.0, 0.0, 1.1];
        assert!(xi2_direction(&rho, long, X, Y).is_err());
    }

    #[test]
    fn unpolarized_states_are_degenerate() {
        // The m = +J eigenstate has <Jx> = <Jy> = 0.
        let spin = Spin::new(10).unwrap();
        let mut amp = DVector::<crate::C64>::zeros(spin.dim());
        amp[0] = crate::C64::new(1.0, 0.0);
        let rho = DensityMatrix::from_pure(&amp).unwrap();
        assert!(matches!(
            xi2_z(&rho).unwrap_err(),
            Error::DegenerateDirection { .. }
        ));
        assert!(matches!(
            xi2_direction(&rho, Z, X, Y).unwrap_err(),
            Error::DegenerateDirection { .. }
        ));
    }

    #[test]
    fn closed_form_curve_values() {
        assert_eq!(xi2_analytic(0.0, 1.0, 25.0), 1.0);
        // Frozen: J = 25, Mt = 1 -> e/51.
        assert_abs_diff_eq!(
            xi2_analytic(1.0, 1.0, 25.0),
            0.053299643695275394,
            epsilon = 1e-16
        );
        // Consistency at t = 0: the curve equals gain(0) J / (M J) = 1.
        let m = crate::dynamics::MeasurementStrength::unit();
        let gain0 = crate::control::gain_analytic(0.0, &m, 25.0);
        assert_eq!(gain0 * 25.0 / (1.0 * 25.0), xi2_analytic(0.0, 1.0, 25.0));
    }

    #[test]
    fn closed_form_minimum_is_frozen() {
        let (t, v) = xi2_analytic_minimum(1.0, 25.0);
        assert_abs_diff_eq!(t, 0.98, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.05328912483858834, epsilon = 1e-16);
        let (t, v) = xi2_analytic_minimum(1.0, 100.0);
        assert_abs_diff_eq!(t, 0.995, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.013523621706397261, epsilon = 1e-16);
        // M rescales time only.
        let (t2, v2) = xi2_analytic_minimum(2.0, 100.0);
        assert_abs_diff_eq!(t2, 0.995 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v2, v, epsilon = 0.0);
    }

    /// The numeric minimizer applied to the sampled closed form must land on
    /// the calculus answer.
    #[test]
    fn numeric_minimum_recovers_the_calculus_oracle() {
        for j in [1.0, 5.0, 25.0, 100.0] {
            let curve = analytic_curve(j, 1.0, 3.0, 1e-3);
            let found = find_minimum(&curve).unwrap();
            let (t_star, v_star) = xi2_analytic_minimum(1.0, j);
            assert!(
                (found.t - t_star).abs() <= 1e-5 * t_star,
                "J = {j}: t {} vs {t_star}",
                found.t
            );
            assert!(
                (found.value - v_star).abs() <= 1e-6 * v_star,
                "J = {j}: value {} vs {v_star}",
                found.value
            );
        }
    }

    #[test]
    fn boundary_minima_are_reported() {
        // J = 1/2: the curve e^t/(1+t) is nondecreasing, minimum at t = 0.
        let curve = analytic_curve(0.5, 1.0, 3.0, 1e-2);
        assert!(matches!(
            find_minimum(&curve).unwrap_err(),
            Error::MinimumAtBoundary { end: "start" }
        ));
        // A monotone decreasing curve bottoms out at the far edge.
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let values: Vec<f64> = times.iter().map(|&t| 1.0 / (1.0 + t)).collect();
        let curve = SqueezingCurve::new(times, values, 5.0, "synthetic").unwrap();
        assert!(matches!(
            find_minimum(&curve).unwrap_err(),
            Error::MinimumAtBoundary { end: "end" }
        ));
    }

    #[test]
    fn parabola_vertex_is_recovered_exactly() {
        let times: Vec<f64> = (0..=25).map(|i| i as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|&t| (t - 1.234).powi(2) + 0.5).collect();
        let curve = SqueezingCurve::new(times, values, 5.0, "parabola").unwrap();
        let found = find_minimum(&curve).unwrap();
        assert_abs_diff_eq!(found.t, 1.234, epsilon = 1e-12);
        assert_abs_diff_eq!(found.value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let curve = SqueezingCurve::new(vec![0.0, 1.0], vec![1.0, 2.0], 5.0, "x").unwrap();
        assert!(matches!(
            find_minimum(&curve).unwrap_err(),
            Error::InsufficientPoints { needed: 3, got: 2 }
        ));
    }

    #[test]
    fn scaling_fit_recovers_exact_power_laws() {
        let points: Vec<(f64, f64, f64)> = [5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&j| (j, 1.0, 1.7 / j))
            .collect();
        let fit = fit_scaling(&points).unwrap();
        assert_abs_diff_eq!(fit.coefficient, 1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.exponent, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.amplitude, 1.7, epsilon = 1e-10);
        assert!(fit.residual <= 1e-12);
    }

    /// Minima of the closed-form curve scale like e/(2J) with the
    /// coefficient approaching e/2 from below as J grows.
    #[test]
    fn closed_form_minima_approach_the_limiting_coefficient() {
        let triples = |js: &[f64]| -> Vec<(f64, f64, f64)> {
            js.iter()
                .map(|&j| {
                    let (t, v) = xi2_analytic_minimum(1.0, j);
                    (j, t, v)
                })
                .collect()
        };
        let small = fit_scaling(&triples(&[10.0, 20.0, 30.0, 40.0])).unwrap();
        let large = fit_scaling(&triples(&[50.0, 100.0, 200.0, 400.0])).unwrap();
        let half_e = std::f64::consts::E / 2.0;
        assert!(large.coefficient < half_e);
        assert!((large.coefficient - half_e).abs() < (small.coefficient - half_e).abs());
        assert!((large.coefficient - half_e).abs() <= 0.02);
        assert!((large.exponent - 1.0).abs() <= 0.05);
    }

    #[test]
    fn scaling_fit_input_validation() {
        let two = [(5.0, 1.0, 0.3), (10.0, 1.0, 0.15)];
        assert!(matches!(
            fit_scaling(&two).unwrap_err(),
            Error::InsufficientPoints { needed: 3, got: 2 }
        ));
        // Duplicated spins do not count as distinct.
        let dup = [(5.0, 1.0, 0.3), (5.0, 1.0, 0.31), (10.0, 1.0, 0.15)];
        assert!(fit_scaling(&dup).is_err());
        let bad = [(5.0, 1.0, 0.3), (10.0, 1.0, -0.1), (20.0, 1.0, 0.07)];
        assert!(matches!(
            fit_scaling(&bad).unwrap_err(),
            Error::InvalidParameter { .. }
        ));
    }
}
