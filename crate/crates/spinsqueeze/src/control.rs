//! Feedback gain schedules lambda(t) and the operating-regime checker.
//!
//! The controller multiplies the measured photocurrent into a J_y rotation;
//! its strength follows one of several schedules: proportional to the
//! conditioned (or deterministic) moments, the closed form
//! lambda(t) = M e^{Mt/2} / (1 + 2JMt), an interpolated table, a perturbed
//! wrapper around any of these, or zero (measurement only).

use std::fmt;
use std::path::Path;

use crate::dynamics::MeasurementStrength;
use crate::error::Error;
use crate::spin::{expectation, spin_operators, DensityMatrix};
use crate::Result;

/// Fraction of J below which <Jx> counts as a gain singularity.
pub const GAIN_SINGULARITY_FACTOR: f64 = 1e-6;

/// Default ratio encoding "much greater than" in the regime checker.
pub const DEFAULT_REGIME_THRESHOLD: f64 = 10.0;

/// State moments a state-dependent gain needs: <Jx> and <Jz^2>.
#[derive(Clone, Copy, Debug)]
pub struct StateMoments {
    pub jx: f64,
    pub jz2: f64,
}

/// A feedback gain schedule.
#[derive(Clone, Debug, PartialEq)]
pub enum GainSchedule {
    /// No feedback; bare continuous measurement.
    Zero,
    /// 2M <Jz^2>_c / <Jx>_c from the conditioned state of one trajectory.
    Conditioned,
    /// Same formula fed the deterministic ensemble state, re-evaluated from
    /// the current state at every integrator stage.
    EnsembleSelfConsistent,
    /// Closed form M e^{Mt/2} / (1 + 2JMt).
    AnalyticClosedForm,
    /// Linear interpolation of a measured (t, lambda) table.
    Tabulated(GainTable),
    /// (1 + epsilon) times an inner schedule; models a miscalibrated gain.
    Perturbed {
        epsilon: f64,
        base: Box<GainSchedule>,
    },
}

impl GainSchedule {
    /// Whether evaluation reads the current state (vs. time alone).
    pub(crate) fn needs_state(&self) -> bool {
        match self {
            GainSchedule::Conditioned | GainSchedule::EnsembleSelfConsistent => true,
            GainSchedule::Perturbed { base, .. } => base.needs_state(),
            _ => false,
        }
    }

    /// Evaluate the schedule at time t. State-dependent variants require
    /// `moments`; time-dependent variants ignore it.
    pub fn value_at(&self, t: f64, moments: Option<StateMoments>, m: f64, j: f64) -> Result<f64> {
        match self {
            GainSchedule::Zero => Ok(0.0),
            GainSchedule::Conditioned | GainSchedule::EnsembleSelfConsistent => {
                let mom = moments.ok_or_else(|| Error::UnsupportedGain {
                    reason: "state-dependent gain evaluated without state moments".into(),
                })?;
                gain_from_moments(t, &mom, m, j)
            }
            GainSchedule::AnalyticClosedForm => Ok(gain_analytic_raw(t, m, j)),
            GainSchedule::Tabulated(table) => table.value(t),
            GainSchedule::Perturbed { epsilon, base } => {
                Ok((1.0 + epsilon) * base.value_at(t, moments, m, j)?)
            }
        }
    }
}

impl fmt::Display for GainSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainSchedule::Zero => write!(f, "zero"),
            GainSchedule::Conditioned => write!(f, "conditioned"),
            GainSchedule::EnsembleSelfConsistent => write!(f, "ensemble"),
            GainSchedule::AnalyticClosedForm => write!(f, "analytic"),
            GainSchedule::Tabulated(_) => write!(f, "tabulated"),
            GainSchedule::Perturbed { epsilon, base } => {
                write!(f, "perturbed({epsilon:+}, {base})")
            }
        }
    }
}

fn gain_from_moments(t: f64, mom: &StateMoments, m: f64, j: f64) -> Result<f64> {
    let threshold = GAIN_SINGULARITY_FACTOR * j;
    if !(mom.jx > threshold) {
        // Error timestamps are dimensionless Mt, like all user-facing times.
        return Err(Error::GainSingularity {
            t: m * t,
            jx: mom.jx,
            threshold,
        });
    }
    Ok(2.0 * m * mom.jz2 / mom.jx)
}

/// Conditioned gain 2M <Jz^2>_c / <Jx>_c evaluated on a trajectory state.
///
/// Errors with `GainSingularity` once <Jx>_c falls to 1e-6 J: the
/// linearization behind the scheme has broken down and the run should halt
/// rather than fabricate a clamped gain. (The reported time is NaN here;
/// the integrators attach the simulated time.)
pub fn gain_conditioned(rho_c: &DensityMatrix, m: &MeasurementStrength) -> Result<f64> {
    gain_from_state(rho_c, m)
}

/// Ensemble variant of the same formula, fed the deterministic state.
pub fn gain_ensemble(rho: &DensityMatrix, m: &MeasurementStrength) -> Result<f64> {
    gain_from_state(rho, m)
}

fn gain_from_state(rho: &DensityMatrix, m: &MeasurementStrength) -> Result<f64> {
    let spin = rho.spin();
    let (jx, _, jz) = spin_operators(spin)?;
    let mom = StateMoments {
        jx: expectation(jx.mat(), rho)?,
        jz2: expectation(&(jz.mat() * jz.mat()), rho)?,
    };
    gain_from_moments(f64::NAN, &mom, m.value(), spin.j())
}

/// Closed-form gain lambda(t) = M e^{Mt/2} / (1 + 2JMt) for t >= 0.
pub fn gain_analytic(t: f64, m: &MeasurementStrength, j: f64) -> f64 {
    gain_analytic_raw(t, m.value(), j)
}

fn gain_analytic_raw(t: f64, m: f64, j: f64) -> f64 {
    debug_assert!(t >= 0.0, "closed-form gain evaluated at negative time {t}");
    m * (0.5 * m * t).exp() / (1.0 + 2.0 * j * m * t)
}

/// Two-column (t, lambda) gain table with strictly increasing times.
#[derive(Clone, Debug, PartialEq)]
pub struct GainTable {
    ts: Vec<f64>,
    values: Vec<f64>,
}

impl GainTable {
    pub fn new(ts: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if ts.len() != values.len() {
            return Err(Error::TableFormat {
                reason: format!(
                    "column lengths differ: {} times vs {} values",
                    ts.len(),
                    values.len()
                ),
            });
        }
        if ts.len() < 2 {
            return Err(Error::TableFormat {
                reason: format!("need at least two rows, got {}", ts.len()),
            });
        }
        if ts.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::TableFormat {
                reason: "non-finite entry in table".into(),
            });
        }
        if ts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::TableFormat {
                reason: "times must be strictly increasing".into(),
            });
        }
        Ok(GainTable { ts, values })
    }

    /// Parse a text table: one `t lambda` pair per line, whitespace- or
    /// comma-delimited; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut ts = Vec::new();
        let mut values = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cleaned = line.replace(',', " ");
            let cols: Vec<&str> = cleaned.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::TableFormat {
                    reason: format!(
                        "line {}: expected two columns, found {}",
                        idx + 1,
                        cols.len()
                    ),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::TableFormat {
                    reason: format!("line {}: cannot parse '{s}' as a number", idx + 1),
                })
            };
            ts.push(parse(cols[0])?);
            values.push(parse(cols[1])?);
        }
        GainTable::new(ts, values)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        GainTable::from_text(&text)
    }

    pub fn t_min(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    /// Unit-convert the table: every time is multiplied by `time_scale` and
    /// every value by `value_scale`. Used to move a dimensionless table
    /// (times in Mt, gains in units of M) onto the integrator's absolute
    /// time axis when M != 1.
    pub fn rescaled(&self, time_scale: f64, value_scale: f64) -> Result<GainTable> {
        if !(time_scale.is_finite() && time_scale > 0.0 && value_scale.is_finite()) {
            return Err(Error::InvalidParameter {
                reason: format!(
                    "table rescale factors must be finite (time scale positive), \
                     got {time_scale} and {value_scale}"
                ),
            });
        }
        GainTable::new(
            self.ts.iter().map(|t| t * time_scale).collect(),
            self.values.iter().map(|v| v * value_scale).collect(),
        )
    }

    /// Linear interpolation; endpoints are included in the domain.
    pub fn value(&self, t: f64) -> Result<f64> {
        if !(t >= self.t_min() && t <= self.t_max()) {
            return Err(Error::TableDomain {
                t,
                t_min: self.t_min(),
                t_max: self.t_max(),
            });
        }
        // Index of the last node <= t (clamped so t_max interpolates from
        // the final segment).
        let hi = self.ts.partition_point(|&x| x <= t).min(self.ts.len() - 1);
        let lo = hi - 1;
        let w = (t - self.ts[lo]) / (self.ts[hi] - self.ts[lo]);
        Ok(self.values[lo] + w * (self.values[hi] - self.values[lo]))
    }
}

/// Inputs for the operating-regime check, in the cavity-QED parametrization:
/// atom-cavity coupling g, cavity decay kappa, atomic decay gamma, probe
/// detuning delta, dispersive shift chi, intracavity photon number beta_sq,
/// and atom number n_atoms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeParams {
    pub g: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub delta: f64,
    pub chi: f64,
    pub beta_sq: f64,
    pub n_atoms: f64,
    /// Ratio that counts as "much greater than" (default 10).
    pub threshold: f64,
}

/// Outcome of the regime check: each condition's margin (the raw ratio) and
/// whether it strictly exceeds the threshold, plus the echoed inputs.
#[derive(Clone, Copy, Debug)]
pub struct RegimeReport {
    /// kappa / (chi |beta| sqrt(N)): cavity adiabatic-elimination margin.
    pub adiabatic_margin: f64,
    pub adiabatic_ok: bool,
    /// g^2 / (N kappa gamma): spontaneous-emission loss margin.
    pub loss_margin: f64,
    pub loss_ok: bool,
    /// delta / (gamma N^{3/2}): detuning margin.
    pub detuning_margin: f64,
    pub detuning_ok: bool,
    /// g^2 N > kappa gamma: threshold for any squeezing at all.
    pub onset_ok: bool,
    pub params: RegimeParams,
}

impl RegimeReport {
    /// All three separation-of-scales conditions hold.
    pub fn regime_ok(&self) -> bool {
        self.adiabatic_ok && self.loss_ok && self.detuning_ok
    }
}

/// Evaluate the three separation-of-scales conditions and the squeezing
/// onset. "Much greater than" is encoded as ratio strictly greater than
/// `threshold`; margins are reported raw so callers can apply their own cut.
pub fn regime_check(p: &RegimeParams) -> Result<RegimeReport> {
    let fields = [
        ("g", p.g),
        ("kappa", p.kappa),
        ("gamma", p.gamma),
        ("delta", p.delta),
        ("chi", p.chi),
        ("beta_sq", p.beta_sq),
        ("n_atoms", p.n_atoms),
        ("threshold", p.threshold),
    ];
    for (name, v) in fields {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter {
                reason: format!("regime parameter {name} must be positive and finite, got {v}"),
            });
        }
    }
    let adiabatic_margin = p.kappa / (p.chi * p.beta_sq.sqrt() * p.n_atoms.sqrt());
    let loss_margin = p.g * p.g / (p.n_atoms * p.kappa * p.gamma);
    let detuning_margin = p.delta / (p.gamma * p.n_atoms.powf(1.5));
    Ok(RegimeReport {
        adiabatic_margin,
        adiabatic_ok: adiabatic_margin > p.threshold,
        loss_margin,
        loss_ok: loss_margin > p.threshold,
        detuning_margin,
        detuning_ok: detuning_margin > p.threshold,
        onset_ok: p.g * p.g * p.n_atoms > p.kappa * p.gamma,
        params: *p,
    })
}

/// The squeezing floor epsilon^2 left by a single-shot (impulsive) feedback
/// with relative gain error epsilon in [0, 1].
pub fn single_shot_bound(epsilon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && (0.0..=1.0).contains(&epsilon)) {
        return Err(Error::InvalidParameter {
            reason: format!("single-shot gain error must lie in [0, 1], got {epsilon}"),
        });
    }
    Ok(epsilon * epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{css_x, Spin};
    use crate::C64;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    #[test]
    fn analytic_gain_matches_closed_form_samples() {
        for (m, j) in [(1.0, 0.5), (1.0, 25.0), (0.7, 5.0)] {
            let ms = MeasurementStrength::new(m).unwrap();
            assert_abs_diff_eq!(gain_analytic(0.0, &ms, j), m, epsilon = 0.0);
        }
        // Frozen value: M = 1, J = 25, t = 1 -> e^{1/2}/51.
        let ms = MeasurementStrength::unit();
        assert_abs_diff_eq!(
            gain_analytic(1.0, &ms, 25.0),
            0.03232786805294369,
            epsilon = 1e-15
        );
        // Large-J falloff ~ e^{Mt/2}/(2JMt), accurate to O(1/J) itself.
        let j = 1e9;
        let expected = (0.5_f64).exp() / (2.0 * j);
        assert_abs_diff_eq!(gain_analytic(1.0, &ms, j), expected, epsilon = expected / j);
    }

    /// The closed form has exactly one interior critical point, a minimum at
    /// t = (4J - 1)/(2JM); checked against a dense numeric scan.
    #[test]
    fn analytic_gain_has_single_interior_minimum() {
        for (m, j) in [(1.0, 0.5), (1.0, 5.0), (0.7, 25.0)] {
            let ms = MeasurementStrength::new(m).unwrap();
            let t_star = (4.0 * j - 1.0) / (2.0 * j * m);
            let dt = 1e-4 / m;
            let n = (3.0 / m / dt) as usize;
            let (mut argmin, mut best) = (0usize, f64::INFINITY);
            for i in 0..=n {
                let v = gain_analytic(i as f64 * dt, &ms, j);
                assert!(v > 0.0);
                if v < best {
                    best = v;
                    argmin = i;
                }
            }
            let t_num = argmin as f64 * dt;
            assert!(
                (t_num - t_star).abs() <= 2.0 * dt,
                "J = {j}: numeric argmin {t_num} vs closed form {t_star}"
            );
            // Strictly decreasing before, increasing after.
            assert!(gain_analytic(0.5 * t_star, &ms, j) > best);
            assert!(gain_analytic(1.5 * t_star, &ms, j) > best);
        }
    }

    #[test]
    fn state_based_gains_equal_m_on_the_coherent_state() {
        for two_j in [1u32, 10, 50] {
            let spin = Spin::new(two_j).unwrap();
            let rho = css_x(spin).unwrap();
            for m in [1.0, 2.5] {
                let ms = MeasurementStrength::new(m).unwrap();
                assert_abs_diff_eq!(gain_conditioned(&rho, &ms).unwrap(), m, epsilon = 1e-12);
                assert_abs_diff_eq!(gain_ensemble(&rho, &ms).unwrap(), m, epsilon = 1e-12);
                assert_abs_diff_eq!(gain_analytic(0.0, &ms, spin.j()), m, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn gain_is_linear_in_the_variance() {
        let j = 25.0;
        let base = StateMoments {
            jx: j,
            jz2: j / 2.0,
        };
        let halved = StateMoments {
            jx: j,
            jz2: j / 4.0,
        };
        let g = GainSchedule::Conditioned;
        let full = g.value_at(0.0, Some(base), 1.0, j).unwrap();
        let half = g.value_at(0.0, Some(halved), 1.0, j).unwrap();
        assert_abs_diff_eq!(full, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(half, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn vanishing_polarization_is_a_singularity() {
        let j = 25.0;
        let g = GainSchedule::Conditioned;
        let at = StateMoments {
            jx: 1e-6 * j,
            jz2: 1.0,
        };
        let err = g.value_at(0.3, Some(at), 1.0, j).unwrap_err();
        assert!(matches!(err, Error::GainSingularity { .. }));
        assert_eq!(err.category(), "gain-singularity");

        let above = StateMoments {
            jx: 1.01e-6 * j,
            jz2: 1.0,
        };
        assert!(g.value_at(0.3, Some(above), 1.0, j).is_ok());

        // A z-polarized eigenstate has <Jx> = 0 exactly.
        let spin = Spin::new(10).unwrap();
        let mut amp = DVector::<C64>::zeros(spin.dim());
        amp[0] = C64::new(1.0, 0.0);
        let rho = DensityMatrix::from_pure(&amp).unwrap();
        assert!(gain_conditioned(&rho, &MeasurementStrength::unit()).is_err());
    }

    #[test]
    fn state_dependent_gain_requires_moments() {
        let err = GainSchedule::EnsembleSelfConsistent
            .value_at(0.0, None, 1.0, 5.0)
            .unwrap_err();
        assert!(matches!(err, Error::UnsupportedGain { .. }));
    }

    #[test]
    fn perturbed_gain_scales_exactly() {
        let inner = GainSchedule::AnalyticClosedForm;
        let outer = GainSchedule::Perturbed {
            epsilon: 0.2,
            base: Box::new(inner.clone()),
        };
        for t in [0.0, 0.3, 1.7] {
            let base = inner.value_at(t, None, 1.0, 25.0).unwrap();
            let scaled = outer.value_at(t, None, 1.0, 25.0).unwrap();
            assert_eq!(scaled, (1.0 + 0.2) * base);
        }
        // Nesting composes multiplicatively.
        let nested = GainSchedule::Perturbed {
            epsilon: -0.5,
            base: Box::new(outer),
        };
        let v = nested.value_at(1.0, None, 1.0, 25.0).unwrap();
        let base = inner.value_at(1.0, None, 1.0, 25.0).unwrap();
        assert_abs_diff_eq!(v, 0.5 * 1.2 * base, epsilon = 1e-15 * base);
    }

    #[test]
    fn table_parses_interpolates_and_guards_its_domain() {
        let text = "# measured ramp\n0.0, 1.0\n1.0 3.0\n\n2.0,\t5.0\n";
        let table = GainTable::from_text(text).unwrap();
        assert_abs_diff_eq!(table.value(0.0).unwrap(), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(table.value(0.5).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(table.value(1.5).unwrap(), 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(table.value(2.0).unwrap(), 5.0, epsilon = 0.0);

        let err = table.value(2.0 + 1e-12).unwrap_err();
        assert!(matches!(err, Error::TableDomain { .. }));
        assert!(table.value(-1e-12).is_err());

        let sched = GainSchedule::Tabulated(table);
        assert_abs_diff_eq!(
            sched.value_at(1.0, None, 1.0, 5.0).unwrap(),
            3.0,
            epsilon = 0.0
        );
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(matches!(
            GainTable::from_text("0.0 1.0\n").unwrap_err(),
            Error::TableFormat { .. }
        ));
        assert!(GainTable::from_text("0.0 1.0\n0.0 2.0\n").is_err()); // not increasing
        assert!(GainTable::from_text("0.0 1.0 2.0\n1.0 2.0\n").is_err()); // three columns
        assert!(GainTable::from_text("0.0 abc\n1.0 2.0\n").is_err());
        assert!(GainTable::new(vec![0.0, 1.0], vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn regime_margins_and_boundaries() {
        // Constructed so every ratio is exactly 20 (passes) with N = 100.
        let n: f64 = 100.0;
        let gamma = 1.0;
        let kappa = 2.0;
        let g = (20.0 * n * kappa * gamma).sqrt();
        let chi = kappa / (20.0 * 1.0 * n.sqrt()); // beta_sq = 1
        let delta = 20.0 * gamma * n.powf(1.5);
        let p = RegimeParams {
            g,
            kappa,
            gamma,
            delta,
            chi,
            beta_sq: 1.0,
            n_atoms: n,
            threshold: DEFAULT_REGIME_THRESHOLD,
        };
        let report = regime_check(&p).unwrap();
        assert!(report.regime_ok() && report.onset_ok);
        assert_abs_diff_eq!(report.adiabatic_margin, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.loss_margin, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.detuning_margin, 20.0, epsilon = 1e-12);

        // A ratio exactly at threshold fails: strict inequality.
        let at_boundary = RegimeParams {
            delta: DEFAULT_REGIME_THRESHOLD * gamma * n.powf(1.5),
            ..p
        };
        let report = regime_check(&at_boundary).unwrap();
        assert!(!report.detuning_ok);
        assert!(report.adiabatic_ok && report.loss_ok);

        // Squeezing onset g^2 N > kappa gamma is also strict.
        let onset_boundary = RegimeParams {
            g: (kappa * gamma / n).sqrt(),
            ..p
        };
        assert!(!regime_check(&onset_boundary).unwrap().onset_ok);

        let bad = RegimeParams { gamma: -1.0, ..p };
        assert!(regime_check(&bad).is_err());
    }

    #[test]
    fn single_shot_bound_squares_its_argument() {
        assert_abs_diff_eq!(single_shot_bound(0.2).unwrap(), 0.04, epsilon = 1e-16);
        assert_eq!(single_shot_bound(0.0).unwrap(), 0.0);
        assert_eq!(single_shot_bound(1.0).unwrap(), 1.0);
        assert!(single_shot_bound(1.2).is_err());
        assert!(single_shot_bound(-0.1).is_err());
        assert!(single_shot_bound(f64::NAN).is_err());
    }
}
