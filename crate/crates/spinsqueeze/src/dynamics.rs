//! Deterministic evolution: the dephasing master equation produced by
//! averaging the continuous J_z measurement, optionally extended by the
//! feedback terms,
//!
//!   d rho/dt = M D[J_z] rho
//!              - i lambda(t) [J_y, J_z rho + rho J_z]
//!              + (lambda(t)^2 / M) D[J_y] rho,
//!
//! integrated with fixed-step classical RK4. Every accepted step is
//! re-Hermitized and trace-renormalized; positivity is probed by an exact
//! Hermitian eigensolve every `positivity_check_stride` steps.

use nalgebra::DMatrix;

use crate::control::{GainSchedule, StateMoments};
use crate::error::Error;
use crate::kernels::{axpy, hermitize_renormalize, Kernels, Work};
use crate::spin::{expectation, spin_operators, DensityMatrix};
use crate::{Result, C64};

/// Measurement strength M > 0, the only dimensionful scale of the model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementStrength(f64);

impl MeasurementStrength {
    pub fn new(m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidParameter {
                reason: format!("measurement strength must be positive and finite, got {m}"),
            });
        }
        Ok(MeasurementStrength(m))
    }

    /// Natural units, M = 1.
    pub fn unit() -> Self {
        MeasurementStrength(1.0)
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Uniform time grid; dt must divide the span to within one part in 1e6.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

/// Hard cap on step count, so a typo'd dt fails fast instead of spinning.
const MAX_STEPS: usize = 100_000_000;

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && t_end > t_start) {
            return Err(Error::InvalidGrid {
                reason: format!("need finite t_start < t_end, got [{t_start}, {t_end}]"),
            });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid {
                reason: format!("dt must be positive and finite, got {dt}"),
            });
        }
        let span = t_end - t_start;
        let ratio = span / dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::InvalidGrid {
                reason: format!("dt = {dt} does not divide the span {span} into whole steps"),
            });
        }
        if n > MAX_STEPS as f64 {
            return Err(Error::InvalidGrid {
                reason: format!("{n} steps exceeds the supported maximum {MAX_STEPS}"),
            });
        }
        Ok(TimeGrid {
            t_start,
            t_end,
            n_steps: n as usize,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    /// Time of grid node i (i = 0..=n_steps); the last node is exactly t_end.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            self.t_end
        } else {
            self.t_start + i as f64 * self.dt()
        }
    }
}

/// Largest RK4-stable master-equation step for total spin j (times M = 1).
///
/// The fastest decaying coherence relaxes at rate 2 M J^2 (the |m - m'| = 2J
/// corner), and RK4's real stability interval ends near |z| = 2.785, so dt
/// must shrink like 1/J^2 once 2 J^2 dt approaches that boundary. The cap
/// keeps the fastest mode at |z| <= 1 — comfortably inside — and never
/// exceeds the 1e-3 default step.
pub fn stable_me_dt(j: f64, m: f64) -> f64 {
    let cap = 0.5 / (j * j);
    (1e-3_f64).min(cap) / m
}

/// Lindblad dissipator D[r] rho = r rho r^dag - (r^dag r rho + rho r^dag r)/2.
///
/// Dense reference implementation; the integrators use banded kernels that
/// are pinned to this in tests.
pub fn lindblad_d(r: &DMatrix<C64>, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let rr = r.adjoint() * r;
    r * rho * r.adjoint() - (&rr * rho + rho * &rr) * C64::new(0.5, 0.0)
}

/// Right-hand side of the deterministic master equation at time t, with the
/// gain evaluated on the supplied state. Dense reference route.
pub fn me_rhs(
    rho: &DensityMatrix,
    t: f64,
    m: &MeasurementStrength,
    gain: &GainSchedule,
) -> Result<DMatrix<C64>> {
    let spin = rho.spin();
    let (jx, jy, jz) = spin_operators(spin)?;
    let moments = StateMoments {
        jx: expectation(jx.mat(), rho)?,
        jz2: expectation(&(jz.mat() * jz.mat()), rho)?,
    };
    let lambda = gain.value_at(t, Some(moments), m.value(), spin.j())?;

    let mut rhs = lindblad_d(jz.mat(), rho.mat()) * C64::new(m.value(), 0.0);
    if lambda != 0.0 {
        let x = jz.mat() * rho.mat() + rho.mat() * jz.mat();
        rhs += (jy.mat() * &x - &x * jy.mat()) * C64::new(0.0, -lambda);
        rhs += lindblad_d(jy.mat(), rho.mat()) * C64::new(lambda * lambda / m.value(), 0.0);
    }
    Ok(rhs)
}

/// Integrator knobs; the defaults match the documented contract.
#[derive(Clone, Copy, Debug)]
pub struct MeOptions {
    /// Record a state snapshot every this many steps (0 = final state only).
    pub snapshot_stride: usize,
    /// Probe the spectrum every this many steps.
    pub positivity_check_stride: usize,
    /// Error out if the smallest eigenvalue drops below minus this.
    pub positivity_tol: f64,
}

impl Default for MeOptions {
    fn default() -> Self {
        MeOptions {
            snapshot_stride: 0,
            positivity_check_stride: 100,
            positivity_tol: 1e-6,
        }
    }
}

/// A strided state snapshot taken during integration.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub state: DensityMatrix,
}

/// Time series of everything the deterministic run tracks. All observable
/// arrays are aligned with `times`; snapshots are strided separately.
#[derive(Clone, Debug, Default)]
pub struct EvolutionRecord {
    pub times: Vec<f64>,
    pub jx: Vec<f64>,
    pub jy: Vec<f64>,
    pub jz: Vec<f64>,
    pub jz2: Vec<f64>,
    pub jy2: Vec<f64>,
    pub purity: Vec<f64>,
    pub lambda: Vec<f64>,
    /// 2J <Jz^2>/<Jx>^2, recomputable from the jz2 and jx columns.
    pub xi2_z: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

impl EvolutionRecord {
    fn with_capacity(n: usize) -> Self {
        let cap = n + 1;
        EvolutionRecord {
            times: Vec::with_capacity(cap),
            jx: Vec::with_capacity(cap),
            jy: Vec::with_capacity(cap),
            jz: Vec::with_capacity(cap),
            jz2: Vec::with_capacity(cap),
            jy2: Vec::with_capacity(cap),
            purity: Vec::with_capacity(cap),
            lambda: Vec::with_capacity(cap),
            xi2_z: Vec::with_capacity(cap),
            snapshots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Final recorded state (always present).
    pub fn final_state(&self) -> &DensityMatrix {
        &self
            .snapshots
            .last()
            .expect("integration records a final snapshot")
            .state
    }
}

/// Integrate the deterministic master equation over the grid with classical
/// RK4, recording observables at every node.
///
/// State-dependent gain schedules are re-evaluated from the stage state at
/// every RK4 stage. Each accepted step is re-Hermitized and renormalized;
/// a non-finite or collapsing trace, or an eigenvalue below the positivity
/// tolerance, aborts with an error that names the simulated time.
pub fn integrate_me(
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    m: &MeasurementStrength,
    gain: &GainSchedule,
    opts: &MeOptions,
) -> Result<EvolutionRecord> {
    let spin = rho0.spin();
    let d = spin.dim();
    let j = spin.j();
    let mv = m.value();
    let kern = Kernels::new(spin);
    let mut work = Work::new(d);

    let dt = grid.dt();
    let n = grid.n_steps();
    let mut rec = EvolutionRecord::with_capacity(n);

    let mut rho = rho0.mat().clone();
    let mut k1 = DMatrix::<C64>::zeros(d, d);
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut stage = k1.clone();

    let needs_state = gain.needs_state();
    let eval_gain = |t: f64, mat: &DMatrix<C64>, kern: &Kernels| -> Result<f64> {
        let moments = if needs_state {
            Some(StateMoments {
                jx: kern.jx_expect(mat),
                jz2: kern.jz2_expect(mat),
            })
        } else {
            None
        };
        gain.value_at(t, moments, mv, j)
    };

    for step in 0..=n {
        let t = grid.time(step);

        // Record the current node.
        let jx = kern.jx_expect(&rho);
        let jz2 = kern.jz2_expect(&rho);
        let lambda = gain.value_at(t, Some(StateMoments { jx, jz2 }), mv, j)?;
        rec.times.push(t);
        rec.jx.push(jx);
        rec.jy.push(kern.jy_expect(&rho));
        rec.jz.push(kern.jz_expect(&rho));
        rec.jz2.push(jz2);
        rec.jy2.push(kern.jy2_expect(&rho));
        rec.purity.push(kern.purity(&rho));
        rec.lambda.push(lambda);
        rec.xi2_z.push(2.0 * j * jz2 / (jx * jx));

        let take_snapshot =
            step == n || (opts.snapshot_stride > 0 && step % opts.snapshot_stride == 0);
        if take_snapshot {
            rec.snapshots.push(Snapshot {
                step,
                t,
                state: DensityMatrix::from_raw_unchecked(spin, rho.clone()),
            });
        }
        if step == n {
            break;
        }

        // RK4 stages; state-dependent gains read each stage's state.
        kern.drift_into(&rho, mv, lambda, &mut k1, &mut work);

        stage.copy_from(&rho);
        axpy(&mut stage, C64::new(dt / 2.0, 0.0), &k1);
        let l2 = eval_gain(t + dt / 2.0, &stage, &kern)?;
        kern.drift_into(&stage, mv, l2, &mut k2, &mut work);

        stage.copy_from(&rho);
        axpy(&mut stage, C64::new(dt / 2.0, 0.0), &k2);
        let l3 = eval_gain(t + dt / 2.0, &stage, &kern)?;
        kern.drift_into(&stage, mv, l3, &mut k3, &mut work);

        stage.copy_from(&rho);
        axpy(&mut stage, C64::new(dt, 0.0), &k3);
        let l4 = eval_gain(t + dt, &stage, &kern)?;
        kern.drift_into(&stage, mv, l4, &mut k4, &mut work);

        axpy(&mut rho, C64::new(dt / 6.0, 0.0), &k1);
        axpy(&mut rho, C64::new(dt / 3.0, 0.0), &k2);
        axpy(&mut rho, C64::new(dt / 3.0, 0.0), &k3);
        axpy(&mut rho, C64::new(dt / 6.0, 0.0), &k4);

        let trace = hermitize_renormalize(&mut rho);
        if !trace.is_finite() || trace <= 0.5 {
            // Error timestamps are dimensionless Mt, like all user-facing times.
            return Err(Error::NonFinite { t: mv * (t + dt) });
        }
        if (step + 1) % opts.positivity_check_stride == 0 || step + 1 == n {
            let min_eig = min_eigenvalue(&rho);
            if min_eig < -opts.positivity_tol {
                return Err(Error::PositivityViolation {
                    t: mv * (t + dt),
                    min_eigenvalue: min_eig,
                    tolerance: opts.positivity_tol,
                });
            }
        }
    }

    Ok(rec)
}

pub(crate) fn min_eigenvalue(mat: &DMatrix<C64>) -> f64 {
    mat.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &x| acc.min(x))
}
