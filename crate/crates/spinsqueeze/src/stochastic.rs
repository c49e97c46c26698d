//! Conditioned evolution: Euler–Maruyama trajectories of the stochastic
//! master equation
//!
//!   d rho_c = dt { M D[J_z] rho_c - i lambda [J_y, J_z rho_c + rho_c J_z]
//!                  + (lambda^2/M) D[J_y] rho_c }
//!             + dW { sqrt(M) H[J_z] rho_c - i (lambda/sqrt(M)) [J_y, rho_c] },
//!
//! with the homodyne record I_c dt = 2 sqrt(M) <J_z>_c dt + dW, plus the
//! ensemble machinery whose average must reproduce the deterministic master
//! equation. Noise is derived per trajectory from a counter-based generator,
//! so results are a pure function of (master_seed, trajectory index) no
//! matter how trajectories are scheduled.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::{GainSchedule, StateMoments};
use crate::dynamics::{min_eigenvalue, MeasurementStrength, Snapshot, TimeGrid};
use crate::error::Error;
use crate::kernels::{axpy, hermitize_renormalize, Kernels, Work};
use crate::parallel::{ordered_map, ordered_map_seq};
use crate::spin::{DensityMatrix, SpinOperator};
use crate::{Result, C64};

/// Trajectories are integrated in fixed-size batches: small enough to bound
/// live memory, batched so parallel workers have real work per dispatch.
/// Accumulation happens in index order regardless of worker count.
const CHUNK: usize = 32;

/// Measurement back-action term H[r] rho = r rho + rho r^dag
/// - Tr[(r + r^dag) rho] rho; traceless whenever rho has unit trace.
pub fn measurement_h(r: &SpinOperator, rho: &DensityMatrix) -> Result<DMatrix<C64>> {
    if r.spin() != rho.spin() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: r.dim(),
        });
    }
    let sandwich = r.mat() * rho.mat() + rho.mat() * r.mat().adjoint();
    let mean = sandwich.trace().re;
    Ok(&sandwich - rho.mat() * C64::new(mean, 0.0))
}

fn check_step_inputs(dt: f64, dw: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter {
            reason: format!("step size must be positive and finite, got {dt}"),
        });
    }
    if !dw.is_finite() {
        return Err(Error::InvalidParameter {
            reason: format!("Wiener increment must be finite, got {dw}"),
        });
    }
    Ok(())
}

/// One Euler–Maruyama step of the measurement-only conditioned equation,
/// re-Hermitized and trace-renormalized. Dense reference route; the
/// trajectory runner uses banded kernels pinned to the same superoperators.
pub fn sme_step_no_feedback(
    rho_c: &DensityMatrix,
    dt: f64,
    m: &MeasurementStrength,
    dw: f64,
) -> Result<DensityMatrix> {
    sme_step_feedback(rho_c, dt, m, 0.0, dw)
}

/// One Euler–Maruyama step with the feedback terms at gain value lambda.
///
/// The expectation of this update over dW equals one explicit-Euler step of
/// the deterministic equation with the same lambda — the contract that ties
/// the conditioned and averaged descriptions together.
pub fn sme_step_feedback(
    rho_c: &DensityMatrix,
    dt: f64,
    m: &MeasurementStrength,
    lambda: f64,
    dw: f64,
) -> Result<DensityMatrix> {
    check_step_inputs(dt, dw)?;
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter {
            reason: format!("gain value must be finite, got {lambda}"),
        });
    }
    let spin = rho_c.spin();
    let kern = Kernels::new(spin);
    let mut work = Work::new(spin.dim());
    let mut drift = DMatrix::<C64>::zeros(spin.dim(), spin.dim());
    let mut innovation = drift.clone();
    kern.drift_into(rho_c.mat(), m.value(), lambda, &mut drift, &mut work);
    kern.innovation_into(rho_c.mat(), m.value(), lambda, &mut innovation, &mut work);

    let mut next = rho_c.mat().clone();
    axpy(&mut next, C64::new(dt, 0.0), &drift);
    axpy(&mut next, C64::new(dw, 0.0), &innovation);
    let trace = hermitize_renormalize(&mut next);
    if !trace.is_finite() || trace <= 0.5 {
        return Err(Error::NonFinite { t: f64::NAN });
    }
    Ok(DensityMatrix::from_raw_unchecked(spin, next))
}

/// Per-trajectory Wiener-increment source: a counter-based generator seeded
/// by the master seed with the trajectory index as the stream counter, so
/// increments are a pure function of (master_seed, trajectory_index).
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha12Rng,
    master_seed: u64,
    trajectory_index: u64,
    zeros: bool,
}

impl NoiseStream {
    pub fn new(master_seed: u64, trajectory_index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(trajectory_index);
        NoiseStream {
            rng,
            master_seed,
            trajectory_index,
            zeros: false,
        }
    }

    /// A stream of identically zero increments, for deterministic checks
    /// against the drift-only equations.
    pub fn zeros() -> Self {
        NoiseStream {
            rng: ChaCha12Rng::seed_from_u64(0),
            master_seed: 0,
            trajectory_index: 0,
            zeros: true,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn trajectory_index(&self) -> u64 {
        self.trajectory_index
    }

    /// Draw dW ~ Normal(0, dt).
    pub fn next_dw(&mut self, dt: f64) -> f64 {
        if self.zeros {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        z * dt.sqrt()
    }
}

/// Trajectory-runner knobs. The positivity tolerance is far looser than the
/// deterministic one on purpose: a single Euler–Maruyama step on a
/// near-pure state transiently pushes the smallest eigenvalue negative by
/// about M dt (dW^2/dt) ||Jz - <Jz>||^2, which for a tail noise draw reaches
/// a few times 1e-2 at practical step sizes even when the scheme is
/// perfectly healthy. The check here is a divergence guard, not a
/// physicality assertion: genuine blow-up overshoots the default within a
/// few steps (and usually trips the non-finite trace guard too). Tighten it
/// for small spins with fine steps if early warning matters more than
/// keeping every trajectory.
#[derive(Clone, Copy, Debug)]
pub struct SmeOptions {
    /// Record a conditioned-state snapshot every this many steps
    /// (0 = final state only).
    pub snapshot_stride: usize,
    pub positivity_check_stride: usize,
    pub positivity_tol: f64,
}

impl Default for SmeOptions {
    fn default() -> Self {
        SmeOptions {
            snapshot_stride: 100,
            positivity_check_stride: 100,
            positivity_tol: 1e-1,
        }
    }
}

/// Everything one conditioned trajectory records. Node-aligned arrays have
/// n_steps + 1 entries; the two increment arrays have one entry per step,
/// and `current_increments[i]` is built from `jz_c[i]` and
/// `wiener_increments[i]` (the same dW that updated the state).
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub jz_c: Vec<f64>,
    pub var_jz_c: Vec<f64>,
    pub jx_c: Vec<f64>,
    pub lambda: Vec<f64>,
    pub purity_c: Vec<f64>,
    /// Integrated homodyne signal per step: 2 sqrt(M) <Jz>_c dt + dW.
    pub current_increments: Vec<f64>,
    pub wiener_increments: Vec<f64>,
    pub master_seed: u64,
    pub trajectory_index: u64,
    pub snapshots: Vec<Snapshot>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DensityMatrix {
        &self
            .snapshots
            .last()
            .expect("trajectory records a final snapshot")
            .state
    }
}

fn gain_usable_per_trajectory(gain: &GainSchedule) -> bool {
    match gain {
        GainSchedule::Zero
        | GainSchedule::Conditioned
        | GainSchedule::AnalyticClosedForm
        | GainSchedule::Tabulated(_) => true,
        GainSchedule::Perturbed { base, .. } => gain_usable_per_trajectory(base),
        GainSchedule::EnsembleSelfConsistent => false,
    }
}

/// Integrate one conditioned trajectory with Euler–Maruyama over the grid.
///
/// Per step: read the conditioned moments, evaluate the gain, draw dW, form
/// the homodyne increment 2 sqrt(M) <Jz>_c dt + dW, and apply the update.
/// The `EnsembleSelfConsistent` schedule is rejected here — it is defined by
/// the deterministic ensemble state, which a single trajectory does not
/// know; use the deterministic integrator to tabulate it first.
pub fn run_trajectory(
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    m: &MeasurementStrength,
    gain: &GainSchedule,
    mut noise: NoiseStream,
    opts: &SmeOptions,
) -> Result<TrajectoryRecord> {
    if !gain_usable_per_trajectory(gain) {
        return Err(Error::UnsupportedGain {
            reason: "the ensemble self-consistent schedule needs the deterministic state; \
                     run the deterministic integrator (or tabulate its gain) instead"
                .into(),
        });
    }
    let spin = rho0.spin();
    let d = spin.dim();
    let j = spin.j();
    let mv = m.value();
    let sqrt_m = mv.sqrt();
    let kern = Kernels::new(spin);
    let mut work = Work::new(d);
    let mut drift = DMatrix::<C64>::zeros(d, d);
    let mut innovation = drift.clone();

    let dt = grid.dt();
    let n = grid.n_steps();
    let mut rho = rho0.mat().clone();

    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(n + 1),
        jz_c: Vec::with_capacity(n + 1),
        var_jz_c: Vec::with_capacity(n + 1),
        jx_c: Vec::with_capacity(n + 1),
        lambda: Vec::with_capacity(n + 1),
        purity_c: Vec::with_capacity(n + 1),
        current_increments: Vec::with_capacity(n),
        wiener_increments: Vec::with_capacity(n),
        master_seed: noise.master_seed(),
        trajectory_index: noise.trajectory_index(),
        snapshots: Vec::new(),
    };

    for step in 0..=n {
        let t = grid.time(step);
        let jz = kern.jz_expect(&rho);
        let jz2 = kern.jz2_expect(&rho);
        let jx = kern.jx_expect(&rho);
        let lambda = gain.value_at(t, Some(StateMoments { jx, jz2 }), mv, j)?;

        rec.times.push(t);
        rec.jz_c.push(jz);
        rec.var_jz_c.push(jz2 - jz * jz);
        rec.jx_c.push(jx);
        rec.lambda.push(lambda);
        rec.purity_c.push(kern.purity(&rho));

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

        let dw = noise.next_dw(dt);
        rec.current_increments.push(2.0 * sqrt_m * jz * dt + dw);
        rec.wiener_increments.push(dw);

        kern.drift_into(&rho, mv, lambda, &mut drift, &mut work);
        kern.innovation_into(&rho, mv, lambda, &mut innovation, &mut work);
        axpy(&mut rho, C64::new(dt, 0.0), &drift);
        axpy(&mut rho, C64::new(dw, 0.0), &innovation);

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

/// Ensemble averages over conditioned trajectories. Node-aligned arrays
/// match the trajectory grid; `mean_states` holds E[rho_c] at the shared
/// snapshot nodes, which is the object that must track the deterministic
/// equation.
#[derive(Clone, Debug)]
pub struct EnsembleAverage {
    pub times: Vec<f64>,
    pub n_trajectories: usize,
    pub mean_jz: Vec<f64>,
    /// Sample standard deviation of <Jz>_c across trajectories.
    pub std_jz: Vec<f64>,
    /// E[(Delta Jz)^2_c]: the average conditioned variance.
    pub mean_var_jz: Vec<f64>,
    /// E[<Jz^2>_c]; with mean_jz this gives the variance of the mean state.
    pub mean_jz2: Vec<f64>,
    pub mean_jx: Vec<f64>,
    pub mean_lambda: Vec<f64>,
    pub mean_conditional_purity: Vec<f64>,
    /// Per-step mean and sample std of the homodyne increments.
    pub mean_current: Vec<f64>,
    pub std_current: Vec<f64>,
    /// E[rho_c] at the shared snapshot nodes.
    pub mean_states: Vec<Snapshot>,
    /// Purity of E[rho_c] at those nodes (not the mean conditional purity).
    pub mean_state_purity: Vec<f64>,
}

impl EnsembleAverage {
    /// J_z variance of the averaged state at node i:
    /// E[<Jz^2>_c] - E[<Jz>_c]^2.
    pub fn variance_of_mean_state(&self, i: usize) -> f64 {
        self.mean_jz2[i] - self.mean_jz[i] * self.mean_jz[i]
    }
}

/// Streaming accumulator behind `ensemble_average`; sums in push order, so
/// feeding trajectories in index order gives bit-identical results no matter
/// how they were produced.
pub struct EnsembleAccumulator {
    n: usize,
    times: Vec<f64>,
    snapshot_steps: Vec<usize>,
    sum_jz: Vec<f64>,
    sumsq_jz: Vec<f64>,
    sum_var: Vec<f64>,
    sum_jz2: Vec<f64>,
    sum_jx: Vec<f64>,
    sum_lambda: Vec<f64>,
    sum_purity: Vec<f64>,
    sum_current: Vec<f64>,
    sumsq_current: Vec<f64>,
    sum_states: Vec<DMatrix<C64>>,
}

impl EnsembleAccumulator {
    pub fn new() -> Self {
        EnsembleAccumulator {
            n: 0,
            times: Vec::new(),
            snapshot_steps: Vec::new(),
            sum_jz: Vec::new(),
            sumsq_jz: Vec::new(),
            sum_var: Vec::new(),
            sum_jz2: Vec::new(),
            sum_jx: Vec::new(),
            sum_lambda: Vec::new(),
            sum_purity: Vec::new(),
            sum_current: Vec::new(),
            sumsq_current: Vec::new(),
            sum_states: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: &TrajectoryRecord) -> Result<()> {
        if self.n == 0 {
            let nodes = rec.times.len();
            self.times = rec.times.clone();
            self.snapshot_steps = rec.snapshots.iter().map(|s| s.step).collect();
            self.sum_jz = vec![0.0; nodes];
            self.sumsq_jz = vec![0.0; nodes];
            self.sum_var = vec![0.0; nodes];
            self.sum_jz2 = vec![0.0; nodes];
            self.sum_jx = vec![0.0; nodes];
            self.sum_lambda = vec![0.0; nodes];
            self.sum_purity = vec![0.0; nodes];
            self.sum_current = vec![0.0; rec.current_increments.len()];
            self.sumsq_current = vec![0.0; rec.current_increments.len()];
            self.sum_states = rec
                .snapshots
                .iter()
                .map(|s| DMatrix::zeros(s.state.dim(), s.state.dim()))
                .collect();
        } else {
            let same_grid = rec.times == self.times
                && rec.snapshots.len() == self.snapshot_steps.len()
                && rec
                    .snapshots
                    .iter()
                    .zip(&self.snapshot_steps)
                    .all(|(s, &step)| s.step == step);
            if !same_grid {
                return Err(Error::InvalidParameter {
                    reason: format!(
                        "trajectory {} was run on a different grid or snapshot stride",
                        rec.trajectory_index
                    ),
                });
            }
        }

        for i in 0..self.times.len() {
            let jz = rec.jz_c[i];
            self.sum_jz[i] += jz;
            self.sumsq_jz[i] += jz * jz;
            self.sum_var[i] += rec.var_jz_c[i];
            self.sum_jz2[i] += rec.var_jz_c[i] + jz * jz;
            self.sum_jx[i] += rec.jx_c[i];
            self.sum_lambda[i] += rec.lambda[i];
            self.sum_purity[i] += rec.purity_c[i];
        }
        for i in 0..self.sum_current.len() {
            let inc = rec.current_increments[i];
            self.sum_current[i] += inc;
            self.sumsq_current[i] += inc * inc;
        }
        for (sum, snap) in self.sum_states.iter_mut().zip(&rec.snapshots) {
            *sum += snap.state.mat();
        }
        self.n += 1;
        Ok(())
    }

    pub fn finish(self, spin: crate::spin::Spin) -> Result<EnsembleAverage> {
        if self.n == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let n = self.n as f64;
        let mean = |sums: &[f64]| -> Vec<f64> { sums.iter().map(|s| s / n).collect() };
        let std = |sums: &[f64], sumsqs: &[f64]| -> Vec<f64> {
            if self.n < 2 {
                return vec![0.0; sums.len()];
            }
            sums.iter()
                .zip(sumsqs)
                .map(|(&s, &sq)| ((sq - s * s / n) / (n - 1.0)).max(0.0).sqrt())
                .collect()
        };

        let kern = Kernels::new(spin);
        let mut mean_states = Vec::with_capacity(self.sum_states.len());
        let mut mean_state_purity = Vec::with_capacity(self.sum_states.len());
        let steps = self.snapshot_steps;
        for (mat, &step) in self.sum_states.into_iter().zip(&steps) {
            let averaged = mat / C64::new(n, 0.0);
            mean_state_purity.push(kern.purity(&averaged));
            mean_states.push(Snapshot {
                step,
                t: self.times[step],
                state: DensityMatrix::from_raw_unchecked(spin, averaged),
            });
        }

        Ok(EnsembleAverage {
            n_trajectories: self.n,
            mean_jz: mean(&self.sum_jz),
            std_jz: std(&self.sum_jz, &self.sumsq_jz),
            mean_var_jz: mean(&self.sum_var),
            mean_jz2: mean(&self.sum_jz2),
            mean_jx: mean(&self.sum_jx),
            mean_lambda: mean(&self.sum_lambda),
            mean_conditional_purity: mean(&self.sum_purity),
            mean_current: mean(&self.sum_current),
            std_current: std(&self.sum_current, &self.sumsq_current),
            mean_states,
            mean_state_purity,
            times: self.times,
        })
    }
}

impl Default for EnsembleAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

/// Average a collection of trajectory records in slice order.
pub fn ensemble_average(trajectories: &[TrajectoryRecord]) -> Result<EnsembleAverage> {
    let first = trajectories.first().ok_or(Error::EmptyEnsemble)?;
    let spin = first.final_state().spin();
    let mut acc = EnsembleAccumulator::new();
    for rec in trajectories {
        acc.push(rec)?;
    }
    acc.finish(spin)
}

/// A trajectory that failed, with the index it was launched under.
#[derive(Debug)]
pub struct TrajectoryFailure {
    pub index: usize,
    pub error: Error,
}

/// Final-time digest of one completed trajectory. The ensemble runners drop
/// full records chunk by chunk to bound memory, so this is what survives
/// per trajectory.
#[derive(Clone, Copy, Debug)]
pub struct TrajectorySummary {
    pub index: usize,
    pub final_jz: f64,
    pub final_var_jz: f64,
    pub final_purity: f64,
}

impl TrajectorySummary {
    fn from_record(index: usize, rec: &TrajectoryRecord) -> Self {
        TrajectorySummary {
            index,
            final_jz: *rec.jz_c.last().expect("trajectory records are non-empty"),
            final_var_jz: *rec
                .var_jz_c
                .last()
                .expect("trajectory records are non-empty"),
            final_purity: *rec
                .purity_c
                .last()
                .expect("trajectory records are non-empty"),
        }
    }
}

/// An averaged ensemble plus the trajectories that had to be excluded.
/// Failures are reported, never silently dropped: the average is over the
/// surviving trajectories only, and callers must surface the count.
#[derive(Debug)]
pub struct EnsembleRun {
    pub average: EnsembleAverage,
    pub summaries: Vec<TrajectorySummary>,
    pub failures: Vec<TrajectoryFailure>,
}

fn run_ensemble_impl(
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    m: &MeasurementStrength,
    gain: &GainSchedule,
    n_trajectories: usize,
    master_seed: u64,
    opts: &SmeOptions,
    parallel: bool,
) -> Result<EnsembleRun> {
    if n_trajectories == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if !gain_usable_per_trajectory(gain) {
        return Err(Error::UnsupportedGain {
            reason: "the ensemble self-consistent schedule needs the deterministic state; \
                     run the deterministic integrator (or tabulate its gain) instead"
                .into(),
        });
    }
    let mut acc = EnsembleAccumulator::new();
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    let mut start = 0usize;
    while start < n_trajectories {
        let end = (start + CHUNK).min(n_trajectories);
        let indices: Vec<usize> = (start..end).collect();
        let job = |k: usize| -> std::result::Result<TrajectoryRecord, Error> {
            run_trajectory(
                rho0,
                grid,
                m,
                gain,
                NoiseStream::new(master_seed, k as u64),
                opts,
            )
        };
        let results = if parallel {
            ordered_map(indices.clone(), job)
        } else {
            ordered_map_seq(indices.clone(), job)
        };
        for (k, res) in indices.into_iter().zip(results) {
            match res {
                Ok(rec) => {
                    summaries.push(TrajectorySummary::from_record(k, &rec));
                    acc.push(&rec)?;
                }
                Err(error) => failures.push(TrajectoryFailure { index: k, error }),
            }
        }
        start = end;
    }
    let average = acc.finish(rho0.spin())?;
    Ok(EnsembleRun {
        average,
        summaries,
        failures,
    })
}

/// Run an ensemble of conditioned trajectories (data-parallel when the
/// `parallel` feature is enabled) and average them in index order. The
/// output is bit-identical for any worker count, and any failed trajectory
/// is excluded from the average and returned in `failures`.
pub fn run_ensemble(
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    m: &MeasurementStrength,
    gain: &GainSchedule,
    n_trajectories: usize,
    master_seed: u64,
    opts: &SmeOptions,
) -> Result<EnsembleRun> {
    run_ensemble_impl(rho0, grid, m, gain, n_trajectories, master_seed, opts, true)
}

/// Sequential twin of `run_ensemble`, available regardless of features; the
/// benchmark suite compares the two, and they must agree bit for bit.
pub fn run_ensemble_seq(
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    m: &MeasurementStrength,
    gain: &GainSchedule,
    n_trajectories: usize,
    master_seed: u64,
    opts: &SmeOptions,
) -> Result<EnsembleRun> {
    run_ensemble_impl(
        rho0,
        grid,
        m,
        gain,
        n_trajectories,
        master_seed,
        opts,
        false,
    )
}
