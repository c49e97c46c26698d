//! Acceptance gate: twelve numbered end-to-end checks covering operator
//! algebra, measurement conservation laws, the spin-1/2 dephasing oracle,
//! feedback behavior at J = 25, the closed-form minimum identity, 1/J
//! scaling of the squeezing minimum, trajectory-ensemble consistency,
//! homodyne current statistics, and byte-level CSV reproducibility.
//!
//! Each test prints a single `criterion NN PASS/FAIL` line and asserts the
//! same verdict, so a red check fails the suite and carries its diagnosis
//! in the panic message. Run `cargo test --test acceptance -- --nocapture`
//! to see the PASS lines too.
//!
//! Expensive fixtures are shared through `OnceLock`: the J = 25 feedback
//! run feeds criteria 4-6, the two spin sweeps feed 8-9, and the J = 2
//! trajectory ensembles feed 10-11. Every threshold is pinned in the
//! constants below; nothing is tuned at run time.

use std::process::Command;
use std::sync::OnceLock;

use spinsqueeze::control::{single_shot_bound, GainSchedule};
use spinsqueeze::dynamics::{
    integrate_me, stable_me_dt, EvolutionRecord, MeOptions, MeasurementStrength, TimeGrid,
};
use spinsqueeze::observables::{
    find_minimum, fit_scaling, xi2_analytic, xi2_analytic_minimum, SqueezingCurve,
};
use spinsqueeze::spin::{css_x, spin_operators, DensityMatrix, Spin};
use spinsqueeze::stochastic::{run_ensemble, EnsembleRun, SmeOptions};
use spinsqueeze::C64;

/// Criterion 1: largest allowed entry of [J_a, J_b] - i e_abc J_c and of
/// the Casimir residual.
const ALGEBRA_TOL: f64 = 1e-10;
/// Criterion 2: allowed drift of <Jz> and <Jz^2> under bare measurement.
const CONSERVATION_TOL: f64 = 1e-8;
/// Criterion 3: allowed error of the spin-1/2 coherence ratio at Mt = 1.
const DEPHASING_TOL: f64 = 1e-6;
/// Criterion 4: |<Jz>| stays below this times J with feedback on.
const MEAN_PIN_REL: f64 = 1e-6;
/// Criterion 5: purity floor over Mt <= 1.5 and at the squeezing minimum.
const PURITY_WINDOW_END: f64 = 1.5;
const PURITY_WINDOW_FLOOR: f64 = 0.90;
const PURITY_AT_MIN_FLOOR: f64 = 0.95;
/// Criterion 6: relative agreement of the two minima and their locations.
const MIN_AGREEMENT_REL: f64 = 0.10;
const T_MIN_AGREEMENT_REL: f64 = 0.20;
/// Criterion 7: relative agreement with the closed-form minimum identity,
/// and with the large-J form e/(2J) at J = 25.
const IDENTITY_REL: f64 = 1e-4;
const LARGE_J_FORM_REL: f64 = 0.021;
/// Criteria 8-9: acceptance windows for the scaling fits, the large-spin
/// limits of J * xi2_min for the exact and the 20%-miscalibrated schedule,
/// and the allowed coefficient shift under that miscalibration.
const EXPONENT_RANGE: (f64, f64) = (0.9, 1.1);
const COEFFICIENT_RANGE: (f64, f64) = (1.4, 2.0);
const PRODUCT_LIMIT: f64 = 1.665;
const PERTURBED_PRODUCT_LIMIT: f64 = 1.744;
const COEFFICIENT_SHIFT_REL: f64 = 0.10;
const GAIN_ERROR: f64 = 0.2;
/// Criterion 10: trace-distance tolerance between E[rho_c] and the
/// deterministic solution at Mt = 1.
const TRACE_DISTANCE_TOL: f64 = 0.05;
/// Criterion 11: z-score window for the mean homodyne increment.
const CURRENT_SIGMAS: f64 = 3.0;

const SWEEP_SPINS: [f64; 7] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0];

/// Print the verdict line and fail the test on FAIL, with the same line as
/// the panic message so captured output and the failure list agree.
fn verdict(number: u32, pass: bool, detail: &str) {
    let line = format!(
        "criterion {number:02} {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    assert!(pass, "{line}");
}

fn unit() -> MeasurementStrength {
    MeasurementStrength::unit()
}

fn initial_state(j: f64) -> DensityMatrix {
    css_x(Spin::from_j(j).expect("valid spin")).expect("coherent state")
}

/// The step the deterministic runs default to: the largest stable RK4 step,
/// rounded down so it divides the span into whole steps.
fn default_grid(j: f64, t_end: f64) -> TimeGrid {
    let n = (t_end / stable_me_dt(j, 1.0)).ceil().max(1.0);
    TimeGrid::new(0.0, t_end, t_end / n).expect("valid grid")
}

/// Shared J = 25 run with the self-consistent feedback schedule, out to
/// Mt = 3. The schedule turns stiff once the squeezing minimum is past and
/// the feedback noise has wrapped the equatorial variances, so this uses
/// dt = 1e-4 — well inside the RK4 stability interval for the whole span —
/// instead of the default step that suffices for gains that stay O(M).
fn feedback_run_j25() -> &'static EvolutionRecord {
    static RUN: OnceLock<EvolutionRecord> = OnceLock::new();
    RUN.get_or_init(|| {
        let grid = TimeGrid::new(0.0, 3.0, 1e-4).expect("valid grid");
        integrate_me(
            &initial_state(25.0),
            &grid,
            &unit(),
            &GainSchedule::EnsembleSelfConsistent,
            &MeOptions::default(),
        )
        .expect("J = 25 feedback run integrates to Mt = 3")
    })
}

fn squeezing_minimum(rec: &EvolutionRecord, j: f64) -> (f64, f64, usize) {
    let curve =
        SqueezingCurve::new(rec.times.clone(), rec.xi2_z.clone(), j, "xi2_z").expect("valid curve");
    let min = find_minimum(&curve).expect("interior minimum");
    (min.t, min.value, min.index)
}

/// Minimum per spin for one gain schedule: (J, t_min, xi2_min) triples on
/// the default per-spin grid.
fn sweep_minima(gain: &GainSchedule) -> Vec<(f64, f64, f64)> {
    SWEEP_SPINS
        .iter()
        .map(|&j| {
            let rec = integrate_me(
                &initial_state(j),
                &default_grid(j, 3.0),
                &unit(),
                gain,
                &MeOptions::default(),
            )
            .expect("sweep run integrates");
            let (t_min, xi2_min, _) = squeezing_minimum(&rec, j);
            (j, t_min, xi2_min)
        })
        .collect()
}

fn base_sweep() -> &'static Vec<(f64, f64, f64)> {
    static SWEEP: OnceLock<Vec<(f64, f64, f64)>> = OnceLock::new();
    SWEEP.get_or_init(|| sweep_minima(&GainSchedule::AnalyticClosedForm))
}

fn perturbed_sweep() -> &'static Vec<(f64, f64, f64)> {
    static SWEEP: OnceLock<Vec<(f64, f64, f64)>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        sweep_minima(&GainSchedule::Perturbed {
            epsilon: GAIN_ERROR,
            base: Box::new(GainSchedule::AnalyticClosedForm),
        })
    })
}

/// J = 2 trajectory ensembles at Mt in [0, 1], dt = 1e-4, 1000 trajectories
/// each, plus the deterministic solutions they must average to: the bare
/// measurement ensemble against the zero-gain equation, and the ensemble
/// with per-trajectory feedback against the self-consistent one.
struct UnravelingFixture {
    dt: f64,
    zero: EnsembleRun,
    zero_reference: DensityMatrix,
    conditioned: EnsembleRun,
    conditioned_reference: DensityMatrix,
}

fn unraveling() -> &'static UnravelingFixture {
    static FIXTURE: OnceLock<UnravelingFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let rho0 = initial_state(2.0);
        let grid = TimeGrid::new(0.0, 1.0, 1e-4).expect("valid grid");
        let opts = SmeOptions {
            snapshot_stride: 0,
            ..SmeOptions::default()
        };
        let n_trajectories = 1000;
        let master_seed = 2026;
        let zero = run_ensemble(
            &rho0,
            &grid,
            &unit(),
            &GainSchedule::Zero,
            n_trajectories,
            master_seed,
            &opts,
        )
        .expect("bare-measurement ensemble runs");
        let conditioned = run_ensemble(
            &rho0,
            &grid,
            &unit(),
            &GainSchedule::Conditioned,
            n_trajectories,
            master_seed,
            &opts,
        )
        .expect("conditioned-feedback ensemble runs");
        let me_opts = MeOptions::default();
        let zero_reference = integrate_me(&rho0, &grid, &unit(), &GainSchedule::Zero, &me_opts)
            .expect("zero-gain reference integrates")
            .final_state()
            .clone();
        let conditioned_reference = integrate_me(
            &rho0,
            &grid,
            &unit(),
            &GainSchedule::EnsembleSelfConsistent,
            &me_opts,
        )
        .expect("self-consistent reference integrates")
        .final_state()
        .clone();
        UnravelingFixture {
            dt: grid.dt(),
            zero,
            zero_reference,
            conditioned,
            conditioned_reference,
        }
    })
}

fn max_entry_norm(mat: &nalgebra::DMatrix<C64>) -> f64 {
    mat.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_operator_algebra_is_exact() {
    let mut worst: f64 = 0.0;
    for &j in &[0.5, 1.0, 5.0, 25.0, 50.0] {
        let spin = Spin::from_j(j).expect("valid spin");
        let (jx, jy, jz) = spin_operators(spin).expect("operators build");
        let i = C64::new(0.0, 1.0);
        let pairs = [
            (&*jx * &*jy - &*jy * &*jx - (&*jz * i)),
            (&*jy * &*jz - &*jz * &*jy - (&*jx * i)),
            (&*jz * &*jx - &*jx * &*jz - (&*jy * i)),
        ];
        for residual in &pairs {
            worst = worst.max(max_entry_norm(residual));
        }
        let casimir = &*jx * &*jx + &*jy * &*jy + &*jz * &*jz
            - nalgebra::DMatrix::<C64>::identity(spin.dim(), spin.dim()) * C64::from(j * (j + 1.0));
        worst = worst.max(max_entry_norm(&casimir));
    }
    verdict(
        1,
        worst <= ALGEBRA_TOL,
        &format!(
            "commutators and Casimir residuals for J in {{1/2, 1, 5, 25, 50}}: \
             worst entry {worst:.3e} (tolerance {ALGEBRA_TOL:.0e})"
        ),
    );
}

#[test]
fn criterion_02_bare_measurement_conserves_jz_moments() {
    let rec = integrate_me(
        &initial_state(25.0),
        &default_grid(25.0, 3.0),
        &unit(),
        &GainSchedule::Zero,
        &MeOptions::default(),
    )
    .expect("zero-gain run integrates");
    let jz_drift = rec
        .jz
        .iter()
        .map(|v| (v - rec.jz[0]).abs())
        .fold(0.0, f64::max);
    let jz2_drift = rec
        .jz2
        .iter()
        .map(|v| (v - rec.jz2[0]).abs())
        .fold(0.0, f64::max);
    let purity_end = *rec.purity.last().expect("non-empty record");
    let conserved = jz_drift <= CONSERVATION_TOL && jz2_drift <= CONSERVATION_TOL;
    let decays = purity_end < 0.5;
    verdict(
        2,
        conserved && decays,
        &format!(
            "over Mt in [0, 3] at J = 25: max |<Jz> - <Jz>(0)| = {jz_drift:.3e}, \
             max |<Jz^2> - <Jz^2>(0)| = {jz2_drift:.3e} (tolerance {CONSERVATION_TOL:.0e}); \
             purity decays 1.0 -> {purity_end:.4}"
        ),
    );
}

#[test]
fn criterion_03_spin_half_coherence_decay_oracle() {
    let rho0 = initial_state(0.5);
    let initial = rho0.mat()[(0, 1)].norm();
    let grid = TimeGrid::new(0.0, 1.0, 1e-3).expect("valid grid");
    let rec = integrate_me(
        &rho0,
        &grid,
        &unit(),
        &GainSchedule::Zero,
        &MeOptions::default(),
    )
    .expect("spin-1/2 run integrates");
    let ratio = rec.final_state().mat()[(0, 1)].norm() / initial;
    let expected = (-0.5_f64).exp();
    let err = (ratio - expected).abs();
    verdict(
        3,
        err <= DEPHASING_TOL,
        &format!(
            "off-diagonal ratio at Mt = 1: {ratio:.9} vs e^(-1/2) = {expected:.9}, \
             error {err:.3e} (tolerance {DEPHASING_TOL:.0e})"
        ),
    );
}

#[test]
fn criterion_04_feedback_pins_the_mean_at_zero() {
    let rec = feedback_run_j25();
    let j = 25.0;
    let worst = rec.jz.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let bound = MEAN_PIN_REL * j;
    verdict(
        4,
        worst <= bound,
        &format!(
            "J = 25 feedback run to Mt = 3: max |<Jz>| = {worst:.3e} \
             (bound {MEAN_PIN_REL:.0e} * J = {bound:.2e})"
        ),
    );
}

#[test]
fn criterion_05_purity_floor_through_the_squeezing_window() {
    let rec = feedback_run_j25();
    let (_, _, min_index) = squeezing_minimum(rec, 25.0);
    let purity_at_min = rec.purity[min_index];

    let mut window_min = f64::INFINITY;
    let mut first_violation: Option<(f64, f64)> = None;
    for (&t, &p) in rec.times.iter().zip(&rec.purity) {
        if t > PURITY_WINDOW_END {
            break;
        }
        window_min = window_min.min(p);
        if p < PURITY_WINDOW_FLOOR && first_violation.is_none() {
            first_violation = Some((t, p));
        }
    }
    let window_ok = first_violation.is_none();
    let min_ok = purity_at_min >= PURITY_AT_MIN_FLOOR;
    let window_note = match first_violation {
        None => format!("window minimum {window_min:.4} >= {PURITY_WINDOW_FLOOR}"),
        Some((t, p)) => format!(
            "drops below {PURITY_WINDOW_FLOOR} from Mt = {t:.3} (purity {p:.4}), \
             reaching {window_min:.4} by Mt = {PURITY_WINDOW_END}"
        ),
    };
    verdict(
        5,
        window_ok && min_ok,
        &format!(
            "J = 25 feedback run: purity over Mt <= {PURITY_WINDOW_END}: {window_note}; \
             at the squeezing minimum {purity_at_min:.4} \
             (floor {PURITY_AT_MIN_FLOOR}). The state-fed schedule keeps pumping \
             fluctuations into the plane after the minimum, so the late window \
             decoheres; the floor holds only up to Mt ~ 1.05"
        ),
    );
}

#[test]
fn criterion_06_state_fed_and_clock_fed_gains_agree_at_the_minimum() {
    let rec = feedback_run_j25();
    let (t_state, min_state, _) = squeezing_minimum(rec, 25.0);
    let &(_, t_clock, min_clock) = base_sweep()
        .iter()
        .find(|p| p.0 == 25.0)
        .expect("J = 25 is in the sweep");
    let value_rel = (min_state - min_clock).abs() / min_clock;
    let t_rel = (t_state - t_clock).abs() / t_clock;
    verdict(
        6,
        value_rel <= MIN_AGREEMENT_REL && t_rel <= T_MIN_AGREEMENT_REL,
        &format!(
            "J = 25 minima: state-fed {min_state:.6} at Mt = {t_state:.4}, \
             closed-form gain {min_clock:.6} at Mt = {t_clock:.4}; \
             value differs {:.2}% (allowed {:.0}%), location differs {:.2}% (allowed {:.0}%)",
            100.0 * value_rel,
            100.0 * MIN_AGREEMENT_REL,
            100.0 * t_rel,
            100.0 * T_MIN_AGREEMENT_REL
        ),
    );
}

#[test]
fn criterion_07_closed_form_minimum_identity() {
    let m = unit();
    let mut worst_t: f64 = 0.0;
    let mut worst_value: f64 = 0.0;
    for &j in &[5.0, 25.0, 100.0] {
        // Dense sampling of the small-fluctuation curve, refined the same
        // way measured curves are, against the stationary-point identity
        // t* = (1 - 1/(2J))/M, xi2* = e^(1 - 1/(2J)) / (2J).
        let times: Vec<f64> = (0..=25_000).map(|i| i as f64 * 1e-4).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|&t| xi2_analytic(t, m.value(), j))
            .collect();
        let curve = SqueezingCurve::new(times, values, j, "closed form").expect("valid curve");
        let min = find_minimum(&curve).expect("interior minimum");
        let (t_star, xi2_star) = xi2_analytic_minimum(m.value(), j);
        worst_t = worst_t.max((min.t - t_star).abs() / t_star);
        worst_value = worst_value.max((min.value - xi2_star).abs() / xi2_star);
    }
    let (_, xi2_star_25) = xi2_analytic_minimum(m.value(), 25.0);
    let large_j_form = 1.0_f64.exp() / 50.0;
    let large_j_rel = (xi2_star_25 - large_j_form).abs() / large_j_form;
    verdict(
        7,
        worst_t <= IDENTITY_REL && worst_value <= IDENTITY_REL && large_j_rel <= LARGE_J_FORM_REL,
        &format!(
            "refined minima vs the stationary-point identity for J in {{5, 25, 100}}: \
             worst relative error t {worst_t:.2e}, value {worst_value:.2e} \
             (tolerance {IDENTITY_REL:.0e}); J = 25 vs e/(2J): {:.2}% (allowed {:.1}%)",
            100.0 * large_j_rel,
            100.0 * LARGE_J_FORM_REL
        ),
    );
}

#[test]
fn criterion_08_squeezing_scales_inversely_with_spin() {
    let sweep = base_sweep();
    let fit = fit_scaling(sweep).expect("sweep fits");
    let b_ok = fit.exponent >= EXPONENT_RANGE.0 && fit.exponent <= EXPONENT_RANGE.1;
    let c_ok = fit.coefficient >= COEFFICIENT_RANGE.0 && fit.coefficient <= COEFFICIENT_RANGE.1;

    let products: Vec<f64> = sweep.iter().map(|&(j, _, xi2)| j * xi2).collect();
    let decreasing = products.windows(2).all(|w| w[1] < w[0]);
    let toward = (products.last().expect("non-empty") - PRODUCT_LIMIT).abs()
        < (products.first().expect("non-empty") - PRODUCT_LIMIT).abs();
    let trend = if decreasing {
        "decreasing"
    } else {
        "increasing"
    };
    verdict(
        8,
        b_ok && c_ok && decreasing && toward,
        &format!(
            "free fit b = {:.4} (window [{}, {}]); forced fit c = {:.4} \
             (window [{}, {}]); J * xi2_min runs {:.4} -> {:.4}, {trend} toward \
             the large-spin limit {PRODUCT_LIMIT} — the products approach it \
             from below, so the required decrease does not hold",
            fit.exponent,
            EXPONENT_RANGE.0,
            EXPONENT_RANGE.1,
            fit.coefficient,
            COEFFICIENT_RANGE.0,
            COEFFICIENT_RANGE.1,
            products.first().expect("non-empty"),
            products.last().expect("non-empty"),
        ),
    );
}

#[test]
fn criterion_09_gain_error_shifts_the_scaling_gently() {
    let base_fit = fit_scaling(base_sweep()).expect("base sweep fits");
    let perturbed_fit = fit_scaling(perturbed_sweep()).expect("perturbed sweep fits");
    let b_ok =
        perturbed_fit.exponent >= EXPONENT_RANGE.0 && perturbed_fit.exponent <= EXPONENT_RANGE.1;
    let shift = (perturbed_fit.coefficient - base_fit.coefficient) / base_fit.coefficient;
    // "Toward" the miscalibrated large-spin limit: the coefficient moves up,
    // since that limit sits above the exact-schedule one.
    let shift_ok = shift.abs() <= COEFFICIENT_SHIFT_REL
        && (PERTURBED_PRODUCT_LIMIT - PRODUCT_LIMIT).signum() == shift.signum();

    let bound = single_shot_bound(GAIN_ERROR).expect("valid gain error");
    let above: Vec<(f64, f64)> = base_sweep()
        .iter()
        .filter(|&&(j, _, _)| j >= 20.0)
        .map(|&(j, _, xi2)| (j, xi2))
        .collect();
    let bound_exceeds_all = above.iter().all(|&(_, xi2)| bound > xi2);
    let listing: Vec<String> = above
        .iter()
        .map(|&(j, xi2)| format!("J = {j}: {xi2:.4}"))
        .collect();
    verdict(
        9,
        b_ok && shift_ok && bound_exceeds_all,
        &format!(
            "20% gain error: b = {:.4} (window [{}, {}]); c {:.4} -> {:.4}, \
             shift {:+.2}% (allowed {:.0}%, toward the miscalibrated limit \
             {PERTURBED_PRODUCT_LIMIT}); single-shot bound {bound:.4} must exceed \
             every continuous-scheme minimum at J >= 20, but the minima are \
             {} — the continuous scheme only drops under the bound near J ~ 41",
            perturbed_fit.exponent,
            EXPONENT_RANGE.0,
            EXPONENT_RANGE.1,
            base_fit.coefficient,
            perturbed_fit.coefficient,
            100.0 * shift,
            100.0 * COEFFICIENT_SHIFT_REL,
            listing.join(", "),
        ),
    );
}

#[test]
fn criterion_10_trajectory_average_matches_the_deterministic_state() {
    let f = unraveling();
    let zero_final = &f
        .zero
        .average
        .mean_states
        .last()
        .expect("final mean state recorded")
        .state;
    let conditioned_final = &f
        .conditioned
        .average
        .mean_states
        .last()
        .expect("final mean state recorded")
        .state;
    let zero_dist = zero_final
        .trace_distance(&f.zero_reference)
        .expect("same dimension");
    let conditioned_dist = conditioned_final
        .trace_distance(&f.conditioned_reference)
        .expect("same dimension");
    verdict(
        10,
        zero_dist < TRACE_DISTANCE_TOL && conditioned_dist < TRACE_DISTANCE_TOL,
        &format!(
            "J = 2, 1000 trajectories, trace distance of E[rho_c] to the \
             deterministic state at Mt = 1: bare measurement {zero_dist:.4} \
             ({} excluded), conditioned feedback {conditioned_dist:.4} \
             ({} excluded); tolerance {TRACE_DISTANCE_TOL}",
            f.zero.failures.len(),
            f.conditioned.failures.len(),
        ),
    );
}

#[test]
fn criterion_11_homodyne_current_tracks_the_conditioned_mean() {
    let f = unraveling();
    let avg = &f.conditioned.average;
    let n = avg.n_trajectories as f64;
    // Aggregate z-test over the whole record: the summed innovation
    // (increment minus 2 sqrt(M) <Jz>_c dt) is a zero-mean random walk, so
    // one comparison against its own sampled spread avoids the multiple-
    // comparison noise of testing every step separately.
    let root_m = unit().value().sqrt();
    let mut total = 0.0;
    let mut variance = 0.0;
    for (k, &mean_dq) in avg.mean_current.iter().enumerate() {
        total += mean_dq - 2.0 * root_m * avg.mean_jz[k] * f.dt;
        variance += avg.std_current[k] * avg.std_current[k] / n;
    }
    let sigma = variance.sqrt();
    let z = total / sigma;
    verdict(
        11,
        z.abs() <= CURRENT_SIGMAS,
        &format!(
            "summed mean increment minus 2 sqrt(M) E[<Jz>_c] dt over Mt in [0, 1]: \
             {total:+.3e} = {z:+.2} sigma (window {CURRENT_SIGMAS} sigma, \
             sigma = {sigma:.3e}, {} trajectories)",
            avg.n_trajectories
        ),
    );
}

#[test]
fn criterion_12_csv_bytes_are_thread_count_invariant() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let config_path = tmp.path().join("ensemble.toml");
    std::fs::write(
        &config_path,
        "mode = \"sme\"\n\n\
         [system]\n j = 1\n\n\
         [grid]\n t_end = 0.3\n dt = 1e-3\n\n\
         [gain]\n type = \"conditioned\"\n\n\
         [sme]\n n_trajectories = 48\n master_seed = 42\n\n\
         [output]\n dir = \"unused\"\n snapshot_stride = 50\n",
    )
    .expect("config written");

    let run = |label: &str, threads: &str| {
        let out = tmp.path().join(label);
        let output = Command::new(env!("CARGO_BIN_EXE_spinsqueeze"))
            .args(["sme", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .output()
            .expect("binary runs");
        assert!(
            output.status.success(),
            "run {label} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr)
        );
        out
    };
    let first = run("threads-1", "1");
    let second = run("threads-4", "4");
    let third = run("threads-4-again", "4");

    let mut csvs: Vec<String> = std::fs::read_dir(&first)
        .expect("output dir readable")
        .filter_map(|e| {
            let name = e.expect("dir entry").file_name().into_string().ok()?;
            name.ends_with(".csv").then_some(name)
        })
        .collect();
    csvs.sort();
    assert!(!csvs.is_empty(), "the run produced no csv files");

    let mut mismatched = Vec::new();
    for name in &csvs {
        let reference = std::fs::read(first.join(name)).expect("csv readable");
        for dir in [&second, &third] {
            if std::fs::read(dir.join(name)).expect("csv readable") != reference {
                mismatched.push(format!("{name} ({})", dir.display()));
            }
        }
    }
    verdict(
        12,
        mismatched.is_empty(),
        &format!(
            "{} csv files ({}) byte-identical across --threads 1, --threads 4, \
             and a repeat run with the same master seed{}",
            csvs.len(),
            csvs.join(", "),
            if mismatched.is_empty() {
                String::new()
            } else {
                format!("; mismatches: {}", mismatched.join(", "))
            }
        ),
    );
}
