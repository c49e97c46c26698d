//! Experiment drivers. Each takes a validated run description, does the
//! numerical work, and returns a [`ResultBundle`]; writing files is the
//! caller's move, so tests can inspect results without touching disk.
//!
//! Output conventions: every time column is Mt, every gain column is
//! lambda/M, homodyne increments are left in the absolute units the
//! unraveling produces. Sweeps fan out across spins and ensembles across
//! trajectories on the worker pool (with the `parallel` feature), both with
//! index-ordered aggregation, so all CSV bytes are independent of the
//! worker count.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::control::{regime_check, single_shot_bound, GainSchedule};
use crate::dynamics::{integrate_me, stable_me_dt, MeOptions, MeasurementStrength};
use crate::error::Error;
use crate::harness::config::{
    grid_in_seconds, resolve_dt, MeRun, Mode, RegimeRun, Resolved, RobustnessRun, SmeRun, SweepRun,
};
use crate::harness::output::{Cell, ResultBundle, Table};
use crate::observables::{find_minimum, fit_scaling, xi2_analytic, SqueezingCurve};
use crate::parallel::ordered_map;
use crate::spin::{css_x, Spin};
use crate::stochastic::{run_ensemble, SmeOptions};
use crate::Result;

/// Dispatch a resolved config to its driver.
pub fn run(resolved: &Resolved) -> Result<ResultBundle> {
    match resolved {
        Resolved::Me(r) => run_me_experiment(r),
        Resolved::Sme(r) => run_sme_experiment(r),
        Resolved::Sweep(r) => run_sweep(r),
        Resolved::Robustness(r) => run_robustness(r),
        Resolved::RegimeCheck(r) => run_regime_check(r),
    }
}

fn push_header(bundle: &mut ResultBundle, mode: Mode) {
    bundle.push("mode", mode);
    bundle.push("version", env!("CARGO_PKG_VERSION"));
}

fn push_wall_time(bundle: &mut ResultBundle, started: Instant) {
    bundle.push(
        "wall_time_s",
        format!("{:.3}", started.elapsed().as_secs_f64()),
    );
}

/// Locate the squeezing minimum on a sampled curve and record it. A
/// boundary minimum is a property of the run window, not a failure, so it
/// lands in the summary instead of aborting.
fn push_minimum(bundle: &mut ResultBundle, curve: &SqueezingCurve, purity: &[f64]) -> Result<()> {
    match find_minimum(curve) {
        Ok(min) => {
            bundle.push("minimum_status", "ok");
            bundle.push("xi2_min", min.value);
            bundle.push("t_min", min.t);
            bundle.push("purity_at_min", purity[min.index]);
        }
        Err(Error::MinimumAtBoundary { end }) => {
            bundle.push("minimum_status", format!("at-{end}-boundary"));
            let note = match end {
                "end" => "the squeezing curve is still falling at t_end; extend the window",
                _ => "the curve only grows from its initial value; no squeezing under this gain",
            };
            bundle.push("minimum_note", note);
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

/// Deterministic run: integrate the feedback master equation and emit the
/// per-time observables plus the located squeezing minimum.
pub fn run_me_experiment(run: &MeRun) -> Result<ResultBundle> {
    let started = Instant::now();
    let mv = run.m.value();
    let j = run.spin.j();
    let grid = grid_in_seconds(run.t_end, run.dt, &run.m)?;
    let rho0 = css_x(run.spin)?;
    let opts = MeOptions {
        snapshot_stride: run.snapshot_stride,
        ..MeOptions::default()
    };
    let rec = integrate_me(&rho0, &grid, &run.m, &run.gain, &opts)?;

    let mut bundle = ResultBundle::new(&run.out_dir, run.echo.to_toml());
    push_header(&mut bundle, Mode::Me);
    bundle.push("j", j);
    bundle.push("m", mv);
    bundle.push("gain", &run.gain);
    bundle.push("t_end", run.t_end);
    bundle.push("dt", run.dt);
    bundle.push("n_steps", grid.n_steps());

    let mt: Vec<f64> = rec.times.iter().map(|t| t * mv).collect();
    let mut columns = vec!["Mt", "purity", "Jx", "Jz2", "Jy2", "lambda", "xi2_z"];
    if run.include_analytic {
        columns.push("xi2_analytic");
    }
    let mut table = Table::new("timeseries", columns);
    for i in 0..rec.len() {
        let mut row = vec![
            Cell::Float(mt[i]),
            Cell::Float(rec.purity[i]),
            Cell::Float(rec.jx[i]),
            Cell::Float(rec.jz2[i]),
            Cell::Float(rec.jy2[i]),
            Cell::Float(rec.lambda[i] / mv),
            Cell::Float(rec.xi2_z[i]),
        ];
        if run.include_analytic {
            row.push(Cell::Float(xi2_analytic(rec.times[i], mv, j)));
        }
        table.push_row(row);
    }
    bundle.push_table(table);

    let curve = SqueezingCurve::new(mt, rec.xi2_z.clone(), j, &run.gain.to_string())?;
    push_minimum(&mut bundle, &curve, &rec.purity)?;
    bundle.push("purity_final", rec.purity[rec.len() - 1]);
    bundle.push("xi2_z_final", rec.xi2_z[rec.len() - 1]);
    push_wall_time(&mut bundle, started);
    Ok(bundle)
}

/// One spin's contribution to a sweep.
#[derive(Clone, Copy, Debug)]
struct SweepPoint {
    j: f64,
    t_min: f64,
    xi2_min: f64,
}

fn sweep_point(
    spin: Spin,
    m: &MeasurementStrength,
    t_end: f64,
    dt_mt: Option<f64>,
    gain: &GainSchedule,
) -> Result<SweepPoint> {
    let dt = resolve_dt(t_end, dt_mt, stable_me_dt(spin.j(), 1.0));
    let grid = grid_in_seconds(t_end, dt, m)?;
    let rho0 = css_x(spin)?;
    let opts = MeOptions {
        snapshot_stride: 0,
        ..MeOptions::default()
    };
    let rec = integrate_me(&rho0, &grid, m, gain, &opts)?;
    let mv = m.value();
    let mt = rec.times.iter().map(|t| t * mv).collect();
    let curve = SqueezingCurve::new(mt, rec.xi2_z.clone(), spin.j(), &gain.to_string())?;
    let min = find_minimum(&curve)?;
    Ok(SweepPoint {
        j: spin.j(),
        t_min: min.t,
        xi2_min: min.value,
    })
}

/// Run one gain schedule across all spins; per-spin failures stay per-spin.
fn sweep_arm(
    spins: &[Spin],
    m: &MeasurementStrength,
    t_end: f64,
    dt: Option<f64>,
    gain: &GainSchedule,
) -> Vec<(f64, Result<SweepPoint>)> {
    let m = *m;
    let gain = gain.clone();
    ordered_map(spins.to_vec(), move |spin| {
        (spin.j(), sweep_point(spin, &m, t_end, dt, &gain))
    })
}

fn summary_key(prefix: &str, j: f64) -> String {
    format!("{prefix}status_J{j}")
}

/// Fold one arm's results into a table plus per-J status lines. Returns the
/// surviving points and the first error (for the all-failed case).
fn collect_arm(
    bundle: &mut ResultBundle,
    prefix: &str,
    table_name: &'static str,
    results: Vec<(f64, Result<SweepPoint>)>,
) -> (Table, Vec<SweepPoint>, Option<Error>) {
    let mut table = Table::new(table_name, vec!["J", "t_min", "xi2_min", "J_xi2_min"]);
    let mut points = Vec::new();
    let mut first_err = None;
    for (j, res) in results {
        match res {
            Ok(p) => {
                bundle.push(summary_key(prefix, j), "ok");
                table.push_row(vec![
                    Cell::Float(p.j),
                    Cell::Float(p.t_min),
                    Cell::Float(p.xi2_min),
                    Cell::Float(p.j * p.xi2_min),
                ]);
                points.push(p);
            }
            Err(e) => {
                bundle.push(summary_key(prefix, j), e.category());
                bundle.push(format!("{prefix}error_J{j}"), &e);
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    (table, points, first_err)
}

fn push_fit(bundle: &mut ResultBundle, prefix: &str, points: &[SweepPoint]) -> Option<f64> {
    let triples: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.j, p.t_min, p.xi2_min)).collect();
    match fit_scaling(&triples) {
        Ok(fit) => {
            bundle.push(format!("{prefix}fit_status"), "ok");
            bundle.push(format!("{prefix}fit_coefficient"), fit.coefficient);
            bundle.push(format!("{prefix}fit_residual"), fit.residual);
            bundle.push(format!("{prefix}fit_exponent"), fit.exponent);
            bundle.push(format!("{prefix}fit_amplitude"), fit.amplitude);
            Some(fit.coefficient)
        }
        Err(e) => {
            bundle.push(format!("{prefix}fit_status"), format!("degenerate: {e}"));
            None
        }
    }
}

/// J scan with the closed-form gain: per-spin minima plus the 1/J fit.
pub fn run_sweep(run: &SweepRun) -> Result<ResultBundle> {
    let started = Instant::now();
    let mut bundle = ResultBundle::new(&run.out_dir, run.echo.to_toml());
    push_header(&mut bundle, Mode::Sweep);
    bundle.push("m", run.m.value());
    bundle.push("t_end", run.t_end);
    bundle.push("gain", GainSchedule::AnalyticClosedForm);

    let results = sweep_arm(
        &run.spins,
        &run.m,
        run.t_end,
        run.dt,
        &GainSchedule::AnalyticClosedForm,
    );
    let (table, points, first_err) = collect_arm(&mut bundle, "", "sweep", results);
    if points.is_empty() {
        return Err(first_err.expect("no points means at least one failure"));
    }
    bundle.push_table(table);
    push_fit(&mut bundle, "", &points);
    push_wall_time(&mut bundle, started);
    Ok(bundle)
}

/// The sweep twice — closed-form gain against its (1 + epsilon)-scaled
/// version — plus the single-measurement floor epsilon^2 for contrast.
pub fn run_robustness(run: &RobustnessRun) -> Result<ResultBundle> {
    let started = Instant::now();
    let sweep = &run.sweep;
    let mut bundle = ResultBundle::new(&sweep.out_dir, sweep.echo.to_toml());
    push_header(&mut bundle, Mode::Robustness);
    bundle.push("m", sweep.m.value());
    bundle.push("t_end", sweep.t_end);
    bundle.push("epsilon", run.epsilon);
    // The floor only exists for miscalibrations up to 100%.
    let bound = single_shot_bound(run.epsilon).ok();
    match bound {
        Some(b) => bundle.push("single_shot_bound", b),
        None => bundle.push("single_shot_bound", "n/a (epsilon outside [0, 1])"),
    }

    let base_gain = GainSchedule::AnalyticClosedForm;
    let pert_gain = GainSchedule::Perturbed {
        epsilon: run.epsilon,
        base: Box::new(GainSchedule::AnalyticClosedForm),
    };
    let base_results = sweep_arm(&sweep.spins, &sweep.m, sweep.t_end, sweep.dt, &base_gain);
    let pert_results = sweep_arm(&sweep.spins, &sweep.m, sweep.t_end, sweep.dt, &pert_gain);

    let (base_table, base_points, base_err) =
        collect_arm(&mut bundle, "base_", "sweep", base_results);
    let (pert_table, pert_points, _) =
        collect_arm(&mut bundle, "perturbed_", "sweep_perturbed", pert_results);
    if base_points.is_empty() {
        return Err(base_err.expect("no points means at least one failure"));
    }
    bundle.push_table(base_table);
    bundle.push_table(pert_table);

    let base_c = push_fit(&mut bundle, "base_", &base_points);
    let pert_c = push_fit(&mut bundle, "perturbed_", &pert_points);
    if let (Some(b), Some(p)) = (base_c, pert_c) {
        bundle.push("fit_coefficient_shift_rel", (p - b).abs() / b);
    }
    if let (Some(b), Some(c)) = (bound, base_c) {
        // The spin above which the continuous minimum c/J drops below the
        // single-measurement floor.
        bundle.push("single_shot_crossover_j", c / b);
    }

    // Side-by-side comparison for the spins that survived both arms.
    let by_j: BTreeMap<u32, SweepPoint> = pert_points
        .iter()
        .map(|p| ((2.0 * p.j) as u32, *p))
        .collect();
    let mut table = Table::new(
        "robustness",
        vec![
            "J",
            "xi2_min",
            "xi2_min_perturbed",
            "xi2_shift_rel",
            "single_shot_bound",
            "below_single_shot",
        ],
    );
    for b in &base_points {
        let Some(p) = by_j.get(&((2.0 * b.j) as u32)) else {
            continue;
        };
        let (bound_cell, below_cell) = match bound {
            Some(eps2) => (Cell::Float(eps2), Cell::Int(i64::from(b.xi2_min < eps2))),
            None => (Cell::Empty, Cell::Empty),
        };
        table.push_row(vec![
            Cell::Float(b.j),
            Cell::Float(b.xi2_min),
            Cell::Float(p.xi2_min),
            Cell::Float((p.xi2_min - b.xi2_min) / b.xi2_min),
            bound_cell,
            below_cell,
        ]);
    }
    bundle.push_table(table);
    push_wall_time(&mut bundle, started);
    Ok(bundle)
}

/// Replace per-trajectory schedules by their deterministic counterparts:
/// the equation E[rho_c] obeys carries the ensemble gain where a trajectory
/// used the conditioned one.
fn comparator_gain(gain: &GainSchedule) -> GainSchedule {
    match gain {
        GainSchedule::Conditioned => GainSchedule::EnsembleSelfConsistent,
        GainSchedule::Perturbed { epsilon, base } => GainSchedule::Perturbed {
            epsilon: *epsilon,
            base: Box::new(comparator_gain(base)),
        },
        other => other.clone(),
    }
}

/// Trajectory-ensemble run: conditioned statistics, homodyne-current
/// statistics, per-trajectory digests, and the trace-distance diagnostic
/// against the matching deterministic equation.
pub fn run_sme_experiment(run: &SmeRun) -> Result<ResultBundle> {
    let started = Instant::now();
    let mv = run.m.value();
    let j = run.spin.j();
    let grid = grid_in_seconds(run.t_end, run.dt, &run.m)?;
    let rho0 = css_x(run.spin)?;
    let opts = SmeOptions {
        snapshot_stride: run.snapshot_stride,
        ..SmeOptions::default()
    };
    let ens = run_ensemble(
        &rho0,
        &grid,
        &run.m,
        &run.gain,
        run.n_trajectories,
        run.master_seed,
        &opts,
    )?;
    let me_gain = comparator_gain(&run.gain);
    let me_opts = MeOptions {
        snapshot_stride: run.snapshot_stride,
        ..MeOptions::default()
    };
    let me_rec = integrate_me(&rho0, &grid, &run.m, &me_gain, &me_opts)?;

    let mut bundle = ResultBundle::new(&run.out_dir, run.echo.to_toml());
    push_header(&mut bundle, Mode::Sme);
    bundle.push("j", j);
    bundle.push("m", mv);
    bundle.push("gain", &run.gain);
    bundle.push("comparator_gain", &me_gain);
    bundle.push("t_end", run.t_end);
    bundle.push("dt", run.dt);
    bundle.push("n_steps", grid.n_steps());
    bundle.push("n_trajectories", run.n_trajectories);
    bundle.push("master_seed", run.master_seed);
    bundle.push("n_failed", ens.failures.len());
    if let Some(f) = ens.failures.first() {
        bundle.push(
            "first_failure",
            format!("trajectory {}: {}", f.index, f.error),
        );
    }

    let avg = &ens.average;
    let n_nodes = avg.times.len();
    let mut ensemble = Table::new(
        "ensemble",
        vec![
            "Mt",
            "mean_Jz",
            "std_Jz",
            "mean_var_Jz",
            "mean_Jz2",
            "mean_Jx",
            "lambda",
            "purity_c",
            "xi2_z",
        ],
    );
    let mut xi2 = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        // Squeezing of the averaged state: <Jz^2> is linear in rho, so the
        // ensemble mean is the right second moment.
        let x = 2.0 * j * avg.mean_jz2[i] / (avg.mean_jx[i] * avg.mean_jx[i]);
        xi2.push(x);
        ensemble.push_row(vec![
            Cell::Float(avg.times[i] * mv),
            Cell::Float(avg.mean_jz[i]),
            Cell::Float(avg.std_jz[i]),
            Cell::Float(avg.mean_var_jz[i]),
            Cell::Float(avg.mean_jz2[i]),
            Cell::Float(avg.mean_jx[i]),
            Cell::Float(avg.mean_lambda[i] / mv),
            Cell::Float(avg.mean_conditional_purity[i]),
            Cell::Float(x),
        ]);
    }
    bundle.push_table(ensemble);

    let dt_s = grid.dt();
    let mut current = Table::new(
        "current",
        vec![
            "Mt",
            "mean_increment",
            "std_increment",
            "predicted_increment",
        ],
    );
    for i in 0..n_nodes - 1 {
        current.push_row(vec![
            Cell::Float(avg.times[i] * mv),
            Cell::Float(avg.mean_current[i]),
            Cell::Float(avg.std_current[i]),
            Cell::Float(2.0 * mv.sqrt() * avg.mean_jz[i] * dt_s),
        ]);
    }
    bundle.push_table(current);

    let mut trajectories = Table::new(
        "trajectories",
        vec![
            "trajectory",
            "status",
            "final_Jz",
            "final_var_Jz",
            "final_purity",
        ],
    );
    let mut ok_iter = ens.summaries.iter().peekable();
    let mut fail_iter = ens.failures.iter().peekable();
    for index in 0..run.n_trajectories {
        if ok_iter.peek().is_some_and(|s| s.index == index) {
            let s = ok_iter.next().unwrap();
            trajectories.push_row(vec![
                Cell::Int(index as i64),
                "ok".into(),
                Cell::Float(s.final_jz),
                Cell::Float(s.final_var_jz),
                Cell::Float(s.final_purity),
            ]);
        } else if fail_iter.peek().is_some_and(|f| f.index == index) {
            let f = fail_iter.next().unwrap();
            trajectories.push_row(vec![
                Cell::Int(index as i64),
                f.error.category().into(),
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
            ]);
        }
    }
    bundle.push_table(trajectories);

    // E[rho_c] against the deterministic solution at the shared snapshot
    // nodes; this is the unraveling-consistency diagnostic.
    let mut comparison = Table::new(
        "me_comparison",
        vec!["Mt", "trace_distance", "purity_mean_state"],
    );
    let mut max_dist: f64 = 0.0;
    let mut final_dist = 0.0;
    for (node, (mean, me)) in avg.mean_states.iter().zip(&me_rec.snapshots).enumerate() {
        debug_assert_eq!(mean.step, me.step, "snapshot grids must align");
        let dist = mean.state.trace_distance(&me.state)?;
        max_dist = max_dist.max(dist);
        final_dist = dist;
        comparison.push_row(vec![
            Cell::Float(mean.t * mv),
            Cell::Float(dist),
            Cell::Float(avg.mean_state_purity[node]),
        ]);
    }
    bundle.push_table(comparison);
    bundle.push("trace_distance_final", final_dist);
    bundle.push("trace_distance_max", max_dist);

    // Sampled minimum only: Monte-Carlo noise defeats parabolic refinement.
    let (i_min, xi2_min) = xi2
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grids are non-empty");
    bundle.push("xi2_min_sample", xi2_min);
    bundle.push("t_min_sample", avg.times[i_min] * mv);
    bundle.push("purity_c_at_min", avg.mean_conditional_purity[i_min]);
    push_wall_time(&mut bundle, started);
    Ok(bundle)
}

/// Evaluate the operating-regime margins and report them as key/values.
pub fn run_regime_check(run: &RegimeRun) -> Result<ResultBundle> {
    let started = Instant::now();
    let report = regime_check(&run.params)?;
    let mut bundle = ResultBundle::new(&run.out_dir, run.echo.to_toml());
    push_header(&mut bundle, Mode::RegimeCheck);
    let p = &report.params;
    bundle.push("g", p.g);
    bundle.push("kappa", p.kappa);
    bundle.push("gamma", p.gamma);
    bundle.push("delta", p.delta);
    bundle.push("chi", p.chi);
    bundle.push("beta_sq", p.beta_sq);
    bundle.push("n_atoms", p.n_atoms);
    bundle.push("threshold", p.threshold);
    bundle.push("adiabatic_margin", report.adiabatic_margin);
    bundle.push("adiabatic_ok", report.adiabatic_ok);
    bundle.push("loss_margin", report.loss_margin);
    bundle.push("loss_ok", report.loss_ok);
    bundle.push("detuning_margin", report.detuning_margin);
    bundle.push("detuning_ok", report.detuning_ok);
    bundle.push("onset_ok", report.onset_ok);
    bundle.push("regime_ok", report.regime_ok());
    push_wall_time(&mut bundle, started);
    Ok(bundle)
}
