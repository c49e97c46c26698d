//! Run configuration: a sectioned key/value document (TOML) parsed,
//! validated against the selected mode, and echoed back with every default
//! made explicit.
//!
//! All times in the file are dimensionless Mt and all gains are in units of
//! M; the measurement strength `m` only sets the wall-clock scale of one
//! time unit, so the default `m = 1.0` makes absolute and dimensionless
//! quantities coincide. Unknown keys are rejected everywhere, and sections
//! that the selected mode does not read are rejected rather than ignored.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{GainSchedule, GainTable, RegimeParams};
use crate::dynamics::{stable_me_dt, MeasurementStrength, TimeGrid};
use crate::error::Error;
use crate::spin::{Spin, MAX_DIM};
use crate::Result;

/// J grid used by sweep and robustness runs when the config names none.
pub const DEFAULT_SWEEP_J: [f64; 7] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0];

/// Default trajectory count for an sme run; keeps a default run at seconds
/// scale while giving usable Monte-Carlo statistics.
pub const DEFAULT_TRAJECTORIES: usize = 200;

/// Default final time in Mt units: well past the squeezing minimum near
/// Mt = 1, with margin for the minimum refinement.
pub const DEFAULT_T_END: f64 = 3.0;

/// Default sme step in Mt units. (Deterministic runs default to the
/// per-spin stability cap instead.)
pub const DEFAULT_SME_DT: f64 = 1e-4;

/// Default state-snapshot stride in steps (0 = final state only).
pub const DEFAULT_SNAPSHOT_STRIDE: usize = 100;

/// Default gain perturbation for robustness runs.
pub const DEFAULT_ROBUSTNESS_EPSILON: f64 = 0.2;

/// Which experiment a config drives. The CLI subcommand must agree with the
/// `mode` key, so a config cannot silently run as the wrong experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Me,
    Sme,
    Sweep,
    Robustness,
    RegimeCheck,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Me => "me",
            Mode::Sme => "sme",
            Mode::Sweep => "sweep",
            Mode::Robustness => "robustness",
            Mode::RegimeCheck => "regime-check",
        })
    }
}

/// Gain selector as written in the config file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainKind {
    Zero,
    Conditioned,
    Ensemble,
    Analytic,
    Tabulated,
    Perturbed,
}

impl fmt::Display for GainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GainKind::Zero => "zero",
            GainKind::Conditioned => "conditioned",
            GainKind::Ensemble => "ensemble",
            GainKind::Analytic => "analytic",
            GainKind::Tabulated => "tabulated",
            GainKind::Perturbed => "perturbed",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Collective spin J (integers or half-integers); single-system modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    /// Spins scanned by sweep and robustness runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_list: Option<Vec<f64>>,
    /// Measurement strength M (default 1.0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Final time in Mt units (default 3.0); integration starts at 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Step in Mt units. When omitted, deterministic runs use the per-spin
    /// stability cap and sme runs use 1e-4, each rounded so the span divides
    /// into whole steps. An explicit dt must divide t_end itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSection {
    #[serde(rename = "type")]
    pub kind: GainKind,
    /// Relative miscalibration of the perturbed schedule (required there,
    /// rejected elsewhere); the applied gain is (1 + epsilon) times the base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Inner schedule of the perturbed gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<GainKind>,
    /// Two-column (Mt, lambda/M) file for the tabulated schedule; relative
    /// paths are taken from the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trajectories: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Where the result files go (default `runs/<mode>`, relative to the
    /// working directory).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// State-snapshot stride in steps (me and sme runs only; 0 = final
    /// state only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
    /// Add the closed-form small-fluctuation squeezing curve as an extra
    /// column (me runs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_analytic: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    pub g: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub delta: f64,
    pub chi: f64,
    pub beta_sq: f64,
    pub n_atoms: f64,
    /// How large a ratio counts as "much greater" (default 10).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// The config file as written: every key optional except `mode`, defaults
/// applied during [`SimulationConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<GainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sme: Option<SmeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeSection>,
}

fn config_err(reason: String) -> Error {
    Error::Config { reason }
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::from_toml_str(&text)
    }

    /// Serialize; infallible because every field maps to a TOML value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Fold command-line overrides into the file config before resolving, so
    /// the echoed config records what actually ran.
    pub fn apply_overrides(
        &mut self,
        out: Option<&Path>,
        seed: Option<u64>,
        snapshot_stride: Option<usize>,
    ) {
        if let Some(dir) = out {
            self.output.get_or_insert_with(Default::default).dir = Some(dir.to_path_buf());
        }
        if let Some(seed) = seed {
            self.sme.get_or_insert_with(Default::default).master_seed = Some(seed);
        }
        if let Some(stride) = snapshot_stride {
            self.output
                .get_or_insert_with(Default::default)
                .snapshot_stride = Some(stride);
        }
    }

    /// Validate against the mode and produce a ready-to-run description.
    /// `base_dir` anchors relative paths named inside the config (gain
    /// tables), normally the config file's directory.
    pub fn resolve(&self, base_dir: &Path) -> Result<Resolved> {
        match self.mode {
            Mode::Me => self.resolve_me(base_dir).map(Resolved::Me),
            Mode::Sme => self.resolve_sme(base_dir).map(Resolved::Sme),
            Mode::Sweep => self.resolve_sweep().map(Resolved::Sweep),
            Mode::Robustness => self.resolve_robustness().map(Resolved::Robustness),
            Mode::RegimeCheck => self.resolve_regime().map(Resolved::RegimeCheck),
        }
    }

    fn forbid(&self, present: bool, section: &str) -> Result<()> {
        if present {
            return Err(config_err(format!(
                "section [{section}] is not used in mode {}; remove it",
                self.mode
            )));
        }
        Ok(())
    }

    fn single_spin(&self) -> Result<(Spin, MeasurementStrength)> {
        let sys = self.system.as_ref().ok_or_else(|| {
            config_err(format!(
                "mode {} needs a [system] section with j",
                self.mode
            ))
        })?;
        if sys.j_list.is_some() {
            return Err(config_err(format!(
                "j_list is only used by sweep and robustness runs; mode {} takes a single j",
                self.mode
            )));
        }
        let j = sys
            .j
            .ok_or_else(|| config_err(format!("mode {} needs [system] j", self.mode)))?;
        let spin = spin_from_j(j)?;
        Ok((spin, measurement(sys.m)?))
    }

    fn spin_list(&self) -> Result<(Vec<Spin>, MeasurementStrength)> {
        let sys = self.system.clone().unwrap_or_default();
        if sys.j.is_some() {
            return Err(config_err(format!(
                "mode {} scans j_list; remove the single j key",
                self.mode
            )));
        }
        let js = sys.j_list.unwrap_or_else(|| DEFAULT_SWEEP_J.to_vec());
        if js.is_empty() {
            return Err(config_err("j_list must not be empty".into()));
        }
        let mut spins = js
            .iter()
            .map(|&j| spin_from_j(j))
            .collect::<Result<Vec<_>>>()?;
        spins.sort_by_key(Spin::two_j);
        if spins.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("j_list entries must be distinct".into()));
        }
        Ok((spins, measurement(sys.m)?))
    }

    fn grid_mt(&self) -> Result<(f64, Option<f64>)> {
        let g = self.grid.clone().unwrap_or_default();
        let t_end = g.t_end.unwrap_or(DEFAULT_T_END);
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(config_err(format!(
                "t_end must be positive and finite, got {t_end}"
            )));
        }
        if let Some(dt) = g.dt {
            if !(dt.is_finite() && dt > 0.0 && dt <= t_end) {
                return Err(config_err(format!(
                    "dt must satisfy 0 < dt <= t_end = {t_end}, got {dt}"
                )));
            }
        }
        Ok((t_end, g.dt))
    }

    /// (out_dir, snapshot_stride, include_analytic) with per-mode rejection
    /// of the knobs the mode cannot honor.
    fn output_opts(
        &self,
        stride_used: bool,
        analytic_used: bool,
    ) -> Result<(PathBuf, usize, bool)> {
        let out = self.output.clone().unwrap_or_default();
        if !stride_used && out.snapshot_stride.is_some() {
            return Err(config_err(format!(
                "snapshot_stride is not used in mode {}; remove it",
                self.mode
            )));
        }
        if !analytic_used && out.include_analytic.is_some() {
            return Err(config_err(format!(
                "include_analytic is only used in mode me, not {}",
                self.mode
            )));
        }
        let dir = out
            .dir
            .unwrap_or_else(|| PathBuf::from(format!("runs/{}", self.mode)));
        Ok((
            dir,
            out.snapshot_stride.unwrap_or(DEFAULT_SNAPSHOT_STRIDE),
            out.include_analytic.unwrap_or(false),
        ))
    }

    fn resolve_me(&self, base_dir: &Path) -> Result<MeRun> {
        self.forbid(self.sme.is_some(), "sme")?;
        self.forbid(self.regime.is_some(), "regime")?;
        let (spin, m) = self.single_spin()?;
        let (t_end, dt_opt) = self.grid_mt()?;
        let dt = resolve_dt(t_end, dt_opt, stable_me_dt(spin.j(), 1.0));
        let _ = grid_in_seconds(t_end, dt, &m)?;
        let section = self
            .gain
            .as_ref()
            .ok_or_else(|| config_err("mode me needs a [gain] section".into()))?;
        let (gain, gain_echo) = resolve_gain(section, Mode::Me, &m, t_end, base_dir)?;
        let (out_dir, snapshot_stride, include_analytic) = self.output_opts(true, true)?;
        let echo = SimulationConfig {
            mode: Mode::Me,
            system: Some(SystemSection {
                j: Some(spin.j()),
                j_list: None,
                m: Some(m.value()),
            }),
            grid: Some(GridSection {
                t_end: Some(t_end),
                dt: Some(dt),
            }),
            gain: Some(gain_echo),
            sme: None,
            output: Some(OutputSection {
                dir: Some(out_dir.clone()),
                snapshot_stride: Some(snapshot_stride),
                include_analytic: Some(include_analytic),
            }),
            regime: None,
        };
        Ok(MeRun {
            spin,
            m,
            t_end,
            dt,
            gain,
            include_analytic,
            snapshot_stride,
            out_dir,
            echo,
        })
    }

    fn resolve_sme(&self, base_dir: &Path) -> Result<SmeRun> {
        self.forbid(self.regime.is_some(), "regime")?;
        let (spin, m) = self.single_spin()?;
        let (t_end, dt_opt) = self.grid_mt()?;
        let dt = resolve_dt(t_end, dt_opt, DEFAULT_SME_DT);
        let _ = grid_in_seconds(t_end, dt, &m)?;
        let section = self
            .gain
            .as_ref()
            .ok_or_else(|| config_err("mode sme needs a [gain] section".into()))?;
        let (gain, gain_echo) = resolve_gain(section, Mode::Sme, &m, t_end, base_dir)?;
        let sme = self.sme.clone().unwrap_or_default();
        let n_trajectories = sme.n_trajectories.unwrap_or(DEFAULT_TRAJECTORIES);
        if n_trajectories == 0 {
            return Err(config_err("n_trajectories must be at least 1".into()));
        }
        let master_seed = sme.master_seed.unwrap_or(0);
        let (out_dir, snapshot_stride, _) = self.output_opts(true, false)?;
        let echo = SimulationConfig {
            mode: Mode::Sme,
            system: Some(SystemSection {
                j: Some(spin.j()),
                j_list: None,
                m: Some(m.value()),
            }),
            grid: Some(GridSection {
                t_end: Some(t_end),
                dt: Some(dt),
            }),
            gain: Some(gain_echo),
            sme: Some(SmeSection {
                n_trajectories: Some(n_trajectories),
                master_seed: Some(master_seed),
            }),
            output: Some(OutputSection {
                dir: Some(out_dir.clone()),
                snapshot_stride: Some(snapshot_stride),
                include_analytic: None,
            }),
            regime: None,
        };
        Ok(SmeRun {
            spin,
            m,
            t_end,
            dt,
            gain,
            n_trajectories,
            master_seed,
            snapshot_stride,
            out_dir,
            echo,
        })
    }

    fn sweep_core(&self) -> Result<SweepRun> {
        self.forbid(self.sme.is_some(), "sme")?;
        self.forbid(self.regime.is_some(), "regime")?;
        let (spins, m) = self.spin_list()?;
        let (t_end, dt) = self.grid_mt()?;
        if let Some(dt) = dt {
            let _ = grid_in_seconds(t_end, dt, &m)?;
        }
        let (out_dir, _, _) = self.output_opts(false, false)?;
        let echo = SimulationConfig {
            mode: self.mode,
            system: Some(SystemSection {
                j: None,
                j_list: Some(spins.iter().map(Spin::j).collect()),
                m: Some(m.value()),
            }),
            grid: Some(GridSection {
                t_end: Some(t_end),
                dt,
            }),
            gain: None,
            sme: None,
            output: Some(OutputSection {
                dir: Some(out_dir.clone()),
                snapshot_stride: None,
                include_analytic: None,
            }),
            regime: None,
        };
        Ok(SweepRun {
            spins,
            m,
            t_end,
            dt,
            out_dir,
            echo,
        })
    }

    fn resolve_sweep(&self) -> Result<SweepRun> {
        if let Some(gain) = &self.gain {
            if gain.kind != GainKind::Analytic
                || gain.epsilon.is_some()
                || gain.base.is_some()
                || gain.table_path.is_some()
            {
                return Err(config_err(
                    "sweep runs always use the closed-form gain; \
                     set [gain] type = \"analytic\" or drop the section"
                        .into(),
                ));
            }
        }
        let mut run = self.sweep_core()?;
        run.echo.gain = Some(GainSection {
            kind: GainKind::Analytic,
            epsilon: None,
            base: None,
            table_path: None,
        });
        Ok(run)
    }

    fn resolve_robustness(&self) -> Result<RobustnessRun> {
        let epsilon = match &self.gain {
            None => DEFAULT_ROBUSTNESS_EPSILON,
            Some(gain) => {
                if gain.kind != GainKind::Perturbed
                    || gain.base.map_or(false, |b| b != GainKind::Analytic)
                    || gain.table_path.is_some()
                {
                    return Err(config_err(
                        "robustness runs compare the closed-form gain against its \
                         perturbed version; only [gain] type = \"perturbed\" with an \
                         optional epsilon (and base = \"analytic\") is accepted"
                            .into(),
                    ));
                }
                let eps = gain.epsilon.unwrap_or(DEFAULT_ROBUSTNESS_EPSILON);
                validate_epsilon(eps)?;
                eps
            }
        };
        let mut sweep = self.sweep_core()?;
        sweep.echo.gain = Some(GainSection {
            kind: GainKind::Perturbed,
            epsilon: Some(epsilon),
            base: Some(GainKind::Analytic),
            table_path: None,
        });
        Ok(RobustnessRun { sweep, epsilon })
    }

    fn resolve_regime(&self) -> Result<RegimeRun> {
        self.forbid(self.system.is_some(), "system")?;
        self.forbid(self.grid.is_some(), "grid")?;
        self.forbid(self.gain.is_some(), "gain")?;
        self.forbid(self.sme.is_some(), "sme")?;
        let r = self
            .regime
            .clone()
            .ok_or_else(|| config_err("mode regime-check needs a [regime] section".into()))?;
        let threshold = r.threshold.unwrap_or(10.0);
        let params = RegimeParams {
            g: r.g,
            kappa: r.kappa,
            gamma: r.gamma,
            delta: r.delta,
            chi: r.chi,
            beta_sq: r.beta_sq,
            n_atoms: r.n_atoms,
            threshold,
        };
        let (out_dir, _, _) = self.output_opts(false, false)?;
        let echo = SimulationConfig {
            mode: Mode::RegimeCheck,
            system: None,
            grid: None,
            gain: None,
            sme: None,
            output: Some(OutputSection {
                dir: Some(out_dir.clone()),
                snapshot_stride: None,
                include_analytic: None,
            }),
            regime: Some(RegimeSection {
                threshold: Some(threshold),
                ..r
            }),
        };
        Ok(RegimeRun {
            params,
            out_dir,
            echo,
        })
    }
}

fn spin_from_j(j: f64) -> Result<Spin> {
    let spin = Spin::from_j(j)?;
    if spin.dim() > MAX_DIM {
        return Err(config_err(format!(
            "J = {j} needs a {}-dimensional space, above the supported {MAX_DIM}",
            spin.dim()
        )));
    }
    Ok(spin)
}

fn measurement(m: Option<f64>) -> Result<MeasurementStrength> {
    MeasurementStrength::new(m.unwrap_or(1.0))
}

fn validate_epsilon(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > -1.0) {
        return Err(config_err(format!(
            "epsilon must be finite and greater than -1, got {eps}"
        )));
    }
    Ok(())
}

/// An explicit dt is honored as written (the grid constructor enforces that
/// it divides t_end); a defaulted one is rounded down so it does.
pub(crate) fn resolve_dt(t_end: f64, dt: Option<f64>, default_dt: f64) -> f64 {
    match dt {
        Some(dt) => dt,
        None => {
            let n = (t_end / default_dt).ceil().max(1.0);
            t_end / n
        }
    }
}

/// Build the integration grid on the absolute time axis from Mt-unit inputs.
pub fn grid_in_seconds(t_end_mt: f64, dt_mt: f64, m: &MeasurementStrength) -> Result<TimeGrid> {
    TimeGrid::new(0.0, t_end_mt / m.value(), dt_mt / m.value())
}

fn resolve_gain(
    section: &GainSection,
    mode: Mode,
    m: &MeasurementStrength,
    t_end_mt: f64,
    base_dir: &Path,
) -> Result<(GainSchedule, GainSection)> {
    check_kind_allowed(section.kind, mode, "type")?;
    let (inner_kind, epsilon) = match section.kind {
        GainKind::Perturbed => {
            let eps = section
                .epsilon
                .ok_or_else(|| config_err("the perturbed gain needs an epsilon".into()))?;
            validate_epsilon(eps)?;
            let base = section
                .base
                .ok_or_else(|| config_err("the perturbed gain needs a base schedule".into()))?;
            if base == GainKind::Perturbed {
                return Err(config_err(
                    "a perturbed gain cannot wrap another perturbed gain".into(),
                ));
            }
            check_kind_allowed(base, mode, "base")?;
            (base, Some(eps))
        }
        kind => {
            if section.epsilon.is_some() {
                return Err(config_err(
                    "epsilon is only used by the perturbed gain".into(),
                ));
            }
            if section.base.is_some() {
                return Err(config_err("base is only used by the perturbed gain".into()));
            }
            (kind, None)
        }
    };

    let table = if inner_kind == GainKind::Tabulated {
        let path = section
            .table_path
            .as_ref()
            .ok_or_else(|| config_err("the tabulated gain needs a table_path".into()))?;
        Some(load_table(path, base_dir, m, t_end_mt)?)
    } else {
        if section.table_path.is_some() {
            return Err(config_err(
                "table_path is only used by the tabulated gain".into(),
            ));
        }
        None
    };

    let inner = match inner_kind {
        GainKind::Zero => GainSchedule::Zero,
        GainKind::Conditioned => GainSchedule::Conditioned,
        GainKind::Ensemble => GainSchedule::EnsembleSelfConsistent,
        GainKind::Analytic => GainSchedule::AnalyticClosedForm,
        GainKind::Tabulated => GainSchedule::Tabulated(table.expect("loaded above")),
        GainKind::Perturbed => unreachable!("nesting rejected above"),
    };
    let gain = match epsilon {
        Some(epsilon) => GainSchedule::Perturbed {
            epsilon,
            base: Box::new(inner),
        },
        None => inner,
    };
    let echo = GainSection {
        kind: section.kind,
        epsilon,
        base: (section.kind == GainKind::Perturbed).then_some(inner_kind),
        table_path: section.table_path.clone(),
    };
    Ok((gain, echo))
}

fn check_kind_allowed(kind: GainKind, mode: Mode, key: &str) -> Result<()> {
    let ok = match mode {
        Mode::Me => !matches!(kind, GainKind::Conditioned),
        Mode::Sme => !matches!(kind, GainKind::Ensemble),
        _ => unreachable!("sweep, robustness, and regime gains are fixed"),
    };
    if ok {
        return Ok(());
    }
    let reason = match kind {
        GainKind::Conditioned => format!(
            "gain {key} \"conditioned\" is defined per trajectory; run mode sme, \
             or use \"ensemble\" for the deterministic equation"
        ),
        GainKind::Ensemble => format!(
            "gain {key} \"ensemble\" needs the deterministic state; run mode me, \
             or use \"conditioned\" per trajectory"
        ),
        _ => unreachable!(),
    };
    Err(config_err(reason))
}

fn load_table(
    path: &Path,
    base_dir: &Path,
    m: &MeasurementStrength,
    t_end_mt: f64,
) -> Result<GainTable> {
    let full = if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    };
    let table = GainTable::from_path(&full).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", full.display()),
        )),
        other => other,
    })?;
    let mv = m.value();
    // File columns are (Mt, lambda/M); move them onto the absolute axis.
    let table = if mv != 1.0 {
        table.rescaled(1.0 / mv, mv)?
    } else {
        table
    };
    let t_end = t_end_mt / mv;
    if table.t_min() > 0.0 || table.t_max() < t_end {
        return Err(config_err(format!(
            "gain table covers Mt in [{:.6}, {:.6}] but the run needs [0, {:.6}]",
            table.t_min() * mv,
            table.t_max() * mv,
            t_end_mt
        )));
    }
    Ok(table)
}

/// A validated deterministic run.
#[derive(Clone, Debug)]
pub struct MeRun {
    pub spin: Spin,
    pub m: MeasurementStrength,
    /// Final time, Mt units.
    pub t_end: f64,
    /// Step, Mt units (already resolved, divides `t_end`).
    pub dt: f64,
    pub gain: GainSchedule,
    pub include_analytic: bool,
    pub snapshot_stride: usize,
    pub out_dir: PathBuf,
    /// The config with every default made explicit; written back verbatim.
    pub echo: SimulationConfig,
}

/// A validated trajectory-ensemble run.
#[derive(Clone, Debug)]
pub struct SmeRun {
    pub spin: Spin,
    pub m: MeasurementStrength,
    pub t_end: f64,
    pub dt: f64,
    pub gain: GainSchedule,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub snapshot_stride: usize,
    pub out_dir: PathBuf,
    pub echo: SimulationConfig,
}

/// A validated J scan. `dt = None` means each spin uses its own stability
/// default, which is why the echo leaves the key implicit in that case.
#[derive(Clone, Debug)]
pub struct SweepRun {
    /// Ascending, distinct.
    pub spins: Vec<Spin>,
    pub m: MeasurementStrength,
    pub t_end: f64,
    pub dt: Option<f64>,
    pub out_dir: PathBuf,
    pub echo: SimulationConfig,
}

/// A validated robustness comparison: the sweep run twice, once with the
/// closed-form gain and once with the same gain scaled by (1 + epsilon).
#[derive(Clone, Debug)]
pub struct RobustnessRun {
    pub sweep: SweepRun,
    pub epsilon: f64,
}

/// A validated operating-regime check.
#[derive(Clone, Debug)]
pub struct RegimeRun {
    pub params: RegimeParams,
    pub out_dir: PathBuf,
    pub echo: SimulationConfig,
}

/// A config after validation, ready for the experiment drivers.
#[derive(Clone, Debug)]
pub enum Resolved {
    Me(MeRun),
    Sme(SmeRun),
    Sweep(SweepRun),
    Robustness(RobustnessRun),
    RegimeCheck(RegimeRun),
}

impl Resolved {
    pub fn out_dir(&self) -> &Path {
        match self {
            Resolved::Me(r) => &r.out_dir,
            Resolved::Sme(r) => &r.out_dir,
            Resolved::Sweep(r) => &r.out_dir,
            Resolved::Robustness(r) => &r.sweep.out_dir,
            Resolved::RegimeCheck(r) => &r.out_dir,
        }
    }

    pub fn echo(&self) -> &SimulationConfig {
        match self {
            Resolved::Me(r) => &r.echo,
            Resolved::Sme(r) => &r.echo,
            Resolved::Sweep(r) => &r.echo,
            Resolved::Robustness(r) => &r.sweep.echo,
            Resolved::RegimeCheck(r) => &r.echo,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Resolved::Me(_) => Mode::Me,
            Resolved::Sme(_) => Mode::Sme,
            Resolved::Sweep(_) => Mode::Sweep,
            Resolved::Robustness(_) => Mode::Robustness,
            Resolved::RegimeCheck(_) => Mode::RegimeCheck,
        }
    }
}
