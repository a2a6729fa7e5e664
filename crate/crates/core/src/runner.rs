//! Multi-realization averaging and parameter sweeps with reproducible
//! seeding. Realizations and sweep cells run concurrently (work stealing);
//! every per-trajectory reduction stays deterministic, so results are
//! independent of worker count and execution order.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{detect_echoes, EchoDetectionSettings, EchoReport};
use crate::ensemble::sample_ensemble;
use crate::error::{Error, Result};
use crate::meanfield::{simulate, simulate_ideal_init, IntegratorSettings, RecordSettings};
use crate::params::PhysicalParams;
use crate::pulse::{hahn_sequence, PulseSequence};
use crate::trajectory::{RunMeta, Trajectory};

/// What a single realization integrates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SimMode {
    /// Driven Hahn sequence assembled from the shorthand parameters.
    Hahn {
        tau: f64,
        t1: f64,
        d1: f64,
        d2: f64,
        amplitude: f64,
        phase1: f64,
        phase2: f64,
        t_end: f64,
    },
    /// Ideal-pulse initialization with free evolution to `t_end`.
    IdealInit { beta: f64, tau: f64, t_end: f64 },
}

impl SimMode {
    pub fn tau(&self) -> f64 {
        match *self {
            SimMode::Hahn { tau, .. } => tau,
            SimMode::IdealInit { tau, .. } => tau,
        }
    }

    pub fn t_end(&self) -> f64 {
        match *self {
            SimMode::Hahn { t_end, .. } => t_end,
            SimMode::IdealInit { t_end, .. } => t_end,
        }
    }

    pub fn sequence(&self) -> Result<PulseSequence> {
        match *self {
            SimMode::Hahn {
                tau,
                t1,
                d1,
                d2,
                amplitude,
                phase1,
                phase2,
                t_end,
            } => hahn_sequence(tau, t1, d1, d2, amplitude, phase1, phase2, t_end),
            SimMode::IdealInit { t_end, .. } => PulseSequence::free_evolution(t_end),
        }
    }
}

/// A complete single-cell job description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimJob {
    pub params: PhysicalParams,
    pub n_k: usize,
    pub mode: SimMode,
    pub integrator: IntegratorSettings,
    pub record: RecordSettings,
}

impl SimJob {
    fn run_one(&self, seed: u64) -> Result<Trajectory> {
        let ensemble = sample_ensemble(&self.params, self.n_k, seed)?;
        match self.mode {
            SimMode::Hahn { .. } => {
                let seq = self.mode.sequence()?;
                simulate(&ensemble, &self.params, &seq, &self.integrator, &self.record)
            }
            SimMode::IdealInit { beta, tau, t_end } => simulate_ideal_init(
                &ensemble,
                &self.params,
                tau,
                beta,
                t_end,
                &self.integrator,
                &self.record,
            ),
        }
    }
}

/// Result of [`run_averaged`].
#[derive(Clone, Debug)]
pub struct AveragedRun {
    /// Pointwise mean of |α|² across realizations in `photon_number`; the
    /// complex mean field in `alpha_re`/`alpha_im`. Bloch records are not
    /// averaged (each realization samples different detunings) and stay
    /// empty here.
    pub mean: Trajectory,
    /// Per-realization trajectories when requested.
    pub realizations: Option<Vec<Trajectory>>,
    pub seeds: Vec<u64>,
}

/// Run `r` realizations with seeds `base_seed + i`, averaging |α|² pointwise
/// (phases decohere across random detuning samples, so the averaged
/// observable is the photon number, not the field).
pub fn run_averaged(
    job: &SimJob,
    r: usize,
    base_seed: u64,
    keep_realizations: bool,
) -> Result<AveragedRun> {
    if r < 1 {
        return Err(Error::InvalidParam("need at least one realization".into()));
    }
    let seeds: Vec<u64> = (0..r as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let runs: Vec<Result<Trajectory>> =
        seeds.par_iter().map(|&seed| job.run_one(seed)).collect();
    let mut trajectories = Vec::with_capacity(r);
    for (seed, run) in seeds.iter().zip(runs) {
        match run {
            Ok(t) => trajectories.push(t),
            Err(e) => {
                return Err(Error::Analysis(format!(
                    "realization with seed {seed} failed: {e}"
                )))
            }
        }
    }

    let n = trajectories[0].times.len();
    for t in &trajectories {
        if t.times.len() != n {
            return Err(Error::Analysis(
                "realizations produced mismatched time grids".into(),
            ));
        }
    }
    let inv_r = 1.0 / r as f64;
    let mut photon = vec![0.0f64; n];
    let mut re = vec![0.0f64; n];
    let mut im = vec![0.0f64; n];
    for t in &trajectories {
        for i in 0..n {
            photon[i] += t.photon_number[i];
            re[i] += t.alpha_re[i];
            im[i] += t.alpha_im[i];
        }
    }
    for i in 0..n {
        photon[i] *= inv_r;
        re[i] *= inv_r;
        im[i] *= inv_r;
    }

    let mut meta = trajectories[0].meta.clone();
    meta.realizations = Some(r);
    let mean = Trajectory {
        times: trajectories[0].times.clone(),
        photon_number: photon,
        alpha_re: re,
        alpha_im: im,
        bloch: Vec::new(),
        meta,
    };
    Ok(AveragedRun {
        mean,
        realizations: keep_realizations.then_some(trajectories),
        seeds,
    })
}

/// Sweepable parameters.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Hahn delay or ideal-init refocusing time τ (s). Extends `t_end` when
    /// the base value leaves too little room for `max_order` echoes.
    Tau,
    /// Spin dephasing rate Γ (rad/s).
    GammaDeph,
    /// Total spin count N.
    NSpins,
    /// Number of frequency classes N_k.
    NK,
    /// Ideal-init excitation amplitude β.
    Beta,
    /// Inhomogeneous FWHM (rad/s).
    InhomFwhm,
    /// Phase of the refocusing pulse (rad).
    Phase2,
}

impl SweepParam {
    pub fn key(&self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::GammaDeph => "gamma_deph",
            SweepParam::NSpins => "n_spins",
            SweepParam::NK => "n_k",
            SweepParam::Beta => "beta",
            SweepParam::InhomFwhm => "inhom_fwhm",
            SweepParam::Phase2 => "phase2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: SimJob,
    pub axes: Vec<SweepAxis>,
    pub realizations: usize,
    pub base_seed: u64,
    pub analysis: EchoDetectionSettings,
    /// Upper bound on the cartesian-product size.
    pub max_cells: usize,
}

/// One sweep cell: the assignment, its directory-friendly key, and either a
/// report or the failure message. Failed cells do not stop the sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub assignment: Vec<(String, f64)>,
    pub key: String,
    pub report: Option<EchoReport>,
    pub error: Option<String>,
    #[serde(skip)]
    pub mean_trajectory: Option<Trajectory>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResults {
    pub cells: Vec<CellResult>,
}

impl SweepResults {
    /// Flat CSV: one row per cell with the assignment, echo count, first
    /// A_echo and the fitted decay rate.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let axis_names: Vec<&str> = self
            .cells
            .first()
            .map(|c| c.assignment.iter().map(|(k, _)| k.as_str()).collect())
            .unwrap_or_default();
        write!(w, "cell")?;
        for name in &axis_names {
            write!(w, ",{name}")?;
        }
        writeln!(w, ",n_echoes,a_echo_1,fit_b,error")?;
        for c in &self.cells {
            write!(w, "{}", c.index)?;
            for (_, v) in &c.assignment {
                write!(w, ",{v}")?;
            }
            let (n_echoes, a1, b) = c
                .report
                .as_ref()
                .map(|r| {
                    (
                        r.echoes.len(),
                        r.echoes.first().map(|e| e.a_echo).unwrap_or(f64::NAN),
                        r.fit.as_ref().map(|f| f.b).unwrap_or(f64::NAN),
                    )
                })
                .unwrap_or((0, f64::NAN, f64::NAN));
            writeln!(
                w,
                ",{n_echoes},{a1},{b},{}",
                c.error.as_deref().unwrap_or("")
            )?;
        }
        Ok(())
    }
}

fn apply(job: &mut SimJob, param: SweepParam, value: f64) -> Result<()> {
    match param {
        SweepParam::GammaDeph => job.params.gamma_deph = value,
        SweepParam::NSpins => job.params.n_spins = value,
        SweepParam::InhomFwhm => job.params.inhomogeneous_fwhm = value,
        SweepParam::NK => {
            if !(value >= 1.0) || value.fract() != 0.0 {
                return Err(Error::InvalidParam(format!(
                    "n_k axis value {value} is not a positive integer"
                )));
            }
            job.n_k = value as usize;
        }
        SweepParam::Tau => match &mut job.mode {
            SimMode::Hahn { tau, .. } => *tau = value,
            SimMode::IdealInit { tau, .. } => *tau = value,
        },
        SweepParam::Beta => match &mut job.mode {
            SimMode::IdealInit { beta, .. } => *beta = value,
            SimMode::Hahn { .. } => {
                return Err(Error::InvalidParam(
                    "beta axis applies to ideal-init mode only".into(),
                ))
            }
        },
        SweepParam::Phase2 => match &mut job.mode {
            SimMode::Hahn { phase2, .. } => *phase2 = value,
            SimMode::IdealInit { .. } => {
                return Err(Error::InvalidParam(
                    "phase2 axis applies to Hahn mode only".into(),
                ))
            }
        },
    }
    Ok(())
}

/// Make sure the trajectory reaches past the last requested echo window after
/// a τ change.
fn extend_t_end(job: &mut SimJob, max_order: usize) {
    let needed = match &job.mode {
        SimMode::Hahn { tau, t1, .. } => t1 + (max_order as f64 + 1.6) * tau,
        SimMode::IdealInit { tau, .. } => 2.0 * tau,
    };
    match &mut job.mode {
        SimMode::Hahn { t_end, .. } | SimMode::IdealInit { t_end, .. } => {
            if *t_end < needed {
                *t_end = needed;
            }
        }
    }
}

fn cell_key(assignment: &[(String, f64)], index: usize) -> String {
    if assignment.is_empty() {
        return format!("cell{index:04}");
    }
    assignment
        .iter()
        .map(|(k, v)| format!("{k}={v:.6e}"))
        .collect::<Vec<_>>()
        .join("_")
}

/// Execute the cartesian product of the sweep axes. Each cell runs
/// `realizations` averaged realizations (seeded from `base_seed` and the cell
/// index) followed by echo analysis; failures are recorded per cell.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResults> {
    if spec.realizations < 1 {
        return Err(Error::InvalidParam("realizations must be >= 1".into()));
    }
    for axis in &spec.axes {
        if axis.values.is_empty() {
            return Err(Error::InvalidParam(format!(
                "axis {} has no values",
                axis.param.key()
            )));
        }
        if axis.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "axis {} has non-finite values",
                axis.param.key()
            )));
        }
    }
    let n_cells: usize = spec.axes.iter().map(|a| a.values.len()).product();
    if n_cells > spec.max_cells {
        return Err(Error::InvalidParam(format!(
            "sweep would produce {n_cells} cells, budget is {}",
            spec.max_cells
        )));
    }

    let indices: Vec<usize> = (0..n_cells).collect();
    let cells: Vec<CellResult> = indices
        .par_iter()
        .map(|&index| {
            // decode the cartesian index, last axis fastest
            let mut rem = index;
            let mut assignment = Vec::with_capacity(spec.axes.len());
            let mut values = vec![0.0; spec.axes.len()];
            for (ai, axis) in spec.axes.iter().enumerate().rev() {
                let len = axis.values.len();
                values[ai] = axis.values[rem % len];
                rem /= len;
            }
            for (axis, &v) in spec.axes.iter().zip(&values) {
                assignment.push((axis.param.key().to_string(), v));
            }
            let key = cell_key(&assignment, index);

            let run = || -> Result<(EchoReport, Trajectory)> {
                let mut job = spec.base.clone();
                for (axis, &v) in spec.axes.iter().zip(&values) {
                    apply(&mut job, axis.param, v)?;
                }
                extend_t_end(&mut job, spec.analysis.max_order);
                let cell_seed = spec
                    .base_seed
                    .wrapping_add(index as u64).wrapping_mul(1_000_003)
                    .wrapping_add(index as u64);
                let averaged = run_averaged(&job, spec.realizations, cell_seed, false)?;
                let seq = job.mode.sequence()?;
                let report = detect_echoes(
                    &averaged.mean,
                    &seq,
                    job.mode.tau(),
                    job.params.kappa,
                    &spec.analysis,
                )?;
                Ok((report, averaged.mean))
            };
            match run() {
                Ok((report, mean)) => CellResult {
                    index,
                    assignment,
                    key,
                    report: Some(report),
                    error: None,
                    mean_trajectory: Some(mean),
                },
                Err(e) => CellResult {
                    index,
                    assignment,
                    key,
                    report: None,
                    error: Some(e.to_string()),
                    mean_trajectory: None,
                },
            }
        })
        .collect();

    Ok(SweepResults { cells })
}

/// Mean over realizations of the complex field at one sample index
/// (diagnostic helper for phase studies).
pub fn complex_mean(trajectories: &[Trajectory], i: usize) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for t in trajectories {
        acc += Complex64::new(t.alpha_re[i], t.alpha_im[i]);
    }
    acc / trajectories.len() as f64
}

/// Default meta for derived artifacts.
pub fn averaged_meta(job: &SimJob, r: usize) -> RunMeta {
    RunMeta {
        params: Some(job.params),
        ensemble_seed: None,
        n_classes: Some(job.n_k),
        sequence: job.mode.sequence().ok(),
        integrator: Some(job.integrator),
        record: Some(job.record.clone()),
        realizations: Some(r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Distribution;
    use crate::units::from_hz;

    fn toy_job() -> SimJob {
        SimJob {
            params: PhysicalParams {
                kappa: from_hz(150e3),
                gamma: 0.0,
                gamma_deph: from_hz(2e3),
                g_single: from_hz(2e3),
                n_spins: 1e6,
                delta_c: 0.0,
                inhomogeneous_fwhm: from_hz(1e6),
                distribution: Distribution::Gaussian,
            },
            n_k: 48,
            mode: SimMode::Hahn {
                tau: 2e-6,
                t1: 1e-7,
                d1: 1e-7,
                d2: 2e-7,
                amplitude: 2e9,
                phase1: 0.0,
                phase2: 0.0,
                t_end: 9e-6,
            },
            integrator: IntegratorSettings {
                dt: 2e-9,
                ..Default::default()
            },
            record: RecordSettings {
                stride: 4e-8,
                bloch_classes: vec![],
            },
        }
    }

    #[test]
    fn single_realization_average_is_identity() {
        let job = toy_job();
        let avg = run_averaged(&job, 1, 11, true).unwrap();
        let single = &avg.realizations.as_ref().unwrap()[0];
        assert_eq!(avg.mean.photon_number, single.photon_number);
        assert_eq!(avg.mean.alpha_re, single.alpha_re);
    }

    #[test]
    fn zero_inhomogeneity_has_zero_variance() {
        let mut job = toy_job();
        job.params.inhomogeneous_fwhm = 0.0;
        let avg = run_averaged(&job, 3, 5, true).unwrap();
        let runs = avg.realizations.unwrap();
        for t in &runs[1..] {
            assert_eq!(t.photon_number, runs[0].photon_number);
        }
    }

    #[test]
    fn averaging_is_deterministic() {
        let job = toy_job();
        let a = run_averaged(&job, 4, 42, false).unwrap();
        let b = run_averaged(&job, 4, 42, false).unwrap();
        assert_eq!(a.mean.photon_number, b.mean.photon_number);
        let c = run_averaged(&job, 4, 43, false).unwrap();
        assert_ne!(a.mean.photon_number, c.mean.photon_number);
    }

    #[test]
    fn empty_axes_single_cell_matches_run_averaged() {
        let job = toy_job();
        let spec = SweepSpec {
            base: job.clone(),
            axes: vec![],
            realizations: 2,
            base_seed: 7,
            analysis: EchoDetectionSettings {
                max_order: 2,
                ring_down_guard: Some(3e-7),
                ..Default::default()
            },
            max_cells: 16,
        };
        let results = run_sweep(&spec).unwrap();
        assert_eq!(results.cells.len(), 1);
        let cell = &results.cells[0];
        assert!(cell.error.is_none(), "cell failed: {:?}", cell.error);
        let direct_seed = 7u64.wrapping_add(0).wrapping_mul(1_000_003).wrapping_add(0);
        let direct = run_averaged(&job, 2, direct_seed, false).unwrap();
        assert_eq!(
            cell.mean_trajectory.as_ref().unwrap().photon_number,
            direct.mean.photon_number
        );
    }

    #[test]
    fn sweep_budget_enforced() {
        let spec = SweepSpec {
            base: toy_job(),
            axes: vec![SweepAxis {
                param: SweepParam::GammaDeph,
                values: vec![0.0; 40],
            }],
            realizations: 1,
            base_seed: 0,
            analysis: EchoDetectionSettings::default(),
            max_cells: 8,
        };
        assert!(run_sweep(&spec).is_err());
    }

    #[test]
    fn failed_cells_do_not_stop_the_sweep() {
        let spec = SweepSpec {
            base: toy_job(),
            axes: vec![SweepAxis {
                param: SweepParam::NK,
                values: vec![16.0, 0.5],
            }],
            realizations: 1,
            base_seed: 3,
            analysis: EchoDetectionSettings {
                max_order: 1,
                ring_down_guard: Some(3e-7),
                noise_floor_rel: 1e-12,
                ..Default::default()
            },
            max_cells: 8,
        };
        let results = run_sweep(&spec).unwrap();
        assert_eq!(results.cells.len(), 2);
        assert!(results.cells[0].error.is_none(), "{:?}", results.cells[0].error);
        assert!(results.cells[1].error.is_some());
    }
}
