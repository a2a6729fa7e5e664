//! Simulator and analysis toolkit for self-stimulated spin-echo trains from an
//! inhomogeneously broadened spin ensemble coupled to a resonator.
//!
//! The crate is organised around a small set of building blocks:
//!
//! - [`params`]: physical rates and couplings (all angular frequencies, rad/s),
//!   plus derived scalars such as the cooperativity.
//! - [`ensemble`]: discretisation of the inhomogeneous line into weighted
//!   frequency classes, by random sampling or on a deterministic grid.
//! - [`pulse`]: square drive pulses and the two-pulse Hahn sequence.
//! - [`meanfield`]: the nonlinear mean-field (Maxwell–Bloch) equations for the
//!   cavity amplitude and the per-class Bloch vectors, with fixed-step RK4 and
//!   split-step integrators.
//! - [`analytic`]: the linearised (Holstein–Primakoff) echo theory — time-domain
//!   oscillator model, frequency-domain solution with numerical quadrature over
//!   the detuning distribution, and the closed-form Lorentzian echo with its
//!   regime classification.
//! - [`analysis`]: echo detection, windowed photon-number integration, and
//!   exponential / power-law fits.
//! - [`runner`]: multi-realization averaging and parameter sweeps with
//!   reproducible seeding.

pub mod analysis;
pub mod analytic;
pub mod ensemble;
pub mod error;
pub mod meanfield;
pub mod params;
pub mod pulse;
pub mod quad;
pub mod reduction;
pub mod runner;
pub mod trajectory;
pub mod units;

pub use analysis::{
    detect_echoes, fit_exponential, fit_power_law, integrate_echo, Echo, EchoDetectionSettings,
    EchoReport, ExpFit, ScalingFit,
};
pub use analytic::{
    classify_regime, eval_echo_closed_form, eval_spectrum, eval_spectrum_discrete,
    simulate_linear_hp, AnalyticEchoParams, LineShape, Regime, RegimeReport, Spectrum,
    SpectrumGrid,
};
pub use ensemble::{grid_ensemble, sample_ensemble, EnsembleDoc, SpinClass, SpinEnsemble};
pub use error::{Error, Result};
pub use meanfield::{
    convergence_check, derivative, simulate, simulate_ideal_init, simulate_with_initial,
    IntegratorScheme, IntegratorSettings, RecordSettings, SystemState,
};
pub use params::{cooperativity, linewidth_from_t2, Distribution, PhysicalParams};
pub use pulse::{hahn_sequence, Pulse, PulseSequence};
pub use runner::{run_averaged, run_sweep, AveragedRun, SimJob, SimMode, SweepAxis, SweepParam,
    SweepResults, SweepSpec};
pub use trajectory::Trajectory;
