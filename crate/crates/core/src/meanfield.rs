//! Nonlinear mean-field dynamics of the cavity amplitude and the per-class
//! Bloch variables.
//!
//! Equations of motion in the frame rotating with the drive:
//!
//! ```text
//! dα/dt    = −(iδ_c + κ/2)α − i Σ_k w_k g_k s_−^k − i F e^{iφ}(t)
//! ds_−^k/dt = −(iΔ_k + γ/2 + 2Γ) s_−^k + i g_k α s_z^k
//! ds_z^k/dt = −γ(1 + s_z^k) − 4 g_k Im(α* s_−^k)
//! ```
//!
//! The dephasing dissipator contributes 2Γ to the coherence decay; γ
//! contributes γ/2 to the coherence and −γ(1+s_z) to the population. The s_z
//! right-hand side is real by construction and stored as a real array.
//!
//! Integration is piecewise over segments bounded by pulse edges and record
//! instants, so the drive is exactly constant within a step and recorded
//! samples land on the same time grid regardless of the step size. The
//! collective sum Σ_k w_k g_k s_−^k uses a fixed-shape pairwise reduction and
//! is bit-stable for any worker count.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::SpinEnsemble;
use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::pulse::PulseSequence;
use crate::reduction::pairwise_sum;
use crate::trajectory::{BlochRecord, RunMeta, Trajectory};

/// Classes per parallel work unit in the right-hand-side evaluation.
const PAR_CHUNK: usize = 4096;
/// Below this many classes the RHS runs serially; results are identical.
const PAR_THRESHOLD: usize = 8192;

/// Time-stepping scheme.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorScheme {
    /// Fixed-step classical RK4 in the rotating frame (default). Requires
    /// `dt <= c_stab / max_k |Δ_k|`.
    Rk4,
    /// Strang split step: the free rotation e^{−iΔ_k dt} is applied exactly
    /// per class and RK4 integrates the coupling/dissipation remainder.
    /// Unconditionally stable in the detunings, which makes it the right
    /// choice for heavy-tailed (Lorentzian) samples.
    SplitStep,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    /// Target step (s); the effective step never exceeds the record stride.
    pub dt: f64,
    pub scheme: IntegratorScheme,
    /// Integrator tolerance ε_int used by the instability detector
    /// (abort when |s_z| > 1 + 10 ε_int).
    pub eps_int: f64,
    /// Stability constant for the RK4 detuning precondition.
    pub c_stab: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            dt: 5e-9,
            scheme: IntegratorScheme::Rk4,
            eps_int: 1e-6,
            c_stab: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordSettings {
    /// Recording stride in simulated seconds.
    pub stride: f64,
    /// Class indices whose Bloch components are recorded (at most 64).
    pub bloch_classes: Vec<usize>,
}

impl Default for RecordSettings {
    fn default() -> Self {
        RecordSettings {
            stride: 10e-9,
            bloch_classes: Vec::new(),
        }
    }
}

impl RecordSettings {
    fn validate(&self, n_classes: usize) -> Result<()> {
        if !(self.stride > 0.0) {
            return Err(Error::InvalidParam(format!(
                "record stride = {} must be > 0",
                self.stride
            )));
        }
        if self.bloch_classes.len() > 64 {
            return Err(Error::InvalidParam(
                "at most 64 Bloch classes can be recorded".into(),
            ));
        }
        if let Some(&bad) = self.bloch_classes.iter().find(|&&k| k >= n_classes) {
            return Err(Error::InvalidParam(format!(
                "bloch class index {bad} out of range (n_k = {n_classes})"
            )));
        }
        Ok(())
    }
}

/// Instantaneous state: cavity amplitude plus per-class Bloch variables.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub alpha: Complex64,
    pub s_minus: Vec<Complex64>,
    pub s_z: Vec<f64>,
    pub t: f64,
}

impl SystemState {
    /// All spins in the ground state, empty cavity.
    pub fn ground(n_classes: usize) -> Self {
        SystemState {
            alpha: Complex64::new(0.0, 0.0),
            s_minus: vec![Complex64::new(0.0, 0.0); n_classes],
            s_z: vec![-1.0; n_classes],
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.re.is_finite()
            && self.alpha.im.is_finite()
            && self.s_minus.iter().all(|s| s.re.is_finite() && s.im.is_finite())
            && self.s_z.iter().all(|z| z.is_finite())
    }

    /// Total excitation |α|² + Σ_k w_k (1 + s_z^k)/2; conserved when
    /// κ = γ = Γ = F = 0.
    pub fn total_excitation(&self, ensemble: &SpinEnsemble) -> f64 {
        let terms: Vec<f64> = self
            .s_z
            .iter()
            .zip(&ensemble.classes)
            .map(|(&z, c)| c.weight * (1.0 + z) / 2.0)
            .collect();
        self.alpha.norm_sqr() + pairwise_sum(&terms)
    }

    /// Bloch-vector norm squared 4|s_−|² + s_z² of class `k`; equals 1 for a
    /// pure state and is conserved when γ = Γ = 0.
    pub fn bloch_norm_sq(&self, k: usize) -> f64 {
        4.0 * self.s_minus[k].norm_sqr() + self.s_z[k] * self.s_z[k]
    }
}

/// Time derivative of a [`SystemState`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateDerivative {
    pub d_alpha: Complex64,
    pub d_s_minus: Vec<Complex64>,
    pub d_s_z: Vec<f64>,
}

/// Evaluate the mean-field right-hand side at `state` for a constant complex
/// drive F·e^{iφ}. Rejects non-finite inputs.
pub fn derivative(
    state: &SystemState,
    ensemble: &SpinEnsemble,
    params: &PhysicalParams,
    drive: Complex64,
) -> Result<StateDerivative> {
    params.validate()?;
    let n = ensemble.len();
    if state.s_minus.len() != n || state.s_z.len() != n {
        return Err(Error::InvalidParam(format!(
            "state has {} classes, ensemble has {n}",
            state.s_minus.len()
        )));
    }
    if !state.is_finite() || !drive.re.is_finite() || !drive.im.is_finite() {
        return Err(Error::InvalidParam("non-finite state or drive".into()));
    }
    let engine = Engine::new(ensemble, params);
    let mut out = Rhs::zeros(n);
    engine.eval(
        state.alpha,
        &state.s_minus,
        &state.s_z,
        drive,
        true,
        &mut out,
    );
    Ok(StateDerivative {
        d_alpha: out.d_alpha,
        d_s_minus: out.d_s,
        d_s_z: out.d_z,
    })
}

struct Rhs {
    d_alpha: Complex64,
    d_s: Vec<Complex64>,
    d_z: Vec<f64>,
    contrib: Vec<Complex64>,
}

impl Rhs {
    fn zeros(n: usize) -> Self {
        Rhs {
            d_alpha: Complex64::new(0.0, 0.0),
            d_s: vec![Complex64::new(0.0, 0.0); n],
            d_z: vec![0.0; n],
            contrib: vec![Complex64::new(0.0, 0.0); n],
        }
    }
}

/// Precomputed per-class coefficients for the hot loop.
struct Engine {
    n: usize,
    /// −(iΔ_k + γ/2 + 2Γ) for the full RHS.
    coef_full: Vec<Complex64>,
    /// g_k per class.
    g: Vec<f64>,
    /// w_k g_k per class.
    wg: Vec<f64>,
    detunings: Vec<f64>,
    kappa_half: f64,
    gamma: f64,
    delta_c: f64,
    /// −(γ/2 + 2Γ), coherence decay without the detuning (split-step remainder).
    coef_decay: Complex64,
}

impl Engine {
    fn new(ensemble: &SpinEnsemble, params: &PhysicalParams) -> Self {
        let decay = params.gamma / 2.0 + 2.0 * params.gamma_deph;
        let coef_full = ensemble
            .classes
            .iter()
            .map(|c| Complex64::new(-decay, -c.detuning))
            .collect();
        Engine {
            n: ensemble.len(),
            coef_full,
            g: ensemble.classes.iter().map(|c| c.coupling).collect(),
            wg: ensemble
                .classes
                .iter()
                .map(|c| c.weight * c.coupling)
                .collect(),
            detunings: ensemble.classes.iter().map(|c| c.detuning).collect(),
            kappa_half: params.kappa / 2.0,
            gamma: params.gamma,
            delta_c: params.delta_c,
            coef_decay: Complex64::new(-decay, 0.0),
        }
    }

    /// Evaluate the RHS. With `detuned = false` the iΔ_k and iδ_c terms are
    /// omitted (split-step remainder).
    fn eval(
        &self,
        alpha: Complex64,
        s: &[Complex64],
        z: &[f64],
        drive: Complex64,
        detuned: bool,
        out: &mut Rhs,
    ) {
        let n = self.n;
        debug_assert_eq!(s.len(), n);
        let per_class = |k: usize, ds: &mut Complex64, dz: &mut f64, cb: &mut Complex64| {
            let sk = s[k];
            let zk = z[k];
            let gk = self.g[k];
            let coef = if detuned {
                self.coef_full[k]
            } else {
                self.coef_decay
            };
            // i g α s_z
            let ga = alpha * gk * zk;
            *ds = coef * sk + Complex64::new(-ga.im, ga.re);
            // −γ(1+z) − 4 g Im(α* s)
            let im_as = alpha.re * sk.im - alpha.im * sk.re;
            *dz = -self.gamma * (1.0 + zk) - 4.0 * gk * im_as;
            *cb = sk * self.wg[k];
        };

        if n >= PAR_THRESHOLD {
            out.d_s
                .par_chunks_mut(PAR_CHUNK)
                .zip(out.d_z.par_chunks_mut(PAR_CHUNK))
                .zip(out.contrib.par_chunks_mut(PAR_CHUNK))
                .enumerate()
                .for_each(|(ci, ((ds, dz), cb))| {
                    let off = ci * PAR_CHUNK;
                    for j in 0..ds.len() {
                        per_class(off + j, &mut ds[j], &mut dz[j], &mut cb[j]);
                    }
                });
        } else {
            for k in 0..n {
                let (mut ds, mut dz, mut cb) = (
                    Complex64::new(0.0, 0.0),
                    0.0,
                    Complex64::new(0.0, 0.0),
                );
                per_class(k, &mut ds, &mut dz, &mut cb);
                out.d_s[k] = ds;
                out.d_z[k] = dz;
                out.contrib[k] = cb;
            }
        }

        let sum = pairwise_sum(&out.contrib);
        let idc = if detuned { self.delta_c } else { 0.0 };
        // −(iδ_c + κ/2)α − i sum − i drive
        out.d_alpha = Complex64::new(-self.kappa_half, -idc) * alpha
            - Complex64::new(0.0, 1.0) * (sum + drive);
    }
}

/// Scratch state used inside the RK4 stepper.
struct Work {
    alpha: Complex64,
    s: Vec<Complex64>,
    z: Vec<f64>,
}

impl Work {
    fn zeros(n: usize) -> Self {
        Work {
            alpha: Complex64::new(0.0, 0.0),
            s: vec![Complex64::new(0.0, 0.0); n],
            z: vec![0.0; n],
        }
    }
}

struct Stepper {
    engine: Engine,
    rhs: Rhs,
    acc: Work,
    tmp: Work,
    k: Rhs,
    /// Rotator cache keyed by the bit pattern of the half step.
    rotators: HashMap<u64, Vec<Complex64>>,
}

enum StepOutcome {
    Ok { max_abs_sz: f64, finite: bool },
}

impl Stepper {
    fn new(ensemble: &SpinEnsemble, params: &PhysicalParams) -> Self {
        let n = ensemble.len();
        Stepper {
            engine: Engine::new(ensemble, params),
            rhs: Rhs::zeros(n),
            acc: Work::zeros(n),
            tmp: Work::zeros(n),
            k: Rhs::zeros(n),
            rotators: HashMap::new(),
        }
    }

    /// One RK4 step of size `h` with constant drive; `detuned` controls
    /// whether detuning terms are part of the RHS.
    fn rk4_step(&mut self, y: &mut SystemState, h: f64, drive: Complex64, detuned: bool) -> StepOutcome {
        let n = self.engine.n;

        // stage 1
        self.engine
            .eval(y.alpha, &y.s_minus, &y.s_z, drive, detuned, &mut self.k);
        self.acc.alpha = self.k.d_alpha;
        self.acc.s.copy_from_slice(&self.k.d_s);
        self.acc.z.copy_from_slice(&self.k.d_z);
        set_tmp(&mut self.tmp, y, &self.k, h / 2.0);

        // stage 2
        self.engine
            .eval(self.tmp.alpha, &self.tmp.s, &self.tmp.z, drive, detuned, &mut self.rhs);
        accumulate(&mut self.acc, &self.rhs, 2.0);
        set_tmp(&mut self.tmp, y, &self.rhs, h / 2.0);

        // stage 3
        self.engine
            .eval(self.tmp.alpha, &self.tmp.s, &self.tmp.z, drive, detuned, &mut self.k);
        accumulate(&mut self.acc, &self.k, 2.0);
        set_tmp(&mut self.tmp, y, &self.k, h);

        // stage 4
        self.engine
            .eval(self.tmp.alpha, &self.tmp.s, &self.tmp.z, drive, detuned, &mut self.rhs);
        accumulate(&mut self.acc, &self.rhs, 1.0);

        // y += h/6 · acc, tracking the instability diagnostics on the fly
        let c = h / 6.0;
        y.alpha += self.acc.alpha * c;
        let mut max_abs_sz = 0.0f64;
        let mut finite = y.alpha.re.is_finite() && y.alpha.im.is_finite();
        for k in 0..n {
            y.s_minus[k] += self.acc.s[k] * c;
            y.s_z[k] += self.acc.z[k] * c;
            let az = y.s_z[k].abs();
            if az > max_abs_sz {
                max_abs_sz = az;
            }
            finite &= y.s_z[k].is_finite() && y.s_minus[k].re.is_finite();
        }
        StepOutcome::Ok { max_abs_sz, finite }
    }

    /// Strang split step: exact half rotation, RK4 on the remainder, exact
    /// half rotation.
    fn split_step(&mut self, y: &mut SystemState, h: f64, drive: Complex64) -> StepOutcome {
        let half = h / 2.0;
        let key = half.to_bits();
        if !self.rotators.contains_key(&key) {
            let rot: Vec<Complex64> = self
                .engine
                .detunings
                .iter()
                .map(|&d| Complex64::from_polar(1.0, -d * half))
                .collect();
            self.rotators.insert(key, rot);
        }
        let alpha_rot = Complex64::from_polar(1.0, -self.engine.delta_c * half);

        {
            let rot = &self.rotators[&key];
            for (sk, r) in y.s_minus.iter_mut().zip(rot) {
                *sk *= r;
            }
            y.alpha *= alpha_rot;
        }
        let outcome = self.rk4_step(y, h, drive, false);
        {
            let rot = &self.rotators[&key];
            for (sk, r) in y.s_minus.iter_mut().zip(rot) {
                *sk *= r;
            }
            y.alpha *= alpha_rot;
        }
        outcome
    }
}

fn set_tmp(tmp: &mut Work, y: &SystemState, k: &Rhs, h: f64) {
    tmp.alpha = y.alpha + k.d_alpha * h;
    for i in 0..tmp.s.len() {
        tmp.s[i] = y.s_minus[i] + k.d_s[i] * h;
        tmp.z[i] = y.s_z[i] + k.d_z[i] * h;
    }
}

fn accumulate(acc: &mut Work, k: &Rhs, weight: f64) {
    acc.alpha += k.d_alpha * weight;
    for i in 0..acc.s.len() {
        acc.s[i] += k.d_s[i] * weight;
        acc.z[i] += k.d_z[i] * weight;
    }
}

/// One integration segment: constant drive, no record points inside.
#[derive(Clone, Debug)]
pub(crate) struct Segment {
    pub(crate) t0: f64,
    pub(crate) t1: f64,
    pub(crate) drive: Complex64,
    pub(crate) record_end: bool,
}

/// Build the segment list. Record instants are n·stride (plus t_end), so runs
/// with different step sizes sample at identical times.
pub(crate) fn timeline(seq: &PulseSequence, stride: f64) -> Vec<Segment> {
    let t_end = seq.t_end;
    let mut boundaries: Vec<(f64, bool)> = Vec::new();
    let mut n = 1u64;
    loop {
        let t = n as f64 * stride;
        if t >= t_end {
            break;
        }
        boundaries.push((t, true));
        n += 1;
    }
    boundaries.push((t_end, true));
    for t in seq.switch_times() {
        boundaries.push((t, false));
    }
    boundaries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // Merge exactly-coincident boundaries, keeping the record flag.
    let mut merged: Vec<(f64, bool)> = Vec::with_capacity(boundaries.len());
    for (t, rec) in boundaries {
        match merged.last_mut() {
            Some((tp, rp)) if *tp == t => *rp |= rec,
            _ => merged.push((t, rec)),
        }
    }

    let mut segments = Vec::with_capacity(merged.len());
    let mut t0 = 0.0;
    for (t1, record_end) in merged {
        let mid = 0.5 * (t0 + t1);
        segments.push(Segment {
            t0,
            t1,
            drive: seq.drive_at(mid),
            record_end,
        });
        t0 = t1;
    }
    segments
}

struct Recorder {
    times: Vec<f64>,
    photon: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
    bloch_classes: Vec<usize>,
    bloch: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl Recorder {
    fn new(record: &RecordSettings) -> Self {
        Recorder {
            times: Vec::new(),
            photon: Vec::new(),
            re: Vec::new(),
            im: Vec::new(),
            bloch_classes: record.bloch_classes.clone(),
            bloch: vec![(Vec::new(), Vec::new(), Vec::new()); record.bloch_classes.len()],
        }
    }

    fn push(&mut self, t: f64, state: &SystemState) {
        self.times.push(t);
        self.photon.push(state.alpha.norm_sqr());
        self.re.push(state.alpha.re);
        self.im.push(state.alpha.im);
        for (slot, &k) in self.bloch.iter_mut().zip(&self.bloch_classes) {
            let s = state.s_minus[k];
            slot.0.push(2.0 * s.re);
            slot.1.push(-2.0 * s.im);
            slot.2.push(state.s_z[k]);
        }
    }

    fn into_trajectory(self, ensemble: &SpinEnsemble, meta: RunMeta) -> Trajectory {
        let bloch = self
            .bloch_classes
            .iter()
            .zip(self.bloch)
            .map(|(&k, (sx, sy, sz))| BlochRecord {
                class_index: k,
                detuning: ensemble.classes[k].detuning,
                sx,
                sy,
                sz,
            })
            .collect();
        Trajectory {
            times: self.times,
            photon_number: self.photon,
            alpha_re: self.re,
            alpha_im: self.im,
            bloch,
            meta,
        }
    }
}

fn check_rk4_precondition(
    ensemble: &SpinEnsemble,
    integrator: &IntegratorSettings,
) -> Result<()> {
    let max_det = ensemble.max_abs_detuning();
    if max_det > 0.0 && integrator.dt > integrator.c_stab / max_det {
        return Err(Error::InvalidParam(format!(
            "dt = {:.3e} does not resolve the fastest detuning: need dt <= c_stab/max|Delta| \
             = {:.3e} (or use the split-step scheme)",
            integrator.dt,
            integrator.c_stab / max_det
        )));
    }
    Ok(())
}

fn integrate(
    mut state: SystemState,
    ensemble: &SpinEnsemble,
    params: &PhysicalParams,
    seq: &PulseSequence,
    integrator: &IntegratorSettings,
    record: &RecordSettings,
    step_divider: u32,
) -> Result<Trajectory> {
    params.validate()?;
    ensemble.validate(params.n_spins)?;
    seq.validate()?;
    record.validate(ensemble.len())?;
    if !(integrator.dt > 0.0) || !(integrator.eps_int > 0.0) {
        return Err(Error::InvalidParam("dt and eps_int must be > 0".into()));
    }
    if integrator.scheme == IntegratorScheme::Rk4 {
        check_rk4_precondition(ensemble, integrator)?;
    }
    if !state.is_finite() {
        return Err(Error::InvalidParam("non-finite initial state".into()));
    }

    let segments = timeline(seq, record.stride);
    let mut stepper = Stepper::new(ensemble, params);
    let mut recorder = Recorder::new(record);
    recorder.push(0.0, &state);

    let sz_bound = 1.0 + 10.0 * integrator.eps_int;
    let mut step_index: usize = 0;
    for seg in &segments {
        let len = seg.t1 - seg.t0;
        let m = ((len / integrator.dt).ceil() as u64).max(1) * step_divider as u64;
        let h = len / m as f64;
        for j in 0..m {
            let StepOutcome::Ok { max_abs_sz, finite } = match integrator.scheme {
                IntegratorScheme::Rk4 => stepper.rk4_step(&mut state, h, seg.drive, true),
                IntegratorScheme::SplitStep => stepper.split_step(&mut state, h, seg.drive),
            };
            step_index += 1;
            if !finite || max_abs_sz > sz_bound {
                let t = seg.t0 + (j + 1) as f64 * h;
                let detail = if !finite {
                    "non-finite value".to_string()
                } else {
                    format!("|s_z| = {max_abs_sz:.6} exceeds 1 + 10*eps_int")
                };
                return Err(Error::Instability {
                    step: step_index,
                    t,
                    detail,
                });
            }
        }
        state.t = seg.t1;
        if seg.record_end {
            recorder.push(seg.t1, &state);
        }
    }

    let meta = RunMeta {
        params: Some(*params),
        ensemble_seed: Some(ensemble.seed),
        n_classes: Some(ensemble.len()),
        sequence: Some(seq.clone()),
        integrator: Some(*integrator),
        record: Some(record.clone()),
        realizations: Some(1),
    };
    Ok(recorder.into_trajectory(ensemble, meta))
}

/// Integrate the mean-field equations from the all-ground initial state
/// (s_z = −1, s_− = 0, α = 0) over the pulse sequence.
pub fn simulate(
    ensemble: &SpinEnsemble,
    params: &PhysicalParams,
    seq: &PulseSequence,
    integrator: &IntegratorSettings,
    record: &RecordSettings,
) -> Result<Trajectory> {
    let state = SystemState::ground(ensemble.len());
    integrate(state, ensemble, params, seq, integrator, record, 1)
}

/// Integrate from an explicit initial state.
pub fn simulate_with_initial(
    initial: SystemState,
    ensemble: &SpinEnsemble,
    params: &PhysicalParams,
    seq: &PulseSequence,
    integrator: &IntegratorSettings,
    record: &RecordSettings,
) -> Result<Trajectory> {
    if initial.s_minus.len() != ensemble.len() || initial.s_z.len() != ensemble.len() {
        return Err(Error::InvalidParam(
            "initial state size does not match ensemble".into(),
        ));
    }
    integrate(initial, ensemble, params, seq, integrator, record, 1)
}

/// Ideal-pulse initialization: perfect π/2 and π pulses are assumed to have
/// been applied at t = −τ and t = 0, leaving every class with
/// s_− = (β/2)·e^{iΔ_k τ} and s_z = −√(1−β²) (β = 1 puts the spins on the
/// equator). Free evolution (no drive) is then integrated up to `t_end ≥ 2τ`,
/// so the classes rephase at t = τ.
pub fn simulate_ideal_init(
    ensemble: &SpinEnsemble,
    params: &PhysicalParams,
    tau: f64,
    beta: f64,
    t_end: f64,
    integrator: &IntegratorSettings,
    record: &RecordSettings,
) -> Result<Trajectory> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "beta = {beta} must be in (0, 1]"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!("tau = {tau} must be > 0")));
    }
    if t_end < 2.0 * tau {
        return Err(Error::InvalidParam(format!(
            "t_end = {t_end} must be at least 2 tau = {}",
            2.0 * tau
        )));
    }
    let sz = -(1.0 - beta * beta).max(0.0).sqrt();
    let state = SystemState {
        alpha: Complex64::new(0.0, 0.0),
        s_minus: ensemble
            .classes
            .iter()
            .map(|c| Complex64::from_polar(beta / 2.0, c.detuning * tau))
            .collect(),
        s_z: vec![sz; ensemble.len()],
        t: 0.0,
    };
    let seq = PulseSequence::free_evolution(t_end)?;
    integrate(state, ensemble, params, &seq, integrator, record, 1)
}

/// Rerun with every step halved and report the maximum deviation of |α|²,
/// normalised by the peak of the refined run. Values well below 1 indicate a
/// converged step size.
pub fn convergence_check(
    ensemble: &SpinEnsemble,
    params: &PhysicalParams,
    seq: &PulseSequence,
    integrator: &IntegratorSettings,
    record: &RecordSettings,
) -> Result<f64> {
    let state = SystemState::ground(ensemble.len());
    let coarse = integrate(
        state.clone(),
        ensemble,
        params,
        seq,
        integrator,
        record,
        1,
    )?;
    let fine = integrate(state, ensemble, params, seq, integrator, record, 2)?;
    Ok(max_relative_deviation(
        &coarse.photon_number,
        &fine.photon_number,
    ))
}

/// max_i |a_i − b_i| / max_i |b_i| (0 when `b` is identically zero).
pub fn max_relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    let peak = b.iter().copied().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / peak
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample_ensemble, SpinClass};
    use crate::params::Distribution;
    use crate::units::from_hz;

    fn single_class_params(g: f64, kappa: f64) -> PhysicalParams {
        PhysicalParams {
            kappa,
            gamma: 0.0,
            gamma_deph: 0.0,
            g_single: g,
            n_spins: 1.0,
            delta_c: 0.0,
            inhomogeneous_fwhm: 0.0,
            distribution: Distribution::Gaussian,
        }
    }

    fn single_class_ensemble(detuning: f64, g: f64) -> SpinEnsemble {
        SpinEnsemble {
            classes: vec![SpinClass {
                detuning,
                coupling: g,
                weight: 1.0,
            }],
            seed: 0,
        }
    }

    #[test]
    fn ground_state_is_fixed_point() {
        let params = single_class_params(100.0, 0.0);
        let ens = single_class_ensemble(1e5, 100.0);
        let state = SystemState::ground(1);
        let d = derivative(&state, &ens, &params, Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(d.d_alpha, Complex64::new(0.0, 0.0));
        assert_eq!(d.d_s_minus[0], Complex64::new(0.0, 0.0));
        assert_eq!(d.d_s_z[0], 0.0);
    }

    #[test]
    fn decoupled_limit() {
        // g = 0, alpha = 1, kappa = 0, delta_c = 0, F = 0:
        // d alpha = 0 and d s_- = -(i Delta + gamma/2 + 2 Gamma) s_-
        let mut params = single_class_params(0.0, 0.0);
        params.gamma = 17.0;
        params.gamma_deph = 23.0;
        let delta = 4.2e4;
        let ens = single_class_ensemble(delta, 0.0);
        let s0 = Complex64::new(0.3, -0.1);
        let state = SystemState {
            alpha: Complex64::new(1.0, 0.0),
            s_minus: vec![s0],
            s_z: vec![-0.5],
            t: 0.0,
        };
        let d = derivative(&state, &ens, &params, Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(d.d_alpha, Complex64::new(0.0, 0.0));
        let expect = Complex64::new(-(17.0 / 2.0 + 46.0), -delta) * s0;
        assert!((d.d_s_minus[0] - expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn rhs_conserves_excitation_without_losses() {
        // kappa = gamma = Gamma = F = 0: substitute the RHS into
        // d/dt [|alpha|^2 + sum w (1+s_z)/2] and verify cancellation at
        // random-ish states.
        let mut params = single_class_params(37.0, 0.0);
        params.n_spins = 40.0;
        let mut classes = Vec::new();
        let n_k = 8;
        for k in 0..n_k {
            classes.push(SpinClass {
                detuning: (k as f64 - 3.5) * 1.7e4,
                coupling: 37.0 + k as f64,
                weight: 5.0,
            });
        }
        let ens = SpinEnsemble { classes, seed: 0 };
        let mut state = SystemState::ground(n_k);
        state.alpha = Complex64::new(0.8, -1.3);
        for k in 0..n_k {
            let phi = 2.1 * k as f64;
            let amp = 0.31 + 0.02 * k as f64;
            state.s_minus[k] = Complex64::from_polar(amp, phi);
            state.s_z[k] = -(1.0 - 4.0 * amp * amp).sqrt();
        }
        let d = derivative(&state, &ens, &params, Complex64::new(0.0, 0.0)).unwrap();
        let mut de = 2.0 * (state.alpha.conj() * d.d_alpha).re;
        for k in 0..n_k {
            de += ens.classes[k].weight * d.d_s_z[k] / 2.0;
        }
        let scale: f64 = 2.0 * (state.alpha.norm() * d.d_alpha.norm())
            + ens
                .classes
                .iter()
                .zip(&d.d_s_z)
                .map(|(c, dz)| c.weight * dz.abs())
                .sum::<f64>();
        assert!(de.abs() < 1e-12 * scale, "dE/dt = {de}, scale {scale}");
    }

    #[test]
    fn derivative_rejects_nonfinite() {
        let params = single_class_params(1.0, 0.0);
        let ens = single_class_ensemble(0.0, 1.0);
        let mut state = SystemState::ground(1);
        state.alpha = Complex64::new(f64::NAN, 0.0);
        assert!(derivative(&state, &ens, &params, Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn no_drive_stays_in_ground_state() {
        let params = single_class_params(from_hz(8.0), from_hz(150e3));
        let mut p = params;
        p.n_spins = 100.0;
        p.inhomogeneous_fwhm = from_hz(1e6);
        let ens = sample_ensemble(&p, 32, 5).unwrap();
        let seq = hahn_sequence_zero_amp();
        let integ = IntegratorSettings {
            dt: 2e-9,
            ..Default::default()
        };
        let rec = RecordSettings {
            stride: 1e-7,
            bloch_classes: vec![0, 3],
        };
        let traj = simulate(&ens, &p, &seq, &integ, &rec).unwrap();
        assert!(traj.photon_number.iter().all(|&n| n == 0.0));
        for b in &traj.bloch {
            assert!(b.sz.iter().all(|&z| z == -1.0));
        }
    }

    fn hahn_sequence_zero_amp() -> PulseSequence {
        crate::pulse::hahn_sequence(1e-6, 1e-7, 1e-7, 2e-7, 0.0, 0.0, 0.0, 4e-6).unwrap()
    }

    #[test]
    fn single_resonant_class_matches_small_ode_oracle() {
        // One class at Delta = 0, kappa = gamma = Gamma = F = 0, starting on
        // the equator: compare |alpha(t)| against an independent high-order
        // dense integration of the same 3-variable system.
        let g = 2.0e5;
        let params = single_class_params(g, 0.0);
        let ens = single_class_ensemble(0.0, g);
        let initial = SystemState {
            alpha: Complex64::new(0.0, 0.0),
            s_minus: vec![Complex64::new(0.5, 0.0)],
            s_z: vec![0.0],
            t: 0.0,
        };
        let t_end = 4e-5;
        let seq = PulseSequence::free_evolution(t_end).unwrap();
        let integ = IntegratorSettings {
            dt: 1e-9,
            ..Default::default()
        };
        let rec = RecordSettings {
            stride: 5e-7,
            bloch_classes: vec![],
        };
        let traj =
            simulate_with_initial(initial, &ens, &params, &seq, &integ, &rec).unwrap();

        // Oracle: RK4 with 100x smaller steps, written independently on the
        // 5 real variables.
        let oracle = |t: f64| -> f64 {
            let n_steps = 400_000usize;
            let h = t / n_steps as f64;
            let mut y = [0.0f64, 0.0, 0.5, 0.0, 0.0]; // re a, im a, re s, im s, z
            let f = |y: &[f64; 5]| -> [f64; 5] {
                let (ar, ai, sr, si, z) = (y[0], y[1], y[2], y[3], y[4]);
                // da = -i g s ; ds = i g a z ; dz = -4 g Im(a* s)
                [
                    g * si,
                    -g * sr,
                    -g * ai * z,
                    g * ar * z,
                    -4.0 * g * (ar * si - ai * sr),
                ]
            };
            for _ in 0..n_steps {
                let k1 = f(&y);
                let mut y2 = y;
                for i in 0..5 {
                    y2[i] = y[i] + h / 2.0 * k1[i];
                }
                let k2 = f(&y2);
                for i in 0..5 {
                    y2[i] = y[i] + h / 2.0 * k2[i];
                }
                let k3 = f(&y2);
                for i in 0..5 {
                    y2[i] = y[i] + h * k3[i];
                }
                let k4 = f(&y2);
                for i in 0..5 {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            (y[0] * y[0] + y[1] * y[1]).sqrt()
        };
        let i_probe = traj.times.len() - 1;
        let expect = oracle(traj.times[i_probe]);
        let got = traj.photon_number[i_probe].sqrt();
        assert!(
            (got - expect).abs() < 1e-6 * expect.max(1e-3),
            "got {got}, oracle {expect}"
        );
    }

    #[test]
    fn rk4_order_of_accuracy_on_decaying_cavity() {
        // d alpha/dt = -(kappa/2) alpha with the spins decoupled: global error
        // should scale as dt^4 within a factor 2 over one decade.
        let kappa = 2.0e6;
        let params = single_class_params(0.0, kappa);
        let ens = single_class_ensemble(0.0, 0.0);
        let t_end = 1e-6;
        let seq = PulseSequence::free_evolution(t_end).unwrap();
        let rec = RecordSettings {
            stride: t_end,
            bloch_classes: vec![],
        };
        let exact = (-kappa / 2.0 * t_end).exp();
        let err_at = |dt: f64| -> f64 {
            let integ = IntegratorSettings {
                dt,
                ..Default::default()
            };
            let initial = SystemState {
                alpha: Complex64::new(1.0, 0.0),
                s_minus: vec![Complex64::new(0.0, 0.0)],
                s_z: vec![-1.0],
                t: 0.0,
            };
            let traj =
                simulate_with_initial(initial, &ens, &params, &seq, &integ, &rec).unwrap();
            (traj.alpha_re.last().unwrap() - exact).abs()
        };
        let e1 = err_at(1e-8);
        let e2 = err_at(1e-9);
        let order = (e1 / e2).log10();
        assert!(
            (order - 4.0).abs() < 2.0f64.log10().max(0.35),
            "observed order {order}"
        );
    }

    #[test]
    fn split_step_agrees_with_rk4() {
        let mut params = single_class_params(from_hz(2e3), from_hz(150e3));
        params.n_spins = 1e6;
        params.inhomogeneous_fwhm = from_hz(2e5);
        params.gamma_deph = from_hz(500.0);
        let ens = sample_ensemble(&params, 64, 9).unwrap();
        let seq =
            crate::pulse::hahn_sequence(3e-6, 2e-7, 2e-7, 4e-7, 5e8, 0.0, 0.0, 1.2e-5).unwrap();
        let rec = RecordSettings {
            stride: 2e-8,
            bloch_classes: vec![],
        };
        let run = |scheme: IntegratorScheme| {
            let integ = IntegratorSettings {
                dt: 5e-10,
                scheme,
                ..Default::default()
            };
            simulate(&ens, &params, &seq, &integ, &rec).unwrap()
        };
        let a = run(IntegratorScheme::Rk4);
        let b = run(IntegratorScheme::SplitStep);
        let dev = max_relative_deviation(&a.photon_number, &b.photon_number);
        assert!(dev < 1e-4, "cross-scheme deviation {dev}");
    }

    #[test]
    fn rk4_rejects_unresolved_detunings() {
        let mut params = single_class_params(1.0, 0.0);
        params.inhomogeneous_fwhm = from_hz(4e6);
        let ens = single_class_ensemble(1e9, 1.0);
        let seq = PulseSequence::free_evolution(1e-6).unwrap();
        let integ = IntegratorSettings {
            dt: 1e-8,
            ..Default::default()
        };
        let rec = RecordSettings::default();
        let err = simulate(&ens, &params, &seq, &integ, &rec);
        assert!(matches!(err, Err(Error::InvalidParam(_))));
        // Split-step has no detuning restriction.
        let integ = IntegratorSettings {
            dt: 1e-8,
            scheme: IntegratorScheme::SplitStep,
            ..Default::default()
        };
        assert!(simulate(&ens, &params, &seq, &integ, &rec).is_ok());
    }

    #[test]
    fn ideal_init_validation() {
        let params = single_class_params(1.0, 1.0);
        let ens = single_class_ensemble(0.0, 1.0);
        let integ = IntegratorSettings::default();
        let rec = RecordSettings::default();
        assert!(
            simulate_ideal_init(&ens, &params, 1e-6, 0.0, 2e-6, &integ, &rec).is_err()
        );
        assert!(
            simulate_ideal_init(&ens, &params, 1e-6, 1.2, 2e-6, &integ, &rec).is_err()
        );
        assert!(
            simulate_ideal_init(&ens, &params, 1e-6, 0.5, 1e-6, &integ, &rec).is_err()
        );
    }
}
