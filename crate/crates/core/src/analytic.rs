//! Linear-response theory of the first echo.
//!
//! Treating weakly excited spins as harmonic oscillators prepared in a
//! coherent state of amplitude β·e^{iΔ_jτ} gives a linear model for the field
//! emitted when the spins rephase at t = τ. Three routes to the same signal
//! live here:
//!
//! 1. [`eval_echo_closed_form`]: the closed-form two-branch expression for a
//!    Lorentzian line with γ = 0,
//! 2. [`eval_spectrum`] + [`Spectrum::invert`]: the frequency-domain solution
//!    with the detuning sum replaced by adaptive quadrature over the line
//!    shape (also valid for Gaussian lines), inverted numerically,
//! 3. [`simulate_linear_hp`]: direct time-domain integration of the coupled
//!    oscillator equations for a discretised ensemble.
//!
//! Their mutual agreement is the module's core test.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::SpinEnsemble;
use crate::error::{Error, Result};
use crate::meanfield::{IntegratorScheme, IntegratorSettings, RecordSettings};
use crate::pulse::PulseSequence;
use crate::quad::integrate_oscillatory;
use crate::reduction::pairwise_sum;
use crate::trajectory::{RunMeta, Trajectory};

const SQRT_TAU: f64 = 2.5066282746310002; // sqrt(2π)
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Inhomogeneous line shape of the analytic model.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineShape {
    /// Lorentzian with FWHM Γ_L: f(Δ) = (Γ_L/2π)/(Δ² + Γ_L²/4).
    Lorentzian { gamma_l: f64 },
    /// Gaussian with scale Γ_G (FWHM = Γ_G·√(8 ln 2)):
    /// f(Δ) = exp(−Δ²/2Γ_G²)/(√(2π)·Γ_G).
    Gaussian { gamma_g: f64 },
}

impl LineShape {
    pub fn fwhm(&self) -> f64 {
        match *self {
            LineShape::Lorentzian { gamma_l } => gamma_l,
            LineShape::Gaussian { gamma_g } => gamma_g * (8.0 * std::f64::consts::LN_2).sqrt(),
        }
    }

    /// Normalised density f(Δ).
    pub fn density(&self, delta: f64) -> f64 {
        match *self {
            LineShape::Lorentzian { gamma_l } => {
                let h = gamma_l / 2.0;
                h / std::f64::consts::PI / (delta * delta + h * h)
            }
            LineShape::Gaussian { gamma_g } => {
                (-delta * delta / (2.0 * gamma_g * gamma_g)).exp() / (SQRT_TAU * gamma_g)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let w = match *self {
            LineShape::Lorentzian { gamma_l } => gamma_l,
            LineShape::Gaussian { gamma_g } => gamma_g,
        };
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidParam(format!(
                "line width = {w} must be positive and finite"
            )));
        }
        Ok(())
    }
}

/// Parameters of the linear echo model.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticEchoParams {
    /// Initial coherent excitation amplitude β (dimensionless).
    pub beta: f64,
    /// Total spin count N.
    pub n_spins: f64,
    /// Effective coupling g_eff = sqrt(Σ|g_j|²/N) (rad/s).
    pub g_eff: f64,
    /// Cavity decay κ (rad/s).
    pub kappa: f64,
    /// Oscillator amplitude decay γ of the linear model (rad/s). Enters the
    /// coherence equation as written, without a factor 1/2.
    pub gamma_hp: f64,
    /// Refocusing time τ (s): the spins rephase at t = τ.
    pub tau: f64,
    /// Cavity–drive detuning (rad/s); 0 for a resonant drive.
    #[serde(default)]
    pub delta_c: f64,
    pub line: LineShape,
}

impl AnalyticEchoParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("kappa", self.kappa),
            ("gamma_hp", self.gamma_hp),
            ("g_eff", self.g_eff),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} = {v} out of range")));
            }
        }
        if !(self.n_spins >= 1.0) {
            return Err(Error::InvalidParam(format!(
                "n_spins = {} must be >= 1",
                self.n_spins
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParam(format!(
                "tau = {} must be > 0",
                self.tau
            )));
        }
        if !self.delta_c.is_finite() {
            return Err(Error::InvalidParam("delta_c not finite".into()));
        }
        self.line.validate()
    }

    fn lorentzian_fwhm(&self) -> Result<f64> {
        match self.line {
            LineShape::Lorentzian { gamma_l } => Ok(gamma_l),
            LineShape::Gaussian { .. } => Err(Error::InvalidParam(
                "this operation requires a Lorentzian line".into(),
            )),
        }
    }
}

/// Shape regime of the first echo for a Lorentzian line.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// ζ² < 0 and Γ_L > κ: the echo tail decays with the cavity, ∝ e^{−κ(t−τ)/2}.
    CavityDominated,
    /// ζ² > 0: damped oscillations from coherent spin–cavity energy exchange.
    Oscillatory,
    /// ζ² < 0 and κ ≥ Γ_L: the echo is symmetric about t = τ, both flanks ∝ Γ_L/2.
    SymmetricBadCavity,
}

/// Derived quantities of the closed-form echo and the resulting regime.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// ζ² = 16 g_eff² N − (Γ_L − κ)² (rad²/s²).
    pub zeta_sq: f64,
    pub sigma_plus: Complex64,
    pub sigma_minus: Complex64,
    pub theta_plus: Complex64,
    pub theta_minus: Complex64,
    pub regime: Regime,
}

/// Internals of the closed-form evaluation, shared between the point
/// evaluator and curve sampling.
struct ClosedForm {
    prefactor: Complex64,
    denom_rise: f64,
    sigma_plus: Complex64,
    sigma_minus: Complex64,
    theta_plus: Complex64,
    theta_minus: Complex64,
    gamma_l: f64,
    tau: f64,
}

fn zeta_parts(gamma_l: f64, kappa: f64, g_eff: f64, n: f64) -> (f64, Complex64) {
    let zeta_sq = 16.0 * g_eff * g_eff * n - (gamma_l - kappa) * (gamma_l - kappa);
    // Principal branch with ζ = +√(ζ²) for ζ² > 0 and ζ = +i√(−ζ²) otherwise;
    // |α|² is invariant under ζ → −ζ (it swaps Σ± and Θ±).
    let zeta = if zeta_sq >= 0.0 {
        Complex64::new(zeta_sq.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-zeta_sq).sqrt())
    };
    (zeta_sq, zeta)
}

fn sigmas_thetas(
    gamma_l: f64,
    kappa: f64,
    zeta: Complex64,
) -> (Complex64, Complex64, Complex64, Complex64) {
    let sigma_plus = (Complex64::new(gamma_l + kappa, 0.0) + I * zeta) / 4.0;
    let sigma_minus = (Complex64::new(gamma_l + kappa, 0.0) - I * zeta) / 4.0;
    let theta_plus = zeta * (I * (3.0 * gamma_l + kappa) + zeta);
    let theta_minus = zeta * (I * (3.0 * gamma_l + kappa) - zeta);
    (sigma_plus, sigma_minus, theta_plus, theta_minus)
}

impl ClosedForm {
    fn new(p: &AnalyticEchoParams) -> Result<Self> {
        p.validate()?;
        let gamma_l = p.lorentzian_fwhm()?;
        if p.gamma_hp != 0.0 {
            return Err(Error::InvalidParam(
                "the closed form assumes gamma_hp = 0".into(),
            ));
        }
        let g2n = p.g_eff * p.g_eff * p.n_spins;
        let (zeta_sq, zeta) = zeta_parts(gamma_l, p.kappa, p.g_eff, p.n_spins);
        let scale = 16.0 * g2n + (gamma_l - p.kappa) * (gamma_l - p.kappa);
        if zeta_sq.abs() < 1e-6 * scale {
            return Err(Error::BranchPoint);
        }
        let (sigma_plus, sigma_minus, theta_plus, theta_minus) =
            sigmas_thetas(gamma_l, p.kappa, zeta);
        Ok(ClosedForm {
            prefactor: I * (2.0 * p.beta * p.n_spins * gamma_l / SQRT_TAU),
            denom_rise: -gamma_l * gamma_l - p.kappa * gamma_l - 2.0 * g2n,
            sigma_plus,
            sigma_minus,
            theta_plus,
            theta_minus,
            gamma_l,
            tau: p.tau,
        })
    }

    fn eval(&self, t: f64) -> Complex64 {
        if t <= self.tau {
            // rise ∝ e^{−Γ_L(τ−t)/2}
            self.prefactor * (-self.gamma_l * (self.tau - t) / 2.0).exp() / self.denom_rise
        } else {
            let dt = self.tau - t; // negative
            let e_m = (self.sigma_minus * dt).exp();
            let e_p = (self.sigma_plus * dt).exp();
            self.prefactor * 4.0 * (e_m / self.theta_plus - e_p / self.theta_minus)
        }
    }
}

/// Closed-form field amplitude ⟨a(t)⟩ of the first echo for a Lorentzian line
/// with γ = 0, evaluated verbatim from the two-branch expression. The two
/// branches differ by a global sign, so only |⟨a⟩| is continuous at t = τ
/// (which is assigned to the t < τ branch).
pub fn eval_echo_closed_form(p: &AnalyticEchoParams, t: f64) -> Result<Complex64> {
    Ok(ClosedForm::new(p)?.eval(t))
}

/// Sample the closed form on a time grid.
pub fn closed_form_curve(p: &AnalyticEchoParams, times: &[f64]) -> Result<Vec<Complex64>> {
    let cf = ClosedForm::new(p)?;
    Ok(times.iter().map(|&t| cf.eval(t)).collect())
}

/// Compute ζ², Σ±, Θ± and classify the echo-shape regime.
pub fn classify_regime(p: &AnalyticEchoParams) -> Result<RegimeReport> {
    p.validate()?;
    let gamma_l = p.lorentzian_fwhm()?;
    let (zeta_sq, zeta) = zeta_parts(gamma_l, p.kappa, p.g_eff, p.n_spins);
    let (sigma_plus, sigma_minus, theta_plus, theta_minus) =
        sigmas_thetas(gamma_l, p.kappa, zeta);
    let regime = if zeta_sq > 0.0 {
        Regime::Oscillatory
    } else if gamma_l > p.kappa {
        Regime::CavityDominated
    } else {
        Regime::SymmetricBadCavity
    };
    Ok(RegimeReport {
        zeta_sq,
        sigma_plus,
        sigma_minus,
        theta_plus,
        theta_minus,
        regime,
    })
}

/// Integrate the linear Holstein–Primakoff model for a discretised ensemble:
///
/// ```text
/// dα/dt = −(κ/2 + iδ_c)α − i Σ_k w_k g_k s_k
/// ds_k/dt = −(γ_hp + iΔ_k) s_k − i g_k α,    s_k(0) = β e^{iΔ_k τ}, α(0) = 0
/// ```
///
/// The diagonal part (detuning and decay) is applied exactly per class and
/// RK4 integrates the coupling remainder, which is unconditionally stable in
/// the detunings — heavy-tailed Lorentzian samples need no step-size guard.
/// The oscillator amplitudes carry no s_z, so `record.bloch_classes` is
/// ignored here.
pub fn simulate_linear_hp(
    p: &AnalyticEchoParams,
    ensemble: &SpinEnsemble,
    dt: f64,
    t_end: f64,
    record: &RecordSettings,
) -> Result<Trajectory> {
    p.validate()?;
    ensemble.validate(p.n_spins)?;
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidParam("dt and t_end must be > 0".into()));
    }
    if !(record.stride > 0.0) {
        return Err(Error::InvalidParam("record stride must be > 0".into()));
    }

    let n = ensemble.len();
    let g: Vec<f64> = ensemble.classes.iter().map(|c| c.coupling).collect();
    let wg: Vec<f64> = ensemble
        .classes
        .iter()
        .map(|c| c.weight * c.coupling)
        .collect();
    let wg2: Vec<f64> = ensemble
        .classes
        .iter()
        .map(|c| c.weight * c.coupling * c.coupling)
        .collect();
    let g2_sum = pairwise_sum(&wg2);

    let mut alpha = Complex64::new(0.0, 0.0);
    let mut s: Vec<Complex64> = ensemble
        .classes
        .iter()
        .map(|c| Complex64::from_polar(p.beta, c.detuning * p.tau))
        .collect();
    let mut contrib = vec![Complex64::new(0.0, 0.0); n];

    let seq = PulseSequence::free_evolution(t_end)?;
    let segments = crate::meanfield::timeline(&seq, record.stride);

    let mut times = vec![0.0];
    let mut photon = vec![alpha.norm_sqr()];
    let mut re = vec![alpha.re];
    let mut im = vec![alpha.im];

    let mut rot_cache: std::collections::HashMap<u64, (Vec<Complex64>, Complex64)> =
        std::collections::HashMap::new();
    let mut step_index = 0usize;

    for seg in &segments {
        let len = seg.t1 - seg.t0;
        let m = ((len / dt).ceil() as u64).max(1);
        let h = len / m as f64;
        let key = h.to_bits();
        if !rot_cache.contains_key(&key) {
            let half = h / 2.0;
            let rot: Vec<Complex64> = ensemble
                .classes
                .iter()
                .map(|c| {
                    Complex64::from_polar((-p.gamma_hp * half).exp(), -c.detuning * half)
                })
                .collect();
            let rot_a =
                Complex64::from_polar((-p.kappa * half / 2.0).exp(), -p.delta_c * half);
            rot_cache.insert(key, (rot, rot_a));
        }
        let (rot, rot_a) = &rot_cache[&key];

        for j in 0..m {
            // exact half rotation of the diagonal part
            for (sk, r) in s.iter_mut().zip(rot) {
                *sk *= r;
            }
            alpha *= rot_a;

            // RK4 on the coupling remainder. The per-class equation
            // ds_k = −i g_k α dt makes every class increment proportional to
            // the same RK4 combination of the stage α values, so only the
            // two collective variables (α, S = Σ w g s) enter the stages.
            for k in 0..n {
                contrib[k] = s[k] * wg[k];
            }
            let s_sum = pairwise_sum(&contrib);
            let f = |a: Complex64, ss: Complex64| (-I * ss, -I * g2_sum * a);
            let (ka1, ks1) = f(alpha, s_sum);
            let a2 = alpha + ka1 * (h / 2.0);
            let s2 = s_sum + ks1 * (h / 2.0);
            let (ka2, ks2) = f(a2, s2);
            let a3 = alpha + ka2 * (h / 2.0);
            let s3 = s_sum + ks2 * (h / 2.0);
            let (ka3, ks3) = f(a3, s3);
            let a4 = alpha + ka3 * h;
            let s4 = s_sum + ks3 * h;
            let (ka4, _ks4) = f(a4, s4);
            // RK4 combination of stage α values drives the per-class kick.
            let j_int = -I * (h / 6.0) * (alpha + 2.0 * a2 + 2.0 * a3 + a4);
            alpha += (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4) * (h / 6.0);
            for k in 0..n {
                s[k] += j_int * g[k];
            }

            // second half rotation
            for (sk, r) in s.iter_mut().zip(rot) {
                *sk *= r;
            }
            alpha *= *rot_a;

            step_index += 1;
            if !alpha.re.is_finite() || !alpha.im.is_finite() {
                return Err(Error::Instability {
                    step: step_index,
                    t: seg.t0 + (j + 1) as f64 * h,
                    detail: "non-finite cavity amplitude".into(),
                });
            }
        }
        if seg.record_end {
            times.push(seg.t1);
            photon.push(alpha.norm_sqr());
            re.push(alpha.re);
            im.push(alpha.im);
        }
    }

    Ok(Trajectory {
        times,
        photon_number: photon,
        alpha_re: re,
        alpha_im: im,
        bloch: Vec::new(),
        meta: RunMeta {
            params: None,
            ensemble_seed: Some(ensemble.seed),
            n_classes: Some(n),
            sequence: None,
            integrator: Some(IntegratorSettings {
                dt,
                scheme: IntegratorScheme::SplitStep,
                ..Default::default()
            }),
            record: Some(record.clone()),
            realizations: Some(1),
        },
    })
}

/// Frequency grid for [`eval_spectrum`]: a uniform core around the spectral
/// features joined to geometrically widening tail panels, all organised as
/// equally spaced three-node Filon panels. `shift` is the contour offset ε:
/// values are evaluated at ω + iε and the inversion multiplies the exact
/// e^{+εt} back. `window_sigma` is the Gaussian apodisation width used by the
/// inversion.
#[derive(Clone, Debug)]
pub struct SpectrumGrid {
    nodes: Vec<f64>,
    panels: Vec<[usize; 3]>,
    pub shift: f64,
    pub window_sigma: f64,
}

impl SpectrumGrid {
    /// Build a symmetric grid: uniform spacing `core_step` on
    /// [−core_half, core_half], then geometric panels growing by
    /// 2^(1/panels_per_octave) out to ±tail_max.
    pub fn build(
        core_half: f64,
        core_step: f64,
        tail_max: f64,
        panels_per_octave: usize,
        shift: f64,
        window_sigma: f64,
    ) -> Result<Self> {
        if !(core_step > 0.0) || !(core_half > core_step) {
            return Err(Error::InvalidParam("bad spectrum grid core".into()));
        }
        if !(shift > 0.0) || !(window_sigma > 0.0) {
            return Err(Error::InvalidParam(
                "spectrum grid needs shift > 0 and window_sigma > 0".into(),
            ));
        }
        // positive half, starting at 0
        let mut pos: Vec<f64> = Vec::new();
        let n_core_panels = ((core_half / core_step / 2.0).ceil() as usize).max(1);
        for i in 0..=(2 * n_core_panels) {
            pos.push(i as f64 * core_step);
        }
        let ratio = 2f64.powf(1.0 / panels_per_octave.max(1) as f64);
        let mut x = *pos.last().unwrap();
        while x < tail_max {
            let len = x * (ratio - 1.0);
            pos.push(x + len / 2.0);
            pos.push(x + len);
            x += len;
        }
        // full symmetric node list; negation is exact in floating point
        let mut nodes: Vec<f64> = pos.iter().skip(1).rev().map(|&v| -v).collect();
        nodes.extend(pos.iter().copied());
        let total = nodes.len();
        debug_assert_eq!(total % 2, 1);
        let mut panels = Vec::with_capacity((total - 1) / 2);
        let mut i = 0;
        while i + 2 < total {
            panels.push([i, i + 1, i + 2]);
            i += 2;
        }
        for p in &panels {
            let h1 = nodes[p[1]] - nodes[p[0]];
            let h2 = nodes[p[2]] - nodes[p[1]];
            debug_assert!(
                (h1 - h2).abs() <= 1e-9 * h1.abs().max(h2.abs()),
                "uneven panel: {h1} vs {h2}"
            );
        }
        Ok(SpectrumGrid {
            nodes,
            panels,
            shift,
            window_sigma,
        })
    }

    /// Grid sized from the problem's rates: core covering the polariton
    /// structure, contour shift 1/τ, apodisation wide enough to keep the
    /// kernel smoothing below the comparison tolerances.
    pub fn auto(p: &AnalyticEchoParams) -> Result<Self> {
        p.validate()?;
        let rate = p.kappa
            + p.line.fwhm()
            + 4.0 * p.g_eff * p.n_spins.sqrt()
            + p.delta_c.abs();
        let feature = (p.kappa.min(p.line.fwhm()) / 2.0).max(1e-4 * rate);
        Self::build(
            2.5 * rate,
            feature / 6.0,
            64.0 * rate,
            12,
            1.0 / p.tau,
            16.0 * rate,
        )
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Sampled frequency-domain solution ⟨ã(ω + iε)⟩.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub grid: SpectrumGrid,
    pub values: Vec<Complex64>,
    /// Largest relative quadrature error estimate across the grid.
    pub max_quad_error: f64,
    /// Refocusing time τ used to factor the carrier during inversion.
    pub tau: f64,
}

fn spectrum_integrals(
    line: &LineShape,
    eps_total: f64,
    tau: f64,
    omega: f64,
) -> Result<(Complex64, Complex64, f64)> {
    let w40 = 40.0 * line.fwhm();
    let lo = (-w40).min(omega - w40);
    let hi = w40.max(omega + w40);
    let h = |d: f64| Complex64::new(line.density(d), 0.0) / Complex64::new(eps_total, d - omega);
    let abs_floor = 1e-10 * std::f64::consts::PI * line.density(0.0);
    let i1 = integrate_oscillatory(h, tau, lo, hi, 1e-8, abs_floor, 6000)?;
    let i2 = integrate_oscillatory(h, 0.0, lo, hi, 1e-8, abs_floor, 6000)?;
    let rel = i1.error / (i1.value.norm() + abs_floor)
        + i2.error / (i2.value.norm() + abs_floor);
    Ok((i1.value, i2.value, rel))
}

/// Evaluate the frequency-domain solution on `grid` by replacing the detuning
/// sum with N·∫f(Δ)·dΔ, computed by adaptive quadrature over a ±40-linewidth
/// window (stretched to cover the pole at Δ = ω). Requires γ_hp + ε > 0 so the
/// resonant denominator stays off the real axis.
pub fn eval_spectrum(p: &AnalyticEchoParams, grid: &SpectrumGrid) -> Result<Spectrum> {
    p.validate()?;
    let eps_total = p.gamma_hp + grid.shift;
    let n = grid.nodes.len();
    let mut values = vec![Complex64::new(0.0, 0.0); n];
    let mut max_rel = 0.0f64;

    let value_at = |omega: f64, max_rel: &mut f64| -> Result<Complex64> {
        let (i1, i2, rel) = spectrum_integrals(&p.line, eps_total, p.tau, omega)?;
        if rel > *max_rel {
            *max_rel = rel;
        }
        let num = -I * (p.beta * p.g_eff * p.n_spins / SQRT_TAU) * i1;
        let den = Complex64::new(p.kappa / 2.0 + grid.shift, p.delta_c - omega)
            + p.n_spins * p.g_eff * p.g_eff * i2;
        Ok(num / den)
    };

    if p.delta_c == 0.0 {
        // With an even f(Δ), ã(−ω) = −ã(ω)*: evaluate the upper half only.
        let mid = n / 2;
        for i in mid..n {
            let v = value_at(grid.nodes[i], &mut max_rel)?;
            values[i] = v;
            values[n - 1 - i] = -v.conj();
        }
    } else {
        for i in 0..n {
            values[i] = value_at(grid.nodes[i], &mut max_rel)?;
        }
    }
    Ok(Spectrum {
        grid: grid.clone(),
        values,
        max_quad_error: max_rel,
        tau: p.tau,
    })
}

/// Evaluate the frequency-domain solution with the detuning sum taken
/// literally over the discrete ensemble classes. Useful as a sampling-free
/// cross-check against [`simulate_linear_hp`] on the same ensemble.
pub fn eval_spectrum_discrete(
    p: &AnalyticEchoParams,
    ensemble: &SpinEnsemble,
    grid: &SpectrumGrid,
) -> Result<Spectrum> {
    p.validate()?;
    ensemble.validate(p.n_spins)?;
    let eps_total = p.gamma_hp + grid.shift;
    let mut t1 = vec![Complex64::new(0.0, 0.0); ensemble.len()];
    let mut t2 = vec![Complex64::new(0.0, 0.0); ensemble.len()];
    let values = grid
        .nodes
        .iter()
        .map(|&omega| {
            for (k, c) in ensemble.classes.iter().enumerate() {
                let den = Complex64::new(eps_total, c.detuning - omega);
                let phase = Complex64::from_polar(1.0, c.detuning * p.tau);
                t1[k] = c.weight * c.coupling * phase / den;
                t2[k] = c.weight * c.coupling * c.coupling / den;
            }
            let i1 = pairwise_sum(&t1);
            let i2 = pairwise_sum(&t2);
            let num = -I * (p.beta / SQRT_TAU) * i1;
            let den = Complex64::new(p.kappa / 2.0 + grid.shift, p.delta_c - omega) + i2;
            num / den
        })
        .collect();
    Ok(Spectrum {
        grid: grid.clone(),
        values,
        max_quad_error: 0.0,
        tau: p.tau,
    })
}

impl Spectrum {
    /// Reconstruct ⟨a(t)⟩ at the given times by Filon-parabolic integration
    /// of the apodised spectrum, factoring the e^{iωτ} carrier so the panels
    /// interpolate a smooth function, and unwinding the contour shift with
    /// the exact e^{+εt}.
    pub fn invert(&self, times: &[f64]) -> Vec<Complex64> {
        let g = &self.grid;
        let sigma2 = 2.0 * g.window_sigma * g.window_sigma;
        // apodised, carrier-factored samples
        let smooth: Vec<Complex64> = g
            .nodes
            .iter()
            .zip(&self.values)
            .map(|(&w, &v)| {
                v * (-w * w / sigma2).exp() * Complex64::from_polar(1.0, -w * self.tau)
            })
            .collect();

        times
            .iter()
            .map(|&t| {
                let s = t - self.tau;
                let mut acc = Complex64::new(0.0, 0.0);
                for p in &g.panels {
                    let x1 = g.nodes[p[1]];
                    let h = g.nodes[p[1]] - g.nodes[p[0]];
                    let (g0, g1, g2) = (smooth[p[0]], smooth[p[1]], smooth[p[2]]);
                    let a = g1;
                    let b = (g2 - g0) / 2.0;
                    let c = (g0 + g2) / 2.0 - g1;
                    let m = crate::quad::oscillatory_moments(-h * s);
                    acc += (a * m[0] + b * m[1] + c * m[2])
                        * Complex64::from_polar(h, -x1 * s);
                }
                acc * ((g.shift * t).exp() / SQRT_TAU)
            })
            .collect()
    }
}
