//! Echo detection, windowed photon-number integration and decay/scaling fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::PulseSequence;
use crate::trajectory::Trajectory;

/// Settings for [`detect_echoes`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoDetectionSettings {
    /// Highest echo order to look for (order 1 is the echo at 2τ).
    pub max_order: usize,
    /// Half-width of each search window as a fraction of τ.
    pub window_frac: f64,
    /// Echoes whose peak falls below `noise_floor_rel` × (largest |α|²
    /// outside the pulse/guard zones) truncate the report.
    pub noise_floor_rel: f64,
    /// Dead time after each pulse edge excluded from windows; `None` selects
    /// 5/κ when κ is known from the trajectory meta, otherwise 0.
    pub ring_down_guard: Option<f64>,
}

impl Default for EchoDetectionSettings {
    fn default() -> Self {
        EchoDetectionSettings {
            max_order: 6,
            window_frac: 0.45,
            noise_floor_rel: 1e-6,
            ring_down_guard: None,
        }
    }
}

/// One detected echo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    /// Echo order k; the echo at t ≈ t_ref + (k+1)τ.
    pub order: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Time of the |α|² maximum inside the window.
    pub t_peak: f64,
    /// Peak |α|².
    pub peak: f64,
    /// Emitted photon number κ·∫|α|² dt over the window.
    pub a_echo: f64,
}

/// Exponential decay fit y = a·e^{−b·t}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub a: f64,
    /// Decay rate (rad/s when t is in seconds).
    pub b: f64,
    /// RMS residual in log space.
    pub rms_residual: f64,
}

/// Echo-train report: detected windows, integrated photon numbers and the
/// decay fit against echo time t_k = (k+1)τ. `decay_per_echo` is the
/// per-order factor e^{−bτ} for comparison with order-based fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoReport {
    pub tau: f64,
    pub echoes: Vec<Echo>,
    pub fit: Option<ExpFit>,
    pub decay_per_echo: Option<f64>,
}

/// Power-law fit y = a·N^b with the sample points retained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    pub rms_residual: f64,
    pub points: Vec<(f64, f64)>,
}

/// Ordinary least squares on (x, y); returns (slope, intercept).
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit("need at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate abscissa".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Least-squares fit of y = a·e^{−b·t} on (t, ln y). All amplitudes must be
/// positive. The fitted b is invariant under uniform scaling of the
/// amplitudes.
pub fn fit_exponential(points: &[(f64, f64)]) -> Result<ExpFit> {
    if points.len() < 2 {
        return Err(Error::Fit("need at least two points".into()));
    }
    if let Some(&(t, y)) = points.iter().find(|&&(_, y)| !(y > 0.0)) {
        return Err(Error::Fit(format!("non-positive amplitude {y} at t = {t}")));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let lny: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = linear_fit(&x, &lny)?;
    let rms = (x
        .iter()
        .zip(&lny)
        .map(|(&xi, &yi)| {
            let r = yi - (intercept + slope * xi);
            r * r
        })
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    Ok(ExpFit {
        a: intercept.exp(),
        b: -slope,
        rms_residual: rms,
    })
}

/// Least-squares fit of y = a·N^b on (ln N, ln y). Needs at least three
/// positive points.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::Fit("need at least three points".into()));
    }
    if points.iter().any(|&(n, y)| !(n > 0.0) || !(y > 0.0)) {
        return Err(Error::Fit("power-law fit requires positive inputs".into()));
    }
    let lnx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let lny: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = linear_fit(&lnx, &lny)?;
    let rms = (lnx
        .iter()
        .zip(&lny)
        .map(|(&xi, &yi)| {
            let r = yi - (intercept + slope * xi);
            r * r
        })
        .sum::<f64>()
        / lnx.len() as f64)
        .sqrt();
    Ok(ScalingFit {
        a: intercept.exp(),
        b: slope,
        rms_residual: rms,
        points: points.to_vec(),
    })
}

/// κ·∫|α|² dt over [t_lo, t_hi] by the trapezoidal rule on the recorded
/// samples, with linear interpolation at the window edges so the result is
/// additive over window splits.
pub fn integrate_echo(traj: &Trajectory, t_lo: f64, t_hi: f64, kappa: f64) -> Result<f64> {
    traj.validate()?;
    if !(t_hi > t_lo) {
        return Err(Error::Analysis(format!(
            "empty window [{t_lo}, {t_hi}]"
        )));
    }
    let (t0, t1) = (traj.times[0], *traj.times.last().unwrap());
    if t_lo < t0 - 1e-15 || t_hi > t1 + 1e-15 {
        return Err(Error::Analysis(format!(
            "window [{t_lo}, {t_hi}] outside data range [{t0}, {t1}]"
        )));
    }
    let value_at = |t: f64| -> f64 {
        match traj.times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(i) => traj.photon_number[i],
            Err(i) => {
                let (ia, ib) = (i - 1, i);
                let w = (t - traj.times[ia]) / (traj.times[ib] - traj.times[ia]);
                traj.photon_number[ia] * (1.0 - w) + traj.photon_number[ib] * w
            }
        }
    };
    let mut acc = 0.0;
    let mut prev_t = t_lo.max(t0);
    let mut prev_v = value_at(prev_t);
    let hi = t_hi.min(t1);
    for (&t, &v) in traj.times.iter().zip(&traj.photon_number) {
        if t <= prev_t {
            continue;
        }
        if t >= hi {
            break;
        }
        acc += (v + prev_v) * (t - prev_t) / 2.0;
        prev_t = t;
        prev_v = v;
    }
    let v_hi = value_at(hi);
    acc += (v_hi + prev_v) * (hi - prev_t) / 2.0;
    Ok(kappa * acc)
}

/// Exclusion zones around pulses: the pulse interval plus a ring-down guard
/// after the trailing edge.
fn pulse_zones(seq: &PulseSequence, guard: f64) -> Vec<(f64, f64)> {
    seq.pulses
        .iter()
        .map(|p| (p.t_start, p.t_end() + guard))
        .collect()
}

/// Locate echoes in a photon-number trajectory.
///
/// Window k is centred on t_ref + (k+1)τ, where t_ref is the start of
/// pulse 1, with half-width `window_frac`·τ, clipped against pulse intervals
/// and the ring-down guard. The report truncates at the first echo whose peak
/// drops below the noise floor. `kappa` is used for A_echo and the default
/// guard (5/κ).
pub fn detect_echoes(
    traj: &Trajectory,
    seq: &PulseSequence,
    tau: f64,
    kappa: f64,
    settings: &EchoDetectionSettings,
) -> Result<EchoReport> {
    traj.validate()?;
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!("tau = {tau} must be > 0")));
    }
    if seq.pulses.len() < 2 {
        return Err(Error::Analysis(
            "echo analysis requires at least 2 pulses (Hahn mode)".into(),
        ));
    }
    if !(settings.window_frac > 0.0 && settings.window_frac < 0.5) {
        return Err(Error::InvalidParam(format!(
            "window_frac = {} must lie in (0, 0.5)",
            settings.window_frac
        )));
    }
    let t_ref = seq.pulses[0].t_start;
    let t_last = *traj.times.last().unwrap();
    if t_last < t_ref + (settings.max_order + 1) as f64 * tau {
        return Err(Error::Analysis(format!(
            "trajectory ends at {t_last}, too short for {} echoes of spacing {tau}",
            settings.max_order
        )));
    }
    let guard = settings
        .ring_down_guard
        .unwrap_or(if kappa > 0.0 { 5.0 / kappa } else { 0.0 });
    let zones = pulse_zones(seq, guard);

    // Global maximum outside the drive/guard zones sets the noise floor; the
    // driven intervals would otherwise dominate it.
    let mut global_max = 0.0f64;
    for (&t, &n) in traj.times.iter().zip(&traj.photon_number) {
        if zones.iter().any(|&(a, b)| t >= a && t <= b) {
            continue;
        }
        if n > global_max {
            global_max = n;
        }
    }
    if global_max == 0.0 {
        // no signal anywhere outside the drive windows
        return Ok(EchoReport {
            tau,
            echoes: Vec::new(),
            fit: None,
            decay_per_echo: None,
        });
    }
    let floor = settings.noise_floor_rel * global_max;

    let mut echoes = Vec::new();
    for order in 1..=settings.max_order {
        let center = t_ref + (order + 1) as f64 * tau;
        let mut lo = center - settings.window_frac * tau;
        let mut hi = center + settings.window_frac * tau;
        for &(za, zb) in &zones {
            let covers_lo = lo >= za && lo <= zb;
            let covers_hi = hi >= za && hi <= zb;
            if covers_lo && covers_hi {
                return Err(Error::Analysis(format!(
                    "echo-{order} window is entirely inside a pulse zone"
                )));
            }
            if za > lo && zb < hi {
                return Err(Error::Analysis(format!(
                    "pulse zone [{za}, {zb}] splits the echo-{order} window"
                )));
            }
            if covers_lo {
                lo = zb;
            }
            if covers_hi {
                hi = za;
            }
        }
        lo = lo.max(traj.times[0]);
        hi = hi.min(t_last);
        if !(hi > lo) {
            return Err(Error::Analysis(format!(
                "echo-{order} window empty after clipping"
            )));
        }
        let idx = traj
            .argmax_photon_in(lo, hi)
            .ok_or_else(|| Error::Analysis(format!("no samples in echo-{order} window")))?;
        let peak = traj.photon_number[idx];
        if peak < floor {
            break;
        }
        let a_echo = integrate_echo(traj, lo, hi, kappa)?;
        echoes.push(Echo {
            order,
            t_lo: lo,
            t_hi: hi,
            t_peak: traj.times[idx],
            peak,
            a_echo,
        });
    }

    let fit = if echoes.len() >= 2 {
        let pts: Vec<(f64, f64)> = echoes
            .iter()
            .map(|e| ((e.order + 1) as f64 * tau, e.a_echo))
            .collect();
        fit_exponential(&pts).ok()
    } else {
        None
    };
    let decay_per_echo = fit.as_ref().map(|f| (-f.b * tau).exp());
    Ok(EchoReport {
        tau,
        echoes,
        fit,
        decay_per_echo,
    })
}

impl EchoReport {
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// Rows of (order, t_peak, A_echo) for the CSV table.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "order,t_peak,a_echo,peak")?;
        for e in &self.echoes {
            writeln!(w, "{},{},{},{}", e.order, e.t_peak, e.a_echo, e.peak)?;
        }
        Ok(())
    }
}
