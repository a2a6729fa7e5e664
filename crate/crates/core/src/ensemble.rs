//! Discretisation of the inhomogeneous line into weighted frequency classes.
//!
//! A `SpinEnsemble` carries `N_k` classes, each with a detuning Δ_k relative
//! to the drive, a coupling g_k and a statistical weight w_k (number of
//! physical spins in the class). Random sampling uses a seeded ChaCha8
//! generator so that identical `(params, n_k, seed)` reproduce the ensemble
//! byte for byte on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution as RandDistribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Distribution, PhysicalParams};
use crate::reduction::pairwise_sum;

/// One frequency class: all spins sharing a detuning.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SpinClass {
    /// Detuning Δ_k = δ_a^k − δ_c (rad/s).
    pub detuning: f64,
    /// Coupling g_k (rad/s).
    pub coupling: f64,
    /// Number of physical spins in this class (dimensionless).
    pub weight: f64,
}

/// A discretised inhomogeneous ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinEnsemble {
    pub classes: Vec<SpinClass>,
    /// Seed used to generate the sample; 0 for deterministic grids.
    pub seed: u64,
}

impl SpinEnsemble {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Σ_k w_k, summed pairwise for reproducibility.
    pub fn total_weight(&self) -> f64 {
        let w: Vec<f64> = self.classes.iter().map(|c| c.weight).collect();
        pairwise_sum(&w)
    }

    pub fn max_abs_detuning(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.detuning.abs())
            .fold(0.0, f64::max)
    }

    /// Checks the weight-conservation invariant against `n_spins`.
    pub fn validate(&self, n_spins: f64) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidParam("ensemble has no classes".into()));
        }
        let total = self.total_weight();
        if ((total - n_spins) / n_spins).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "ensemble weights sum to {total}, expected {n_spins}"
            )));
        }
        Ok(())
    }
}

/// Draw `n_k` detunings i.i.d. from the configured distribution (centred at 0,
/// FWHM = `params.inhomogeneous_fwhm`). Weights are uniform `N / n_k`; the
/// inhomogeneity is carried entirely by the sampled detunings. Couplings are
/// homogeneous `g_single`.
pub fn sample_ensemble(params: &PhysicalParams, n_k: usize, seed: u64) -> Result<SpinEnsemble> {
    params.validate()?;
    if n_k == 0 {
        return Err(Error::InvalidParam("n_k must be >= 1".into()));
    }
    let weight = params.n_spins / n_k as f64;
    let g = params.g_single;

    let detunings: Vec<f64> = if params.inhomogeneous_fwhm == 0.0 {
        vec![0.0; n_k]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match params.distribution {
            Distribution::Gaussian => {
                let sigma = params.gaussian_sigma();
                let normal = Normal::new(0.0, sigma)
                    .map_err(|e| Error::InvalidParam(format!("gaussian: {e}")))?;
                (0..n_k).map(|_| normal.sample(&mut rng)).collect()
            }
            Distribution::Lorentzian => {
                let scale = params.inhomogeneous_fwhm / 2.0;
                let cauchy = Cauchy::new(0.0, scale)
                    .map_err(|e| Error::InvalidParam(format!("lorentzian: {e}")))?;
                (0..n_k).map(|_| cauchy.sample(&mut rng)).collect()
            }
        }
    };

    let classes = detunings
        .into_iter()
        .map(|d| SpinClass {
            detuning: d,
            coupling: g,
            weight,
        })
        .collect();
    Ok(SpinEnsemble { classes, seed })
}

/// Deterministic alternative to [`sample_ensemble`] for convergence studies:
/// detunings on a uniform grid over [−span, +span], weights proportional to
/// the distribution density and normalised so that Σ w_k = N.
pub fn grid_ensemble(params: &PhysicalParams, n_k: usize, span: f64) -> Result<SpinEnsemble> {
    params.validate()?;
    if n_k == 0 {
        return Err(Error::InvalidParam("n_k must be >= 1".into()));
    }
    if !(span > 0.0) {
        return Err(Error::InvalidParam(format!("span = {span} must be > 0")));
    }
    let g = params.g_single;
    if n_k == 1 {
        return Ok(SpinEnsemble {
            classes: vec![SpinClass {
                detuning: 0.0,
                coupling: g,
                weight: params.n_spins,
            }],
            seed: 0,
        });
    }
    if params.inhomogeneous_fwhm == 0.0 {
        return Err(Error::InvalidParam(
            "grid_ensemble with n_k > 1 requires a positive FWHM".into(),
        ));
    }

    let step = 2.0 * span / (n_k - 1) as f64;
    let detunings: Vec<f64> = (0..n_k).map(|k| -span + k as f64 * step).collect();
    let density: Vec<f64> = match params.distribution {
        Distribution::Gaussian => {
            let sigma = params.gaussian_sigma();
            detunings
                .iter()
                .map(|&d| (-d * d / (2.0 * sigma * sigma)).exp())
                .collect()
        }
        Distribution::Lorentzian => {
            let hwhm = params.inhomogeneous_fwhm / 2.0;
            detunings
                .iter()
                .map(|&d| hwhm / (d * d + hwhm * hwhm))
                .collect()
        }
    };
    let norm = pairwise_sum(&density);
    if !(norm > 0.0) {
        return Err(Error::InvalidParam(
            "distribution density vanishes on the grid".into(),
        ));
    }
    let scale = params.n_spins / norm;
    let classes = detunings
        .iter()
        .zip(&density)
        .map(|(&d, &f)| SpinClass {
            detuning: d,
            coupling: g,
            weight: f * scale,
        })
        .collect();
    Ok(SpinEnsemble { classes, seed: 0 })
}

/// Flat JSON document for reproducibility archives.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleDoc {
    pub detunings: Vec<f64>,
    pub weights: Vec<f64>,
    pub couplings: Vec<f64>,
    pub seed: u64,
    pub params: PhysicalParams,
}

impl EnsembleDoc {
    pub fn new(ensemble: &SpinEnsemble, params: &PhysicalParams) -> Self {
        EnsembleDoc {
            detunings: ensemble.classes.iter().map(|c| c.detuning).collect(),
            weights: ensemble.classes.iter().map(|c| c.weight).collect(),
            couplings: ensemble.classes.iter().map(|c| c.coupling).collect(),
            seed: ensemble.seed,
            params: *params,
        }
    }

    pub fn into_ensemble(self) -> Result<SpinEnsemble> {
        if self.detunings.len() != self.weights.len()
            || self.detunings.len() != self.couplings.len()
        {
            return Err(Error::Parse("ensemble arrays have unequal lengths".into()));
        }
        let classes = self
            .detunings
            .iter()
            .zip(&self.couplings)
            .zip(&self.weights)
            .map(|((&detuning, &coupling), &weight)| SpinClass {
                detuning,
                coupling,
                weight,
            })
            .collect();
        Ok(SpinEnsemble {
            classes,
            seed: self.seed,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::from_hz;

    fn base_params() -> PhysicalParams {
        PhysicalParams {
            kappa: from_hz(150e3),
            gamma: 0.0,
            gamma_deph: 0.0,
            g_single: from_hz(8.0),
            n_spins: 1e10,
            delta_c: 0.0,
            inhomogeneous_fwhm: from_hz(4.0e6),
            distribution: Distribution::Gaussian,
        }
    }

    #[test]
    fn degenerate_distribution_gives_zero_detunings() {
        let mut p = base_params();
        p.inhomogeneous_fwhm = 0.0;
        p.n_spins = 10.0;
        let e = sample_ensemble(&p, 5, 1234).unwrap();
        assert_eq!(e.len(), 5);
        for c in &e.classes {
            assert_eq!(c.detuning, 0.0);
            assert_eq!(c.weight, 2.0);
        }
    }

    #[test]
    fn sample_std_matches_fwhm() {
        // Sample std within 1% of FWHM / 2.3548 (averaged over seeds).
        let p = base_params();
        let sigma_expect = p.inhomogeneous_fwhm / (8.0f64 * std::f64::consts::LN_2).sqrt();
        let mut acc = 0.0;
        let n_seeds = 4;
        for seed in 0..n_seeds {
            let e = sample_ensemble(&p, 100_000, seed).unwrap();
            let var: f64 = e.classes.iter().map(|c| c.detuning * c.detuning).sum::<f64>()
                / e.len() as f64;
            acc += var.sqrt();
        }
        let sigma_obs = acc / n_seeds as f64;
        assert!(
            (sigma_obs / sigma_expect - 1.0).abs() < 0.01,
            "observed sigma {sigma_obs}, expected {sigma_expect}"
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = base_params();
        let a = sample_ensemble(&p, 1000, 7).unwrap();
        let b = sample_ensemble(&p, 1000, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_ensemble(&p, 1000, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_weight_conservation() {
        let p = base_params();
        for n_k in [1usize, 3, 1000, 4097] {
            let e = sample_ensemble(&p, n_k, 3).unwrap();
            e.validate(p.n_spins).unwrap();
        }
        assert!(sample_ensemble(&p, 0, 1).is_err());
    }

    #[test]
    fn lorentzian_sampling_runs() {
        let mut p = base_params();
        p.distribution = Distribution::Lorentzian;
        let e = sample_ensemble(&p, 10_000, 11).unwrap();
        e.validate(p.n_spins).unwrap();
        // Heavy tails: at least one sample well beyond the FWHM.
        assert!(e.max_abs_detuning() > p.inhomogeneous_fwhm);
    }

    #[test]
    fn grid_single_class() {
        let p = base_params();
        let e = grid_ensemble(&p, 1, 1.0).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.classes[0].detuning, 0.0);
        assert_eq!(e.classes[0].weight, p.n_spins);
    }

    #[test]
    fn grid_normalization_and_density_ratio() {
        let p = base_params();
        let sigma = p.gaussian_sigma();
        let e = grid_ensemble(&p, 10_001, 4.0 * sigma).unwrap();
        e.validate(p.n_spins).unwrap();
        // sigma sits exactly on the grid: step = 8*sigma/10000, so sigma = 1250 steps.
        let mid = 5000;
        let at_sigma = mid + 1250;
        assert!((e.classes[at_sigma].detuning - sigma).abs() < 1e-6 * sigma);
        let ratio = e.classes[at_sigma].weight / e.classes[mid].weight;
        assert!(
            (ratio - (-0.5f64).exp()).abs() < 1e-6,
            "w(sigma)/w(0) = {ratio}"
        );
    }

    #[test]
    fn grid_half_maximum_brackets_fwhm() {
        let p = base_params();
        let e = grid_ensemble(&p, 4001, 2.0 * p.inhomogeneous_fwhm).unwrap();
        let w_max = e.classes.iter().map(|c| c.weight).fold(0.0, f64::max);
        let step = e.classes[1].detuning - e.classes[0].detuning;
        // Positive-side half-maximum crossing.
        let cross = e
            .classes
            .windows(2)
            .find(|w| w[0].detuning >= 0.0 && w[0].weight >= w_max / 2.0 && w[1].weight < w_max / 2.0)
            .expect("no half-maximum crossing");
        let half_point = cross[0].detuning;
        assert!((half_point - p.inhomogeneous_fwhm / 2.0).abs() <= step);
    }

    #[test]
    fn grid_rejects_bad_span() {
        let p = base_params();
        assert!(grid_ensemble(&p, 100, 0.0).is_err());
        assert!(grid_ensemble(&p, 100, -1.0).is_err());
    }

    #[test]
    fn ensemble_doc_round_trip() {
        let p = base_params();
        let e = sample_ensemble(&p, 257, 99).unwrap();
        let doc = EnsembleDoc::new(&e, &p);
        let text = serde_json::to_string(&doc).unwrap();
        let back: EnsembleDoc = serde_json::from_str(&text).unwrap();
        let e2 = back.into_ensemble().unwrap();
        assert_eq!(e, e2);
    }
}
