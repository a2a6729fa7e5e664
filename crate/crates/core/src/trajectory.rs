//! Recorded time series of a simulation run.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{IntegratorSettings, RecordSettings};
use crate::params::PhysicalParams;
use crate::pulse::PulseSequence;

/// Bloch-component series for one recorded frequency class, under the
/// convention ⟨σ_x⟩ = 2 Re⟨σ_−⟩, ⟨σ_y⟩ = −2 Im⟨σ_−⟩.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochRecord {
    pub class_index: usize,
    pub detuning: f64,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
    pub sz: Vec<f64>,
}

/// Provenance of a trajectory: everything needed to reproduce the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct RunMeta {
    pub params: Option<PhysicalParams>,
    pub ensemble_seed: Option<u64>,
    pub n_classes: Option<usize>,
    pub sequence: Option<PulseSequence>,
    pub integrator: Option<IntegratorSettings>,
    pub record: Option<RecordSettings>,
    /// Number of realizations averaged into this trajectory (1 = single run).
    pub realizations: Option<usize>,
}

/// Sampled cavity field and optional per-class Bloch components.
///
/// For averaged trajectories `photon_number` holds the pointwise mean of
/// |α|² across realizations while `alpha_re`/`alpha_im` hold the complex
/// mean, so `photon_number` is generally not `alpha_re² + alpha_im²` there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Sample instants (s), strictly increasing.
    pub times: Vec<f64>,
    /// |α|² at each sample.
    pub photon_number: Vec<f64>,
    pub alpha_re: Vec<f64>,
    pub alpha_im: Vec<f64>,
    pub bloch: Vec<BlochRecord>,
    pub meta: RunMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_photon_number(&self) -> f64 {
        self.photon_number.iter().copied().fold(0.0, f64::max)
    }

    /// Index of the maximum of |α|² within [t_lo, t_hi].
    pub fn argmax_photon_in(&self, t_lo: f64, t_hi: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, (&t, &n)) in self.times.iter().zip(&self.photon_number).enumerate() {
            if t < t_lo || t > t_hi {
                continue;
            }
            if best.map_or(true, |(_, b)| n > b) {
                best = Some((i, n));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 {
            return Err(Error::Analysis("empty trajectory".into()));
        }
        if self.photon_number.len() != n || self.alpha_re.len() != n || self.alpha_im.len() != n {
            return Err(Error::Analysis("trajectory arrays have unequal lengths".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Analysis("times not strictly increasing".into()));
        }
        for b in &self.bloch {
            if b.sx.len() != n || b.sy.len() != n || b.sz.len() != n {
                return Err(Error::Analysis("bloch arrays have unequal lengths".into()));
            }
        }
        Ok(())
    }

    /// Write the field series as CSV with header `t,re_alpha,im_alpha,n_photons`.
    /// The default float formatting is shortest-round-trip, so the file is
    /// lossless.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,re_alpha,im_alpha,n_photons")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.times[i], self.alpha_re[i], self.alpha_im[i], self.photon_number[i]
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Write one `t,sx,sy,sz` CSV per recorded class into `dir`, named
    /// `bloch_class<k>.csv`.
    pub fn save_bloch_csvs(&self, dir: &Path) -> Result<()> {
        for b in &self.bloch {
            let path = dir.join(format!("bloch_class{}.csv", b.class_index));
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(w, "t,sx,sy,sz")?;
            for i in 0..self.len() {
                writeln!(w, "{},{},{},{}", self.times[i], b.sx[i], b.sy[i], b.sz[i])?;
            }
        }
        Ok(())
    }

    /// Read a trajectory written by [`Trajectory::write_csv`]. Bloch records
    /// and meta are not part of the CSV and come back empty.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty csv".into()))??;
        if header.trim() != "t,re_alpha,im_alpha,n_photons" {
            return Err(Error::Parse(format!("unexpected csv header: {header}")));
        }
        let mut times = Vec::new();
        let mut alpha_re = Vec::new();
        let mut alpha_im = Vec::new();
        let mut photon_number = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = || -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: missing field", ln + 2)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))
            };
            times.push(next()?);
            alpha_re.push(next()?);
            alpha_im.push(next()?);
            photon_number.push(next()?);
        }
        let traj = Trajectory {
            times,
            photon_number,
            alpha_re,
            alpha_im,
            bloch: Vec::new(),
            meta: RunMeta::default(),
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Trajectory {
        Trajectory {
            times: vec![0.0, 1e-8, 2.5e-8],
            photon_number: vec![0.0, 0.5, 0.25],
            alpha_re: vec![0.0, -0.5, 0.5],
            alpha_im: vec![0.0, 0.5, 1.0 / 3.0],
            bloch: Vec::new(),
            meta: RunMeta::default(),
        }
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let t = toy();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(t.times, back.times);
        assert_eq!(t.alpha_im, back.alpha_im);
        assert_eq!(t.photon_number, back.photon_number);
    }

    #[test]
    fn validation_catches_bad_shapes() {
        let mut t = toy();
        t.photon_number.pop();
        assert!(t.validate().is_err());
        let mut t = toy();
        t.times[2] = t.times[1];
        assert!(t.validate().is_err());
    }

    #[test]
    fn argmax_respects_window() {
        let t = toy();
        assert_eq!(t.argmax_photon_in(0.0, 3e-8), Some(1));
        assert_eq!(t.argmax_photon_in(1.5e-8, 3e-8), Some(2));
        assert_eq!(t.argmax_photon_in(5e-8, 6e-8), None);
    }
}
