use echotrain::ensemble::sample_ensemble;
use echotrain::meanfield::{simulate, IntegratorScheme, IntegratorSettings, RecordSettings};
use echotrain::params::{Distribution, PhysicalParams};
use echotrain::pulse::hahn_sequence;
use echotrain::units::from_hz;
use std::time::Instant;

fn main() {
    let tau = 60e-6;
    let params = PhysicalParams {
        kappa: from_hz(150e3), gamma: 0.0, gamma_deph: from_hz(0.5e3),
        g_single: from_hz(8.0), n_spins: 1e10, delta_c: 0.0,
        inhomogeneous_fwhm: from_hz(4e6), distribution: Distribution::Gaussian,
    };
    let seq = hahn_sequence(tau, 0.2e-6, 0.22e-6, 0.43e-6, 5e10, 0.0, 0.0, 260e-6).unwrap();
    let integ = IntegratorSettings { dt: 5e-9, scheme: IntegratorScheme::SplitStep, ..Default::default() };
    let rec = RecordSettings { stride: 20e-9, bloch_classes: vec![] };
    for n_k in [10_000usize] {
        let ens = sample_ensemble(&params, n_k, 7).unwrap();
        let t0 = Instant::now();
        let traj = simulate(&ens, &params, &seq, &integ, &rec).unwrap();
        println!("N_k={n_k}: {:?}", t0.elapsed());
        let bin = 4e-6;
        let nbins = (260e-6 / bin) as usize;
        let mut env = vec![0.0f64; nbins];
        for (&t, &n) in traj.times.iter().zip(&traj.photon_number) {
            let b = ((t / bin) as usize).min(nbins - 1);
            if n > env[b] { env[b] = n; }
        }
        for b in 0..nbins {
            let t = (b as f64 + 0.5) * bin * 1e6;
            let marker = if (t - 121.0).abs() < 2.0 || (t - 181.0).abs() < 2.0 || (t - 241.0).abs() < 2.0 { " <= expect echo" } else { "" };
            println!("t={t:5.0}us  max|a|^2={:.3e}{marker}", env[b]);
        }
    }
}
