//! Unit conventions.
//!
//! Every rate, coupling and detuning in this crate is an *angular* frequency
//! in rad/s. Literature values are usually quoted as "2π × f Hz"; convert them
//! with [`from_hz`]. Drive amplitudes quoted directly in rad/s need no
//! conversion. Times are seconds throughout.

pub use std::f64::consts::TAU;

/// Convert an ordinary frequency in Hz into an angular rate in rad/s
/// (i.e. "2π × f").
pub fn from_hz(f: f64) -> f64 {
    TAU * f
}

/// Express an angular rate in rad/s as an ordinary frequency in Hz.
pub fn to_hz(omega: f64) -> f64 {
    omega / TAU
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hz_round_trip() {
        let w = from_hz(4.0e6);
        assert_eq!(w, TAU * 4.0e6);
        assert_eq!(to_hz(w), 4.0e6);
    }
}
