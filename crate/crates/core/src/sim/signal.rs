//! Scalar exogenous signals: reference inputs, disturbances, measurement noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Guards the zero-order-hold sample index against `k * h * rate` landing a
/// hair below an integer.
const ZOH_EPS: f64 = 1e-9;

/// A deterministic scalar signal of time.
///
/// `SaturatedGaussian` draws sample `k` from a ChaCha8 generator seeded with
/// `splitmix64(seed ^ splitmix64(k))`, so any sample can be evaluated without
/// replaying earlier ones and runs are reproducible bit for bit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude (1 - exp(-(t - time)/tau))` for `t >= time`, zero before.
    FilteredStep {
        time: f64,
        amplitude: f64,
        #[serde(default = "default_filter_tau")]
        tau: f64,
    },
    Sine {
        amplitude: f64,
        /// Angular frequency in rad/s.
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// I.i.d. Gaussian samples held for `1/rate_hz` seconds, clipped to
    /// `[-saturation, saturation]`, zero before `start`.
    SaturatedGaussian {
        seed: u64,
        rate_hz: f64,
        variance: f64,
        saturation: f64,
        #[serde(default)]
        start: f64,
    },
    Sum {
        terms: Vec<Signal>,
    },
}

fn default_filter_tau() -> f64 {
    1.0
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian_sample(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)));
    StandardNormal.sample(&mut rng)
}

/// Saturated zero-order-hold Gaussian generator.
pub fn gen_saturated_gaussian(seed: u64, rate_hz: f64, variance: f64, sat_bound: f64) -> Signal {
    Signal::SaturatedGaussian {
        seed,
        rate_hz,
        variance,
        saturation: sat_bound,
        start: 0.0,
    }
}

pub fn gen_filtered_step(step_time: f64, amplitude: f64, filter_time_constant: f64) -> Signal {
    Signal::FilteredStep {
        time: step_time,
        amplitude,
        tau: filter_time_constant,
    }
}

impl Signal {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Signal::FilteredStep { tau, .. } if !(*tau > 0.0) => {
                Err(format!("filtered step time constant must be positive, got {tau}"))
            }
            Signal::SaturatedGaussian {
                rate_hz,
                variance,
                saturation,
                ..
            } => {
                if !(*rate_hz > 0.0) || !(*saturation > 0.0) || !(*variance >= 0.0) {
                    Err(format!(
                        "gaussian signal needs rate_hz > 0, saturation > 0, variance >= 0 \
                         (rate_hz={rate_hz}, saturation={saturation}, variance={variance})"
                    ))
                } else {
                    Ok(())
                }
            }
            Signal::Sum { terms } => terms.iter().try_for_each(Signal::validate),
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Signal::Zero => 0.0,
            Signal::Constant { value } => *value,
            Signal::FilteredStep {
                time,
                amplitude,
                tau,
            } => {
                if t < *time {
                    0.0
                } else {
                    amplitude * (1.0 - (-(t - time) / tau).exp())
                }
            }
            Signal::Sine {
                amplitude,
                omega,
                phase,
            } => amplitude * (omega * t + phase).sin(),
            Signal::SaturatedGaussian {
                seed,
                rate_hz,
                variance,
                saturation,
                start,
            } => {
                if t < *start {
                    return 0.0;
                }
                let index = ((t - start) * rate_hz + ZOH_EPS).floor() as u64;
                let raw = gaussian_sample(*seed, index) * variance.sqrt();
                raw.clamp(-saturation, *saturation)
            }
            Signal::Sum { terms } => terms.iter().map(|s| s.value(t)).sum(),
        }
    }

    /// Time derivative; zero-order-hold signals report zero between jumps.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Signal::Zero | Signal::Constant { .. } | Signal::SaturatedGaussian { .. } => 0.0,
            Signal::FilteredStep {
                time,
                amplitude,
                tau,
            } => {
                if t < *time {
                    0.0
                } else {
                    amplitude / tau * (-(t - time) / tau).exp()
                }
            }
            Signal::Sine {
                amplitude,
                omega,
                phase,
            } => amplitude * omega * (omega * t + phase).cos(),
            Signal::Sum { terms } => terms.iter().map(|s| s.derivative(t)).sum(),
        }
    }

    /// A bound `r0 >= sup |s(t)|`.
    pub fn bound(&self) -> f64 {
        match self {
            Signal::Zero => 0.0,
            Signal::Constant { value } => value.abs(),
            Signal::FilteredStep { amplitude, .. } => amplitude.abs(),
            Signal::Sine { amplitude, .. } => amplitude.abs(),
            Signal::SaturatedGaussian { saturation, .. } => *saturation,
            Signal::Sum { terms } => terms.iter().map(Signal::bound).sum(),
        }
    }

    /// A bound `r1 >= sup |ds/dt|`; infinite for signals with jumps.
    pub fn rate_bound(&self) -> f64 {
        match self {
            Signal::Zero | Signal::Constant { .. } => 0.0,
            Signal::FilteredStep { amplitude, tau, .. } => amplitude.abs() / tau,
            Signal::Sine {
                amplitude, omega, ..
            } => (amplitude * omega).abs(),
            Signal::SaturatedGaussian { .. } => f64::INFINITY,
            Signal::Sum { terms } => terms.iter().map(Signal::rate_bound).sum(),
        }
    }

    /// Earliest time at which the signal can be nonzero.
    pub fn onset(&self) -> f64 {
        match self {
            Signal::Zero => f64::INFINITY,
            Signal::Constant { value } if *value == 0.0 => f64::INFINITY,
            Signal::Constant { .. } | Signal::Sine { .. } => f64::NEG_INFINITY,
            Signal::FilteredStep { time, amplitude, .. } => {
                if *amplitude == 0.0 {
                    f64::INFINITY
                } else {
                    *time
                }
            }
            Signal::SaturatedGaussian { start, .. } => *start,
            Signal::Sum { terms } => terms.iter().map(Signal::onset).fold(f64::INFINITY, f64::min),
        }
    }

    pub fn is_smooth(&self) -> bool {
        match self {
            Signal::SaturatedGaussian { .. } => false,
            Signal::Sum { terms } => terms.iter().all(Signal::is_smooth),
            _ => true,
        }
    }

    /// Replaces the seed of every stochastic component with one derived from
    /// `seed` and the component's position.
    pub fn reseed(&mut self, seed: u64) {
        let mut counter = 0u64;
        self.reseed_inner(seed, &mut counter);
    }

    fn reseed_inner(&mut self, base: u64, counter: &mut u64) {
        match self {
            Signal::SaturatedGaussian { seed, .. } => {
                *seed = base.wrapping_add(*counter);
                *counter += 1;
            }
            Signal::Sum { terms } => terms.iter_mut().for_each(|s| s.reseed_inner(base, counter)),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn filtered_step_shape() {
        let s = gen_filtered_step(10.0, 2.0, 1.0);
        assert_eq!(s.value(9.999), 0.0);
        assert_abs_diff_eq!(s.value(11.0), 2.0 * (1.0 - (-1.0_f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(s.value(1e3), 2.0, epsilon = 1e-12);
        assert_eq!(s.bound(), 2.0);
        assert_eq!(s.rate_bound(), 2.0);
        assert_abs_diff_eq!(s.derivative(10.0), 2.0);
    }

    #[test]
    fn gaussian_is_bounded_and_held() {
        for seed in 0..20u64 {
            let d = Signal::SaturatedGaussian {
                seed,
                rate_hz: 10.0,
                variance: 1.0,
                saturation: 0.2,
                start: 0.0,
            };
            let n = gen_saturated_gaussian(seed, 100.0, 1.0, 0.1);
            for k in 0..5000 {
                let t = k as f64 * 1e-3;
                assert!(d.value(t).abs() <= 0.2);
                assert!(n.value(t).abs() <= 0.1);
            }
            // held constant within one sample period
            assert_eq!(d.value(0.31), d.value(0.399));
            assert_eq!(n.value(0.5), n.value(0.5));
        }
    }

    #[test]
    fn gaussian_switches_on_grid_points() {
        let n = gen_saturated_gaussian(7, 100.0, 1.0, 10.0);
        // sample index at t = k h must not fall one period behind
        let t = 10.0 * 1e-3;
        assert_eq!(n.value(t), n.value(0.0105));
        assert_ne!(n.value(0.0099), n.value(t));
    }

    #[test]
    fn gaussian_sample_statistics() {
        let n = gen_saturated_gaussian(42, 1.0, 1.0, 100.0);
        let samples: Vec<f64> = (0..20000).map(|k| n.value(k as f64)).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn onset_of_composites() {
        let s = Signal::Sum {
            terms: vec![gen_filtered_step(10.0, 1.0, 1.0), gen_filtered_step(20.0, 1.0, 1.0)],
        };
        assert_eq!(s.onset(), 10.0);
        assert_eq!(Signal::Zero.onset(), f64::INFINITY);
        assert_eq!(s.bound(), 2.0);
    }
}
