//! Alphabet-level probability, entropy, energy, and Maxwell-Boltzmann
//! reference solving.
//!
//! Everything here operates on the one-dimensional amplitude alphabet of the
//! shaped constellation (e.g. `{1, 3}` for 16-QAM). The Maxwell-Boltzmann
//! distribution `p(x) ∝ exp(-ν·x²)` with entropy equal to the matcher rate is
//! the ideal shaping target; the gap between an actual matcher output and
//! that reference is reported as rate loss (bits/amplitude) and energy loss
//! (dB).

use thiserror::Error;

/// Probability mass below which two distributions are considered unnormalised.
const PROB_SUM_TOL: f64 = 1e-12;

/// Errors from alphabet-level operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapingError {
    #[error("alphabet levels must be strictly increasing odd integers >= 1, got {0:?}")]
    BadAlphabet(Vec<u16>),
    #[error("distribution has {probs} probabilities for {levels} levels")]
    LengthMismatch { probs: usize, levels: usize },
    #[error("probabilities must lie in [0,1] and sum to 1 within {PROB_SUM_TOL:e}, got sum {0}")]
    NotNormalized(f64),
    #[error("target entropy {target} outside admissible interval (0, {max}]")]
    EntropyOutOfRange { target: f64, max: f64 },
    #[error("energies must be positive, got {0}")]
    NonpositiveEnergy(f64),
}

/// Ordered set of odd positive amplitude levels, e.g. `{1, 3}` for the
/// one-dimensional half of 16-QAM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmplitudeAlphabet {
    levels: Vec<u16>,
}

impl AmplitudeAlphabet {
    pub fn new(levels: Vec<u16>) -> Result<Self, ShapingError> {
        let ok = !levels.is_empty()
            && levels.windows(2).all(|w| w[0] < w[1])
            && levels.iter().all(|&x| x >= 1 && x % 2 == 1);
        if !ok {
            return Err(ShapingError::BadAlphabet(levels));
        }
        Ok(Self { levels })
    }

    /// The `m1`-level PAM amplitude alphabet `{1, 3, …, 2·m1-1}`.
    pub fn pam(m1: u32) -> Self {
        Self {
            levels: (0..m1).map(|i| (2 * i + 1) as u16).collect(),
        }
    }

    pub fn levels(&self) -> &[u16] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Entropy of the uniform distribution over this alphabet, in bits.
    pub fn max_entropy_bits(&self) -> f64 {
        (self.levels.len() as f64).log2()
    }
}

/// A probability vector over an [`AmplitudeAlphabet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeDistribution {
    alphabet: AmplitudeAlphabet,
    probs: Vec<f64>,
}

impl AmplitudeDistribution {
    pub fn new(alphabet: AmplitudeAlphabet, probs: Vec<f64>) -> Result<Self, ShapingError> {
        if probs.len() != alphabet.len() {
            return Err(ShapingError::LengthMismatch {
                probs: probs.len(),
                levels: alphabet.len(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if !(sum - 1.0).abs().le(&PROB_SUM_TOL) || probs.iter().any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(ShapingError::NotNormalized(sum));
        }
        Ok(Self { alphabet, probs })
    }

    pub fn alphabet(&self) -> &AmplitudeAlphabet {
        &self.alphabet
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Maxwell-Boltzmann reference distribution `p(x) ∝ exp(-ν·x²)` solved for a
/// target entropy.
///
/// `ν` has no symbol in the source formulation; it is the exponent
/// coefficient of the family and is zero exactly at maximum entropy.
#[derive(Debug, Clone)]
pub struct MbReference {
    pub rate_parameter: f64,
    pub distribution: AmplitudeDistribution,
    pub mean_energy: f64,
    pub entropy: f64,
}

/// Shannon entropy in bits per amplitude, with the convention `0·log 0 = 0`.
pub fn entropy_bits(dist: &AmplitudeDistribution) -> f64 {
    dist.probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Mean energy `Σ p(x)·x²` in amplitude² units.
pub fn mean_energy(dist: &AmplitudeDistribution) -> f64 {
    dist.probs
        .iter()
        .zip(dist.alphabet.levels())
        .map(|(&p, &x)| p * (x as f64) * (x as f64))
        .sum()
}

fn mb_probs(alphabet: &AmplitudeAlphabet, nu: f64) -> Vec<f64> {
    // Shift by the lowest energy so the largest weight is exp(0).
    let e0 = (alphabet.levels()[0] as f64).powi(2);
    let weights: Vec<f64> = alphabet
        .levels()
        .iter()
        .map(|&x| (-nu * ((x as f64) * (x as f64) - e0)).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

fn mb_entropy(alphabet: &AmplitudeAlphabet, nu: f64) -> f64 {
    mb_probs(alphabet, nu)
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Solve for the Maxwell-Boltzmann distribution over `alphabet` with the
/// given entropy. Entropy is strictly decreasing in `ν`, so the root is
/// bisected on `ν ∈ [0, ν_hi]` with `ν_hi` doubled until it brackets.
pub fn solve_mb(
    alphabet: &AmplitudeAlphabet,
    target_entropy: f64,
) -> Result<MbReference, ShapingError> {
    let max = alphabet.max_entropy_bits();
    if !(target_entropy > 0.0 && target_entropy <= max) {
        return Err(ShapingError::EntropyOutOfRange {
            target: target_entropy,
            max,
        });
    }
    let nu = if target_entropy == max {
        0.0
    } else {
        let mut hi = 1.0f64;
        while mb_entropy(alphabet, hi) >= target_entropy {
            hi *= 2.0;
            if hi > 1e9 {
                break;
            }
        }
        let mut lo = 0.0f64;
        while hi - lo > 1e-12 * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if mb_entropy(alphabet, mid) > target_entropy {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let probs = mb_probs(alphabet, nu);
    let distribution = AmplitudeDistribution::new(alphabet.clone(), probs)?;
    Ok(MbReference {
        rate_parameter: nu,
        mean_energy: mean_energy(&distribution),
        entropy: entropy_bits(&distribution),
        distribution,
    })
}

/// Energy loss `10·log10(e_dm / e_mb)` in dB.
pub fn energy_loss_db(e_dm: f64, e_mb: f64) -> Result<f64, ShapingError> {
    if e_dm <= 0.0 {
        return Err(ShapingError::NonpositiveEnergy(e_dm));
    }
    if e_mb <= 0.0 {
        return Err(ShapingError::NonpositiveEnergy(e_mb));
    }
    Ok(10.0 * (e_dm / e_mb).log10())
}

/// Rate loss `H − R_DM` in bits per amplitude.
pub fn rate_loss(h: f64, r_dm: f64) -> f64 {
    h - r_dm
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn binary(p1: f64) -> AmplitudeDistribution {
        AmplitudeDistribution::new(AmplitudeAlphabet::pam(2), vec![p1, 1.0 - p1]).unwrap()
    }

    #[test]
    fn entropy_uniform_two_point() {
        assert_abs_diff_eq!(entropy_bits(&binary(0.5)), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn entropy_degenerate_is_zero() {
        assert_eq!(entropy_bits(&binary(1.0)), 0.0);
    }

    #[test]
    fn entropy_worked_value() {
        assert_abs_diff_eq!(entropy_bits(&binary(0.8125)), 0.69621, epsilon = 1e-5);
    }

    #[test]
    fn mean_energy_matches_closed_form() {
        assert_abs_diff_eq!(mean_energy(&binary(1.0)), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mean_energy(&binary(0.5)), 5.0, epsilon = 1e-15);
        // For {1,3}: E = 9 - 8 p(1).
        assert_abs_diff_eq!(mean_energy(&binary(0.8125)), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn solve_mb_max_entropy_is_uniform() {
        let mb = solve_mb(&AmplitudeAlphabet::pam(2), 1.0).unwrap();
        assert_eq!(mb.rate_parameter, 0.0);
        assert_abs_diff_eq!(mb.distribution.probs()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mb.mean_energy, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn solve_mb_half_rate() {
        let mb = solve_mb(&AmplitudeAlphabet::pam(2), 0.5).unwrap();
        assert_abs_diff_eq!(mb.distribution.probs()[0], 0.8900, epsilon = 1e-3);
        assert_abs_diff_eq!(mb.mean_energy, 1.880, epsilon = 1e-2);
    }

    #[test]
    fn solve_mb_three_quarter_rate() {
        let mb = solve_mb(&AmplitudeAlphabet::pam(2), 0.75).unwrap();
        assert_abs_diff_eq!(mb.distribution.probs()[0], 0.7855, epsilon = 1e-3);
        assert_abs_diff_eq!(mb.mean_energy, 2.716, epsilon = 1e-2);
    }

    #[test]
    fn solve_mb_rejects_out_of_range() {
        let a = AmplitudeAlphabet::pam(2);
        assert!(matches!(
            solve_mb(&a, 0.0),
            Err(ShapingError::EntropyOutOfRange { .. })
        ));
        assert!(matches!(
            solve_mb(&a, 1.0 + 1e-9),
            Err(ShapingError::EntropyOutOfRange { .. })
        ));
    }

    #[test]
    fn solve_mb_prefers_low_energy_branch() {
        // Of the two binary distributions with entropy h < 1, the MB one has
        // p(1) >= 0.5 and the smaller mean energy.
        for h in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let mb = solve_mb(&AmplitudeAlphabet::pam(2), h).unwrap();
            let p1 = mb.distribution.probs()[0];
            assert!(p1 >= 0.5, "h={h} gave p1={p1}");
            let mirrored = binary(1.0 - p1);
            assert!(mb.mean_energy < mean_energy(&mirrored));
        }
    }

    #[test]
    fn solve_mb_energy_monotone_in_entropy() {
        let a = AmplitudeAlphabet::pam(2);
        let mut prev = 0.0;
        for i in 1..=100 {
            let h = i as f64 / 100.0;
            let e = solve_mb(&a, h).unwrap().mean_energy;
            assert!(e >= prev - 1e-12, "h={h}: {e} < {prev}");
            prev = e;
        }
    }

    #[test]
    fn solve_mb_general_alphabet() {
        let a = AmplitudeAlphabet::pam(4); // {1,3,5,7}
        let mb = solve_mb(&a, 1.3).unwrap();
        assert_abs_diff_eq!(entropy_bits(&mb.distribution), 1.3, epsilon = 1e-9);
        // Probabilities non-increasing in amplitude.
        for w in mb.distribution.probs().windows(2) {
            assert!(w[0] >= w[1]);
        }
        // Form check: p(x) proportional to exp(-nu x^2).
        let nu = mb.rate_parameter;
        let p = mb.distribution.probs();
        for (i, &x) in a.levels().iter().enumerate() {
            let ratio = p[i] / p[0];
            let expect = (-nu * ((x as f64).powi(2) - 1.0)).exp();
            assert_abs_diff_eq!(ratio, expect, epsilon = 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn energy_loss_identity_and_worked_value() {
        assert_eq!(energy_loss_db(5.0, 5.0).unwrap(), 0.0);
        let mb = solve_mb(&AmplitudeAlphabet::pam(2), 0.5).unwrap();
        assert_abs_diff_eq!(
            energy_loss_db(2.5, mb.mean_energy).unwrap(),
            1.237,
            epsilon = 1e-2
        );
        // A lower DM energy than the reference is arithmetically permitted.
        assert!(energy_loss_db(1.0, 2.0).unwrap() < 0.0);
        assert!(energy_loss_db(0.0, 1.0).is_err());
        assert!(energy_loss_db(1.0, -2.0).is_err());
    }

    #[test]
    fn rate_loss_is_plain_difference() {
        assert_eq!(rate_loss(0.5, 0.5), 0.0);
        assert_abs_diff_eq!(rate_loss(0.69621, 0.5), 0.19621, epsilon = 1e-12);
        assert_abs_diff_eq!(rate_loss(0.553, 0.5), 0.053, epsilon = 1e-12);
    }

    #[test]
    fn alphabet_rejects_bad_levels() {
        assert!(AmplitudeAlphabet::new(vec![]).is_err());
        assert!(AmplitudeAlphabet::new(vec![2, 4]).is_err());
        assert!(AmplitudeAlphabet::new(vec![3, 1]).is_err());
        assert!(AmplitudeAlphabet::new(vec![1, 1]).is_err());
        assert!(AmplitudeAlphabet::new(vec![1, 3, 5]).is_ok());
    }

    #[test]
    fn distribution_rejects_unnormalized() {
        let a = AmplitudeAlphabet::pam(2);
        assert!(AmplitudeDistribution::new(a.clone(), vec![0.6, 0.6]).is_err());
        assert!(AmplitudeDistribution::new(a.clone(), vec![1.0]).is_err());
        assert!(AmplitudeDistribution::new(a, vec![-0.1, 1.1]).is_err());
    }

    proptest! {
        // solve_mb then entropy_bits round-trips within 1e-9.
        #[test]
        fn mb_round_trip(h in 1e-6f64..=1.0) {
            let mb = solve_mb(&AmplitudeAlphabet::pam(2), h).unwrap();
            prop_assert!((entropy_bits(&mb.distribution) - h).abs() <= 1e-9);
        }

        #[test]
        fn mb_round_trip_wide_alphabet(h in 1e-6f64..=2.0) {
            let mb = solve_mb(&AmplitudeAlphabet::pam(4), h).unwrap();
            prop_assert!((entropy_bits(&mb.distribution) - h).abs() <= 1e-9);
        }
    }
}
