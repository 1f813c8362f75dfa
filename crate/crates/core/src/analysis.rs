//! Exact output-distribution computation, loss metrics, and memory
//! accounting.
//!
//! The amplitude distribution of a built structure follows from two counting
//! rules: the conditional probability of symbol `x` given that LUT `y` was
//! selected is its occurrence count over the LUT's `N_l·2^{k_l}` slots, and
//! layer marginals chain top-down by total probability. Both are carried out
//! in exact rational arithmetic (counts over power-of-two-times-`N_l`
//! denominators), so the analytic distribution can be compared against the
//! exhaustive-encode oracle as a strict equality.

use crate::codec::{encode, CodecError};
use crate::shaping::{self, entropy_bits, solve_mb, AmplitudeDistribution, ShapingError};
use crate::structure::{energy_to_f64, CharacterizationVectors, HidmStructure};
use num_bigint::BigUint;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

/// Exhaustive-encode oracle cutoff.
const MAX_EXHAUSTIVE_BITS: u64 = 24;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("symbol or LUT index out of range at layer {layer}")]
    IndexOutOfRange { layer: usize },
    #[error("exhaustive mode needs k <= {MAX_EXHAUSTIVE_BITS}, structure has k = {0}")]
    ExhaustiveTooLarge(u64),
    #[error("sampled mode needs a positive sample count")]
    EmptySample,
    #[error("not a template structure: {0}")]
    NonTemplate(String),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Exact probability vector over one layer's (virtual) alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDistribution {
    layer: usize,
    probs: Vec<BigRational>,
}

impl LayerDistribution {
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn probs(&self) -> &[BigRational] {
        &self.probs
    }

    pub fn probs_f64(&self) -> Vec<f64> {
        self.probs.iter().map(rational_to_f64).collect()
    }
}

fn rational_to_f64(r: &BigRational) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}

/// Occurrences of symbol value `x` across LUT `D_y` of layer `l`, divided by
/// the LUT's `N_l·2^{k_l}` symbol slots. `x` is an amplitude value at layer 1
/// and a 1-based virtual index above; `y` is the 1-based LUT index.
pub fn conditional_prob(
    structure: &HidmStructure,
    layer: usize,
    x: u16,
    y: usize,
) -> Result<BigRational, AnalysisError> {
    let vectors = structure.vectors();
    if layer == 0 || layer > vectors.layer_count() {
        return Err(AnalysisError::IndexOutOfRange { layer });
    }
    if y == 0 || y > vectors.lut_counts()[layer - 1] as usize {
        return Err(AnalysisError::IndexOutOfRange { layer });
    }
    if structure.symbol_index(layer, x).is_none() {
        return Err(AnalysisError::IndexOutOfRange { layer });
    }
    let lut = &structure.layers()[layer - 1][y - 1];
    let count = lut
        .sequences()
        .iter()
        .flatten()
        .filter(|&&v| v == x)
        .count();
    let slots =
        vectors.block_lengths()[layer - 1] as u64 * (1u64 << vectors.input_bits()[layer - 1]);
    Ok(BigRational::new(count.into(), slots.into()))
}

/// Exact layer-1 amplitude distribution by the top-down recursion: the top
/// LUT's symbol frequencies seed `p_L`, and each step down mixes the
/// conditional symbol frequencies of the layer's LUTs with the virtual
/// amplitude probabilities above.
pub fn output_distribution(structure: &HidmStructure) -> LayerDistribution {
    let vectors = structure.vectors();
    let layer_count = vectors.layer_count();
    // Numerators over the running common denominator prod(N_l 2^{k_l});
    // integer counts only, one reduction at the end.
    let top = &structure.layers()[layer_count - 1][0];
    let mut nums: Vec<BigUint> = {
        let m = vectors.alphabet_sizes()[layer_count - 1] as usize;
        let mut counts = vec![0u64; m];
        for seq in top.sequences() {
            for &v in seq {
                counts[structure.symbol_index(layer_count, v).unwrap()] += 1;
            }
        }
        counts.into_iter().map(BigUint::from).collect()
    };
    let mut denom = BigUint::from(
        vectors.block_lengths()[layer_count - 1] as u64
            * (1u64 << vectors.input_bits()[layer_count - 1]),
    );
    for l in (1..layer_count).rev() {
        let m = vectors.alphabet_sizes()[l - 1] as usize;
        let mut next = vec![BigUint::zero(); m];
        for (lut, upper_num) in structure.layers()[l - 1].iter().zip(&nums) {
            if upper_num.is_zero() {
                continue;
            }
            let mut counts = vec![0u64; m];
            for seq in lut.sequences() {
                for &v in seq {
                    counts[structure.symbol_index(l, v).unwrap()] += 1;
                }
            }
            for (acc, c) in next.iter_mut().zip(counts) {
                if c != 0 {
                    *acc += upper_num * c;
                }
            }
        }
        nums = next;
        denom *= vectors.block_lengths()[l - 1] as u64 * (1u64 << vectors.input_bits()[l - 1]);
    }
    LayerDistribution {
        layer: 1,
        probs: nums
            .into_iter()
            .map(|n| BigRational::new(n.into(), denom.clone().into()))
            .collect(),
    }
}

/// How to gather the empirical amplitude distribution.
#[derive(Debug, Clone, Copy)]
pub enum EmpiricalMode {
    /// Encode all `2^k` inputs (requires `k <= 24`); frequencies are exact.
    Exhaustive,
    /// Encode `count` uniformly random blocks from a seeded generator.
    Sampled { count: u64, seed: u64 },
}

/// Amplitude frequencies measured by actually running the encoder; exact
/// rationals in both modes (counts over the number of emitted amplitudes).
pub fn empirical_distribution(
    structure: &HidmStructure,
    mode: EmpiricalMode,
) -> Result<Vec<BigRational>, AnalysisError> {
    let vectors = structure.vectors();
    let k = vectors.total_bits();
    let m = vectors.alphabet_sizes()[0] as usize;
    let mut counts = vec![0u64; m];
    let mut total = 0u64;
    match mode {
        EmpiricalMode::Exhaustive => {
            if k > MAX_EXHAUSTIVE_BITS {
                return Err(AnalysisError::ExhaustiveTooLarge(k));
            }
            let mut bits = vec![false; k as usize];
            for x in 0u64..(1 << k) {
                for (i, b) in bits.iter_mut().enumerate() {
                    *b = (x >> (k - 1 - i as u64)) & 1 == 1;
                }
                for amp in encode(structure, &bits)? {
                    counts[structure.symbol_index(1, amp).unwrap()] += 1;
                }
                total += vectors.word_len();
            }
        }
        EmpiricalMode::Sampled { count, seed } => {
            if count == 0 {
                return Err(AnalysisError::EmptySample);
            }
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut bits = vec![false; k as usize];
            for _ in 0..count {
                for b in bits.iter_mut() {
                    *b = rng.gen();
                }
                for amp in encode(structure, &bits)? {
                    counts[structure.symbol_index(1, amp).unwrap()] += 1;
                }
                total += vectors.word_len();
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| BigRational::new(c.into(), total.into()))
        .collect())
}

/// Loss metrics of a built structure against its Maxwell-Boltzmann reference
/// at entropy `R_DM`.
#[derive(Debug, Clone)]
pub struct StructureMetrics {
    pub p: AmplitudeDistribution,
    pub entropy_h: f64,
    pub r_dm: f64,
    pub r_loss: f64,
    pub e_dm: f64,
    pub e_mb: f64,
    pub e_loss_db: f64,
}

impl StructureMetrics {
    /// Probability of the lowest amplitude.
    pub fn p1(&self) -> f64 {
        self.p.probs()[0]
    }
}

pub fn metrics(structure: &HidmStructure) -> Result<StructureMetrics, AnalysisError> {
    let dist = output_distribution(structure);
    let probs = dist.probs_f64();
    let p = AmplitudeDistribution::new(structure.alphabet(), probs)?;
    let entropy_h = entropy_bits(&p);
    let rate = structure.vectors().rate();
    let r_dm = *rate.numer() as f64 / *rate.denom() as f64;
    // Exact expected energy, converted once.
    let e_dm_exact = dist
        .probs()
        .iter()
        .zip(structure.alphabet().levels())
        .fold(BigRational::zero(), |acc, (pr, &x)| {
            acc + pr * BigRational::from_integer(((x as u64) * (x as u64)).into())
        });
    let e_dm = energy_to_f64(&e_dm_exact);
    let mb = solve_mb(&structure.alphabet(), r_dm)?;
    Ok(StructureMetrics {
        entropy_h,
        r_dm,
        r_loss: shaping::rate_loss(entropy_h, r_dm),
        e_dm,
        e_mb: mb.mean_energy,
        e_loss_db: shaping::energy_loss_db(e_dm, mb.mean_energy)?,
        p,
    })
}

/// Decoder/encoder LUT storage in bits, per side and per layer, assuming
/// fully parallel layer instances and direct-indexed inverse tables.
#[derive(Debug, Clone, Serialize)]
pub struct MemoryReport {
    pub mem_dec_bits: u64,
    pub mem_enc_bits: u64,
    pub mem_total_bits: u64,
    pub per_layer_dec_bits: Vec<u64>,
    pub per_layer_enc_bits: Vec<u64>,
}

/// Memory accounting from the vectors alone (any structure shape): the
/// decode side counts `T_l · 2^{N_l·log2 M_l}` direct-indexed entries of
/// `log2(U_l)+k_l` bits per layer, the encode side `T_l·U_l·2^{k_l}` stored
/// sequences of `N_l·log2(M_l)` bits.
pub fn memory_report(vectors: &CharacterizationVectors) -> MemoryReport {
    let mut per_layer_dec_bits = Vec::new();
    let mut per_layer_enc_bits = Vec::new();
    for l in 0..vectors.layer_count() {
        let t = vectors.usage_counts()[l];
        let u = vectors.lut_counts()[l] as u64;
        let k = vectors.input_bits()[l] as u64;
        let n = vectors.block_lengths()[l] as u64;
        let sym_bits = vectors.alphabet_sizes()[l].trailing_zeros() as u64;
        let payload = u.trailing_zeros() as u64 + k;
        per_layer_dec_bits.push(t * (1u64 << (n * sym_bits)) * payload);
        per_layer_enc_bits.push(t * u * (1u64 << k) * n * sym_bits);
    }
    let mem_dec_bits: u64 = per_layer_dec_bits.iter().sum();
    let mem_enc_bits: u64 = per_layer_enc_bits.iter().sum();
    MemoryReport {
        mem_dec_bits,
        mem_enc_bits,
        mem_total_bits: mem_dec_bits + mem_enc_bits,
        per_layer_dec_bits,
        per_layer_enc_bits,
    }
}

fn require_template(
    vectors: &CharacterizationVectors,
    theta: u32,
) -> Result<(u32, u32), AnalysisError> {
    let m = vectors.alphabet_sizes();
    let n = vectors.block_lengths();
    let upper_n = n[1];
    let upper_m = m[1];
    if upper_m != 1 << theta {
        return Err(AnalysisError::NonTemplate(format!(
            "upper alphabet {upper_m} != 2^{theta}"
        )));
    }
    for l in 1..vectors.layer_count() {
        if m[l] != upper_m || n[l] != upper_n {
            return Err(AnalysisError::NonTemplate(
                "upper layers must share one alphabet size and block length".into(),
            ));
        }
    }
    Ok((upper_m, upper_n))
}

/// Closed-form decoding memory of a template structure
/// (`T_1·2^{N_1·log2 M_1}(ϑ+k_1) + Σ T_l·M̄^n(ϑ+k_l) + M̄^n·k_L` bits, with
/// `T_l = n^{L-l}`). Equals the direct-indexed table accounting.
pub fn decoding_memory(
    vectors: &CharacterizationVectors,
    theta: u32,
) -> Result<u64, AnalysisError> {
    require_template(vectors, theta)?;
    Ok(memory_report(vectors).mem_dec_bits)
}

/// Total encoder-side LUT storage: `Σ T_l·U_l·2^{k_l}·N_l·log2(M_l)` bits.
pub fn encoding_memory(vectors: &CharacterizationVectors) -> u64 {
    memory_report(vectors).mem_enc_bits
}

/// Decoding-memory estimate for an `L >= 5` template when only a 4-layer
/// reference search is available: its `k` values fill layers 1..4 and every
/// layer above 4 (top included) is assumed to carry one bit.
pub fn estimate_decoding_memory(
    four_layer_k: &[u32],
    layer_count: u32,
    n1: u32,
    theta: u32,
    n: u32,
) -> u64 {
    assert!(layer_count >= 5, "estimate applies to L >= 5");
    assert!(four_layer_k.len() >= 4, "needs the 4-layer k vector");
    let k_at = |l: u32| -> u64 {
        if l <= 4 {
            four_layer_k[(l - 1) as usize] as u64
        } else {
            1
        }
    };
    let t_at = |l: u32| -> u64 { (n as u64).pow(layer_count - l) };
    let entries_upper = 1u64 << (n * theta);
    let mut bits = t_at(1) * (1u64 << n1) * (theta as u64 + k_at(1));
    for l in 2..layer_count {
        bits += t_at(l) * entries_upper * (theta as u64 + k_at(l));
    }
    bits + entries_upper * k_at(layer_count)
}

/// Flat metrics + memory record with the stable field names used by the
/// JSON reporting interface.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub p1: f64,
    pub entropy_bits_per_amp: f64,
    pub r_dm: f64,
    pub r_loss: f64,
    pub e_dm: f64,
    pub e_mb: f64,
    pub e_loss_db: f64,
    pub mem_enc_bits: u64,
    pub mem_dec_bits: u64,
    pub mem_total_bits: u64,
}

impl MetricsReport {
    pub fn new(metrics: &StructureMetrics, memory: &MemoryReport) -> Self {
        Self {
            p1: metrics.p1(),
            entropy_bits_per_amp: metrics.entropy_h,
            r_dm: metrics.r_dm,
            r_loss: metrics.r_loss,
            e_dm: metrics.e_dm,
            e_mb: metrics.e_mb,
            e_loss_db: metrics.e_loss_db,
            mem_enc_bits: memory.mem_enc_bits,
            mem_dec_bits: memory.mem_dec_bits,
            mem_total_bits: memory.mem_total_bits,
        }
    }
}

/// Search-facing digest of the exact distribution: entropy and expected
/// energy, with the exact energy kept for deterministic tie-breaks.
pub(crate) fn distribution_digest(structure: &HidmStructure) -> (f64, BigRational, BigRational) {
    let dist = output_distribution(structure);
    let entropy = dist
        .probs_f64()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    let e_dm = dist
        .probs()
        .iter()
        .zip(structure.alphabet().levels())
        .fold(BigRational::zero(), |acc, (pr, &x)| {
            acc + pr * BigRational::from_integer(((x as u64) * (x as u64)).into())
        });
    (entropy, e_dm, dist.probs()[0].clone())
}

/// `k/N` as f64, used where the exact rate feeds floating-point formulas.
pub(crate) fn rate_f64(rate: &Ratio<u64>) -> f64 {
    *rate.numer() as f64 / *rate.denom() as f64
}
