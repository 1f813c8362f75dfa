//! Monte-Carlo evaluation of PAS-16QAM over the AWGN channel: shaped
//! constellation assembly, OSNR/SNR conversion, bit-metric posteriors,
//! GMI/NGMI estimation, and OSNR sweeps.
//!
//! The 16-QAM constellation is the product of two PAM-4 dimensions, each
//! carrying one uniform sign bit and one shaped amplitude bit (Gray per
//! dimension). The decoder metric is the exact bit posterior
//! `P(b_i|y) ∝ Σ_{x: bit_i(x)=b} P(x)·exp(-|y-x|²/σ²)`, and the GMI
//! estimate is `H(P) - Σ_i mean(-log2 P(b_i = tx bit | y))`.
//!
//! Monte-Carlo batches run on disjoint counter-based generator streams and
//! are reduced in batch order, so results are bit-identical for any worker
//! count.

use crate::codec::encode;
use crate::shaping::{AmplitudeDistribution, ShapingError};
use crate::structure::HidmStructure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

/// Symbols per Monte-Carlo batch (one generator stream each).
const BATCH: u64 = 1 << 13;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("PAS-16QAM needs the {{1,3}} amplitude alphabet")]
    WrongAlphabet,
    #[error("SNR must be finite, got {0} dB")]
    BadSnr(f64),
    #[error("need at least one symbol")]
    NoSymbols,
    #[error("FEC rate must lie in (0, 1], got {0}")]
    BadFecRate(f64),
    #[error("empty OSNR grid")]
    EmptyGrid,
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
}

/// A probabilistically shaped 16-QAM constellation with per-dimension
/// (sign bit, amplitude bit) Gray labels.
#[derive(Debug, Clone)]
pub struct PasConstellation {
    points: Vec<(f64, f64)>,
    point_probs: Vec<f64>,
    bit_labels: Vec<[u8; 4]>,
    symbol_entropy: f64,
    amp_dist: AmplitudeDistribution,
}

impl PasConstellation {
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn point_probs(&self) -> &[f64] {
        &self.point_probs
    }

    pub fn bit_labels(&self) -> &[[u8; 4]] {
        &self.bit_labels
    }

    /// Constellation entropy `H(P) = 2·H_amp + 2` in bits per QAM symbol.
    pub fn symbol_entropy(&self) -> f64 {
        self.symbol_entropy
    }

    pub fn amplitude_distribution(&self) -> &AmplitudeDistribution {
        &self.amp_dist
    }

    /// Mean symbol energy `E[|X|²]`.
    pub fn mean_energy(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.point_probs)
            .map(|(&(i, q), &p)| p * (i * i + q * q))
            .sum()
    }

    fn point_index(sign_i: u8, amp_i: u8, sign_q: u8, amp_q: u8) -> usize {
        ((sign_i as usize) << 3) | ((amp_i as usize) << 2) | ((sign_q as usize) << 1)
            | amp_q as usize
    }
}

/// Assemble the 16 points `(±1, ±3) × (±1, ±3)` with probabilities
/// `p(a_I)·p(a_Q)/4` from a shaped amplitude distribution over `{1, 3}`.
pub fn build_constellation(
    amp_dist: &AmplitudeDistribution,
) -> Result<PasConstellation, SimError> {
    if amp_dist.alphabet().levels() != [1, 3] {
        return Err(SimError::WrongAlphabet);
    }
    let amps = [1.0f64, 3.0];
    let probs = amp_dist.probs();
    let mut points = Vec::with_capacity(16);
    let mut point_probs = Vec::with_capacity(16);
    let mut bit_labels = Vec::with_capacity(16);
    for sign_i in 0..2u8 {
        for amp_i in 0..2u8 {
            for sign_q in 0..2u8 {
                for amp_q in 0..2u8 {
                    let i = amps[amp_i as usize] * if sign_i == 1 { 1.0 } else { -1.0 };
                    let q = amps[amp_q as usize] * if sign_q == 1 { 1.0 } else { -1.0 };
                    points.push((i, q));
                    point_probs.push(probs[amp_i as usize] * probs[amp_q as usize] / 4.0);
                    bit_labels.push([sign_i, amp_i, sign_q, amp_q]);
                }
            }
        }
    }
    let symbol_entropy = point_probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    Ok(PasConstellation {
        points,
        point_probs,
        bit_labels,
        symbol_entropy,
        amp_dist: amp_dist.clone(),
    })
}

/// Link parameters for OSNR accounting and sweeps.
#[derive(Debug, Clone)]
pub struct LinkConfig {
    pub baud: f64,
    pub b_ref: f64,
    pub r_fec: f64,
    pub dual_pol: bool,
    pub n_symbols: u64,
    pub seed: u64,
}

impl LinkConfig {
    pub fn new(baud: f64, r_fec: f64, n_symbols: u64, seed: u64) -> Self {
        Self {
            baud,
            b_ref: 12.5e9,
            r_fec,
            dual_pol: true,
            n_symbols,
            seed,
        }
    }
}

/// Per-symbol SNR from OSNR in the reference bandwidth:
/// `snr = osnr - 10·log10(baud / (pol·b_ref))` with `pol = 2` for dual
/// polarization.
pub fn osnr_to_snr(osnr_db: f64, cfg: &LinkConfig) -> f64 {
    let pol = if cfg.dual_pol { 2.0 } else { 1.0 };
    osnr_db - 10.0 * (cfg.baud / (pol * cfg.b_ref)).log10()
}

/// Net information rate per QAM symbol: `(2h + 2) - 4·(1 - r_fec)`.
pub fn info_rate(h_amp: f64, r_fec: f64) -> f64 {
    (2.0 * h_amp + 2.0) - 4.0 * (1.0 - r_fec)
}

/// Exact bit posteriors `P(b_i = b | y)` for all four label bits, computed
/// with a max-shifted exponential sum for numerical stability.
pub(crate) fn bit_posteriors(
    c: &PasConstellation,
    y: (f64, f64),
    sigma2: f64,
) -> [[f64; 2]; 4] {
    let mut logw = [0.0f64; 16];
    let mut max = f64::NEG_INFINITY;
    for (j, (&(i, q), &p)) in c.points.iter().zip(&c.point_probs).enumerate() {
        let d2 = (y.0 - i) * (y.0 - i) + (y.1 - q) * (y.1 - q);
        logw[j] = if p > 0.0 {
            -d2 / sigma2 + p.ln()
        } else {
            f64::NEG_INFINITY
        };
        max = max.max(logw[j]);
    }
    let mut num = [[0.0f64; 2]; 4];
    let mut den = 0.0f64;
    for j in 0..16 {
        if logw[j] == f64::NEG_INFINITY {
            continue;
        }
        let w = (logw[j] - max).exp();
        den += w;
        for i in 0..4 {
            num[i][c.bit_labels[j][i] as usize] += w;
        }
    }
    let mut out = [[0.0f64; 2]; 4];
    for i in 0..4 {
        for b in 0..2 {
            out[i][b] = num[i][b] / den;
        }
    }
    out
}

/// Where the transmitted amplitude magnitudes come from.
pub enum SymbolSource<'a> {
    /// Independent per-symbol draws from the constellation marginal.
    Iid,
    /// Amplitudes streamed from actual encoded blocks of this structure
    /// (random input bits), signs still uniform.
    Encoded(&'a HidmStructure),
}

/// Monte-Carlo GMI/NGMI estimate at one SNR point. Identical inputs produce
/// bit-identical outputs for any thread count.
pub fn simulate(
    c: &PasConstellation,
    snr_db: f64,
    n_symbols: u64,
    seed: u64,
) -> Result<(f64, f64), SimError> {
    simulate_with_source(c, snr_db, n_symbols, seed, &SymbolSource::Iid)
}

pub fn simulate_with_source(
    c: &PasConstellation,
    snr_db: f64,
    n_symbols: u64,
    seed: u64,
    source: &SymbolSource,
) -> Result<(f64, f64), SimError> {
    if !snr_db.is_finite() {
        return Err(SimError::BadSnr(snr_db));
    }
    if n_symbols == 0 {
        return Err(SimError::NoSymbols);
    }
    let snr = 10f64.powf(snr_db / 10.0);
    let sigma2 = c.mean_energy() / snr;
    // Cumulative distribution for the inverse-CDF draw.
    let mut cdf = [0.0f64; 16];
    let mut acc = 0.0;
    for (slot, &p) in cdf.iter_mut().zip(&c.point_probs) {
        acc += p;
        *slot = acc;
    }
    // Encoded mode: materialize the amplitude stream up front (stream 0 of
    // the generator is reserved for source bits).
    let encoded_amps: Option<Vec<(u8, u8)>> = match source {
        SymbolSource::Iid => None,
        SymbolSource::Encoded(structure) => {
            let k = structure.vectors().total_bits() as usize;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(0);
            let mut amps = Vec::with_capacity(2 * n_symbols as usize);
            let mut bits = vec![false; k];
            while amps.len() < 2 * n_symbols as usize {
                for b in bits.iter_mut() {
                    *b = rng.gen();
                }
                for a in encode(structure, &bits)? {
                    amps.push(if a == 1 { 0u8 } else { 1u8 });
                }
            }
            Some(
                (0..n_symbols as usize)
                    .map(|t| (amps[2 * t], amps[2 * t + 1]))
                    .collect(),
            )
        }
    };
    let batches = n_symbols.div_ceil(BATCH);
    let partials: Vec<[f64; 4]> = (0..batches)
        .into_par_iter()
        .map(|batch| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(batch + 1);
            let count = BATCH.min(n_symbols - batch * BATCH);
            let mut sums = [0.0f64; 4];
            for t in 0..count {
                let x_idx = match &encoded_amps {
                    None => {
                        let u: f64 = rng.gen();
                        cdf.iter().position(|&cp| u < cp).unwrap_or(15)
                    }
                    Some(amps) => {
                        let (amp_i, amp_q) = amps[(batch * BATCH + t) as usize];
                        let sign_i = rng.gen::<bool>() as u8;
                        let sign_q = rng.gen::<bool>() as u8;
                        PasConstellation::point_index(sign_i, amp_i, sign_q, amp_q)
                    }
                };
                let (px, qx) = c.points[x_idx];
                let (n_re, n_im) = gaussian_pair(&mut rng);
                let scale = (sigma2 / 2.0).sqrt();
                let y = (px + scale * n_re, qx + scale * n_im);
                let post = bit_posteriors(c, y, sigma2);
                let label = c.bit_labels[x_idx];
                for i in 0..4 {
                    sums[i] -= post[i][label[i] as usize].log2();
                }
            }
            sums
        })
        .collect();
    // Deterministic ordered reduction.
    let mut totals = [0.0f64; 4];
    for p in &partials {
        for i in 0..4 {
            totals[i] += p[i];
        }
    }
    let bit_uncertainty: f64 = totals.iter().map(|s| s / n_symbols as f64).sum();
    let gmi = c.symbol_entropy - bit_uncertainty;
    let ngmi = 1.0 - (c.symbol_entropy - gmi) / 4.0;
    Ok((gmi, ngmi))
}

fn gaussian_pair(rng: &mut ChaCha12Rng) -> (f64, f64) {
    // Box-Muller on open-interval uniforms.
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let r = (-2.0 * (1.0 - u1).ln()).sqrt();
    let theta = 2.0 * PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// One point of an NGMI-vs-OSNR sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimPoint {
    pub osnr_db: f64,
    pub snr_db: f64,
    pub gmi: f64,
    pub ngmi: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Evaluate the grid `osnr_start, osnr_start+step, … <= osnr_stop`; each
/// point runs on its own derived seed.
pub fn sweep(
    c: &PasConstellation,
    cfg: &LinkConfig,
    osnr_start: f64,
    osnr_stop: f64,
    osnr_step: f64,
) -> Result<Vec<SimPoint>, SimError> {
    if !(osnr_step > 0.0) || osnr_stop < osnr_start {
        return Err(SimError::EmptyGrid);
    }
    let count = ((osnr_stop - osnr_start) / osnr_step).floor() as u64 + 1;
    let mut out = Vec::with_capacity(count as usize);
    for idx in 0..count {
        let osnr_db = osnr_start + idx as f64 * osnr_step;
        let snr_db = osnr_to_snr(osnr_db, cfg);
        let seed = splitmix64(cfg.seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (gmi, ngmi) = simulate(c, snr_db, cfg.n_symbols, seed)?;
        out.push(SimPoint {
            osnr_db,
            snr_db,
            gmi,
            ngmi,
        });
    }
    Ok(out)
}

/// OSNR where a sweep crosses an NGMI threshold, by linear interpolation
/// between the bracketing grid points.
pub fn crossing_osnr(points: &[SimPoint], threshold: f64) -> Option<f64> {
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.ngmi <= threshold && threshold <= b.ngmi {
            let f = (threshold - a.ngmi) / (b.ngmi - a.ngmi);
            return Some(a.osnr_db + f * (b.osnr_db - a.osnr_db));
        }
    }
    None
}
