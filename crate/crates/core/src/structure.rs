//! Characterization vectors, design constraints, and construction of the
//! layered LUT structure.
//!
//! A structure is described by three vectors of per-layer parameters:
//! alphabet sizes `M`, block lengths `N`, and input-bit counts `k`. Layer 1
//! works on real amplitudes; every layer above works on *virtual amplitudes*,
//! i.e. indices of the LUTs one layer below. Construction is bottom-up: all
//! `M_l^{N_l}` candidate sequences of a layer are scored by resolved energy,
//! sorted ascending (ties broken by lexicographic symbol order, smallest
//! first), and the lowest `2^{k_l}·U_l` are dealt out in consecutive blocks of
//! `2^{k_l}` to the layer's LUTs. The mean sequence energy of a LUT becomes
//! the energy of the corresponding virtual amplitude in the layer above,
//! which keeps the virtual-energy table non-decreasing.
//!
//! All energies are exact: integers at layer 1 and dyadic rationals above
//! (means over power-of-two counts), held as big-integer numerators over a
//! shared power-of-two denominator so sorting never sees floating point.

use crate::shaping::AmplitudeAlphabet;
use num_bigint::{BigInt, BigUint};
use num_rational::{BigRational, Ratio};
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

/// Largest per-layer candidate enumeration allowed by `build`.
const MAX_LAYER_SEQUENCES: u64 = 1 << 22;
/// Hard caps on any constructed design.
pub const MAX_LAYERS: usize = 32;
pub const MAX_WORD_LEN: u64 = 1 << 25;

/// Structure file format version.
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("M, N, k must have equal length >= 2, got {m}/{n}/{k}")]
    LengthMismatch { m: usize, n: usize, k: usize },
    #[error("layer count {0} exceeds the hard cap {MAX_LAYERS}")]
    TooManyLayers(usize),
    #[error("all vector entries must be positive (layer {0})")]
    NonPositiveEntry(usize),
    #[error("alphabet size {0} is not a power of two >= 2")]
    NotPowerOfTwo(u32),
    #[error("total block length {0} exceeds the hard cap {MAX_WORD_LEN}")]
    WordTooLong(u64),
    #[error("arithmetic overflow deriving vector quantities")]
    Overflow,
    #[error("layer {layer}: needs {need} sequences but only {available} exist")]
    InsufficientSequences {
        layer: usize,
        need: u64,
        available: u64,
    },
    #[error("layer {layer}: enumeration of {sequences} sequences exceeds the build cap")]
    EnumerationTooLarge { layer: usize, sequences: u64 },
    #[error("virtual energy index out of range: layer {layer}, y {y}")]
    IndexOutOfRange { layer: usize, y: usize },
    #[error("structure file parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported structure file version {0}")]
    FormatVersion(u32),
    #[error("structure file inconsistent: {0}")]
    Inconsistent(String),
}

/// The `(M, N, k)` triple plus the derived usage counts, LUT counts, total
/// input bits, and total block length of an L-layer template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacterizationVectors {
    alphabet_sizes: Vec<u32>,
    block_lengths: Vec<u32>,
    input_bits: Vec<u32>,
    usage_counts: Vec<u64>,
    lut_counts: Vec<u32>,
    total_bits: u64,
    word_len: u64,
}

impl CharacterizationVectors {
    /// Derive all dependent quantities from the raw `(M, N, k)` lists.
    pub fn derive(
        alphabet_sizes: &[u32],
        block_lengths: &[u32],
        input_bits: &[u32],
    ) -> Result<Self, StructureError> {
        let layers = alphabet_sizes.len();
        if layers < 2 || block_lengths.len() != layers || input_bits.len() != layers {
            return Err(StructureError::LengthMismatch {
                m: layers,
                n: block_lengths.len(),
                k: input_bits.len(),
            });
        }
        if layers > MAX_LAYERS {
            return Err(StructureError::TooManyLayers(layers));
        }
        for l in 0..layers {
            if alphabet_sizes[l] == 0 || block_lengths[l] == 0 || input_bits[l] == 0 {
                return Err(StructureError::NonPositiveEntry(l + 1));
            }
            if alphabet_sizes[l] < 2 || !alphabet_sizes[l].is_power_of_two() {
                return Err(StructureError::NotPowerOfTwo(alphabet_sizes[l]));
            }
        }
        // T_l = prod_{h>l} N_h, T_L = 1.
        let mut usage_counts = vec![1u64; layers];
        for l in (0..layers - 1).rev() {
            usage_counts[l] = usage_counts[l + 1]
                .checked_mul(block_lengths[l + 1] as u64)
                .ok_or(StructureError::Overflow)?;
        }
        let word_len = usage_counts[0]
            .checked_mul(block_lengths[0] as u64)
            .ok_or(StructureError::Overflow)?;
        if word_len > MAX_WORD_LEN {
            return Err(StructureError::WordTooLong(word_len));
        }
        // U_l = M_{l+1} for l < L, U_L = 1.
        let mut lut_counts: Vec<u32> = alphabet_sizes[1..].to_vec();
        lut_counts.push(1);
        let mut total_bits = 0u64;
        for l in 0..layers {
            total_bits = total_bits
                .checked_add(
                    (input_bits[l] as u64)
                        .checked_mul(usage_counts[l])
                        .ok_or(StructureError::Overflow)?,
                )
                .ok_or(StructureError::Overflow)?;
        }
        Ok(Self {
            alphabet_sizes: alphabet_sizes.to_vec(),
            block_lengths: block_lengths.to_vec(),
            input_bits: input_bits.to_vec(),
            usage_counts,
            lut_counts,
            total_bits,
            word_len,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.alphabet_sizes.len()
    }

    /// Alphabet sizes `M_1..M_L`.
    pub fn alphabet_sizes(&self) -> &[u32] {
        &self.alphabet_sizes
    }

    /// Block lengths `N_1..N_L`.
    pub fn block_lengths(&self) -> &[u32] {
        &self.block_lengths
    }

    /// Input-bit counts `k_1..k_L`.
    pub fn input_bits(&self) -> &[u32] {
        &self.input_bits
    }

    /// Usage counts `T_l`: how many times layer `l` runs per DM word.
    pub fn usage_counts(&self) -> &[u64] {
        &self.usage_counts
    }

    /// LUT counts `U_l` per layer.
    pub fn lut_counts(&self) -> &[u32] {
        &self.lut_counts
    }

    /// Total input bits `k` mapped by one DM word.
    pub fn total_bits(&self) -> u64 {
        self.total_bits
    }

    /// Total output amplitudes `N` per DM word.
    pub fn word_len(&self) -> u64 {
        self.word_len
    }

    /// Matcher rate `k/N` in bits per amplitude, exact.
    pub fn rate(&self) -> Ratio<u64> {
        Ratio::new(self.total_bits, self.word_len)
    }

    /// log2 of a layer's LUT count (LUT counts are powers of two).
    fn lut_index_bits(&self, l: usize) -> u32 {
        self.lut_counts[l].trailing_zeros()
    }

    /// Widest LUT interface in bits: `max(N_i log2 M_i, k_i + log2 U_i)`.
    pub fn max_lut_bits(&self) -> u32 {
        (0..self.layer_count())
            .map(|l| {
                let out = self.block_lengths[l] * self.alphabet_sizes[l].trailing_zeros();
                let inv = self.input_bits[l] + self.lut_index_bits(l);
                out.max(inv)
            })
            .max()
            .unwrap()
    }
}

/// Synthesis bit budget: the maximum LUT input/output width `N_b`, the
/// per-virtual-symbol width `ϑ = ⌊N_b/n⌋`, and the largest admissible upper
/// alphabet `M̄ = 2^ϑ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitBudget {
    max_bits: u32,
    symbol_bits: u32,
    max_alphabet: u32,
}

impl BitBudget {
    /// Budget for upper-layer block length `n` (2 in all template designs).
    pub fn new(max_bits: u32, n: u32) -> Self {
        let symbol_bits = max_bits / n;
        Self {
            max_bits,
            symbol_bits,
            max_alphabet: 1 << symbol_bits,
        }
    }

    pub fn max_bits(&self) -> u32 {
        self.max_bits
    }

    pub fn symbol_bits(&self) -> u32 {
        self.symbol_bits
    }

    pub fn max_alphabet(&self) -> u32 {
        self.max_alphabet
    }
}

/// A violated design constraint, reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("(i) layer {layer}: alphabet {m} differs from template alphabet {m_bar}")]
    AlphabetNotUniform { layer: usize, m: u32, m_bar: u32 },
    #[error("(ii) layer {layer}: block length {n} differs from upper-layer length {expected}")]
    BlockLengthNotUniform { layer: usize, n: u32, expected: u32 },
    #[error("(ii) first-layer block length {n1} must exceed 2")]
    FirstBlockTooShort { n1: u32 },
    #[error("(iii) layer {layer}: {need_bits} bits of sequences needed but only 2^{have_bits} exist")]
    InsufficientSequences {
        layer: usize,
        need_bits: u32,
        have_bits: u32,
    },
    #[error("(iv) layer {layer}: {out_bits} output bits < {k} input bits")]
    OutputBitsTooFew { layer: usize, out_bits: u32, k: u32 },
    #[error("layer {layer}: LUT interface needs {bits} bits, budget is {max_bits}")]
    BitWidthExceeded {
        layer: usize,
        bits: u32,
        max_bits: u32,
    },
}

/// Check the design constraints against a bit budget. Constraints (iii),
/// (iv), and the `N_b` width bound are mandatory (they guarantee
/// invertibility and synthesisability); the template-shape checks (i) and
/// (ii) apply only when `enforce_template` is set.
pub fn validate(
    vectors: &CharacterizationVectors,
    budget: &BitBudget,
    enforce_template: bool,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let layers = vectors.layer_count();
    let m = vectors.alphabet_sizes();
    let n = vectors.block_lengths();
    let k = vectors.input_bits();
    if enforce_template {
        for l in 1..layers {
            if m[l] != budget.max_alphabet() {
                violations.push(Violation::AlphabetNotUniform {
                    layer: l + 1,
                    m: m[l],
                    m_bar: budget.max_alphabet(),
                });
            }
            if n[l] != n[1] {
                violations.push(Violation::BlockLengthNotUniform {
                    layer: l + 1,
                    n: n[l],
                    expected: n[1],
                });
            }
        }
        if n[0] <= 2 {
            violations.push(Violation::FirstBlockTooShort { n1: n[0] });
        }
    }
    for l in 0..layers {
        let out_bits = n[l] * m[l].trailing_zeros();
        let need_bits = k[l] + vectors.lut_index_bits(l);
        // (iii) M^N >= U 2^k, exact in exponents since M and U are powers of 2.
        if out_bits < need_bits {
            violations.push(Violation::InsufficientSequences {
                layer: l + 1,
                need_bits,
                have_bits: out_bits,
            });
        }
        if out_bits < k[l] {
            violations.push(Violation::OutputBitsTooFew {
                layer: l + 1,
                out_bits,
                k: k[l],
            });
        }
        let width = out_bits.max(need_bits);
        if width > budget.max_bits() {
            violations.push(Violation::BitWidthExceeded {
                layer: l + 1,
                bits: width,
                max_bits: budget.max_bits(),
            });
        }
    }
    violations
}

/// One lookup table: `2^{k_l}` energy-sorted sequences of `N_l` symbols.
/// Layer-1 symbols are amplitude values; upper-layer symbols are 1-based
/// virtual-amplitude indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lut {
    layer: u32,
    index: u32,
    sequences: Vec<Vec<u16>>,
    mean_energy: BigRational,
}

impl Lut {
    /// 1-based layer number.
    pub fn layer(&self) -> u32 {
        self.layer
    }

    /// 1-based LUT number within the layer (the virtual amplitude it backs).
    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn sequences(&self) -> &[Vec<u16>] {
        &self.sequences
    }

    /// Mean resolved energy of the stored sequences, in amplitude² units.
    pub fn mean_energy(&self) -> &BigRational {
        &self.mean_energy
    }
}

/// A fully built layered LUT structure, ready for encode/decode/analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct HidmStructure {
    vectors: CharacterizationVectors,
    layers: Vec<Vec<Lut>>,
}

/// Per-layer exact energies: numerators over the shared denominator `2^exp`.
struct ScaledEnergies {
    nums: Vec<BigUint>,
    exp: u32,
}

fn dyadic(num: BigUint, exp: u32) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(BigUint::one() << exp))
}

impl HidmStructure {
    /// Build the structure bottom-up by energy-sorted sequence generation and
    /// consecutive-block partitioning.
    pub fn build(vectors: CharacterizationVectors) -> Result<Self, StructureError> {
        let layers_n = vectors.layer_count();
        let alphabet = AmplitudeAlphabet::pam(vectors.alphabet_sizes()[0]);
        let mut energies = ScaledEnergies {
            nums: alphabet
                .levels()
                .iter()
                .map(|&x| BigUint::from((x as u64) * (x as u64)))
                .collect(),
            exp: 0,
        };
        let mut layers = Vec::with_capacity(layers_n);
        for l in 0..layers_n {
            let m_l = vectors.alphabet_sizes()[l] as u64;
            let n_l = vectors.block_lengths()[l] as usize;
            let k_l = vectors.input_bits()[l];
            let u_l = vectors.lut_counts()[l] as u64;
            let total = m_l
                .checked_pow(n_l as u32)
                .filter(|&t| t <= MAX_LAYER_SEQUENCES)
                .ok_or(StructureError::EnumerationTooLarge {
                    layer: l + 1,
                    sequences: u64::MAX,
                })?;
            let need = (1u64 << k_l) * u_l;
            if need > total {
                return Err(StructureError::InsufficientSequences {
                    layer: l + 1,
                    need,
                    available: total,
                });
            }
            let values: Vec<u16> = if l == 0 {
                alphabet.levels().to_vec()
            } else {
                (1..=m_l as u16).collect()
            };
            // Enumerate in lexicographic symbol order; a stable sort on energy
            // then yields the (energy, lex) order the tie-break rule requires.
            let mut scored: Vec<(BigUint, Vec<u16>)> = Vec::with_capacity(total as usize);
            let mut odometer = vec![0usize; n_l];
            loop {
                let mut e = BigUint::zero();
                for &idx in &odometer {
                    e += &energies.nums[idx];
                }
                scored.push((e, odometer.iter().map(|&i| values[i]).collect()));
                let mut pos = n_l;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    odometer[pos] += 1;
                    if odometer[pos] < m_l as usize {
                        break;
                    }
                    odometer[pos] = 0;
                }
                if odometer.iter().all(|&i| i == 0) {
                    break;
                }
            }
            scored.sort_by(|a, b| a.0.cmp(&b.0));
            scored.truncate(need as usize);
            let per_lut = 1usize << k_l;
            let mut luts = Vec::with_capacity(u_l as usize);
            let mut sums = Vec::with_capacity(u_l as usize);
            for (y, chunk) in scored.chunks_exact(per_lut).enumerate() {
                let mut sum = BigUint::zero();
                for (e, _) in chunk {
                    sum += e;
                }
                luts.push(Lut {
                    layer: (l + 1) as u32,
                    index: (y + 1) as u32,
                    sequences: chunk.iter().map(|(_, s)| s.clone()).collect(),
                    mean_energy: dyadic(sum.clone(), energies.exp + k_l),
                });
                sums.push(sum);
            }
            layers.push(luts);
            energies = ScaledEnergies {
                nums: sums,
                exp: energies.exp + k_l,
            };
        }
        Ok(Self { vectors, layers })
    }

    pub fn vectors(&self) -> &CharacterizationVectors {
        &self.vectors
    }

    /// Layers bottom-up: `layers()[l-1]` holds layer `l`'s LUTs.
    pub fn layers(&self) -> &[Vec<Lut>] {
        &self.layers
    }

    /// Layer-1 amplitude alphabet.
    pub fn alphabet(&self) -> AmplitudeAlphabet {
        AmplitudeAlphabet::pam(self.vectors.alphabet_sizes()[0])
    }

    /// Energy of virtual amplitude `y` at layer `l >= 2`: the mean sequence
    /// energy of LUT `D_y` one layer below.
    pub fn virtual_energy(&self, layer: usize, y: usize) -> Result<&BigRational, StructureError> {
        if !(2..=self.vectors.layer_count()).contains(&layer)
            || y == 0
            || y > self.vectors.alphabet_sizes()[layer - 1] as usize
        {
            return Err(StructureError::IndexOutOfRange { layer, y });
        }
        Ok(&self.layers[layer - 2][y - 1].mean_energy)
    }

    /// Position of a layer's symbol value in its (virtual) alphabet, if any.
    pub fn symbol_index(&self, layer: usize, value: u16) -> Option<usize> {
        if layer == 1 {
            if value % 2 == 1 && (value as u32) < 2 * self.vectors.alphabet_sizes()[0] {
                Some((value / 2) as usize)
            } else {
                None
            }
        } else if (1..=self.vectors.alphabet_sizes()[layer - 1] as u16).contains(&value) {
            Some((value - 1) as usize)
        } else {
            None
        }
    }

    /// Serialize to the canonical JSON document (compact, fixed key order,
    /// energies as reduced numerator/denominator decimal strings).
    pub fn to_json(&self) -> String {
        let file = StructureFile {
            version: FORMAT_VERSION,
            alphabet_sizes: self.vectors.alphabet_sizes().to_vec(),
            block_lengths: self.vectors.block_lengths().to_vec(),
            input_bits: self.vectors.input_bits().to_vec(),
            layers: self
                .layers
                .iter()
                .map(|luts| LayerFile {
                    luts: luts.iter().map(|l| l.sequences.clone()).collect(),
                    lut_energies: luts
                        .iter()
                        .map(|l| {
                            [
                                l.mean_energy.numer().to_string(),
                                l.mean_energy.denom().to_string(),
                            ]
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("structure serialization cannot fail")
    }

    /// Parse and verify a structure document produced by [`Self::to_json`].
    ///
    /// All shape and content invariants are revalidated, and the stored
    /// energies are checked against a recomputation from the sequences.
    pub fn from_json(text: &str) -> Result<Self, StructureError> {
        let file: StructureFile = serde_json::from_str(text)?;
        if file.version != FORMAT_VERSION {
            return Err(StructureError::FormatVersion(file.version));
        }
        let vectors = CharacterizationVectors::derive(
            &file.alphabet_sizes,
            &file.block_lengths,
            &file.input_bits,
        )?;
        let layers_n = vectors.layer_count();
        if file.layers.len() != layers_n {
            return Err(StructureError::Inconsistent(format!(
                "{} layer tables for {} layers",
                file.layers.len(),
                layers_n
            )));
        }
        let alphabet = AmplitudeAlphabet::pam(vectors.alphabet_sizes()[0]);
        let mut energies = ScaledEnergies {
            nums: alphabet
                .levels()
                .iter()
                .map(|&x| BigUint::from((x as u64) * (x as u64)))
                .collect(),
            exp: 0,
        };
        let mut layers: Vec<Vec<Lut>> = Vec::with_capacity(layers_n);
        for (l, layer_file) in file.layers.iter().enumerate() {
            let m_l = vectors.alphabet_sizes()[l];
            let n_l = vectors.block_lengths()[l] as usize;
            let k_l = vectors.input_bits()[l];
            let u_l = vectors.lut_counts()[l] as usize;
            let err = |msg: String| StructureError::Inconsistent(format!("layer {}: {msg}", l + 1));
            if layer_file.luts.len() != u_l || layer_file.lut_energies.len() != u_l {
                return Err(err(format!("expected {u_l} LUTs")));
            }
            let values: Vec<u16> = if l == 0 {
                alphabet.levels().to_vec()
            } else {
                (1..=m_l as u16).collect()
            };
            let mut seen: HashSet<&[u16]> = HashSet::new();
            let mut luts = Vec::with_capacity(u_l);
            let mut sums = Vec::with_capacity(u_l);
            let mut prev_sum: Option<BigUint> = None;
            for (y, seqs) in layer_file.luts.iter().enumerate() {
                if seqs.len() != 1usize << k_l {
                    return Err(err(format!("LUT {} holds {} sequences", y + 1, seqs.len())));
                }
                let mut sum = BigUint::zero();
                let mut prev_seq: Option<(BigUint, &Vec<u16>)> = None;
                for seq in seqs {
                    if seq.len() != n_l {
                        return Err(err(format!("sequence length {} != {n_l}", seq.len())));
                    }
                    let mut e = BigUint::zero();
                    for &v in seq {
                        let idx = values
                            .iter()
                            .position(|&w| w == v)
                            .ok_or_else(|| err(format!("symbol {v} outside the alphabet")))?;
                        e += &energies.nums[idx];
                    }
                    if !seen.insert(seq.as_slice()) {
                        return Err(err(format!("sequence {seq:?} stored twice in the layer")));
                    }
                    if let Some((pe, ps)) = prev_seq {
                        if (e.clone(), seq) < (pe, ps) {
                            return Err(err("sequences not in (energy, lex) order".into()));
                        }
                    }
                    sum += &e;
                    prev_seq = Some((e, seq));
                }
                let stored = parse_energy(&layer_file.lut_energies[y])
                    .ok_or_else(|| err(format!("malformed energy for LUT {}", y + 1)))?;
                let recomputed = dyadic(sum.clone(), energies.exp + k_l);
                if stored != recomputed {
                    return Err(err(format!(
                        "stored energy {stored} != recomputed {recomputed} for LUT {}",
                        y + 1
                    )));
                }
                if let Some(p) = &prev_sum {
                    if &sum < p {
                        return Err(err("virtual energies not non-decreasing".into()));
                    }
                }
                prev_sum = Some(sum.clone());
                luts.push(Lut {
                    layer: (l + 1) as u32,
                    index: (y + 1) as u32,
                    sequences: seqs.clone(),
                    mean_energy: recomputed,
                });
                sums.push(sum);
            }
            layers.push(luts);
            energies = ScaledEnergies {
                nums: sums,
                exp: energies.exp + k_l,
            };
        }
        Ok(Self { vectors, layers })
    }
}

fn parse_energy(pair: &[String; 2]) -> Option<BigRational> {
    let num: BigInt = pair[0].parse().ok()?;
    let den: BigInt = pair[1].parse().ok()?;
    if den <= BigInt::zero() {
        return None;
    }
    Some(BigRational::new(num, den))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureFile {
    version: u32,
    #[serde(rename = "M")]
    alphabet_sizes: Vec<u32>,
    #[serde(rename = "N")]
    block_lengths: Vec<u32>,
    #[serde(rename = "k")]
    input_bits: Vec<u32>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    luts: Vec<Vec<Vec<u16>>>,
    lut_energies: Vec<[String; 2]>,
}

/// Convenience: mean-energy rational as f64 (analysis-side reporting).
pub fn energy_to_f64(e: &BigRational) -> f64 {
    e.numer().to_f64().unwrap_or(f64::NAN) / e.denom().to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fig1_vectors() -> CharacterizationVectors {
        CharacterizationVectors::derive(&[2, 4], &[4, 2], &[1, 2]).unwrap()
    }

    pub(crate) fn fig2_vectors() -> CharacterizationVectors {
        CharacterizationVectors::derive(&[2, 64, 64, 64], &[11, 2, 2, 2], &[2, 3, 4, 8]).unwrap()
    }

    #[test]
    fn derive_fig1() {
        let v = fig1_vectors();
        assert_eq!(v.usage_counts(), &[2, 1]);
        assert_eq!(v.lut_counts(), &[4, 1]);
        assert_eq!(v.total_bits(), 4);
        assert_eq!(v.word_len(), 8);
        assert_eq!(v.rate(), Ratio::new(1, 2));
    }

    #[test]
    fn derive_fig2() {
        let v = fig2_vectors();
        assert_eq!(v.usage_counts(), &[8, 4, 2, 1]);
        assert_eq!(v.total_bits(), 44);
        assert_eq!(v.word_len(), 88);
        assert_eq!(v.rate(), Ratio::new(1, 2));
        assert_eq!(v.max_lut_bits(), 12);
    }

    #[test]
    fn derive_degenerate_unit_blocks() {
        let v = CharacterizationVectors::derive(&[2, 2], &[1, 1], &[1, 1]).unwrap();
        assert_eq!(v.usage_counts(), &[1, 1]);
        assert_eq!(v.word_len(), 1);
    }

    #[test]
    fn derive_rejects_bad_input() {
        assert!(CharacterizationVectors::derive(&[2], &[4], &[1]).is_err());
        assert!(CharacterizationVectors::derive(&[2, 4], &[4], &[1, 2]).is_err());
        assert!(CharacterizationVectors::derive(&[2, 3], &[4, 2], &[1, 2]).is_err());
        assert!(CharacterizationVectors::derive(&[2, 4], &[4, 0], &[1, 2]).is_err());
    }

    #[test]
    fn validate_fig1_with_budget_8() {
        let v = fig1_vectors();
        assert!(validate(&v, &BitBudget::new(8, 2), false).is_empty());
    }

    #[test]
    fn validate_fig2_with_budget_12() {
        let v = fig2_vectors();
        assert!(validate(&v, &BitBudget::new(12, 2), true).is_empty());
        assert_eq!(v.max_lut_bits(), 12);
    }

    #[test]
    fn validate_reports_insufficient_sequences() {
        // Raising k1 until 2^{N1} < U1 2^{k1} must trip (iii).
        let v = CharacterizationVectors::derive(&[2, 4], &[4, 2], &[3, 2]).unwrap();
        let viol = validate(&v, &BitBudget::new(8, 2), false);
        assert!(viol
            .iter()
            .any(|x| matches!(x, Violation::InsufficientSequences { layer: 1, .. })));
    }

    #[test]
    fn validate_reports_width_excess() {
        let v = fig2_vectors();
        let viol = validate(&v, &BitBudget::new(10, 2), false);
        assert!(viol
            .iter()
            .any(|x| matches!(x, Violation::BitWidthExceeded { .. })));
    }

    #[test]
    fn build_fig1_matches_worked_example() {
        let s = HidmStructure::build(fig1_vectors()).unwrap();
        let l1 = &s.layers()[0];
        assert_eq!(l1.len(), 4);
        assert_eq!(l1[0].sequences(), &[vec![1, 1, 1, 1], vec![1, 1, 1, 3]]);
        assert_eq!(l1[1].sequences(), &[vec![1, 1, 3, 1], vec![1, 3, 1, 1]]);
        assert_eq!(l1[2].sequences(), &[vec![3, 1, 1, 1], vec![1, 1, 3, 3]]);
        assert_eq!(l1[3].sequences(), &[vec![1, 3, 1, 3], vec![1, 3, 3, 1]]);
        let means: Vec<f64> = l1.iter().map(|l| energy_to_f64(l.mean_energy())).collect();
        assert_eq!(means, vec![8.0, 12.0, 16.0, 20.0]);
        let top = &s.layers()[1][0];
        assert_eq!(
            top.sequences(),
            &[vec![1, 1], vec![1, 2], vec![2, 1], vec![1, 3]]
        );
        assert_eq!(energy_to_f64(top.mean_energy()), 20.0); // (16+20+20+24)/4
    }

    #[test]
    fn virtual_energy_lookup() {
        let s = HidmStructure::build(fig1_vectors()).unwrap();
        assert_eq!(energy_to_f64(s.virtual_energy(2, 1).unwrap()), 8.0);
        assert_eq!(energy_to_f64(s.virtual_energy(2, 4).unwrap()), 20.0);
        assert!(s.virtual_energy(2, 5).is_err());
        assert!(s.virtual_energy(1, 1).is_err());
        assert!(s.virtual_energy(3, 1).is_err());
    }

    #[test]
    fn build_full_coverage_layer_keeps_ordering() {
        // 2^{k1} U1 = M1^{N1}: the whole sequence space is dealt out.
        let v = CharacterizationVectors::derive(&[2, 4], &[3, 2], &[1, 2]).unwrap();
        let s = HidmStructure::build(v).unwrap();
        let means: Vec<&BigRational> = s.layers()[0].iter().map(|l| l.mean_energy()).collect();
        assert_eq!(s.layers()[0].len() * 2, 8);
        for w in means.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn build_rejects_insufficient_sequences() {
        let v = CharacterizationVectors::derive(&[2, 4], &[4, 2], &[3, 2]).unwrap();
        assert!(matches!(
            HidmStructure::build(v),
            Err(StructureError::InsufficientSequences { layer: 1, .. })
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let a = HidmStructure::build(fig2_vectors()).unwrap();
        let b = HidmStructure::build(fig2_vectors()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn layer_disjointness_and_ordering() {
        for v in [
            fig1_vectors(),
            fig2_vectors(),
            CharacterizationVectors::derive(&[2, 8, 4], &[5, 2, 2], &[2, 2, 3]).unwrap(),
        ] {
            let s = HidmStructure::build(v).unwrap();
            for luts in s.layers() {
                let mut seen = HashSet::new();
                for lut in luts {
                    for seq in lut.sequences() {
                        assert!(seen.insert(seq.clone()), "shared sequence {seq:?}");
                    }
                }
                for w in luts.windows(2) {
                    assert!(w[0].mean_energy() <= w[1].mean_energy());
                }
            }
            assert_eq!(s.layers().last().unwrap().len(), 1);
        }
    }

    #[test]
    fn selection_takes_lowest_energy_prefix() {
        let s = HidmStructure::build(fig1_vectors()).unwrap();
        // Highest stored layer-1 energy is 20; 8 of 16 sequences stored, and
        // every unstored sequence has energy >= 20.
        let max_stored = s.layers()[0]
            .iter()
            .flat_map(|l| l.sequences())
            .map(|seq| seq.iter().map(|&x| (x as u64) * (x as u64)).sum::<u64>())
            .max()
            .unwrap();
        assert_eq!(max_stored, 20);
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let s = HidmStructure::build(fig1_vectors()).unwrap();
        let text = s.to_json();
        let parsed = HidmStructure::from_json(&text).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(parsed.to_json(), text);
    }

    #[test]
    fn json_rejects_tampering() {
        let s = HidmStructure::build(fig1_vectors()).unwrap();
        let text = s.to_json();
        assert!(HidmStructure::from_json(&text.replace("\"version\":1", "\"version\":9")).is_err());
        // Swap a stored sequence so an energy no longer matches.
        let bad = text.replace("[1,1,3,1]", "[3,3,3,1]");
        assert!(HidmStructure::from_json(&bad).is_err());
        // Unknown fields rejected.
        let unknown = text.replacen("{\"version\"", "{\"extra\":0,\"version\"", 1);
        assert!(HidmStructure::from_json(&unknown).is_err());
    }
}
