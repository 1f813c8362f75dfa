//! Invertible fixed-to-fixed mapping between `k` uniform input bits and `N`
//! shaped output amplitudes over a built [`HidmStructure`].
//!
//! Encoding expands depth-first: the single top-layer LUT consumes the first
//! `k_L` bits and emits `N_L` virtual amplitudes; each virtual amplitude `y`,
//! processed left to right, selects LUT `D_y` one layer below, which consumes
//! the next block of bits, and so on until layer 1 emits real amplitudes.
//! Within a LUT the input bits are read big-endian as the rank into the
//! energy-sorted sequence list (rank 0 = lowest energy). Decoding inverts
//! bottom-up with direct-indexed per-layer tables mapping an observed block
//! to its (LUT index, rank) pair; disjointness of the LUT sequence sets makes
//! that pair unique.

use crate::structure::HidmStructure;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("input block has {got} bits, structure expects {want}")]
    WrongBitCount { got: usize, want: u64 },
    #[error("input word has {got} amplitudes, structure expects {want}")]
    WrongAmpCount { got: usize, want: u64 },
    #[error("block {position} at layer {layer} is not a codeword")]
    NonCodeword { layer: usize, position: usize },
}

/// Map one block of exactly `k` bits to `N` amplitudes.
pub fn encode(structure: &HidmStructure, bits: &[bool]) -> Result<Vec<u16>, CodecError> {
    let vectors = structure.vectors();
    if bits.len() as u64 != vectors.total_bits() {
        return Err(CodecError::WrongBitCount {
            got: bits.len(),
            want: vectors.total_bits(),
        });
    }
    let mut out = Vec::with_capacity(vectors.word_len() as usize);
    let mut pos = 0usize;
    expand(structure, vectors.layer_count(), 1, bits, &mut pos, &mut out);
    debug_assert_eq!(pos, bits.len());
    debug_assert_eq!(out.len() as u64, vectors.word_len());
    Ok(out)
}

fn expand(
    structure: &HidmStructure,
    layer: usize,
    y: usize,
    bits: &[bool],
    pos: &mut usize,
    out: &mut Vec<u16>,
) {
    let k = structure.vectors().input_bits()[layer - 1];
    let mut rank = 0usize;
    for _ in 0..k {
        rank = (rank << 1) | bits[*pos] as usize;
        *pos += 1;
    }
    let seq = &structure.layers()[layer - 1][y - 1].sequences()[rank];
    if layer == 1 {
        out.extend_from_slice(seq);
    } else {
        for &sym in seq {
            expand(structure, layer - 1, sym as usize, bits, pos, out);
        }
    }
}

/// Direct-indexed inverse tables for one structure.
///
/// Layer `l`'s table is addressed by the packed symbol indices of an
/// `N_l`-symbol block (`N_l·log2(M_l)` address bits) and stores the owning
/// LUT index and the sequence rank — the same layout Eq.-style memory
/// accounting assumes.
pub struct Decoder<'a> {
    structure: &'a HidmStructure,
    tables: Vec<LayerTable>,
}

struct LayerTable {
    sym_bits: u32,
    entries: Vec<Option<(u16, u32)>>,
}

impl<'a> Decoder<'a> {
    pub fn new(structure: &'a HidmStructure) -> Self {
        let vectors = structure.vectors();
        let mut tables = Vec::with_capacity(vectors.layer_count());
        for (l0, luts) in structure.layers().iter().enumerate() {
            let sym_bits = vectors.alphabet_sizes()[l0].trailing_zeros();
            let block_bits = vectors.block_lengths()[l0] * sym_bits;
            assert!(block_bits <= 24, "decode table wider than 24 address bits");
            let mut entries = vec![None; 1usize << block_bits];
            for lut in luts {
                for (rank, seq) in lut.sequences().iter().enumerate() {
                    let key = pack_block(structure, l0 + 1, sym_bits, seq)
                        .expect("built structures contain only in-alphabet symbols");
                    entries[key] = Some((lut.index() as u16, rank as u32));
                }
            }
            tables.push(LayerTable { sym_bits, entries });
        }
        Self { structure, tables }
    }

    pub fn structure(&self) -> &HidmStructure {
        self.structure
    }

    /// Address-space size and payload width (bits) of each layer's table,
    /// for one parallel instance: `(entries, lut-index bits + rank bits)`.
    pub fn table_dimensions(&self) -> Vec<(usize, u32)> {
        let vectors = self.structure.vectors();
        self.tables
            .iter()
            .enumerate()
            .map(|(l0, t)| {
                let payload =
                    vectors.lut_counts()[l0].trailing_zeros() + vectors.input_bits()[l0];
                (t.entries.len(), payload)
            })
            .collect()
    }

    /// Recover the `k` input bits from one `N`-amplitude word.
    pub fn decode(&self, amps: &[u16]) -> Result<Vec<bool>, CodecError> {
        let vectors = self.structure.vectors();
        if amps.len() as u64 != vectors.word_len() {
            return Err(CodecError::WrongAmpCount {
                got: amps.len(),
                want: vectors.word_len(),
            });
        }
        let layer_count = vectors.layer_count();
        // Bottom-up: turn the symbol stream of each layer into (virtual
        // amplitude, rank) pairs, then re-emit rank bits in encode order.
        let mut ranks: Vec<Vec<u32>> = Vec::with_capacity(layer_count);
        let mut stream: Vec<u16> = amps.to_vec();
        for l in 1..=layer_count {
            let n_l = vectors.block_lengths()[l - 1] as usize;
            let table = &self.tables[l - 1];
            let mut next = Vec::with_capacity(stream.len() / n_l);
            let mut layer_ranks = Vec::with_capacity(stream.len() / n_l);
            for (position, block) in stream.chunks(n_l).enumerate() {
                let (y, rank) = pack_block(self.structure, l, table.sym_bits, block)
                    .and_then(|key| table.entries[key])
                    .ok_or(CodecError::NonCodeword { layer: l, position })?;
                next.push(y);
                layer_ranks.push(rank);
            }
            ranks.push(layer_ranks);
            stream = next;
        }
        let mut bits = Vec::with_capacity(vectors.total_bits() as usize);
        emit_bits(vectors.input_bits(), vectors.block_lengths(), &ranks, layer_count, 0, &mut bits);
        Ok(bits)
    }
}

fn pack_block(
    structure: &HidmStructure,
    layer: usize,
    sym_bits: u32,
    block: &[u16],
) -> Option<usize> {
    let mut key = 0usize;
    for &v in block {
        key = (key << sym_bits) | structure.symbol_index(layer, v)?;
    }
    Some(key)
}

fn emit_bits(
    input_bits: &[u32],
    block_lengths: &[u32],
    ranks: &[Vec<u32>],
    layer: usize,
    block_idx: usize,
    out: &mut Vec<bool>,
) {
    let k = input_bits[layer - 1];
    let rank = ranks[layer - 1][block_idx];
    for b in (0..k).rev() {
        out.push((rank >> b) & 1 == 1);
    }
    if layer > 1 {
        let fan_out = block_lengths[layer - 1] as usize;
        for j in 0..fan_out {
            emit_bits(
                input_bits,
                block_lengths,
                ranks,
                layer - 1,
                block_idx * fan_out + j,
                out,
            );
        }
    }
}

/// Unpack a byte stream into bits, most significant bit of each byte first.
pub fn unpack_bits(bytes: &[u8]) -> Vec<bool> {
    let mut bits = Vec::with_capacity(bytes.len() * 8);
    for &b in bytes {
        for i in (0..8).rev() {
            bits.push((b >> i) & 1 == 1);
        }
    }
    bits
}

/// Pack bits into bytes, most significant bit first; the final partial byte
/// is zero-padded.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &bit) in bits.iter().enumerate() {
        if bit {
            bytes[i / 8] |= 1 << (7 - i % 8);
        }
    }
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::CharacterizationVectors;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn fig1() -> HidmStructure {
        HidmStructure::build(
            CharacterizationVectors::derive(&[2, 4], &[4, 2], &[1, 2]).unwrap(),
        )
        .unwrap()
    }

    fn fig2() -> HidmStructure {
        HidmStructure::build(
            CharacterizationVectors::derive(&[2, 64, 64, 64], &[11, 2, 2, 2], &[2, 3, 4, 8])
                .unwrap(),
        )
        .unwrap()
    }

    fn to_bits(x: u64, width: usize) -> Vec<bool> {
        (0..width).rev().map(|i| (x >> i) & 1 == 1).collect()
    }

    #[test]
    fn encode_lowest_rank_path() {
        let s = fig1();
        let amps = encode(&s, &[false; 4]).unwrap();
        assert_eq!(amps, vec![1; 8]);
    }

    #[test]
    fn encode_is_injective_exhaustively() {
        let s = fig1();
        let mut words = std::collections::HashSet::new();
        for x in 0..16u64 {
            let w = encode(&s, &to_bits(x, 4)).unwrap();
            assert_eq!(w.len(), 8);
            assert!(words.insert(w));
        }
        assert_eq!(words.len(), 16);
    }

    #[test]
    fn encode_checks_length() {
        let s = fig1();
        assert!(matches!(
            encode(&s, &[false; 3]),
            Err(CodecError::WrongBitCount { got: 3, want: 4 })
        ));
    }

    #[test]
    fn round_trip_exhaustive_fig1() {
        let s = fig1();
        let dec = Decoder::new(&s);
        for x in 0..16u64 {
            let bits = to_bits(x, 4);
            assert_eq!(dec.decode(&encode(&s, &bits).unwrap()).unwrap(), bits);
        }
    }

    #[test]
    fn decode_rejects_non_codeword() {
        let s = fig1();
        let dec = Decoder::new(&s);
        // (3,3,3,3) was never stored at layer 1.
        let err = dec.decode(&[3, 3, 3, 3, 3, 3, 3, 3]).unwrap_err();
        assert_eq!(
            err,
            CodecError::NonCodeword {
                layer: 1,
                position: 0
            }
        );
        // Out-of-alphabet amplitude reports the offending block.
        let err = dec.decode(&[1, 1, 1, 1, 5, 1, 1, 1]).unwrap_err();
        assert_eq!(
            err,
            CodecError::NonCodeword {
                layer: 1,
                position: 1
            }
        );
        assert!(matches!(
            dec.decode(&[1; 7]),
            Err(CodecError::WrongAmpCount { got: 7, want: 8 })
        ));
    }

    #[test]
    fn fig2_dimensions_and_random_round_trip() {
        let s = fig2();
        let dec = Decoder::new(&s);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let bits: Vec<bool> = (0..44).map(|_| rng.gen()).collect();
            let word = encode(&s, &bits).unwrap();
            assert_eq!(word.len(), 88);
            assert_eq!(dec.decode(&word).unwrap(), bits);
        }
    }

    #[test]
    fn corruption_never_decodes_to_same_bits() {
        let s = fig2();
        let dec = Decoder::new(&s);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let bits: Vec<bool> = (0..44).map(|_| rng.gen()).collect();
            let word = encode(&s, &bits).unwrap();
            for pos in 0..word.len() {
                let mut corrupted = word.clone();
                corrupted[pos] = if corrupted[pos] == 1 { 3 } else { 1 };
                match dec.decode(&corrupted) {
                    Ok(other) => assert_ne!(other, bits, "silent identity at {pos}"),
                    Err(CodecError::NonCodeword { .. }) => {}
                    Err(e) => panic!("unexpected error {e}"),
                }
            }
        }
    }

    #[test]
    fn stream_of_blocks_is_blockwise() {
        let s = fig1();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let blocks: Vec<Vec<bool>> = (0..5).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
        let joined: Vec<u16> = blocks
            .iter()
            .flat_map(|b| encode(&s, b).unwrap())
            .collect();
        let mut per_block = Vec::new();
        for b in &blocks {
            per_block.extend(encode(&s, b).unwrap());
        }
        assert_eq!(joined, per_block);
    }

    #[test]
    fn bit_packing_msb_first() {
        assert_eq!(pack_bits(&unpack_bits(&[0xA5, 0x01])), vec![0xA5, 0x01]);
        assert_eq!(
            unpack_bits(&[0b1010_0000])[..4],
            [true, false, true, false]
        );
        assert_eq!(pack_bits(&[true, true, true]), vec![0b1110_0000]);
    }

    proptest! {
        #[test]
        fn prop_round_trip_three_layer(x in 0u64..(1 << 15)) {
            let v = CharacterizationVectors::derive(&[2, 8, 4], &[5, 2, 2], &[2, 2, 3]).unwrap();
            let s = HidmStructure::build(v).unwrap();
            prop_assert_eq!(s.vectors().total_bits(), 15);
            let dec = Decoder::new(&s);
            let bits = to_bits(x, 15);
            let got = dec.decode(&encode(&s, &bits).unwrap()).unwrap();
            prop_assert_eq!(got, bits);
        }

        #[test]
        fn prop_pack_unpack(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(pack_bits(&unpack_bits(&bytes)), bytes);
        }
    }
}
