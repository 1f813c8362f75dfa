//! Constraint-pruned exhaustive search over characterization vectors, the
//! semi-analytical loss predictors, and the end-to-end design driver.
//!
//! The template fixes `M = (M1, M̄, …, M̄)` and `N = (N1, n, …, n)` so the
//! search only enumerates `k` vectors (and the first-layer block length).
//! Losses of deep structures are predicted from exhaustively optimized 2-,
//! 3-, and 4-layer references:
//!
//! ```text
//! E_DM(L) = E_DM(4) + E2/(4·N3)·(2^(5-L) - 1) - α        L >= 5
//! R_loss(L) = R_loss(4) + R2/(4·N3)·(2^(8-L) - 1) - 0.008
//! ```
//!
//! where `N3` is the 3-layer reference's DM word length and `α` depends on
//! the target rate. The layer count is then chosen just before the predicted
//! losses saturate, memory is estimated with the 4-layer `k` values (one bit
//! assumed everywhere above layer 4), and a final exhaustive search at the
//! chosen depth produces the structure.

use crate::analysis::{
    self, distribution_digest, estimate_decoding_memory, memory_report, rate_f64, AnalysisError,
    MemoryReport, StructureMetrics,
};
use crate::shaping;
use crate::structure::{
    validate, BitBudget, CharacterizationVectors, HidmStructure, StructureError, MAX_LAYERS,
    MAX_WORD_LEN,
};
use num_rational::{BigRational, Ratio};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// Fixed offset of the rate-loss predictor.
const RATE_LOSS_OFFSET: f64 = 0.008;
/// Default saturation thresholds for layer selection.
pub const DEFAULT_ENERGY_THRESHOLD_DB: f64 = 5e-3;
pub const DEFAULT_RATE_THRESHOLD: f64 = 5e-4;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("rate * block length is not an integer at N1 = {n1}")]
    InfeasibleRate { n1: u32 },
    #[error("no k vector satisfies the constraints for L = {layers}, N1 = {n1}")]
    NoFeasibleStructure { layers: u32, n1: u32 },
    #[error("no feasible first-layer block length for L = {layers}")]
    NoFeasibleFirstBlock { layers: u32 },
    #[error("loss predictors apply to L >= 5, got {layers}")]
    PredictorDomain { layers: u32 },
    #[error("predicted mean energy is nonpositive at L = {layers}")]
    PredictorRange { layers: u32 },
    #[error("no configuration meets the memory limit of {limit_bits} bits; tried {}",
            TriedList(tried))]
    MemoryInfeasible {
        limit_bits: u64,
        tried: Vec<TriedConfig>,
    },
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Shaping(#[from] shaping::ShapingError),
}

/// One configuration probed by the memory loop of [`design`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TriedConfig {
    pub symbol_bits: u32,
    pub layers: u32,
    pub twice_mem_dec_bits: u64,
}

struct TriedList<'a>(&'a [TriedConfig]);

impl fmt::Display for TriedList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(
                f,
                "(theta={}, L={}, 2*mem_dec={})",
                t.symbol_bits, t.layers, t.twice_mem_dec_bits
            )?;
        }
        Ok(())
    }
}

/// Which quantity Eq.-7's correction term reads from the 2-layer reference.
/// `PerAmplitude` (mean energy per amplitude) is the calibrated choice: it
/// reproduces the published 7-layer prediction; `PerWord` (per-amplitude
/// energy times the 2-layer word length) is kept selectable for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyTermMode {
    PerAmplitude,
    PerWord,
}

impl Default for EnergyTermMode {
    fn default() -> Self {
        Self::PerAmplitude
    }
}

/// Design objective: which loss the layer selection watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Energy,
    Rate,
}

/// Saturation thresholds for [`select_layers`].
#[derive(Debug, Clone, Copy)]
pub struct SelectThresholds {
    pub energy_db: f64,
    pub rate: f64,
}

impl Default for SelectThresholds {
    fn default() -> Self {
        Self {
            energy_db: DEFAULT_ENERGY_THRESHOLD_DB,
            rate: DEFAULT_RATE_THRESHOLD,
        }
    }
}

/// Template instantiation parameters shared by all searches of one design.
#[derive(Debug, Clone)]
pub struct SearchTemplate {
    rate: Ratio<u64>,
    n_b: u32,
    m1: u32,
    n: u32,
    symbol_bits: u32,
}

impl SearchTemplate {
    /// Template with the widest admissible upper alphabet `M̄ = 2^{⌊N_b/n⌋}`.
    pub fn new(rate: Ratio<u64>, n_b: u32, m1: u32, n: u32) -> Self {
        Self {
            rate,
            n_b,
            m1,
            n,
            symbol_bits: n_b / n,
        }
    }

    /// Same budget with a reduced upper alphabet `M̄ = 2^theta`.
    pub fn with_symbol_bits(mut self, theta: u32) -> Self {
        self.symbol_bits = theta;
        self
    }

    pub fn rate(&self) -> Ratio<u64> {
        self.rate
    }

    pub fn n_b(&self) -> u32 {
        self.n_b
    }

    pub fn symbol_bits(&self) -> u32 {
        self.symbol_bits
    }

    pub fn upper_alphabet(&self) -> u32 {
        1 << self.symbol_bits
    }

    pub fn budget(&self) -> BitBudget {
        BitBudget::new(self.n_b, self.n)
    }

    fn template_vectors(&self, layers: u32, n1: u32) -> (Vec<u32>, Vec<u32>) {
        let mut m = vec![self.m1];
        let mut n = vec![n1];
        m.extend(std::iter::repeat(self.upper_alphabet()).take(layers as usize - 1));
        n.extend(std::iter::repeat(self.n).take(layers as usize - 1));
        (m, n)
    }
}

/// All `k` vectors admissible for the template at `(layers, n1)`:
/// positive entries, constraints (iii)/(iv), the per-layer `N_b` width
/// bound, and the exact rate equation `Σ k_l·T_l = R_DM·N`. Ascending
/// lexicographic order.
pub fn enumerate_k(
    template: &SearchTemplate,
    layers: u32,
    n1: u32,
) -> Result<Vec<Vec<u32>>, DesignError> {
    let (m, n) = template.template_vectors(layers, n1);
    let l = layers as usize;
    let mut usage = vec![1u64; l];
    for i in (0..l - 1).rev() {
        usage[i] = usage[i + 1] * n[i + 1] as u64;
    }
    let word_len = usage[0] * n[0] as u64;
    if word_len > MAX_WORD_LEN {
        return Ok(Vec::new());
    }
    let target_num = *template.rate.numer() as u128 * word_len as u128;
    let denom = *template.rate.denom() as u128;
    if target_num % denom != 0 {
        return Err(DesignError::InfeasibleRate { n1 });
    }
    let target = (target_num / denom) as u64;
    let mut hi = vec![0u32; l];
    for i in 0..l {
        let sym_bits = m[i].trailing_zeros();
        let out_bits = n[i] * sym_bits;
        let lut_bits = if i + 1 < l {
            m[i + 1].trailing_zeros()
        } else {
            0
        };
        if out_bits > template.n_b {
            return Ok(Vec::new()); // template itself exceeds the width budget
        }
        let cap = out_bits
            .saturating_sub(lut_bits)
            .min(template.n_b.saturating_sub(lut_bits));
        if cap < 1 {
            return Ok(Vec::new());
        }
        hi[i] = cap;
    }
    // Suffix bounds for pruning the DFS.
    let mut min_rest = vec![0u64; l + 1];
    let mut max_rest = vec![0u64; l + 1];
    for i in (0..l).rev() {
        min_rest[i] = min_rest[i + 1] + usage[i];
        max_rest[i] = max_rest[i + 1] + hi[i] as u64 * usage[i];
    }
    let mut out = Vec::new();
    let mut acc = Vec::with_capacity(l);
    dfs_k(0, target, &hi, &usage, &min_rest, &max_rest, &mut acc, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn dfs_k(
    depth: usize,
    remaining: u64,
    hi: &[u32],
    usage: &[u64],
    min_rest: &[u64],
    max_rest: &[u64],
    acc: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    let l = hi.len();
    if depth == l - 1 {
        if remaining % usage[depth] == 0 {
            let k = remaining / usage[depth];
            if k >= 1 && k <= hi[depth] as u64 {
                acc.push(k as u32);
                out.push(acc.clone());
                acc.pop();
            }
        }
        return;
    }
    for k in 1..=hi[depth] as u64 {
        let used = k * usage[depth];
        if used > remaining {
            break;
        }
        let rest = remaining - used;
        if rest < min_rest[depth + 1] || rest > max_rest[depth + 1] {
            continue;
        }
        acc.push(k as u32);
        dfs_k(depth + 1, rest, hi, usage, min_rest, max_rest, acc, out);
        acc.pop();
    }
}

/// One evaluated candidate, as emitted on the search trace.
#[derive(Debug, Clone)]
pub struct CandidateRecord {
    pub n1: u32,
    pub k: Vec<u32>,
    pub r_loss: f64,
    pub e_loss_db: f64,
}

/// Winner of one `(layers, n1)` search.
#[derive(Debug)]
pub struct SearchOutcome {
    pub n1: u32,
    pub k: Vec<u32>,
    pub structure: HidmStructure,
    pub metrics: StructureMetrics,
    pub enumerated: usize,
    pub trace: Vec<CandidateRecord>,
}

/// Build and score every admissible candidate, returning the minimum rate
/// loss; ties break on lower mean energy (exact), then the lexicographically
/// smallest `k` vector. Candidates are scored in parallel; the selection
/// compares a totally ordered key, so the result is independent of the
/// worker count.
pub fn search_k(
    template: &SearchTemplate,
    layers: u32,
    n1: u32,
    collect_trace: bool,
) -> Result<SearchOutcome, DesignError> {
    let candidates = enumerate_k(template, layers, n1)?;
    if candidates.is_empty() {
        return Err(DesignError::NoFeasibleStructure { layers, n1 });
    }
    let (m, n) = template.template_vectors(layers, n1);
    let e_mb = shaping::solve_mb(
        &shaping::AmplitudeAlphabet::pam(template.m1),
        rate_f64(&template.rate),
    )?
    .mean_energy;
    let r_dm = rate_f64(&template.rate);
    struct Scored {
        k: Vec<u32>,
        entropy: f64,
        e_dm: BigRational,
        e_dm_f64: f64,
    }
    let scored: Vec<Scored> = candidates
        .into_par_iter()
        .map(|k| -> Result<Scored, DesignError> {
            let vectors = CharacterizationVectors::derive(&m, &n, &k)?;
            let structure = HidmStructure::build(vectors)?;
            let (entropy, e_dm, _) = distribution_digest(&structure);
            let e_dm_f64 = crate::structure::energy_to_f64(&e_dm);
            Ok(Scored {
                k,
                entropy,
                e_dm,
                e_dm_f64,
            })
        })
        .collect::<Result<_, _>>()?;
    let trace = if collect_trace {
        scored
            .iter()
            .map(|s| CandidateRecord {
                n1,
                k: s.k.clone(),
                r_loss: s.entropy - r_dm,
                e_loss_db: 10.0 * (s.e_dm_f64 / e_mb).log10(),
            })
            .collect()
    } else {
        Vec::new()
    };
    let enumerated = scored.len();
    let best = scored
        .into_iter()
        .min_by(|a, b| {
            a.entropy
                .total_cmp(&b.entropy)
                .then_with(|| a.e_dm.cmp(&b.e_dm))
                .then_with(|| a.k.cmp(&b.k))
        })
        .unwrap();
    let vectors = CharacterizationVectors::derive(&m, &n, &best.k)?;
    debug_assert!(validate(&vectors, &template.budget(), false).is_empty());
    let structure = HidmStructure::build(vectors)?;
    let metrics = analysis::metrics(&structure)?;
    Ok(SearchOutcome {
        n1,
        k: best.k,
        structure,
        metrics,
        enumerated,
        trace,
    })
}

/// Digest of one first-layer block length probed during [`select_n1`].
#[derive(Debug, Clone, Serialize)]
pub struct N1Evaluation {
    pub n1: u32,
    pub k: Vec<u32>,
    pub r_loss: f64,
    pub e_loss_db: f64,
    pub candidates: usize,
}

/// Outcome of the first-layer block-length scan.
#[derive(Debug)]
pub struct ScanOutcome {
    pub selected: SearchOutcome,
    pub evaluations: Vec<N1Evaluation>,
    pub total_candidates: usize,
}

/// Scan `N1 = N_b, N_b-1, …, 3`, running the full `k` search at each
/// feasible length. The scan stops at the first strict improvement between
/// consecutive feasible lengths and returns the improved one; if no such
/// step occurs it falls back to the best length seen (ties to the larger
/// `N1`). With `full_scan`, every feasible length is evaluated and the
/// global best returned.
pub fn select_n1(
    template: &SearchTemplate,
    layers: u32,
    full_scan: bool,
    collect_trace: bool,
) -> Result<ScanOutcome, DesignError> {
    let mut evaluations = Vec::new();
    let mut total_candidates = 0usize;
    let mut best: Option<SearchOutcome> = None;
    let mut prev_r_loss: Option<f64> = None;
    for n1 in (3..=template.n_b).rev() {
        let outcome = match search_k(template, layers, n1, collect_trace) {
            Ok(o) => o,
            Err(DesignError::InfeasibleRate { .. })
            | Err(DesignError::NoFeasibleStructure { .. }) => continue,
            Err(e) => return Err(e),
        };
        total_candidates += outcome.enumerated;
        evaluations.push(N1Evaluation {
            n1,
            k: outcome.k.clone(),
            r_loss: outcome.metrics.r_loss,
            e_loss_db: outcome.metrics.e_loss_db,
            candidates: outcome.enumerated,
        });
        let improved_on_prev = prev_r_loss.is_some_and(|p| p > outcome.metrics.r_loss);
        prev_r_loss = Some(outcome.metrics.r_loss);
        if !full_scan && improved_on_prev {
            return Ok(ScanOutcome {
                selected: outcome,
                evaluations,
                total_candidates,
            });
        }
        let better_than_best = match &best {
            None => true,
            Some(b) => {
                (outcome.metrics.r_loss, outcome.metrics.e_dm)
                    < (b.metrics.r_loss, b.metrics.e_dm)
            }
        };
        if better_than_best {
            best = Some(outcome);
        }
    }
    match best {
        Some(selected) => Ok(ScanOutcome {
            selected,
            evaluations,
            total_candidates,
        }),
        None => Err(DesignError::NoFeasibleFirstBlock { layers }),
    }
}

/// Piecewise finesse coefficient of the energy predictor.
pub fn alpha_for(r_dm: f64) -> f64 {
    if r_dm <= 0.35 {
        0.007
    } else if r_dm <= 0.70 {
        0.014
    } else {
        0.028
    }
}

/// Calibrated predictor inputs from the exhaustively optimized 2-, 3-, and
/// 4-layer references at one rate and budget.
#[derive(Debug, Clone, Serialize)]
pub struct LossModelParams {
    pub four_layer_energy: f64,
    pub two_layer_energy: f64,
    pub four_layer_rate_loss: f64,
    pub two_layer_rate_loss: f64,
    pub three_layer_word_len: u64,
    pub two_layer_word_len: u64,
    pub alpha: f64,
    pub rate: f64,
    pub mb_energy: f64,
    pub energy_term_mode: EnergyTermMode,
}

/// The three reference searches plus the derived predictor parameters.
#[derive(Debug)]
pub struct Calibration {
    pub params: LossModelParams,
    pub two: ScanOutcome,
    pub three: ScanOutcome,
    pub four: ScanOutcome,
}

pub fn calibrate(
    template: &SearchTemplate,
    full_scan: bool,
    mode: EnergyTermMode,
) -> Result<Calibration, DesignError> {
    let four = select_n1(template, 4, full_scan, false)?;
    let three = select_n1(template, 3, full_scan, false)?;
    let two = select_n1(template, 2, full_scan, false)?;
    let params = LossModelParams {
        four_layer_energy: four.selected.metrics.e_dm,
        two_layer_energy: two.selected.metrics.e_dm,
        four_layer_rate_loss: four.selected.metrics.r_loss,
        two_layer_rate_loss: two.selected.metrics.r_loss,
        three_layer_word_len: three.selected.structure.vectors().word_len(),
        two_layer_word_len: two.selected.structure.vectors().word_len(),
        alpha: alpha_for(rate_f64(&template.rate)),
        rate: rate_f64(&template.rate),
        mb_energy: four.selected.metrics.e_mb,
        energy_term_mode: mode,
    };
    Ok(Calibration {
        params,
        two,
        three,
        four,
    })
}

/// Predicted mean energy and energy loss of an `L >= 5` structure.
pub fn predict_energy_loss(
    layers: u32,
    params: &LossModelParams,
) -> Result<(f64, f64), DesignError> {
    if layers < 5 {
        return Err(DesignError::PredictorDomain { layers });
    }
    let e2_term = match params.energy_term_mode {
        EnergyTermMode::PerAmplitude => params.two_layer_energy,
        EnergyTermMode::PerWord => {
            params.two_layer_energy * params.two_layer_word_len as f64
        }
    };
    let factor = 2f64.powi(5 - layers as i32) - 1.0;
    let e_dm = params.four_layer_energy
        + e2_term / (4.0 * params.three_layer_word_len as f64) * factor
        - params.alpha;
    if e_dm <= 0.0 {
        return Err(DesignError::PredictorRange { layers });
    }
    Ok((e_dm, 10.0 * (e_dm / params.mb_energy).log10()))
}

/// Predicted rate loss of an `L >= 5` structure.
pub fn predict_rate_loss(layers: u32, params: &LossModelParams) -> Result<f64, DesignError> {
    if layers < 5 {
        return Err(DesignError::PredictorDomain { layers });
    }
    let factor = 2f64.powi(8 - layers as i32) - 1.0;
    Ok(params.four_layer_rate_loss
        + params.two_layer_rate_loss / (4.0 * params.three_layer_word_len as f64) * factor
        - RATE_LOSS_OFFSET)
}

/// Smallest `L >= 5` whose predicted improvement going to `L+1` falls below
/// the threshold for the chosen objective, capped at [`MAX_LAYERS`].
pub fn select_layers(
    params: &LossModelParams,
    objective: Objective,
    thresholds: SelectThresholds,
) -> Result<u32, DesignError> {
    let loss = |l: u32| -> Result<f64, DesignError> {
        match objective {
            Objective::Energy => Ok(predict_energy_loss(l, params)?.1),
            Objective::Rate => predict_rate_loss(l, params),
        }
    };
    let threshold = match objective {
        Objective::Energy => thresholds.energy_db,
        Objective::Rate => thresholds.rate,
    };
    let cap = MAX_LAYERS as u32;
    for l in 5..cap {
        if loss(l)? - loss(l + 1)? < threshold {
            return Ok(l);
        }
    }
    Ok(cap)
}

/// Inputs of the end-to-end design run.
#[derive(Debug, Clone)]
pub struct DesignConfig {
    pub rate: Ratio<u64>,
    pub n_b: u32,
    pub mem_limit_bits: u64,
    pub objective: Objective,
    pub thresholds: SelectThresholds,
    pub full_scan: bool,
    pub energy_term_mode: EnergyTermMode,
    pub collect_trace: bool,
}

impl DesignConfig {
    pub fn new(rate: Ratio<u64>, n_b: u32, mem_limit_bits: u64) -> Self {
        Self {
            rate,
            n_b,
            mem_limit_bits,
            objective: Objective::Energy,
            thresholds: SelectThresholds::default(),
            full_scan: false,
            energy_term_mode: EnergyTermMode::default(),
            collect_trace: false,
        }
    }
}

/// Digest of one calibration reference for the report.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceSummary {
    pub layers: u32,
    pub n1: u32,
    pub k: Vec<u32>,
    pub r_loss: f64,
    pub e_loss_db: f64,
    pub e_dm: f64,
    pub word_len: u64,
}

impl ReferenceSummary {
    fn new(layers: u32, scan: &ScanOutcome) -> Self {
        Self {
            layers,
            n1: scan.selected.n1,
            k: scan.selected.k.clone(),
            r_loss: scan.selected.metrics.r_loss,
            e_loss_db: scan.selected.metrics.e_loss_db,
            e_dm: scan.selected.metrics.e_dm,
            word_len: scan.selected.structure.vectors().word_len(),
        }
    }
}

/// The full report of one design run.
#[derive(Debug, Serialize)]
pub struct DesignReport {
    pub objective: Objective,
    pub energy_term_mode: EnergyTermMode,
    pub n_b: u32,
    pub symbol_bits: u32,
    pub r_dm: f64,
    pub mem_limit_bits: u64,
    pub chosen_layers: u32,
    #[serde(rename = "M")]
    pub alphabet_sizes: Vec<u32>,
    #[serde(rename = "N")]
    pub block_lengths: Vec<u32>,
    #[serde(rename = "k")]
    pub input_bits: Vec<u32>,
    pub predicted_e_loss_db: Option<f64>,
    pub predicted_r_loss: Option<f64>,
    pub estimated_mem_dec_bits: Option<u64>,
    pub calibration: Vec<ReferenceSummary>,
    pub alpha: f64,
    pub achieved: analysis::MetricsReport,
    pub candidates_enumerated: usize,
    pub structures_evaluated: usize,
}

/// A finished design: the report plus the built structure and, when
/// requested, the per-candidate trace of the final search.
#[derive(Debug)]
pub struct DesignOutcome {
    pub report: DesignReport,
    pub structure: HidmStructure,
    pub memory: MemoryReport,
    pub trace: Vec<CandidateRecord>,
}

/// Run the whole design algorithm: instantiate the template, calibrate on
/// 2-/3-/4-layer exhaustive references, predict losses and pick the layer
/// count just before saturation, verify the estimated decoding memory
/// (`2·mem_dec` as the hardware proxy) against the limit — shrinking the
/// layer count toward 5 and then halving the upper alphabet when it does not
/// fit — and finish with the exhaustive search at the chosen depth. When no
/// predictor-ranged configuration fits, falls back to the best exhaustive
/// design with 4 or fewer layers that fits.
pub fn design(cfg: &DesignConfig) -> Result<DesignOutcome, DesignError> {
    let mut tried = Vec::new();
    let theta_max = cfg.n_b / 2;
    for theta in (2..=theta_max).rev() {
        let template = SearchTemplate::new(cfg.rate, cfg.n_b, 2, 2).with_symbol_bits(theta);
        let calibration = match calibrate(&template, cfg.full_scan, cfg.energy_term_mode) {
            Ok(c) => c,
            Err(DesignError::NoFeasibleFirstBlock { .. }) => continue,
            Err(e) => return Err(e),
        };
        let mut layers = select_layers(&calibration.params, cfg.objective, cfg.thresholds)?;
        let four_k = &calibration.four.selected.k;
        let four_n1 = calibration.four.selected.n1;
        let fits = loop {
            let est = estimate_decoding_memory(four_k, layers, four_n1, theta, 2);
            tried.push(TriedConfig {
                symbol_bits: theta,
                layers,
                twice_mem_dec_bits: 2 * est,
            });
            if 2 * est <= cfg.mem_limit_bits {
                break Some(est);
            }
            if layers == 5 {
                break None;
            }
            layers -= 1;
        };
        let Some(est) = fits else { continue };
        // Final exhaustive search at the selected depth, rescanning N1;
        // verify the built structure's actual memory as well.
        let mut layers_final = layers;
        loop {
            let scan = match select_n1(&template, layers_final, cfg.full_scan, cfg.collect_trace)
            {
                Ok(s) => s,
                Err(DesignError::NoFeasibleFirstBlock { .. }) => break,
                Err(e) => return Err(e),
            };
            let memory = memory_report(scan.selected.structure.vectors());
            if 2 * memory.mem_dec_bits > cfg.mem_limit_bits {
                if layers_final == 5 {
                    break;
                }
                layers_final -= 1;
                continue;
            }
            let selected = scan.selected;
            let evaluated: usize = calibration.two.total_candidates
                + calibration.three.total_candidates
                + calibration.four.total_candidates
                + scan.total_candidates;
            let report = DesignReport {
                objective: cfg.objective,
                energy_term_mode: cfg.energy_term_mode,
                n_b: cfg.n_b,
                symbol_bits: theta,
                r_dm: rate_f64(&cfg.rate),
                mem_limit_bits: cfg.mem_limit_bits,
                chosen_layers: layers_final,
                alphabet_sizes: selected.structure.vectors().alphabet_sizes().to_vec(),
                block_lengths: selected.structure.vectors().block_lengths().to_vec(),
                input_bits: selected.structure.vectors().input_bits().to_vec(),
                predicted_e_loss_db: predict_energy_loss(layers_final, &calibration.params)
                    .ok()
                    .map(|(_, e)| e),
                predicted_r_loss: predict_rate_loss(layers_final, &calibration.params).ok(),
                estimated_mem_dec_bits: Some(est),
                calibration: vec![
                    ReferenceSummary::new(2, &calibration.two),
                    ReferenceSummary::new(3, &calibration.three),
                    ReferenceSummary::new(4, &calibration.four),
                ],
                alpha: calibration.params.alpha,
                achieved: analysis::MetricsReport::new(&selected.metrics, &memory),
                candidates_enumerated: evaluated,
                structures_evaluated: evaluated,
            };
            return Ok(DesignOutcome {
                report,
                memory,
                trace: selected.trace,
                structure: selected.structure,
            });
        }
    }
    // Fallback: exhaustive designs with 4 or fewer layers.
    for theta in (2..=theta_max).rev() {
        let template = SearchTemplate::new(cfg.rate, cfg.n_b, 2, 2).with_symbol_bits(theta);
        for layers in [4u32, 3, 2] {
            let scan = match select_n1(&template, layers, cfg.full_scan, cfg.collect_trace) {
                Ok(s) => s,
                Err(DesignError::NoFeasibleFirstBlock { .. }) => continue,
                Err(e) => return Err(e),
            };
            let memory = memory_report(scan.selected.structure.vectors());
            tried.push(TriedConfig {
                symbol_bits: theta,
                layers,
                twice_mem_dec_bits: 2 * memory.mem_dec_bits,
            });
            if 2 * memory.mem_dec_bits > cfg.mem_limit_bits {
                continue;
            }
            let selected = scan.selected;
            let report = DesignReport {
                objective: cfg.objective,
                energy_term_mode: cfg.energy_term_mode,
                n_b: cfg.n_b,
                symbol_bits: theta,
                r_dm: rate_f64(&cfg.rate),
                mem_limit_bits: cfg.mem_limit_bits,
                chosen_layers: layers,
                alphabet_sizes: selected.structure.vectors().alphabet_sizes().to_vec(),
                block_lengths: selected.structure.vectors().block_lengths().to_vec(),
                input_bits: selected.structure.vectors().input_bits().to_vec(),
                predicted_e_loss_db: None,
                predicted_r_loss: None,
                estimated_mem_dec_bits: None,
                calibration: Vec::new(),
                alpha: alpha_for(rate_f64(&cfg.rate)),
                achieved: analysis::MetricsReport::new(&selected.metrics, &memory),
                candidates_enumerated: scan.total_candidates,
                structures_evaluated: scan.total_candidates,
            };
            return Ok(DesignOutcome {
                report,
                memory,
                trace: selected.trace,
                structure: selected.structure,
            });
        }
    }
    Err(DesignError::MemoryInfeasible {
        limit_bits: cfg.mem_limit_bits,
        tried,
    })
}

/// Predicted `(L, E_loss_db, R_loss)` rows for `L = 5..=l_max`.
pub fn predict_table(
    params: &LossModelParams,
    l_max: u32,
) -> Result<Vec<(u32, f64, f64)>, DesignError> {
    (5..=l_max)
        .map(|l| {
            let (_, e) = predict_energy_loss(l, params)?;
            Ok((l, e, predict_rate_loss(l, params)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn half() -> Ratio<u64> {
        Ratio::new(1, 2)
    }

    fn three_quarters() -> Ratio<u64> {
        Ratio::new(3, 4)
    }

    #[test]
    fn enumerate_contains_published_optimum() {
        let t = SearchTemplate::new(half(), 12, 2, 2);
        let ks = enumerate_k(&t, 4, 11).unwrap();
        assert!(ks.contains(&vec![2, 3, 4, 8]));
        // Ascending lexicographic order.
        for w in ks.windows(2) {
            assert!(w[0] < w[1]);
        }
        // Every candidate satisfies the exact rate equation.
        for k in &ks {
            let total: u64 = k
                .iter()
                .zip([8u64, 4, 2, 1])
                .map(|(&k, t)| k as u64 * t)
                .sum();
            assert_eq!(total, 44);
        }
    }

    #[test]
    fn enumerate_rejects_non_integer_rate() {
        let t = SearchTemplate::new(three_quarters(), 12, 2, 2);
        // L = 2, odd N1: k = 1.5 N1 is not an integer.
        assert!(matches!(
            enumerate_k(&t, 2, 11),
            Err(DesignError::InfeasibleRate { n1: 11 })
        ));
    }

    #[test]
    fn enumerate_two_layer_includes_fig1_shape() {
        // Fig.-1-like rate 0.5 template at L = 2 (budget 8, upper alphabet 4).
        let t = SearchTemplate::new(half(), 8, 2, 2).with_symbol_bits(2);
        let ks = enumerate_k(&t, 2, 4).unwrap();
        assert!(ks.contains(&vec![1, 2]));
    }

    #[test]
    fn alpha_piecewise() {
        assert_eq!(alpha_for(0.25), 0.007);
        assert_eq!(alpha_for(0.35), 0.007);
        assert_eq!(alpha_for(0.5), 0.014);
        assert_eq!(alpha_for(0.70), 0.014);
        assert_eq!(alpha_for(0.75), 0.028);
    }

    #[test]
    fn search_single_candidate_set() {
        let t = SearchTemplate::new(half(), 8, 2, 2);
        // L = 2, N1 = 5: only k = (1, 3) satisfies the rate equation.
        let ks = enumerate_k(&t, 2, 5).unwrap();
        assert_eq!(ks, vec![vec![1, 3]]);
        let out = search_k(&t, 2, 5, false).unwrap();
        assert_eq!(out.k, vec![1, 3]);
    }

    #[test]
    fn search_finds_nb8_four_layer_optimum() {
        let t = SearchTemplate::new(half(), 8, 2, 2);
        let out = search_k(&t, 4, 8, false).unwrap();
        assert_eq!(out.k, vec![1, 3, 3, 6]);
        assert_abs_diff_eq!(out.metrics.r_loss, 0.085076, epsilon = 1e-5);
    }

    #[test]
    fn scan_stop_rule_matches_full_scan_at_half_rate() {
        let t = SearchTemplate::new(half(), 12, 2, 2);
        let scanned = select_n1(&t, 3, false, false).unwrap();
        let full = select_n1(&t, 3, true, false).unwrap();
        assert_eq!(scanned.selected.n1, 11);
        assert_eq!(full.selected.n1, 11);
        assert_eq!(scanned.selected.k, full.selected.k);
    }

    #[test]
    fn scan_falls_back_to_best_seen() {
        // At r = 0.75, N_b = 12, L = 2 the loss only worsens as N1 drops, so
        // the stop rule never fires and the best (N1 = 12) is returned.
        let t = SearchTemplate::new(three_quarters(), 12, 2, 2);
        let scan = select_n1(&t, 2, false, false).unwrap();
        assert_eq!(scan.selected.n1, 12);
        assert_eq!(scan.selected.k, vec![5, 8]);
        assert_abs_diff_eq!(scan.selected.metrics.e_loss_db, 0.43872, epsilon = 1e-4);
    }

    #[test]
    fn calibration_published_values() {
        let t = SearchTemplate::new(three_quarters(), 12, 2, 2);
        let cal = calibrate(&t, false, EnergyTermMode::PerAmplitude).unwrap();
        assert_eq!(cal.four.selected.n1, 11);
        assert_eq!(cal.four.selected.k, vec![4, 5, 3, 8]);
        assert_eq!(cal.params.three_layer_word_len, 44);
        assert_abs_diff_eq!(cal.params.four_layer_energy, 2.890957, epsilon = 1e-5);
        assert_abs_diff_eq!(cal.params.two_layer_energy, 3.004719, epsilon = 1e-5);
        assert_abs_diff_eq!(cal.four.selected.metrics.e_loss_db, 0.271, epsilon = 2e-3);
    }

    #[test]
    fn predictor_published_seven_layer_values() {
        let t = SearchTemplate::new(three_quarters(), 12, 2, 2);
        let cal = calibrate(&t, false, EnergyTermMode::PerAmplitude).unwrap();
        let (_, e7) = predict_energy_loss(7, &cal.params).unwrap();
        assert_abs_diff_eq!(e7, 0.2093, epsilon = 5e-3);
        let r7 = predict_rate_loss(7, &cal.params).unwrap();
        assert_abs_diff_eq!(r7, 0.0313, epsilon = 1e-3);
        // Stepping to 8 layers improves by roughly 4e-3 dB / 4e-4 bits.
        let (_, e8) = predict_energy_loss(8, &cal.params).unwrap();
        assert!((2e-3..6e-3).contains(&(e7 - e8)), "{}", e7 - e8);
        let r8 = predict_rate_loss(8, &cal.params).unwrap();
        assert!((2e-4..6e-4).contains(&(r7 - r8)), "{}", r7 - r8);
    }

    #[test]
    fn predictors_reject_small_l() {
        let t = SearchTemplate::new(three_quarters(), 12, 2, 2);
        let cal = calibrate(&t, false, EnergyTermMode::PerAmplitude).unwrap();
        assert!(matches!(
            predict_energy_loss(4, &cal.params),
            Err(DesignError::PredictorDomain { layers: 4 })
        ));
        assert!(matches!(
            predict_rate_loss(4, &cal.params),
            Err(DesignError::PredictorDomain { layers: 4 })
        ));
    }

    #[test]
    fn predictor_monotone_and_positive_limit() {
        let t = SearchTemplate::new(three_quarters(), 12, 2, 2);
        let cal = calibrate(&t, false, EnergyTermMode::PerAmplitude).unwrap();
        let mut prev_e = f64::INFINITY;
        let mut prev_r = f64::INFINITY;
        for l in 5..=32 {
            let (_, e) = predict_energy_loss(l, &cal.params).unwrap();
            let r = predict_rate_loss(l, &cal.params).unwrap();
            assert!(e < prev_e && r < prev_r, "not strictly decreasing at {l}");
            prev_e = e;
            prev_r = r;
        }
        // Positive asymptotes.
        let p = &cal.params;
        let e_limit = p.four_layer_energy
            - p.two_layer_energy / (4.0 * p.three_layer_word_len as f64)
            - p.alpha;
        assert!(e_limit > p.mb_energy);
        let r_limit = p.four_layer_rate_loss
            - p.two_layer_rate_loss / (4.0 * p.three_layer_word_len as f64)
            - 0.008;
        assert!(r_limit > 0.0);
    }

    #[test]
    fn select_layers_published_case() {
        let t = SearchTemplate::new(three_quarters(), 12, 2, 2);
        let cal = calibrate(&t, false, EnergyTermMode::PerAmplitude).unwrap();
        let thresholds = SelectThresholds::default();
        assert_eq!(
            select_layers(&cal.params, Objective::Energy, thresholds).unwrap(),
            7
        );
        assert_eq!(
            select_layers(&cal.params, Objective::Rate, thresholds).unwrap(),
            7
        );
        // Zero thresholds run into the hard cap.
        let zero = SelectThresholds {
            energy_db: 0.0,
            rate: 0.0,
        };
        assert_eq!(
            select_layers(&cal.params, Objective::Energy, zero).unwrap(),
            MAX_LAYERS as u32
        );
    }

    #[test]
    fn design_memory_infeasible() {
        let cfg = DesignConfig::new(half(), 8, 1);
        match design(&cfg) {
            Err(DesignError::MemoryInfeasible { tried, .. }) => assert!(!tried.is_empty()),
            other => panic!("expected memory infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn design_small_budget_smoke() {
        let cfg = DesignConfig::new(half(), 8, 1 << 26);
        let out = design(&cfg).unwrap();
        assert!(out.report.chosen_layers >= 5);
        assert_eq!(out.report.alphabet_sizes[1], 16);
        assert!(2 * out.memory.mem_dec_bits <= (1 << 26));
        let again = design(&cfg).unwrap();
        assert_eq!(out.report.input_bits, again.report.input_bits);
        assert_eq!(out.structure, again.structure);
    }
}
