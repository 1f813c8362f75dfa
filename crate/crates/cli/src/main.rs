//! Command-line surface for HiDM construction, design, coding, and AWGN
//! evaluation.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 infeasible design,
//! 4 non-codeword input.

use clap::{Args, Parser, Subcommand, ValueEnum};
use hidm_core::analysis::{memory_report, metrics, MetricsReport};
use hidm_core::codec::{encode, pack_bits, unpack_bits, CodecError, Decoder};
use hidm_core::design::{
    calibrate, design, predict_table, CandidateRecord, DesignConfig, DesignError, EnergyTermMode,
    Objective, SearchTemplate, SelectThresholds,
};
use hidm_core::shaping::{AmplitudeAlphabet, AmplitudeDistribution};
use hidm_core::sim::{
    build_constellation, crossing_osnr, info_rate, osnr_to_snr, simulate_with_source, LinkConfig,
    PasConstellation, SimPoint, SymbolSource,
};
use hidm_core::structure::{validate, BitBudget, CharacterizationVectors, HidmStructure};
use num_rational::Ratio;
use serde::Deserialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NON_CODEWORD: u8 = 4;

#[derive(Parser)]
#[command(name = "hidm", version, about = "Hierarchical distribution matchers for PAS-16QAM")]
struct Cli {
    /// Worker threads for search and simulation (default: all cores;
    /// results are identical for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a structure from a {version, M, N, k} config file.
    Build(BuildArgs),
    /// Run the end-to-end design algorithm for a target rate and bit budget.
    Design(DesignArgs),
    /// Print predicted energy/rate losses per layer count after calibration.
    Predict(PredictArgs),
    /// Encode a packed bit stream into an amplitude stream.
    Encode(StreamArgs),
    /// Decode an amplitude stream back into a packed bit stream.
    Decode(StreamArgs),
    /// Monte-Carlo NGMI-vs-OSNR sweep of the shaped constellation.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Config JSON path.
    config: PathBuf,
    /// Write the built structure JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics output format on stdout.
    #[arg(long, value_enum, default_value_t = Format::Human)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Args)]
struct DesignArgs {
    /// Target matcher rate in bits/amplitude, decimal or a/b (e.g. 0.75).
    #[arg(long)]
    rdm: String,
    /// Maximum LUT input/output bits.
    #[arg(long)]
    nb: u32,
    /// Hardware memory limit compared against 2*mem_dec. Plain integers are
    /// bits; suffixes kB/MB/GB are SI bytes, kbit/Mbit/Gbit SI bits.
    #[arg(long, default_value = "100Mbit")]
    mem_limit: String,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Energy)]
    objective: ObjectiveArg,
    /// Evaluate every feasible N1 instead of the early-stopping scan.
    #[arg(long)]
    full_scan: bool,
    /// Write one CSV row per candidate evaluated in the final search.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the design report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the winning structure JSON here.
    #[arg(long)]
    out_structure: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Energy,
    Rate,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    rdm: String,
    #[arg(long)]
    nb: u32,
    /// Largest layer count to tabulate (>= 5).
    #[arg(long)]
    lmax: u32,
    #[arg(long)]
    full_scan: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StreamArgs {
    /// Structure JSON produced by `build` or `design --out-structure`.
    #[arg(long)]
    structure: PathBuf,
    #[arg(long, name = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Structure JSON whose exact output marginal shapes the constellation.
    #[arg(long, conflicts_with = "p1")]
    structure: Option<PathBuf>,
    /// Explicit probability of amplitude 1.
    #[arg(long)]
    p1: Option<f64>,
    /// OSNR grid start:stop:step in dB, e.g. 8:16:0.25.
    #[arg(long)]
    osnr: String,
    /// Symbol rate in baud.
    #[arg(long, default_value_t = 37e9)]
    baud: f64,
    /// FEC code rate; also the default NGMI threshold.
    #[arg(long, default_value_t = 0.8)]
    rfec: f64,
    /// OSNR reference bandwidth in Hz.
    #[arg(long, default_value_t = 12.5e9)]
    bref: f64,
    /// Single-polarization OSNR convention.
    #[arg(long)]
    single_pol: bool,
    #[arg(long, default_value_t = 1_000_000)]
    symbols: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Draw amplitudes i.i.d. from the marginal or stream real encoded
    /// blocks (requires --structure).
    #[arg(long, value_enum, default_value_t = SourceArg::Iid)]
    source: SourceArg,
    /// Also sweep uniform 16-QAM and report the OSNR gain at the threshold.
    #[arg(long)]
    compare_uniform: bool,
    /// Symbol rate of the uniform reference sweep.
    #[arg(long, default_value_t = 31.25e9)]
    uniform_baud: f64,
    /// NGMI threshold for the gain measurement (default: rfec).
    #[arg(long)]
    threshold: Option<f64>,
    /// Write the shaped-series CSV here (required with --compare-uniform;
    /// the uniform series goes to <out>.uniform.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Iid,
    Encoded,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore the error when a pool already exists (tests call run twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Build(args) => cmd_build(args),
        Command::Design(args) => cmd_design(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildConfig {
    version: u32,
    #[serde(rename = "M")]
    m: Vec<u32>,
    #[serde(rename = "N")]
    n: Vec<u32>,
    #[serde(rename = "k")]
    k: Vec<u32>,
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_structure(path: &Path) -> Result<HidmStructure, CliError> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    HidmStructure::from_json(&text).map_err(|e| CliError::input(e.to_string()))
}

fn cmd_build(args: BuildArgs) -> Result<(), CliError> {
    let text = read_file(&args.config)?;
    let config: BuildConfig =
        serde_json::from_slice(&text).map_err(|e| CliError::input(format!("config: {e}")))?;
    if config.version != 1 {
        return Err(CliError::input(format!(
            "unsupported config version {}",
            config.version
        )));
    }
    let vectors = CharacterizationVectors::derive(&config.m, &config.n, &config.k)
        .map_err(|e| CliError::input(e.to_string()))?;
    // Mandatory invertibility constraints; the width budget is the
    // structure's own widest interface, so only (iii)/(iv) can trip here.
    let budget = BitBudget::new(vectors.max_lut_bits(), 2);
    let violations = validate(&vectors, &budget, false);
    if !violations.is_empty() {
        let mut msg = String::from("validation failed:");
        for v in violations {
            let _ = write!(msg, "\n  {v}");
        }
        return Err(CliError::input(msg));
    }
    let structure = HidmStructure::build(vectors).map_err(|e| CliError::input(e.to_string()))?;
    if let Some(out) = &args.out {
        write_file(out, structure.to_json().as_bytes())?;
    }
    let m = metrics(&structure).map_err(|e| CliError::input(e.to_string()))?;
    let mem = memory_report(structure.vectors());
    match args.format {
        Format::Json => {
            let report = MetricsReport::new(&m, &mem);
            println!("{}", serde_json::to_string(&report).unwrap());
        }
        Format::Human => {
            let v = structure.vectors();
            println!(
                "layers={} M={:?} N={:?} k={:?} k_total={} N_total={} rate={}",
                v.layer_count(),
                v.alphabet_sizes(),
                v.block_lengths(),
                v.input_bits(),
                v.total_bits(),
                v.word_len(),
                m.r_dm,
            );
            println!(
                "p1={} H={} R_loss={} E_DM={} E_MB={} E_loss={} dB",
                m.p1(),
                m.entropy_h,
                m.r_loss,
                m.e_dm,
                m.e_mb,
                m.e_loss_db
            );
            println!(
                "mem_enc={} mem_dec={} mem_total={} bits (max LUT width {})",
                mem.mem_enc_bits,
                mem.mem_dec_bits,
                mem.mem_total_bits,
                v.max_lut_bits()
            );
        }
    }
    Ok(())
}

fn parse_rate(s: &str) -> Result<Ratio<u64>, CliError> {
    let bad = || CliError::input(format!("cannot parse rate '{s}'"));
    let rate = if let Some((a, b)) = s.split_once('/') {
        let num: u64 = a.trim().parse().map_err(|_| bad())?;
        let den: u64 = b.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        Ratio::new(num, den)
    } else if let Some((int, frac)) = s.split_once('.') {
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        if frac.is_empty() || frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let scale = 10u64.pow(frac.len() as u32);
        let frac: u64 = frac.parse().map_err(|_| bad())?;
        Ratio::new(int * scale + frac, scale)
    } else {
        Ratio::new(s.trim().parse().map_err(|_| bad())?, 1)
    };
    if rate <= Ratio::new(0, 1) || rate >= Ratio::new(1, 1) {
        return Err(CliError::input(format!(
            "rate must lie in (0, 1) bits/amplitude, got {s}"
        )));
    }
    Ok(rate)
}

fn parse_mem_limit(s: &str) -> Result<u64, CliError> {
    let bad = || CliError::input(format!("cannot parse memory limit '{s}'"));
    let lower = s.trim().to_ascii_lowercase();
    let (digits, mult) = if let Some(d) = lower.strip_suffix("kbit") {
        (d, 1_000u64)
    } else if let Some(d) = lower.strip_suffix("mbit") {
        (d, 1_000_000)
    } else if let Some(d) = lower.strip_suffix("gbit") {
        (d, 1_000_000_000)
    } else if let Some(d) = lower.strip_suffix("kb") {
        (d, 8_000)
    } else if let Some(d) = lower.strip_suffix("mb") {
        (d, 8_000_000)
    } else if let Some(d) = lower.strip_suffix("gb") {
        (d, 8_000_000_000)
    } else {
        (lower.as_str(), 1)
    };
    let value: u64 = digits.trim().parse().map_err(|_| bad())?;
    value.checked_mul(mult).ok_or_else(bad)
}

fn cmd_design(args: DesignArgs) -> Result<(), CliError> {
    let cfg = DesignConfig {
        rate: parse_rate(&args.rdm)?,
        n_b: args.nb,
        mem_limit_bits: parse_mem_limit(&args.mem_limit)?,
        objective: match args.objective {
            ObjectiveArg::Energy => Objective::Energy,
            ObjectiveArg::Rate => Objective::Rate,
        },
        thresholds: SelectThresholds::default(),
        full_scan: args.full_scan,
        energy_term_mode: EnergyTermMode::default(),
        collect_trace: args.trace.is_some(),
    };
    if args.nb < 4 {
        return Err(CliError::input("--nb must be at least 4"));
    }
    let outcome = design(&cfg).map_err(|e| match e {
        DesignError::MemoryInfeasible { .. } => CliError {
            code: EXIT_INFEASIBLE,
            message: e.to_string(),
        },
        other => CliError::input(other.to_string()),
    })?;
    if let Some(path) = &args.trace {
        write_file(path, trace_csv(&outcome.trace).as_bytes())?;
    }
    if let Some(path) = &args.out_structure {
        write_file(path, outcome.structure.to_json().as_bytes())?;
    }
    let report = serde_json::to_string(&outcome.report).unwrap();
    match &args.out {
        Some(path) => write_file(path, report.as_bytes())?,
        None => println!("{report}"),
    }
    Ok(())
}

fn trace_csv(records: &[CandidateRecord]) -> String {
    let mut out = String::from("n1,k,r_loss,e_loss_db\n");
    for r in records {
        let k = r
            .k
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join("-");
        let _ = writeln!(out, "{},{},{},{}", r.n1, k, r.r_loss, r.e_loss_db);
    }
    out
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    if args.lmax < 5 {
        return Err(CliError::input("--lmax must be at least 5"));
    }
    let rate = parse_rate(&args.rdm)?;
    let template = SearchTemplate::new(rate, args.nb, 2, 2);
    let calibration = calibrate(&template, args.full_scan, EnergyTermMode::default())
        .map_err(|e| CliError::input(e.to_string()))?;
    let rows = predict_table(&calibration.params, args.lmax)
        .map_err(|e| CliError::input(e.to_string()))?;
    let mut csv = String::from("L,pred_e_loss_db,pred_r_loss\n");
    for (l, e, r) in rows {
        let _ = writeln!(csv, "{l},{e},{r}");
    }
    match &args.out {
        Some(path) => write_file(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_encode(args: StreamArgs) -> Result<(), CliError> {
    let structure = load_structure(&args.structure)?;
    let bits = unpack_bits(&read_file(&args.input)?);
    let k = structure.vectors().total_bits() as usize;
    if bits.len() % k != 0 {
        return Err(CliError::input(format!(
            "input holds {} bits, not a multiple of k = {k}",
            bits.len()
        )));
    }
    let mut amps: Vec<u8> = Vec::with_capacity(
        bits.len() / k * structure.vectors().word_len() as usize,
    );
    for block in bits.chunks(k) {
        let word = encode(&structure, block).map_err(|e| CliError::input(e.to_string()))?;
        amps.extend(word.iter().map(|&a| a as u8));
    }
    write_file(&args.out, &amps)
}

fn cmd_decode(args: StreamArgs) -> Result<(), CliError> {
    let structure = load_structure(&args.structure)?;
    let decoder = Decoder::new(&structure);
    let data = read_file(&args.input)?;
    let n = structure.vectors().word_len() as usize;
    if data.len() % n != 0 {
        return Err(CliError::input(format!(
            "input holds {} amplitudes, not a multiple of N = {n}",
            data.len()
        )));
    }
    let mut bits = Vec::with_capacity(data.len() / n * structure.vectors().total_bits() as usize);
    for (index, word) in data.chunks(n).enumerate() {
        let amps: Vec<u16> = word.iter().map(|&b| b as u16).collect();
        match decoder.decode(&amps) {
            Ok(b) => bits.extend(b),
            Err(e @ CodecError::NonCodeword { .. }) => {
                return Err(CliError {
                    code: EXIT_NON_CODEWORD,
                    message: format!("word {index}: {e}"),
                })
            }
            Err(e) => return Err(CliError::input(e.to_string())),
        }
    }
    write_file(&args.out, &pack_bits(&bits))
}

fn parse_osnr_grid(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::input(format!("cannot parse OSNR grid '{s}' (want start:stop:step)"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let vals: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    Ok((vals[0], vals[1], vals[2]))
}

fn sweep_csv(points: &[SimPoint]) -> String {
    let mut out = String::from("osnr_db,snr_db,gmi_bits_per_sym,ngmi\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.osnr_db, p.snr_db, p.gmi, p.ngmi);
    }
    out
}

fn run_sweep(
    c: &PasConstellation,
    cfg: &LinkConfig,
    grid: (f64, f64, f64),
    source: &SymbolSource,
) -> Result<Vec<SimPoint>, CliError> {
    // Mirrors sim::sweep but threads the symbol source through.
    let (start, stop, step) = grid;
    if !(step > 0.0) || stop < start {
        return Err(CliError::input("empty OSNR grid"));
    }
    let count = ((stop - start) / step).floor() as u64 + 1;
    let mut points = Vec::with_capacity(count as usize);
    for idx in 0..count {
        let osnr_db = start + idx as f64 * step;
        let snr_db = osnr_to_snr(osnr_db, cfg);
        let seed = derive_seed(cfg.seed, idx);
        let (gmi, ngmi) = simulate_with_source(c, snr_db, cfg.n_symbols, seed, source)
            .map_err(|e| CliError::input(e.to_string()))?;
        points.push(SimPoint {
            osnr_db,
            snr_db,
            gmi,
            ngmi,
        });
    }
    Ok(points)
}

fn derive_seed(seed: u64, idx: u64) -> u64 {
    // Same derivation sim::sweep uses.
    let mut x = seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.symbols < 10_000 {
        eprintln!(
            "warning: {} symbols gives a large Monte-Carlo error; consider >= 10000",
            args.symbols
        );
    }
    let structure = match &args.structure {
        Some(path) => Some(load_structure(path)?),
        None => None,
    };
    let p1 = match (&structure, args.p1) {
        (Some(s), None) => {
            let m = metrics(s).map_err(|e| CliError::input(e.to_string()))?;
            m.p1()
        }
        (None, Some(p1)) => {
            if !(0.0..=1.0).contains(&p1) {
                return Err(CliError::input("--p1 must lie in [0, 1]"));
            }
            p1
        }
        (None, None) => {
            return Err(CliError::input("one of --structure or --p1 is required"))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if !(0.0 < args.rfec && args.rfec <= 1.0) {
        return Err(CliError::input("--rfec must lie in (0, 1]"));
    }
    let alphabet = AmplitudeAlphabet::pam(2);
    let dist = AmplitudeDistribution::new(alphabet.clone(), vec![p1, 1.0 - p1])
        .map_err(|e| CliError::input(e.to_string()))?;
    let shaped = build_constellation(&dist).map_err(|e| CliError::input(e.to_string()))?;
    let grid = parse_osnr_grid(&args.osnr)?;
    let mut cfg = LinkConfig::new(args.baud, args.rfec, args.symbols, args.seed);
    cfg.b_ref = args.bref;
    cfg.dual_pol = !args.single_pol;
    let source = match (args.source, &structure) {
        (SourceArg::Iid, _) => SymbolSource::Iid,
        (SourceArg::Encoded, Some(s)) => SymbolSource::Encoded(s),
        (SourceArg::Encoded, None) => {
            return Err(CliError::input("--source encoded requires --structure"))
        }
    };
    let shaped_points = run_sweep(&shaped, &cfg, grid, &source)?;
    let shaped_csv = sweep_csv(&shaped_points);
    if args.compare_uniform {
        let out = args.out.as_ref().ok_or_else(|| {
            CliError::input("--compare-uniform needs --out for the two series")
        })?;
        write_file(out, shaped_csv.as_bytes())?;
        let uniform_dist = AmplitudeDistribution::new(alphabet, vec![0.5, 0.5]).unwrap();
        let uniform = build_constellation(&uniform_dist).unwrap();
        let mut uniform_cfg = cfg.clone();
        uniform_cfg.baud = args.uniform_baud;
        let uniform_points = run_sweep(&uniform, &uniform_cfg, grid, &SymbolSource::Iid)?;
        let uniform_path = out.with_extension("uniform.csv");
        write_file(&uniform_path, sweep_csv(&uniform_points).as_bytes())?;
        let threshold = args.threshold.unwrap_or(args.rfec);
        let shaped_cross = crossing_osnr(&shaped_points, threshold);
        let uniform_cross = crossing_osnr(&uniform_points, threshold);
        let gain = match (shaped_cross, uniform_cross) {
            (Some(s), Some(u)) => Some(u - s),
            _ => None,
        };
        println!(
            "{}",
            serde_json::json!({
                "threshold": threshold,
                "osnr_at_threshold_shaped": shaped_cross,
                "osnr_at_threshold_uniform": uniform_cross,
                "osnr_gain_db": gain,
                "shaped_info_rate_bits_per_sym": info_rate(metricish_rate(&dist), args.rfec),
            })
        );
    } else {
        match &args.out {
            Some(path) => write_file(path, shaped_csv.as_bytes())?,
            None => print!("{shaped_csv}"),
        }
    }
    Ok(())
}

/// Amplitude entropy of the distribution actually simulated.
fn metricish_rate(dist: &AmplitudeDistribution) -> f64 {
    hidm_core::shaping::entropy_bits(dist)
}
