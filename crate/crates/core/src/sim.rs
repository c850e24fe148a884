//! Monte Carlo sweeps over Eb/N0 and their CSV reports.
//!
//! Every frame draws its randomness from its own ChaCha8 stream, selected by
//! `(snr index << 40) | frame index` under the master seed, so results do not
//! depend on how frames are spread over workers. Frames are processed in fixed
//! batches and the stop rule is checked only between batches.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::PatternStats;
use crate::channel::{
    draw_channel, noise_variance, superimpose, ChannelState, Coherence, ReceivedFrame,
};
use crate::codebook::{Codebook, FactorGraph};
use crate::error::{Error, Result};
use crate::index_map::IndexLut;
use crate::mpa::{MpaParams, ZeroPrior};
use crate::mpad::{Mpad, PatternCase, DEFAULT_PML_CAP};
use crate::transmitter::{BlockFormat, NormalizeMode, SymbolMapping, UserBlock};

/// Frames simulated between stop-rule checks.
pub const BATCH_FRAMES: u64 = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    #[default]
    CpiScma,
    CScma,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelModel {
    #[default]
    Rayleigh,
    /// All gains one (test hook).
    Unit,
}

/// What one error-pattern record stands for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternCounting {
    /// One record per user per frame.
    #[default]
    PerUser,
    /// One record per frame, marking every case that any user hit.
    PerFrame,
}

fn default_users() -> usize {
    6
}
fn default_resources() -> usize {
    4
}
fn default_size() -> usize {
    4
}
fn default_n() -> usize {
    4
}
fn default_t() -> usize {
    2
}
fn default_iterations() -> usize {
    6
}
fn default_cap() -> u64 {
    DEFAULT_PML_CAP
}
fn default_max_frames() -> u64 {
    1_000_000
}
fn default_min_errors() -> u64 {
    400
}
fn default_true() -> bool {
    true
}

/// Simulation configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub system: System,
    #[serde(rename = "J", default = "default_users")]
    pub users: usize,
    #[serde(rename = "K", default = "default_resources")]
    pub resources: usize,
    #[serde(rename = "M", default = "default_size")]
    pub codebook_size: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    /// Codebook file; the bundled codebook when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<PathBuf>,
    /// LUT override file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lut: Option<PathBuf>,
    #[serde(default = "default_iterations")]
    pub mpa_iterations: usize,
    #[serde(default)]
    pub normalization: NormalizeMode,
    #[serde(default)]
    pub coherence: Coherence,
    #[serde(default)]
    pub symbol_mapping: SymbolMapping,
    #[serde(default)]
    pub zero_prior: ZeroPrior,
    #[serde(default = "default_cap")]
    pub pml_cap: u64,
    pub snr_db: Vec<f64>,
    #[serde(default = "default_max_frames")]
    pub max_frames: u64,
    #[serde(default = "default_min_errors")]
    pub min_bit_errors: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pattern_counting: PatternCounting,
    #[serde(default)]
    pub channel: ChannelModel,
    /// When false no noise is added and the detector runs at its noise floor.
    #[serde(default = "default_true")]
    pub noise: bool,
    /// When false the `seconds` column is written as 0.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

impl SimConfig {
    /// The 6-user, 4-resource, 4-point setup with the given block shape.
    pub fn reference(system: System, n: usize, t: usize, snr_db: Vec<f64>) -> SimConfig {
        SimConfig {
            system,
            users: 6,
            resources: 4,
            codebook_size: 4,
            n,
            t,
            codebook: None,
            lut: None,
            mpa_iterations: default_iterations(),
            normalization: NormalizeMode::default(),
            coherence: Coherence::default(),
            symbol_mapping: SymbolMapping::default(),
            zero_prior: ZeroPrior::default(),
            pml_cap: DEFAULT_PML_CAP,
            snr_db,
            max_frames: default_max_frames(),
            min_bit_errors: default_min_errors(),
            seed: 0,
            pattern_counting: PatternCounting::default(),
            channel: ChannelModel::default(),
            noise: true,
            record_timing: true,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<SimConfig> {
        toml::from_str(text).map_err(|e| Error::from_toml(text, e))
    }

    /// Reads a config; relative file paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<SimConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = SimConfig::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.codebook, &mut cfg.lut].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `(n, t)` actually simulated: `(1, 1)` for conventional SCMA.
    pub fn block_shape(&self) -> (usize, usize) {
        match self.system {
            System::CpiScma => (self.n, self.t),
            System::CScma => (1, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.snr_db.is_empty() {
            return bad("snr grid is empty".into());
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return bad("snr grid contains non-finite values".into());
        }
        if self.snr_db.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!(
                "snr grid must be strictly increasing: {:?}",
                self.snr_db
            ));
        }
        if self.max_frames == 0 {
            return bad("max_frames must be positive".into());
        }
        if self.mpa_iterations == 0 {
            return bad("mpa_iterations must be positive".into());
        }
        for p in [&self.codebook, &self.lut].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("file not found: {}", p.display()));
            }
        }
        Ok(())
    }
}

/// Everything derived from a config that frames need.
#[derive(Debug, Clone)]
pub struct SimSystem {
    pub config: SimConfig,
    pub codebook: Codebook,
    pub graph: FactorGraph,
    pub format: BlockFormat,
    pub mpa: MpaParams,
}

impl SimSystem {
    pub fn new(config: &SimConfig) -> Result<SimSystem> {
        config.validate()?;
        let codebook = match &config.codebook {
            Some(p) => Codebook::load(p)?,
            None => Codebook::bundled(),
        };
        if (
            codebook.num_users(),
            codebook.num_resources(),
            codebook.size(),
        ) != (config.users, config.resources, config.codebook_size)
        {
            return Err(Error::Config(format!(
                "config says J={}, K={}, M={} but the codebook has J={}, K={}, M={}",
                config.users,
                config.resources,
                config.codebook_size,
                codebook.num_users(),
                codebook.num_resources(),
                codebook.size()
            )));
        }
        let (n, t) = config.block_shape();
        let lut = match (&config.lut, config.system) {
            (Some(p), System::CpiScma) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                IndexLut::from_text(&text, n, t)?
            }
            _ => IndexLut::new(n, t).map_err(|e| Error::Config(e.to_string()))?,
        };
        let format = BlockFormat::new(
            lut,
            codebook.size(),
            config.symbol_mapping,
            config.normalization,
        )?;
        let augment = config.system == System::CpiScma;
        let zero_probability = match (augment, config.zero_prior) {
            (true, ZeroPrior::Weighted) if n > t => Some((n - t) as f64 / n as f64),
            _ => None,
        };
        let mpa = MpaParams {
            iterations: config.mpa_iterations,
            augment_zero: augment,
            zero_probability,
        };
        let graph = codebook.factor_graph();
        Ok(SimSystem {
            config: config.clone(),
            codebook,
            graph,
            format,
            mpa,
        })
    }

    pub fn detector(&self) -> Result<Mpad<'_>> {
        Mpad::new(
            &self.codebook,
            &self.graph,
            &self.format,
            self.mpa,
            self.config.pml_cap,
        )
    }

    /// Noise variance per chip at `ebn0_db`.
    pub fn noise_var(&self, ebn0_db: f64) -> Result<f64> {
        noise_variance(
            ebn0_db,
            self.format.bits_per_block(),
            self.format.block_energy(),
        )
    }

    /// Per-frame random source.
    pub fn frame_rng(&self, snr_index: usize, frame: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(((snr_index as u64) << 40) | frame);
        rng
    }

    /// Draws the bits, blocks and received frame of one frame.
    pub fn draw_frame(&self, snr_index: usize, frame: u64) -> Result<FrameInputs> {
        let mut rng = self.frame_rng(snr_index, frame);
        let n0 = self.noise_var(self.config.snr_db[snr_index])?;
        let users = self.codebook.num_users();
        let bits: Vec<Vec<u8>> = (0..users)
            .map(|_| {
                (0..self.format.bits_per_block())
                    .map(|_| rng.random_range(0..2u8))
                    .collect()
            })
            .collect();
        let blocks = bits
            .iter()
            .enumerate()
            .map(|(j, b)| self.format.encode(b, j))
            .collect::<Result<Vec<_>>>()?;
        let (n, _) = self.config.block_shape();
        let k = self.codebook.num_resources();
        let channel = match self.config.channel {
            ChannelModel::Rayleigh => draw_channel(&mut rng, users, n, k, self.config.coherence),
            ChannelModel::Unit => ChannelState::unit(users, n * k),
        };
        let noise = if self.config.noise { n0 } else { 0.0 };
        let mut frame = superimpose(&blocks, &self.codebook, &channel, noise, &mut rng)?;
        // detector works at the nominal N0 so the noiseless hook exercises the floor
        frame.noise_var = noise;
        Ok(FrameInputs {
            bits,
            blocks,
            frame,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FrameInputs {
    pub bits: Vec<Vec<u8>>,
    pub blocks: Vec<UserBlock>,
    pub frame: ReceivedFrame,
}

/// Tallies for one SNR point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub frames: u64,
    pub bits: u64,
    pub bit_errors: u64,
    pub index_bit_errors: u64,
    pub symbol_bit_errors: u64,
    /// User blocks (`frames * J`).
    pub blocks: u64,
    pub block_errors: u64,
    pub patterns: PatternStats,
    pub pml_fallbacks: u64,
    pub seconds: f64,
}

impl SweepPoint {
    fn empty(snr_db: f64, n: usize) -> SweepPoint {
        SweepPoint {
            snr_db,
            frames: 0,
            bits: 0,
            bit_errors: 0,
            index_bit_errors: 0,
            symbol_bit_errors: 0,
            blocks: 0,
            block_errors: 0,
            patterns: PatternStats::new(n),
            pml_fallbacks: 0,
            seconds: 0.0,
        }
    }

    fn absorb(&mut self, o: &SweepPoint) {
        self.frames += o.frames;
        self.bits += o.bits;
        self.bit_errors += o.bit_errors;
        self.index_bit_errors += o.index_bit_errors;
        self.symbol_bit_errors += o.symbol_bit_errors;
        self.blocks += o.blocks;
        self.block_errors += o.block_errors;
        self.patterns.merge(&o.patterns);
        self.pml_fallbacks += o.pml_fallbacks;
    }

    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits as f64
        }
    }

    pub fn bler(&self) -> f64 {
        if self.blocks == 0 {
            0.0
        } else {
            self.block_errors as f64 / self.blocks as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SimConfig,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn bers(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.snr_db, p.ber())).collect()
    }
}

/// Simulates and scores one frame.
pub fn simulate_frame(
    sys: &SimSystem,
    det: &Mpad<'_>,
    snr_index: usize,
    frame: u64,
) -> Result<SweepPoint> {
    let inputs = sys.draw_frame(snr_index, frame)?;
    let out = det.detect_frame(&inputs.frame)?;
    let (n, _) = sys.config.block_shape();
    let mut p = SweepPoint::empty(sys.config.snr_db[snr_index], n);
    let m1 = sys.format.index_bits();
    p.frames = 1;
    for (tx, rx) in inputs.bits.iter().zip(&out.bits) {
        let idx = tx[..m1]
            .iter()
            .zip(&rx[..m1])
            .filter(|(a, b)| a != b)
            .count() as u64;
        let sym = tx[m1..]
            .iter()
            .zip(&rx[m1..])
            .filter(|(a, b)| a != b)
            .count() as u64;
        p.bits += tx.len() as u64;
        p.index_bit_errors += idx;
        p.symbol_bit_errors += sym;
        p.bit_errors += idx + sym;
        p.blocks += 1;
        p.block_errors += u64::from(idx + sym > 0);
    }
    match sys.config.pattern_counting {
        PatternCounting::PerUser => {
            for d in &out.diagnostics.users {
                p.patterns.record(d);
            }
        }
        PatternCounting::PerFrame => {
            p.patterns.blocks = 1;
            let mut any = false;
            for g in 0..=n {
                if out
                    .diagnostics
                    .users
                    .iter()
                    .any(|d| d.case == PatternCase::Case(g))
                {
                    p.patterns.case_counts[g] = 1;
                    any = true;
                }
            }
            p.patterns.reliable = u64::from(!any);
            p.patterns.extra_search = out
                .diagnostics
                .users
                .iter()
                .map(|d| d.candidates as u64)
                .sum();
        }
    }
    p.pml_fallbacks = u64::from(out.diagnostics.pml_fallback);
    Ok(p)
}

/// Runs the configured sweep on `workers` threads (0 = rayon default).
pub fn run_sweep(config: &SimConfig, workers: usize) -> Result<SweepReport> {
    let sys = SimSystem::new(config)?;
    let det = sys.detector()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let (n, _) = config.block_shape();
    let mut points = Vec::with_capacity(config.snr_db.len());
    for (si, &snr) in config.snr_db.iter().enumerate() {
        let start = Instant::now();
        let mut acc = SweepPoint::empty(snr, n);
        while acc.frames < config.max_frames && acc.bit_errors < config.min_bit_errors {
            let first = acc.frames;
            let count = BATCH_FRAMES.min(config.max_frames - first);
            let batch: Vec<SweepPoint> = pool.install(|| {
                (first..first + count)
                    .into_par_iter()
                    .map(|f| simulate_frame(&sys, &det, si, f))
                    .collect::<Result<Vec<_>>>()
            })?;
            for b in &batch {
                acc.absorb(b);
            }
        }
        if config.record_timing {
            acc.seconds = start.elapsed().as_secs_f64();
        }
        points.push(acc);
    }
    Ok(SweepReport {
        config: config.clone(),
        points,
    })
}

/// Path of the JSON sidecar that accompanies a CSV report.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    generator: String,
    seed: u64,
    bits_per_block: usize,
    index_bits: usize,
    amplitude_scale: f64,
    lut: String,
    codebook_renormalized: bool,
    config: SimConfig,
}

fn csv_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "snr_db",
        "frames",
        "bits",
        "bit_errors",
        "index_bit_errors",
        "symbol_bit_errors",
        "ber",
        "blocks",
        "block_errors",
        "bler",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..=n).map(|g| format!("delta_case{g}")));
    h.extend(
        [
            "reliable_ratio",
            "extra_complexity",
            "pml_fallbacks",
            "seconds",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

/// Renders the CSV body of a report.
pub fn report_csv(report: &SweepReport) -> String {
    let (n, _) = report.config.block_shape();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(n)).unwrap();
    for p in &report.points {
        let mut row = vec![
            p.snr_db.to_string(),
            p.frames.to_string(),
            p.bits.to_string(),
            p.bit_errors.to_string(),
            p.index_bit_errors.to_string(),
            p.symbol_bit_errors.to_string(),
            p.ber().to_string(),
            p.blocks.to_string(),
            p.block_errors.to_string(),
            p.bler().to_string(),
        ];
        row.extend((0..=n).map(|g| p.patterns.delta(g).to_string()));
        row.push(p.patterns.reliable_ratio().to_string());
        row.push(p.patterns.extra_complexity().to_string());
        row.push(p.pml_fallbacks.to_string());
        row.push(p.seconds.to_string());
        w.write_record(&row).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Writes the CSV report and its sidecar.
pub fn emit_report(report: &SweepReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let sys = SimSystem::new(&report.config)?;
    std::fs::write(path, report_csv(report)).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        generator: format!("cpi-scma {}", env!("CARGO_PKG_VERSION")),
        seed: report.config.seed,
        bits_per_block: sys.format.bits_per_block(),
        index_bits: sys.format.index_bits(),
        amplitude_scale: sys.format.scale(),
        lut: sys.format.lut().to_text(),
        codebook_renormalized: sys.codebook.renormalized(),
        config: report.config.clone(),
    };
    let sp = sidecar_path(path);
    let json = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    std::fs::write(&sp, json + "\n").map_err(|e| Error::io(&sp, e))
}

/// Reads a report written by [`emit_report`].
pub fn load_report(path: impl AsRef<Path>) -> Result<SweepReport> {
    let path = path.as_ref();
    let sp = sidecar_path(path);
    let side_text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: Sidecar = serde_json::from_str(&side_text).map_err(|e| Error::Parse {
        location: format!("{} line {}", sp.display(), e.line()),
        message: e.to_string(),
    })?;
    let config = side.config;
    let (n, _) = config.block_shape();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.into(),
        source: e,
    })?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header != csv_header(n) {
        return Err(Error::Parse {
            location: format!("{} line 1", path.display()),
            message: "unexpected CSV header".into(),
        });
    }
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?;
        let field = |c: usize| -> Result<&str> {
            rec.get(c).ok_or_else(|| Error::Parse {
                location: format!("{} line {}", path.display(), i + 2),
                message: format!("missing column {}", header[c]),
            })
        };
        let f = |c: usize| -> Result<f64> {
            field(c)?.parse().map_err(|_| Error::Parse {
                location: format!("{} line {}, field `{}`", path.display(), i + 2, header[c]),
                message: "not a number".into(),
            })
        };
        let u = |c: usize| -> Result<u64> {
            field(c)?.parse().map_err(|_| Error::Parse {
                location: format!("{} line {}, field `{}`", path.display(), i + 2, header[c]),
                message: "not an integer".into(),
            })
        };
        let blocks = u(7)?;
        let records = match config.pattern_counting {
            PatternCounting::PerUser => blocks,
            PatternCounting::PerFrame => u(1)?,
        };
        let count = |r: f64| (r * records as f64).round() as u64;
        let base = 10;
        let mut patterns = PatternStats::new(n);
        patterns.blocks = records;
        for g in 0..=n {
            patterns.case_counts[g] = count(f(base + g)?);
        }
        patterns.reliable = count(f(base + n + 1)?);
        patterns.extra_search = count(f(base + n + 2)?);
        points.push(SweepPoint {
            snr_db: f(0)?,
            frames: u(1)?,
            bits: u(2)?,
            bit_errors: u(3)?,
            index_bit_errors: u(4)?,
            symbol_bit_errors: u(5)?,
            blocks,
            block_errors: u(8)?,
            patterns,
            pml_fallbacks: u(base + n + 3)?,
            seconds: f(base + n + 4)?,
        });
    }
    Ok(SweepReport { config, points })
}

/// Parses `A:B:STEP` into an inclusive grid.
pub fn parse_snr_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("bad SNR range `{spec}`, expected A:B:STEP"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (a, b, step) = (v[0], v[1], v[2]);
    if !(step > 0.0) || b < a {
        return Err(bad());
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| a + i as f64 * step).collect())
}
