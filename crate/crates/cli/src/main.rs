use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cpi_scma::analysis::{abler_bound, transmission_efficiency, Sampling};
use cpi_scma::index_map::IndexLut;
use cpi_scma::sim::{
    emit_report, load_report, parse_snr_range, report_csv, run_sweep, SimConfig, SimSystem,
};

#[derive(Parser)]
#[command(
    name = "cpi-scma",
    version,
    about = "Index-modulated SCMA link simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a BER/BLER sweep.
    Simulate(SimulateArgs),
    #[command(subcommand)]
    Analyze(Analyze),
    #[command(subcommand)]
    Lut(LutCmd),
}

#[derive(Args)]
struct SnrArgs {
    /// Inclusive grid `A:B:STEP` in dB.
    #[arg(long, conflicts_with = "snr_list")]
    snr: Option<String>,
    /// Comma-separated grid in dB.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr_list: Option<Vec<f64>>,
}

impl SnrArgs {
    fn apply(&self, cfg: &mut SimConfig) -> Result<()> {
        if let Some(s) = &self.snr {
            cfg.snr_db = parse_snr_range(s)?;
        } else if let Some(l) = &self.snr_list {
            cfg.snr_db = l.clone();
        }
        Ok(())
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    snr: SnrArgs,
    #[arg(long)]
    max_frames: Option<u64>,
    #[arg(long)]
    min_bit_errors: Option<u64>,
    /// CSV report path; a `.json` sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write 0 in the `seconds` column so reports are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Analyze {
    /// Union bound on the block error rate of one user.
    Bound(BoundArgs),
    /// Error-pattern statistics of a saved report.
    Patterns {
        #[arg(long)]
        report: PathBuf,
    },
    /// Transmission efficiency of a block shape.
    Efficiency {
        #[arg(long, default_value_t = 6)]
        users: usize,
        #[arg(long, default_value_t = 4)]
        resources: usize,
        #[arg(long, default_value_t = 4)]
        size: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
    },
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    snr: SnrArgs,
    /// Monte Carlo pairs per point; exhaustive when omitted.
    #[arg(long)]
    samples: Option<usize>,
    /// 1-based user index.
    #[arg(long, default_value_t = 1)]
    user: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the rational product form instead of the Rayleigh-averaged tail approximation.
    #[arg(long)]
    rational_product_upep: bool,
}

#[derive(Subcommand)]
enum LutCmd {
    /// Print the index lookup table.
    Show {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        /// Read the table from a file instead of generating it.
        #[arg(long)]
        lut: Option<PathBuf>,
    },
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg =
        SimConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    a.snr.apply(&mut cfg)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.max_frames {
        cfg.max_frames = m;
    }
    if let Some(m) = a.min_bit_errors {
        cfg.min_bit_errors = m;
    }
    if a.no_timing {
        cfg.record_timing = false;
    }
    let report = run_sweep(&cfg, a.workers)?;
    match &a.out {
        Some(p) => {
            emit_report(&report, p)?;
            for pt in &report.points {
                println!(
                    "{:>7.2} dB  BER {:.4e}  BLER {:.4e}  frames {}",
                    pt.snr_db,
                    pt.ber(),
                    pt.bler(),
                    pt.frames
                );
            }
        }
        None => print!("{}", report_csv(&report)),
    }
    Ok(())
}

fn bound(a: &BoundArgs) -> Result<()> {
    let mut cfg = SimConfig::load(&a.config)?;
    a.snr.apply(&mut cfg)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let sys = SimSystem::new(&cfg)?;
    if a.user == 0 || a.user > sys.codebook.num_users() {
        bail!("--user must be in 1..={}", sys.codebook.num_users());
    }
    let sampling = match a.samples {
        Some(s) => Sampling::MonteCarlo(s),
        None => Sampling::Exhaustive,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    println!("snr_db,bound,std_error,pairs");
    for &snr in &cfg.snr_db {
        let n0 = sys.noise_var(snr)?;
        let b = abler_bound(
            &sys.codebook,
            &sys.format,
            n0,
            a.user - 1,
            sampling,
            a.rational_product_upep,
            &mut rng,
        )?;
        println!("{snr},{},{},{}", b.value, b.std_error, b.pairs);
    }
    Ok(())
}

fn patterns(path: &PathBuf) -> Result<()> {
    let report = load_report(path)?;
    let (n, _) = report.config.block_shape();
    let mut header = vec!["snr_db".to_string(), "records".into(), "reliable".into()];
    header.extend((0..=n).map(|g| format!("delta_case{g}")));
    header.push("extra_complexity".into());
    println!("{}", header.join(","));
    for p in &report.points {
        let mut row = vec![
            p.snr_db.to_string(),
            p.patterns.blocks.to_string(),
            p.patterns.reliable_ratio().to_string(),
        ];
        row.extend((0..=n).map(|g| p.patterns.delta(g).to_string()));
        row.push(p.patterns.extra_complexity().to_string());
        println!("{}", row.join(","));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Analyze(Analyze::Bound(a)) => bound(&a),
        Command::Analyze(Analyze::Patterns { report }) => patterns(&report),
        Command::Analyze(Analyze::Efficiency {
            users,
            resources,
            size,
            n,
            t,
        }) => {
            let e = transmission_efficiency(users, resources, size, n, t)?;
            println!("conventional {}", e.conventional);
            println!("indexed {}", e.indexed);
            println!("ratio {}", e.ratio);
            Ok(())
        }
        Command::Lut(LutCmd::Show { n, t, lut }) => {
            let table = match lut {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    IndexLut::from_text(&text, n, t)?
                }
                None => IndexLut::new(n, t)?,
            };
            print!("{table}");
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
