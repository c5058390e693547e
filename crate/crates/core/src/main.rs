use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ratesplit::harness::{figure_preset, run_sweep, write_csv, ExperimentConfig, RunMode};
use ratesplit::regions::{
    build_modified_mac_polytope, enumerate_rs_sets, enumerate_rs_sub_sets, DecodeSet, LayerSet,
};
use ratesplit::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ratesplit",
    version,
    about = "Symmetric-rate sweeps for pilot-contaminated massive MIMO"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write per-scheme mean symmetric SE as CSV.
    Simulate {
        /// JSON experiment config.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in figure config (fig2a, fig2b, fig3a, fig3b, fig4, fig5a, fig5b).
        #[arg(long)]
        preset: Option<String>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<RunMode>,
        #[arg(long)]
        realizations: Option<usize>,
        /// Print the effective config to stderr before running.
        #[arg(long)]
        show_config: bool,
    },
    /// Print modified-MAC constraints in the golden dump format.
    DumpRegion {
        /// Number of cells.
        #[arg(long = "L", value_name = "L")]
        cells: usize,
        /// 1-based receiver cell.
        #[arg(long, default_value_t = 1)]
        receiver: usize,
        /// Decode set such as `1a,1b,2b`; every set of the family when omitted.
        #[arg(long)]
        decode: Option<String>,
        #[arg(long, value_enum, default_value_t = Family::Full)]
        family: Family,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Full,
    Sub,
}

fn parse_mode(s: &str) -> std::result::Result<RunMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn simulate(
    config: Option<PathBuf>,
    preset: Option<String>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    mode: Option<RunMode>,
    realizations: Option<usize>,
    show_config: bool,
) -> Result<()> {
    let mut cfg = match (config, preset) {
        (Some(path), _) => ExperimentConfig::load(&path)?,
        (None, Some(name)) => figure_preset(&name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(n) = realizations {
        cfg.realizations = n;
    }
    if show_config {
        eprintln!("{}", cfg.to_json()?);
    }
    let rows = run_sweep(&cfg)?;
    match out {
        Some(path) => write_csv(&rows, BufWriter::new(File::create(path)?)),
        None => write_csv(&rows, io::stdout().lock()),
    }
}

fn dump_region(
    cells: usize,
    receiver: usize,
    decode: Option<String>,
    family: Family,
) -> Result<()> {
    if receiver == 0 || receiver > cells {
        return Err(Error::InvalidArgument(format!(
            "receiver must be in 1..={cells}"
        )));
    }
    let r = receiver - 1;
    let mut stdout = io::stdout().lock();
    if let Some(text) = decode {
        let layers: LayerSet = text.parse()?;
        let poly = build_modified_mac_polytope(cells, DecodeSet::new(r, layers)?)?;
        write!(stdout, "{}", poly.dump())?;
        return Ok(());
    }
    let sets = match family {
        Family::Full => enumerate_rs_sets(r, cells)?,
        Family::Sub => enumerate_rs_sub_sets(r, cells)?,
    };
    for set in sets {
        let poly = build_modified_mac_polytope(cells, set)?;
        writeln!(
            stdout,
            "# Omega={} constraints={}",
            set.layers,
            poly.constraints.len()
        )?;
        write!(stdout, "{}", poly.dump())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            preset,
            out,
            seed,
            mode,
            realizations,
            show_config,
        } => simulate(config, preset, out, seed, mode, realizations, show_config),
        Command::DumpRegion {
            cells,
            receiver,
            decode,
            family,
        } => dump_region(cells, receiver, decode, family),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
