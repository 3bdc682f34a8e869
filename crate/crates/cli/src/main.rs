use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fhloc_cli::config::{self, PRESETS};
use fhloc_cli::{cmd_run, cmd_tdoa_diag, crlb_rows, crlb_table, CliError, CrlbParams};

#[derive(Parser)]
#[command(name = "fhloc", version, about = "TDoA localization campaigns for frequency-hopping emitters")]
struct Cli {
    /// Worker threads for trial-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// TOML config, or a JSON summary whose scenario echo is reused.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Named preset used as the base configuration.
    #[arg(long, short)]
    preset: Option<String>,
    /// `key=value` or `section.key=value`; may be repeated.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, short = 'O', default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run a localization campaign.
    Run(ScenarioArgs),
    /// Per-pulse TDoA errors only, no position solver.
    TdoaDiag {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Histogram bin width, ns.
        #[arg(long, default_value_t = 1.0)]
        bin_ns: f64,
    },
    /// Single-pulse TDoA Cramér-Rao bound over a range of SNRs.
    Crlb {
        /// RMS bandwidth, kHz (default: measured on the default pulse).
        #[arg(long)]
        rms_bandwidth_khz: Option<f64>,
        /// Noise bandwidth, MHz (default: Carson bandwidth of the default pulse).
        #[arg(long)]
        noise_bandwidth_mhz: Option<f64>,
        #[arg(long)]
        pulse_width_ms: Option<f64>,
        /// Pulses in incoherent accumulation.
        #[arg(long)]
        num_pulses: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20,25,30")]
        snr_db: Vec<f64>,
    },
    /// List named presets.
    PresetsList,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => {
            let cfg = config::load(a.config.as_deref(), a.preset.as_deref(), &a.overrides)?;
            let report = cmd_run(&cfg, &a.out)?;
            print!("{}", report.table());
            for f in &report.files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::TdoaDiag { scenario: a, bin_ns } => {
            let cfg = config::load(a.config.as_deref(), a.preset.as_deref(), &a.overrides)?;
            let report = cmd_tdoa_diag(&cfg, &a.out, bin_ns)?;
            let s = &report.summary;
            println!("estimates       {}", s.count);
            println!("mean            {:.3} ns", s.mean_ns);
            println!("std             {:.3} ns", s.std_ns);
            println!("5% / 50% / 95%  {:.3} / {:.3} / {:.3} ns", s.p05_ns, s.p50_ns, s.p95_ns);
            println!("within 8 ns     {:.4}", s.fraction_within_8ns);
            println!("within 10 ns    {:.4}", s.fraction_within_10ns);
            for f in &report.files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Crlb { rms_bandwidth_khz, noise_bandwidth_mhz, pulse_width_ms, num_pulses, snr_db } => {
            let params = CrlbParams {
                rms_bandwidth_hz: rms_bandwidth_khz.map(|v| v * 1e3),
                noise_bandwidth_hz: noise_bandwidth_mhz.map(|v| v * 1e6),
                pulse_width_s: pulse_width_ms.map(|v| v * 1e-3),
                num_pulses,
                snr_db,
            };
            let rows = crlb_rows(&params)?;
            print!("{}", crlb_table(&rows, num_pulses.unwrap_or(10)));
        }
        Command::PresetsList => {
            for p in PRESETS {
                println!("{:<14} {}", p.name, p.description);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
