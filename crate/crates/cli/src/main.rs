//! `phonocycle`: simulate blinking traces, analyze them, evaluate and fit
//! anti-Stokes rate models, and compute toy-lattice phonon modes.

mod analyze;
mod failure;
mod fit;
mod io;
mod modes;
mod rate;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failure::{CliResult, EXIT_CONFIG};
use rate::RateModel;

#[derive(Parser)]
#[command(name = "phonocycle", version, about = "Phonon-assisted charge-cycle rates: simulate, analyze, model, fit")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = "PHONOCYCLE_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate photon-count traces and write a manifest of the true rates.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate the dark-to-bright rate from each trace.
    Analyze {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fixed count threshold instead of the bimodal split.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_dwell_bins: Option<usize>,
        /// Used for traces without a wavelength header.
        #[arg(long)]
        wavelength: Option<f64>,
        /// Used for traces without a temperature header.
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Evaluate a rate model on a wavelength × temperature grid.
    Rate {
        #[arg(value_enum)]
        model: RateModel,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Emission spectrum CSV (qc).
        #[arg(long)]
        spectrum: Option<PathBuf>,
        /// The spectrum abscissa is photon energy rather than detuning.
        #[arg(long)]
        photon_energy: bool,
        /// Mode set JSON (em).
        #[arg(long)]
        modeset: Option<PathBuf>,
        #[arg(long)]
        scale: Option<f64>,
        /// Zero-phonon line in nm [default: 575].
        #[arg(long)]
        zpl: Option<f64>,
        /// `lo:hi:step` or a comma-separated list, in nm.
        #[arg(long, value_parser = io::grid_arg)]
        wavelengths: Option<io::Grid>,
        /// `lo:hi:step` or a comma-separated list, in K.
        #[arg(long, value_parser = io::grid_arg)]
        temperatures: Option<io::Grid>,
        #[arg(long)]
        max_quanta: Option<u32>,
        /// Resonance window half-width in units of Γ/2.
        #[arg(long)]
        window: Option<f64>,
        /// Output file [default: <out-dir>/rates.csv].
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Fit a rate model to measured rates.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Exit with status 3 if the optimizer did not converge.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        multistart: Option<usize>,
        #[arg(long)]
        max_evals: Option<usize>,
    },
    /// Normal modes and Huang–Rhys factors of a toy lattice.
    Modes {
        lattice: PathBuf,
        /// Write the top-K modes by S_k as a mode set JSON.
        #[arg(long)]
        export_modeset: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        top_k: usize,
        /// Lorentzian FWHM of the exported mode set, meV.
        #[arg(long, default_value_t = 5.0)]
        fwhm: f64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let out = &cli.out_dir;
    match cli.command {
        Command::Simulate { config } => simulate::run(&config, out, cli.seed),
        Command::Analyze {
            traces,
            config,
            threshold,
            min_dwell_bins,
            wavelength,
            temperature,
        } => analyze::run(
            &analyze::AnalyzeArgs {
                traces: &traces,
                config: config.as_deref(),
                threshold,
                min_dwell_bins,
                wavelength,
                temperature,
            },
            out,
        ),
        Command::Rate {
            model,
            config,
            spectrum,
            photon_energy,
            modeset,
            scale,
            zpl,
            wavelengths,
            temperatures,
            max_quanta,
            window,
            output,
        } => rate::run(
            rate::RateArgs {
                model,
                config,
                spectrum,
                photon_energy,
                modeset,
                scale,
                zpl,
                wavelengths: wavelengths.map(|g| g.0),
                temperatures: temperatures.map(|g| g.0),
                max_quanta,
                window,
                output,
            },
            out,
        ),
        Command::Fit {
            data,
            config,
            strict,
            multistart,
            max_evals,
        } => fit::run(
            &fit::FitArgs {
                data: &data,
                config: &config,
                strict,
                seed: cli.seed,
                multistart,
                max_evals,
            },
            out,
        ),
        Command::Modes {
            lattice,
            export_modeset,
            top_k,
            fwhm,
            scale,
        } => modes::run(
            &modes::ModesArgs {
                lattice: &lattice,
                export_modeset,
                top_k,
                fwhm,
                scale,
            },
            out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
