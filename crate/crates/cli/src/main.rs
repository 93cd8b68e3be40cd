use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gridmarket::feeder::{self, FeederModel, Phase};
use gridmarket::metering::{self, Deviation, HarmonicSpec, MethodComparison, SampledWaveform};
use gridmarket::sim::{self, ScenarioConfig};
use gridmarket::TraderId;

#[derive(Parser)]
#[command(name = "gridmarket", version, about = "Peer-to-peer energy market simulator")]
struct Cli {
    /// More log output (-v info, -vv debug). GRIDMARKET_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one day and write trades, ledger, quotes, power flows and a summary.
    Run(RunArgs),
    /// Compare integrating and fundamental-frequency P/Q metering.
    Meter(MeterArgs),
    /// Solve the feeder for a set of household injections.
    Powerflow(PowerflowArgs),
    /// Write a synthetic load/PV profile file.
    GenProfiles(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MeterArgs {
    /// Sample file: `sample_rate,<Hz>` line, optional `fundamental,<Hz>`, then `v,i` rows.
    /// Without one, a clean and a distorted demo pair are metered.
    file: Option<PathBuf>,
    /// Write the demo waveforms (distorted case) to this sample file.
    #[arg(long, conflicts_with = "file")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PowerflowArgs {
    /// Feeder description file. The built-in five-household feeder when omitted.
    #[arg(long)]
    feeder: Option<PathBuf>,
    /// Household draw in watts, `HOUSEHOLD=W`; negative for export. Repeatable.
    #[arg(long = "inject", value_parser = parse_injection)]
    injections: Vec<(TraderId, f64)>,
    /// Also write bus voltages as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Scenario file whose household roster is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Profile file to write; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_injection(s: &str) -> Result<(TraderId, f64), String> {
    let (h, w) = s.split_once('=').ok_or_else(|| format!("expected HOUSEHOLD=WATTS, got {s:?}"))?;
    let h = h.trim().trim_start_matches(['H', 'h']);
    let id = h.parse::<u32>().map_err(|_| format!("bad household id {h:?}"))?;
    let w = w.trim().parse::<f64>().map_err(|_| format!("bad power {w:?}"))?;
    if !w.is_finite() {
        return Err(format!("power must be finite, got {w}"));
    }
    Ok((TraderId(id), w))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut config = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(args: RunArgs) -> Result<()> {
    let config = load_config(args.config.as_deref(), args.seed)?;
    log::info!("running seed {} with {} households", config.seed, config.households.len());
    let result = sim::run_day(config)?;
    let written = result.write_outputs(&args.out)?;
    print!("{}", result.summary());
    println!();
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_comparison(label: &str, c: &MethodComparison) {
    println!("{label}");
    println!("  V rms {:.3} V, I rms {:.3} A, theta {:.3} deg", c.v_rms, c.i_rms, c.theta.to_degrees());
    println!("  integration: P {:>10.3} W  Q {:>10.3} var", c.integration.p, c.integration.q);
    println!("  fundamental: P {:>10.3} W  Q {:>10.3} var", c.fundamental.p, c.fundamental.q);
    match c.deviation {
        Deviation::Relative(d) => println!("  P deviation {:.3} %", 100.0 * d),
        Deviation::AbsoluteWatts(d) => println!("  P deviation {d:.3} W (integrated P below 1 W)"),
    }
}

fn demo_pair(harmonics: &HarmonicSpec) -> Result<(SampledWaveform, SampledWaveform)> {
    let v = metering::synthesize(230.0, 0.0, &HarmonicSpec::none(), 10_000.0, 5)?;
    let i = metering::synthesize(10.0, -0.2, harmonics, 10_000.0, 5)?;
    Ok((v, i))
}

fn meter(args: MeterArgs) -> Result<()> {
    if let Some(path) = args.file {
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let (v, i) =
            metering::read_sample_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        print_comparison(&path.display().to_string(), &metering::compare_methods(&v, &i)?);
        return Ok(());
    }
    let (v, i) = demo_pair(&HarmonicSpec::none())?;
    print_comparison("clean sinusoids, 230 V / 10 A", &metering::compare_methods(&v, &i)?);
    let distorted = HarmonicSpec::single(3, 0.3, 0.0);
    let (v, i) = demo_pair(&distorted)?;
    print_comparison("current with 30 % third harmonic", &metering::compare_methods(&v, &i)?);
    if let Some(out) = args.out {
        let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
        metering::write_sample_csv(&mut w, &v, &i)?;
        w.flush()?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn powerflow(args: PowerflowArgs) -> Result<()> {
    let model = match &args.feeder {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            FeederModel::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => feeder::build_default_feeder(),
    };
    let mut injections = BTreeMap::new();
    for (h, w) in args.injections {
        if injections.insert(h, w).is_some() {
            bail!("household {h} injected twice");
        }
    }
    let result = feeder::solve_powerflow(&model, &injections)?;
    if !result.converged {
        bail!(
            "power flow did not converge after {} iterations (mismatch {:.3e} V)",
            result.iterations,
            result.mismatch
        );
    }
    println!("{:<5}{:<7}{:>12}{:>12}", "bus", "phase", "|V| (V)", "angle (deg)");
    for (bus, phases) in result.voltages.iter().enumerate() {
        for ph in Phase::ALL {
            let v = phases[ph.index()];
            println!("{bus:<5}{ph:<7}{:>12.4}{:>12.4}", v.norm(), v.arg().to_degrees());
        }
    }
    println!(
        "source P {:.3} W, losses {:.4} W, {} iterations",
        result.source_active_power(),
        feeder::losses(&result, &model)?,
        result.iterations
    );
    if let Some(out) = args.out {
        let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
        feeder::write_powerflow_header(&mut w)?;
        feeder::write_powerflow_rows(&mut w, 0, &result)?;
        w.flush()?;
    }
    Ok(())
}

fn gen_profiles(args: GenArgs) -> Result<()> {
    let config = load_config(args.config.as_deref(), args.seed)?;
    let table = sim::generate_synthetic_profiles(config.seed, &config.households);
    let text = sim::write_profile_table(&table);
    match args.out {
        Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRIDMARKET_LOG", level)).init();
    match cli.command {
        Command::Run(a) => run(a),
        Command::Meter(a) => meter(a),
        Command::Powerflow(a) => powerflow(a),
        Command::GenProfiles(a) => gen_profiles(a),
    }
}
