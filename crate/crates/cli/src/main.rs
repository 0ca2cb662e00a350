use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ltss_core::bench::run_bench;
use ltss_core::field::PrimeField;
use ltss_core::scenario::{PhaseKind, ScenarioConfig};
use ltss_core::sim::Simulation;
use ltss_core::stores::inspect;
use ltss_core::Error;

/// Exit status for configuration errors.
const EXIT_CONFIG: u8 = 64;
/// Exit status for any other failure to run.
const EXIT_SOFTWARE: u8 = 70;

#[derive(Parser)]
#[command(name = "ltss", version, about = "Long-term secure storage simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register data with the share holders and the verifier.
    Register(RunArgs),
    /// Register, then reconstruct and hand the data to the end user.
    Reconstruct(RunArgs),
    /// Register, reconstruct, then run the integrity check.
    Verify(RunArgs),
    /// Register, reconstruct, then let the owner refute the end user's claim.
    Refute(RunArgs),
    /// Register, renew the shares, then reconstruct and verify.
    Renew(RunArgs),
    /// Run the phase list from the scenario file.
    Run(RunArgs),
    /// Time every phase across the configured data sizes.
    Bench(BenchArgs),
    /// Dump a store file, holder directory or transcript.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct Scenario {
    /// Scenario file; built-in defaults when absent.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, env = "LTSS_SEED")]
    seed: Option<u64>,
    /// Override any scenario field, e.g. `--set tpv.k=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    threshold: Option<usize>,
    #[arg(long)]
    holders: Option<usize>,
    /// Share field, e.g. `group`, `mersenne:127` or `2^127-25`.
    #[arg(long)]
    field: Option<String>,
    /// Commitment group: `rfc5114-2048-256`, `toy`, `generate:<bits>`, `none`.
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    size_bytes: Option<usize>,
    #[arg(long)]
    password: Option<String>,
    /// Password tried at reconstruction.
    #[arg(long)]
    attempt: Option<String>,
    /// Tamper injections.
    #[arg(long)]
    tamper_owner: bool,
    #[arg(long)]
    false_claim_user: bool,
    #[arg(long, value_name = "HOLDER")]
    corrupt_holder: Option<u64>,
    #[arg(long = "drop-holder", value_name = "HOLDER")]
    drop_holders: Vec<u64>,
    /// Keep stores on disk in this directory.
    #[arg(long)]
    store_dir: Option<PathBuf>,
}

impl Scenario {
    fn load(&self) -> anyhow::Result<ScenarioConfig> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut sets = self.sets.clone();
        let quoted = |s: &str| format!("{s:?}");
        let mut push = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                sets.push(format!("{key}={v}"));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("threshold", self.threshold.map(|v| v.to_string()));
        push("holders", self.holders.map(|v| v.to_string()));
        push("field", self.field.as_deref().map(quoted));
        push("group", self.group.as_deref().map(quoted));
        push("data.size_bytes", self.size_bytes.map(|v| v.to_string()));
        push("data.password", self.password.as_deref().map(quoted));
        push("data.attempt", self.attempt.as_deref().map(quoted));
        push("attacks.tamper_owner", self.tamper_owner.then(|| "true".into()));
        push("attacks.false_claim_user", self.false_claim_user.then(|| "true".into()));
        push("attacks.corrupt_holder", self.corrupt_holder.map(|v| v.to_string()));
        if !self.drop_holders.is_empty() {
            push("attacks.drop_holders", Some(format!("{:?}", self.drop_holders)));
        }
        push(
            "output.store_dir",
            self.store_dir.as_ref().map(|p| quoted(&p.display().to_string())),
        );
        Ok(ScenarioConfig::from_toml_with(&text, &sets)?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: Scenario,
    /// Write the transcript here.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Print the whole transcript instead of the verdicts only.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: Scenario,
    /// Data sizes in bytes, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    dat: Option<PathBuf>,
    /// Skip the Mersenne against general prime comparison.
    #[arg(long)]
    no_compare: bool,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
    /// Share field of a holder store, when it cannot be read from the file.
    #[arg(long)]
    field: Option<String>,
}

fn phases_for(cmd: &Command) -> Option<Vec<PhaseKind>> {
    use PhaseKind::*;
    Some(match cmd {
        Command::Register(_) => vec![Register],
        Command::Reconstruct(_) => vec![Register, Reconstruct],
        Command::Verify(_) => vec![Register, Reconstruct, Verify],
        Command::Refute(_) => vec![Register, Reconstruct, Refute],
        Command::Renew(_) => vec![Register, Renew, Reconstruct, Verify],
        _ => return None,
    })
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let phases = phases_for(&cli.command);
    match cli.command {
        Command::Register(a)
        | Command::Reconstruct(a)
        | Command::Verify(a)
        | Command::Refute(a)
        | Command::Renew(a)
        | Command::Run(a) => {
            let mut cfg = a.scenario.load()?;
            if let Some(p) = phases {
                cfg.phases = p;
            }
            if let Some(t) = a.transcript {
                cfg.output.transcript = Some(t);
            }
            let out = cfg.output.transcript.clone();
            let (report, _) = Simulation::new(cfg)?.run();
            if a.verbose {
                print!("{}", report.transcript);
            } else {
                for v in &report.verdicts {
                    println!("{v}");
                }
            }
            println!("transcript {}", report.transcript_id);
            if let Some(p) = out {
                std::fs::write(&p, &report.transcript).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(report.exit_code as u8)
        }
        Command::Bench(a) => {
            let mut cfg = a.scenario.load()?;
            if !a.sizes.is_empty() {
                cfg.bench.sizes_bytes = a.sizes;
            }
            if let Some(r) = a.repetitions {
                cfg.bench.repetitions = r;
            }
            if a.csv.is_some() {
                cfg.output.bench_csv = a.csv;
            }
            if a.dat.is_some() {
                cfg.output.bench_dat = a.dat;
            }
            if a.no_compare {
                cfg.bench.compare_fields = false;
            }
            cfg.resolve()?;
            let report = run_bench(&cfg)?;
            print!("{}", report.table());
            report.write_outputs(&cfg)?;
            Ok(0)
        }
        Command::Inspect(a) => {
            let field = a.field.as_deref().map(PrimeField::parse).transpose()?;
            print!("{}", inspect(&a.path, field.as_ref())?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)));
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_SOFTWARE })
        }
    }
}
