use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdcnet::experiments::{PresetId, ScanParam, EQUAL_PATH_RATIO};
use pdcnet_cli::config::{
    parse_complex_constant, parse_pair, parse_unchecked, ConfigError, ConfigErrors, GridSpec, ModelChoice, NetworkSource, Origin,
    PhaseLockConfig, RunConfig, Sources,
};
use pdcnet_cli::expr::parse_constant;
use pdcnet_cli::run::execute;
use serde_json::json;

#[derive(Parser)]
#[command(name = "pdcnet", version, about = "Multi-crystal down-conversion interferometer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scans and write CSV tables plus summary.json.
    Run(RunFlags),
    /// Check a configuration without running it.
    Validate(RunFlags),
    /// List the built-in presets.
    Presets {
        #[arg(long)]
        json: bool,
    },
    /// Print the normalized configuration.
    DumpConfig(RunFlags),
}

#[derive(Args, Default)]
struct RunFlags {
    /// Configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Seed the idler inputs of the preset with a coherent state.
    #[arg(long)]
    seeded: bool,
    /// Seed amplitude as `re,im`.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    /// Filter amplitude transmission.
    #[arg(long)]
    tau: Option<String>,
    /// Filter phase in radians.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    /// Crystal gain applied to every crystal of the preset.
    #[arg(long)]
    gain: Option<String>,
    /// Base value of the signal phase.
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<String>,
    /// Base value of the pump phase.
    #[arg(long, allow_hyphen_values = true)]
    phi_p: Option<String>,
    /// Fringe grid as `start:end:step`.
    #[arg(long, allow_hyphen_values = true)]
    phi_grid: Option<String>,
    /// Transmission grid as `start:end:step`; adds a visibility-vs-tau table.
    #[arg(long)]
    tau_grid: Option<String>,
    /// Scanned parameter: phi, phi_p, tau or phi_coupled.
    #[arg(long)]
    scan: Option<String>,
    /// Detector whose rate is scanned.
    #[arg(long)]
    detector: Option<String>,
    /// Detector pair for coincidences, `detA,detD`.
    #[arg(long)]
    coincidence: Option<String>,
    /// Rate model: auto, full or stimulated.
    #[arg(long)]
    model: Option<String>,
    /// Compare against the Fock-space oracle.
    #[arg(long)]
    oracle: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Print the summary as JSON on stdout.
    #[arg(long)]
    json: bool,
    /// Run the phase-locking ensemble.
    #[arg(long)]
    phase_lock: bool,
    /// Ensemble size; implies --phase-lock.
    #[arg(long)]
    ensemble: Option<String>,
    /// Scan phi with the pump phase advancing in proportion.
    #[arg(long)]
    couple_phases: bool,
    /// Pump-phase advance per radian of phi when coupling phases.
    #[arg(long)]
    coupling_ratio: Option<String>,
}

enum Failure {
    Config(ConfigErrors),
    Runtime(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (body, code) = match self {
            Failure::Config(errs) => (
                json!({ "error": { "kind": "config", "message": errs.to_string(), "details": errs.0 } }),
                2,
            ),
            Failure::Runtime(message) => (json!({ "error": { "kind": "runtime", "message": message } }), 1),
        };
        eprintln!("{body}");
        ExitCode::from(code)
    }
}

fn flag_error(flag: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { key: flag.trim_start_matches("--").replace('-', "_"), origin: Some(Origin::Flag(flag.into())), message: message.into() }
}

/// Loads the config file, if any, and applies command-line overrides.
fn assemble(flags: &RunFlags) -> Result<RunConfig, Failure> {
    let (mut cfg, mut sources) = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            parse_unchecked(&text).map_err(Failure::Config)?
        }
        None => (RunConfig::default(), Sources::new()),
    };
    let mut errors = Vec::new();
    let mut set = |flag: &'static str, key: &str, r: Result<(), String>, sources: &mut Sources| match r {
        Ok(()) => {
            sources.insert(key.to_string(), Origin::Flag(flag.into()));
        }
        Err(m) => errors.push(flag_error(flag, m)),
    };

    if let Some(p) = &flags.preset {
        let r = match (p.parse::<PresetId>(), &cfg.network) {
            (Err(e), _) => Err(e.to_string()),
            (Ok(_), Some(NetworkSource::Inline(_))) => Err("--preset conflicts with the inline network of the config".into()),
            (Ok(id), _) => {
                cfg.network = Some(NetworkSource::Preset(id));
                Ok(())
            }
        };
        set("--preset", "preset", r, &mut sources);
    }
    if flags.seeded {
        cfg.seeded = Some(true);
        set("--seeded", "seeded", Ok(()), &mut sources);
    }
    if let Some(a) = &flags.alpha {
        let r = parse_complex_constant(a).map(|v| cfg.alpha = Some(v));
        set("--alpha", "alpha", r, &mut sources);
    }
    if let Some(g) = &flags.gain {
        let r = parse_complex_constant(g).map(|v| cfg.gain = Some(v));
        set("--gain", "gain", r, &mut sources);
    }
    for (flag, key, value) in [
        ("--tau", "tau", &flags.tau),
        ("--theta", "theta", &flags.theta),
        ("--phi", "phi", &flags.phi),
        ("--phi-p", "phi_p", &flags.phi_p),
    ] {
        if let Some(v) = value {
            let r = parse_constant(v).map(|x| match key {
                "tau" => cfg.bindings.tau = x,
                "theta" => cfg.bindings.theta = x,
                "phi" => cfg.bindings.phi = x,
                _ => cfg.bindings.phi_p = x,
            });
            set(flag, key, r, &mut sources);
        }
    }
    if let Some(g) = &flags.phi_grid {
        let r = GridSpec::parse(g).map(|v| cfg.phi_grid = v);
        set("--phi-grid", "phi_grid", r, &mut sources);
    }
    if let Some(g) = &flags.tau_grid {
        let r = GridSpec::parse(g).map(|v| cfg.tau_grid = Some(v));
        set("--tau-grid", "tau_grid", r, &mut sources);
    }
    if let Some(s) = &flags.scan {
        let r = ScanParam::from_name(s).map(|v| cfg.scan = Some(v)).map_err(|e| e.to_string());
        set("--scan", "scan", r, &mut sources);
    }
    if flags.couple_phases {
        if !matches!(cfg.scan, Some(ScanParam::Coupled { .. })) {
            cfg.scan = Some(ScanParam::Coupled { ratio: EQUAL_PATH_RATIO });
        }
        set("--couple-phases", "scan", Ok(()), &mut sources);
    }
    if let Some(r) = &flags.coupling_ratio {
        let r = parse_constant(r).and_then(|ratio| match cfg.scan {
            Some(ScanParam::Coupled { .. }) => {
                cfg.scan = Some(ScanParam::Coupled { ratio });
                Ok(())
            }
            _ => Err("--coupling-ratio needs --couple-phases".into()),
        });
        set("--coupling-ratio", "coupling_ratio", r, &mut sources);
    }
    if let Some(d) = &flags.detector {
        cfg.detector = Some(d.trim().to_string());
        set("--detector", "detector", Ok(()), &mut sources);
    }
    if let Some(c) = &flags.coincidence {
        let r = parse_pair(c).map(|p| cfg.coincidence = Some(p));
        set("--coincidence", "coincidence", r, &mut sources);
    }
    if let Some(m) = &flags.model {
        let r = ModelChoice::parse(m).map(|v| cfg.model = v);
        set("--model", "model", r, &mut sources);
    }
    if flags.oracle {
        cfg.oracle = true;
    }
    if let Some(o) = &flags.out {
        cfg.out = o.clone();
        set("--out", "out", Ok(()), &mut sources);
    }
    if flags.phase_lock && cfg.phase_lock.is_none() {
        cfg.phase_lock = Some(PhaseLockConfig::default());
        set("--phase-lock", "phase_lock", Ok(()), &mut sources);
    }
    if let Some(n) = &flags.ensemble {
        let r = n.trim().parse::<usize>().map_err(|_| format!("ensemble size `{n}` is not a whole number")).map(|n| {
            cfg.phase_lock.get_or_insert_with(PhaseLockConfig::default).ensemble = n;
        });
        set("--ensemble", "phase_lock.ensemble", r, &mut sources);
    }

    if !errors.is_empty() {
        return Err(Failure::Config(ConfigErrors(errors)));
    }
    cfg.check(&sources).map_err(Failure::Config)?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("PDCNET_THREADS") else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::Runtime(format!("PDCNET_THREADS=`{value}` is not a whole number")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(flags: &RunFlags) -> Result<(), Failure> {
    let cfg = assemble(flags)?;
    configure_threads()?;
    let output = execute(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    let written = output.write(Path::new(&cfg.out)).map_err(|e| Failure::Runtime(e.to_string()))?;
    if flags.json {
        print!("{}", output.summary.to_json());
    } else {
        for path in written {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(flags) => run(flags),
        Command::Validate(flags) => assemble(flags).map(|_| println!("configuration is valid")),
        Command::DumpConfig(flags) => assemble(flags).map(|cfg| print!("{}", cfg.to_text())),
        Command::Presets { json } => {
            if *json {
                let list: Vec<_> = PresetId::ALL
                    .iter()
                    .map(|id| json!({ "name": id.name(), "description": id.description(), "scan": id.fringe_parameter().name() }))
                    .collect();
                println!("{}", serde_json::to_string_pretty(&list).expect("preset list serializes"));
            } else {
                for id in PresetId::ALL {
                    println!("{:<14}{}", id.name(), id.description());
                }
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
