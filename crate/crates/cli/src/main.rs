use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use memctrl::error::exit;
use memctrl::eval::{Decode, Variant};
use memctrl::memworld::types::Subset;
use memctrl::pipeline::{self, Command, RunConfig};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  other failure
  2  usage or configuration error
  3  file could not be read or written
  4  malformed artifact, dimension or checkpoint mismatch
  5  numeric failure (NaN or divergence)
  6  task generator or planner failure
  7  replay produced different bytes";

const EXIT_REPLAY_MISMATCH: u8 = 7;

#[derive(Parser, Debug)]
#[command(name = "memctrl", version, about = "Write-time memory gating for grid-world agents", after_help = EXIT_CODES)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and manifests.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Default)]
struct SuiteArgs {
    /// Comma-separated subsets (base, common, complex, spatial, long).
    #[arg(long, value_delimiter = ',', value_parser = parse_subset)]
    subsets: Option<Vec<Subset>>,
    /// Context budget h.
    #[arg(long)]
    h: Option<usize>,
    /// Evaluation episodes per subset.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write the evaluation task suite as JSONL.
    GenTasks {
        /// Tasks per subset.
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, value_delimiter = ',', value_parser = parse_subset)]
        subsets: Option<Vec<Subset>>,
    },
    /// Collect the labelled expert dataset for the offline gate.
    Collect {
        #[command(flatten)]
        suite: SuiteArgs,
    },
    /// Behaviour-clone the action head.
    TrainBackbone {
        #[command(flatten)]
        suite: SuiteArgs,
    },
    /// Train the supervised gate from a collected dataset.
    TrainOffline {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the gate online with REINFORCE.
    TrainOnline {
        #[arg(long)]
        backbone: Option<PathBuf>,
        /// Training episodes.
        #[arg(long)]
        train_episodes: Option<usize>,
        #[arg(long)]
        finetune_action_head: bool,
        #[arg(long)]
        invalid_penalty: Option<f64>,
        #[command(flatten)]
        suite: SuiteArgs,
    },
    /// Evaluate one agent variant and write its report and traces.
    Eval {
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Map actions through their names instead of their ids.
        #[arg(long)]
        by_name: bool,
        #[command(flatten)]
        suite: SuiteArgs,
    },
    /// Evaluate several variants on the same tasks and sign-test each pair.
    Compare {
        #[arg(long, value_delimiter = ',', value_parser = parse_variant, default_value = "none,complete,offline_supervised,online_rl")]
        variants: Vec<Variant>,
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        offline_gate: Option<PathBuf>,
        #[arg(long)]
        online_gate: Option<PathBuf>,
        #[command(flatten)]
        suite: SuiteArgs,
    },
    /// Re-run a manifest and check every output is byte-identical.
    Replay {
        manifest: PathBuf,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn parse_subset(s: &str) -> Result<Subset, String> {
    Subset::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| format!("unknown subset {s:?}"))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}"))
}

fn apply_suite(cfg: &mut RunConfig, s: &SuiteArgs) {
    if let Some(v) = &s.subsets {
        cfg.subsets = v.clone();
    }
    if let Some(h) = s.h {
        cfg.h = h;
    }
    if let Some(n) = s.episodes {
        cfg.episodes = n;
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> anyhow::Result<u8> {
    let mut cfg = resolve_config(&cli)?;
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    let command = match cli.cmd {
        Cmd::GenTasks { count, subsets } => Command::GenTasks { subsets, count },
        Cmd::Collect { suite } => {
            apply_suite(&mut cfg, &suite);
            Command::Collect
        }
        Cmd::TrainBackbone { suite } => {
            apply_suite(&mut cfg, &suite);
            Command::TrainBackbone
        }
        Cmd::TrainOffline { dataset, epochs } => {
            if let Some(e) = epochs {
                cfg.offline.epochs = e;
            }
            Command::TrainOffline { dataset }
        }
        Cmd::TrainOnline {
            backbone,
            train_episodes,
            finetune_action_head,
            invalid_penalty,
            suite,
        } => {
            apply_suite(&mut cfg, &suite);
            if let Some(n) = train_episodes {
                cfg.online.episodes = n;
            }
            cfg.online.finetune_action_head |= finetune_action_head;
            if let Some(p) = invalid_penalty {
                cfg.online.invalid_penalty = p;
            }
            Command::TrainOnline { backbone }
        }
        Cmd::Eval {
            variant,
            backbone,
            gate,
            by_name,
            suite,
        } => {
            apply_suite(&mut cfg, &suite);
            if by_name {
                cfg.decode = Decode::ByName;
            }
            Command::Eval { variant, backbone, gate }
        }
        Cmd::Compare {
            variants,
            backbone,
            offline_gate,
            online_gate,
            suite,
        } => {
            apply_suite(&mut cfg, &suite);
            Command::Compare {
                variants,
                backbone,
                offline_gate,
                online_gate,
            }
        }
        Cmd::Replay { manifest } => {
            let res = pipeline::replay(&manifest, cli.out.as_deref())?;
            for name in &res.matched {
                println!("identical  {name}");
            }
            for (name, want, got) in &res.mismatched {
                println!("DIFFERENT  {name}  expected {want}  got {got}");
            }
            return Ok(if res.identical() { 0 } else { EXIT_REPLAY_MISMATCH });
        }
        Cmd::ShowConfig => {
            cfg.validate()?;
            print!("{}", cfg.to_toml_string()?);
            return Ok(0);
        }
    };
    let outcome = pipeline::run(&command, &cfg)?;
    println!("{}", outcome.summary.trim_end());
    println!("manifest: {}", outcome.manifest_path.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<memctrl::Error>().map_or(exit::OTHER, |m| m.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
