use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ncaudit_cli::bench::{run_bench, BenchConfig};
use ncaudit_cli::deploy::{self, Deployment, SetupOptions};
use ncaudit_cli::{exit, resolve_seed, CliError};
use ncaudit_core::cluster::LayoutChoice;
use ncaudit_core::repair::RepairMode;

#[derive(Parser)]
#[command(
    name = "ncaudit",
    version,
    about = "Privacy-preserving integrity audits for network-coded storage"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Evenodd4,
    RandomFunctional,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Functional,
}

#[derive(Subcommand)]
enum Command {
    /// Encode, tag and distribute a file into a deployment directory.
    Setup {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, default_value_t = 4)]
        m: usize,
        /// Symbols per block, including the two padding symbols.
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        nodes: usize,
        #[arg(long)]
        blocks_per_node: Option<usize>,
        #[arg(long)]
        helpers: Option<usize>,
        #[arg(long)]
        repair_blocks: Option<usize>,
        #[arg(long, value_enum, default_value = "evenodd4")]
        layout: Layout,
        #[arg(long, default_value_t = 10)]
        ell: usize,
        #[arg(long, default_value_t = 128)]
        lambda: usize,
        /// Hex seed; falls back to NCAUDIT_SEED.
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit one node (numbered from 1). Exits 1 if any round is rejected.
    Audit {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        node: usize,
        /// Blocks per challenge; default 300 or all of the node's blocks.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Corrupt one stored symbol, or delete a block, on a node.
    Corrupt {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        node: usize,
        /// Block number on the node, from 1.
        #[arg(long, default_value_t = 1)]
        block: usize,
        /// Symbol offset within the block, from 0.
        #[arg(long, default_value_t = 0)]
        position: usize,
        #[arg(long, default_value_t = 1)]
        delta: u8,
        #[arg(long)]
        delete: bool,
    },
    /// Rebuild a node from helper nodes and refresh the manifest.
    Repair {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        node: usize,
        #[arg(long, value_enum, default_value = "exact")]
        mode: Mode,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Recover a node's blocks from audit responses alone.
    Extract {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        node: usize,
        #[arg(long, default_value_t = 15)]
        repetitions: usize,
        /// Probability that the node answers with garbage.
        #[arg(long, default_value_t = 0.0)]
        lie: f64,
        #[arg(long)]
        seed: Option<String>,
        /// Write recovered blocks here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time proof generation and verification and count multiplications.
    Bench {
        #[arg(long, default_value_t = 4)]
        block_kb: usize,
        #[arg(long, default_value_t = 500)]
        m: usize,
        #[arg(long, default_value_t = 300)]
        challenge: usize,
        #[arg(long, default_value_t = 10)]
        ell: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 80)]
        lambda: usize,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Run a TOML scenario against an in-process cluster.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Write the message transcript here as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
}

fn record<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("report serializes"));
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Setup {
            file,
            m,
            n,
            nodes,
            blocks_per_node,
            helpers,
            repair_blocks,
            layout,
            ell,
            lambda,
            seed,
            out,
        } => {
            let opts = SetupOptions {
                file,
                m,
                n,
                nodes,
                blocks_per_node,
                helpers,
                repair_blocks,
                layout: match layout {
                    Layout::Evenodd4 => LayoutChoice::Evenodd4,
                    Layout::RandomFunctional => LayoutChoice::RandomFunctional,
                },
                ell,
                lambda,
                seed: resolve_seed(seed.as_deref())?,
                out,
            };
            let s = deploy::setup(&opts)?;
            record(&s);
            eprintln!(
                "stored {} bytes as {} source blocks over {} nodes in {}",
                s.file_len,
                s.params.m,
                s.params.nodes,
                opts.out.display()
            );
            Ok(exit::OK)
        }
        Command::Audit {
            dir,
            node,
            count,
            rounds,
            seed,
        } => {
            let dep = Deployment::open(dir)?;
            let s = deploy::audit_node(&dep, node, count, rounds, resolve_seed(seed.as_deref())?)?;
            for r in &s.rounds {
                record(r);
            }
            eprintln!(
                "node {}: {} accepted, {} rejected ({} blocks per challenge)",
                s.node, s.accepted, s.rejected, s.count
            );
            Ok(if s.rejected == 0 { exit::OK } else { exit::REJECTED })
        }
        Command::Corrupt {
            dir,
            node,
            block,
            position,
            delta,
            delete,
        } => {
            let dep = Deployment::open(dir)?;
            deploy::corrupt(&dep, node, block, position, delta, delete)?;
            eprintln!(
                "node {node}, block {block}: {}",
                if delete { "deleted" } else { "corrupted" }
            );
            Ok(exit::OK)
        }
        Command::Repair { dir, node, mode, seed } => {
            let dep = Deployment::open(dir)?;
            let mode = match mode {
                Mode::Exact => RepairMode::Exact,
                Mode::Functional => RepairMode::Functional,
            };
            let s = deploy::repair_node(&dep, node, mode, resolve_seed(seed.as_deref())?)?;
            record(&s);
            eprintln!(
                "node {} rebuilt from nodes {:?}; post-repair audit {}",
                s.node,
                s.helpers,
                if s.post_audit_accepted { "accepted" } else { "rejected" }
            );
            Ok(if s.post_audit_accepted {
                exit::OK
            } else {
                exit::REJECTED
            })
        }
        Command::Extract {
            dir,
            node,
            repetitions,
            lie,
            seed,
            out,
        } => {
            let dep = Deployment::open(dir)?;
            let s = deploy::extract(
                &dep,
                node,
                repetitions,
                lie,
                resolve_seed(seed.as_deref())?,
                out.as_deref(),
            )?;
            record(&s);
            match &s.error {
                None => eprintln!("recovered {} blocks with {} queries", s.blocks, s.queries),
                Some(e) => eprintln!("extraction failed: {e}"),
            }
            Ok(if s.ok { exit::OK } else { exit::REJECTED })
        }
        Command::Bench {
            block_kb,
            m,
            challenge,
            ell,
            trials,
            lambda,
            seed,
        } => {
            let cfg = BenchConfig {
                block_kb,
                m,
                challenge,
                ell,
                trials,
                lambda,
                seed: match seed {
                    Some(s) => ncaudit_cli::parse_seed(&s)?,
                    None => resolve_seed(None)?,
                },
            };
            let r = run_bench(&cfg)?;
            record(&r);
            eprintln!("{}", r.summary());
            Ok(if r.all_accepted { exit::OK } else { exit::REJECTED })
        }
        Command::Simulate { scenario, transcript } => {
            let r = deploy::simulate(&scenario, transcript.as_deref())?;
            for o in &r.outcomes {
                record(o);
            }
            eprintln!(
                "{} steps, {} failed; audits {} accepted, {} rejected",
                r.outcomes.len(),
                r.failures,
                r.audits_accepted,
                r.audits_rejected
            );
            Ok(if r.failures == 0 { exit::OK } else { exit::REJECTED })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::USAGE as u8
            } else {
                exit::OK as u8
            });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("ncaudit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
