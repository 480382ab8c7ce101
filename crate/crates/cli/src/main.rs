//! `signedcf`: prepare datasets, train, evaluate and dump recommendations.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use signedcf::TrainConfig;

const EXIT_IO: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_NUMERIC: u8 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "signedcf",
    version,
    about = "Sign-aware graph collaborative filtering experiments"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// `key = value` config file; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel kernels
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single worker thread
    #[arg(long, global = true)]
    deterministic: bool,
    /// Override one config key, e.g. `--set epochs=50`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, k-core filter and split a rating file into a dataset directory
    Prepare { input: PathBuf, out: PathBuf },
    /// Train every fold (or the listed ones) of a prepared dataset
    Train {
        dataset: PathBuf,
        run: PathBuf,
        #[arg(long, value_delimiter = ',')]
        folds: Option<Vec<usize>>,
    },
    /// Report Precision/Recall/NDCG for a run, its w/o-filter variant and other runs
    Evaluate {
        run: PathBuf,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Extra method column, `name=RUN_DIR`
        #[arg(long = "variant", value_name = "NAME=RUN_DIR")]
        variants: Vec<String>,
        /// Report directory (defaults to the run directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write top-K lists as `user_idx item_idx:score ...`
    Recommend {
        run: PathBuf,
        #[arg(short, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// File with one user token per line; all users when absent
        #[arg(long)]
        users: Option<PathBuf>,
        #[arg(long)]
        user: Vec<String>,
        #[arg(long)]
        no_filter: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
}

fn load_config(g: &GlobalArgs) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    if let Some(p) = &g.config {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        c.apply_text(&text)?;
    }
    for kv in &g.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            signedcf::Error::config(format!("--set expects KEY=VALUE, got `{kv}`"))
        })?;
        c.set(k, v)?;
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn parse_variant(s: &str) -> Result<(String, PathBuf)> {
    let (name, dir) = s.split_once('=').ok_or_else(|| {
        signedcf::Error::config(format!("--variant expects NAME=RUN_DIR, got `{s}`"))
    })?;
    Ok((name.to_owned(), PathBuf::from(dir)))
}

fn run(cli: Cli) -> Result<()> {
    let threads = if cli.global.deterministic {
        Some(1)
    } else {
        cli.global.threads
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Prepare { input, out } => {
            commands::prepare(&input, &out, &load_config(&cli.global)?)
        }
        Command::Train {
            dataset,
            run,
            folds,
        } => commands::train(
            &dataset,
            &run,
            &load_config(&cli.global)?,
            folds.as_deref(),
            threads,
        ),
        Command::Evaluate {
            run,
            ks,
            variants,
            out,
        } => {
            let variants = variants
                .iter()
                .map(|v| parse_variant(v))
                .collect::<Result<Vec<_>>>()?;
            commands::evaluate_cmd(&run, &variants, ks.as_deref(), out.as_deref())
        }
        Command::Recommend {
            run,
            k,
            fold,
            users,
            user,
            no_filter,
            out,
            rejects,
        } => {
            let mut list = match &users {
                Some(p) => Some(commands::read_user_list(p)?),
                None => None,
            };
            if !user.is_empty() {
                list.get_or_insert_with(Vec::new).extend(user);
            }
            commands::recommend_cmd(commands::RecommendArgs {
                run: &run,
                fold,
                k,
                users: list,
                no_filter,
                out: out.as_deref(),
                rejects: rejects.as_deref(),
            })
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<signedcf::Error>() {
            return match e {
                signedcf::Error::Io(_) => EXIT_IO,
                signedcf::Error::NonFinite(_) => EXIT_NUMERIC,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if cause.is::<serde_json::Error>() {
            return EXIT_VALIDATION;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
