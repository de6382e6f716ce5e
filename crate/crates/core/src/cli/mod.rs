//! Command-line front end: `mutvae <subcommand> [--config FILE] [--key value ...]`.

pub mod commands;
pub mod config;
pub mod tsv;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{value_parser, Arg, ArgMatches, Command};

pub use commands::execute;
pub use config::{RunConfig, Subcommand, KEY_HELP};
pub use tsv::emit_history;

use crate::error::{Error, Result};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

pub fn command() -> Command {
    let mut cmd = Command::new("mutvae")
        .about("Variational autoencoder embeddings for binary mutation profiles")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .global(true)
                .help("TOML file of key = value settings; flags take precedence"),
        );
    for (key, help) in KEY_HELP {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .global(true)
                .help_heading("Config keys")
                .help(*help),
        );
    }
    for sub in Subcommand::ALL {
        cmd = cmd.subcommand(Command::new(sub.name()).about(sub.about()));
    }
    cmd
}

fn resolve(matches: &ArgMatches) -> Result<RunConfig> {
    let overrides: Vec<(String, String)> = KEY_HELP
        .iter()
        .filter_map(|(key, _)| matches.get_one::<String>(key).map(|v| (key.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(matches.get_one::<PathBuf>("config").map(PathBuf::as_path), &overrides)
}

fn run_subcommand(sub: Subcommand, matches: &ArgMatches) -> Result<String> {
    let cfg = resolve(matches)?;
    cfg.validate(sub)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let echo = cfg.out_dir.join(EFFECTIVE_CONFIG_FILE);
    std::fs::write(&echo, cfg.to_toml()).map_err(|e| Error::io(&echo, e))?;
    execute(sub, &cfg)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on runtime or input failure, 2 on
/// usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = Subcommand::from_name(name).expect("registered subcommand");
    match run_subcommand(sub, sub_matches) {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        command().debug_assert();
    }
}
