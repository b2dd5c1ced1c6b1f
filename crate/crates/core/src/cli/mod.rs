//! Command-line front end: one subcommand per pipeline stage, all configured through
//! [`RunConfig`].
//!
//! Precedence is defaults, then `--config` file keys, then flags. Every key is also
//! a flag (`edge_ratio` is `--edge-ratio`); a repeated flag keeps its last value.
//! The resolved configuration is printed before anything runs. Exit status is 0 on
//! success, 1 on a runtime failure and 2 on a usage, configuration or input-file
//! error.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Arg, ArgAction, Command};

pub use config::{ConditioningKind, RunConfig, VertexSelection, KEYS};

use crate::error::Error;

pub const SUBCOMMANDS: &[(&str, &str)] = &[
    ("train", "fit a model and write a checkpoint and loss trace"),
    ("embed", "write global vertex embeddings from a checkpoint"),
    ("linkpred", "score held-out edges and report AUC"),
    ("classify", "fit a linear classifier on embeddings and report accuracy"),
    ("unseen", "embed held-out vertices from text and report their link AUC"),
    ("synth", "write a synthetic homophilic network"),
    ("gradcheck", "finite-difference check of every gradient"),
];

fn command() -> Command {
    let mut root = Command::new("vhe")
        .about("Variational homophilic embedding for attributed networks")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name).about(*about).args_override_self(true).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value configuration file"),
        );
        for (key, help) in KEYS {
            sub = sub.arg(
                Arg::new(*key)
                    .long(key.replace('_', "-"))
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .help(*help),
            );
        }
        root = root.subcommand(sub);
    }
    root
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Io { .. }
        | Error::Parse { .. }
        | Error::MissingText { .. }
        | Error::InvalidArgument(_)
        | Error::Checkpoint(_)
        | Error::DimensionMismatch(_) => 2,
        _ => 1,
    }
}

/// Parse `args` (including the program name), run the subcommand and return the
/// exit status. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let resolved = (|| {
        let mut cfg = match sub.get_one::<PathBuf>("config") {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for (key, _) in KEYS {
            if let Some(v) = sub.get_one::<String>(key) {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok::<_, Error>(cfg)
    })();
    let cfg = match resolved {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let _ = writeln!(out, "# vhe {name}, resolved configuration\n{cfg}");
    match commands::dispatch(name, &cfg, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
