//! Command-line entry point binding dataset generation, parameter
//! accounting, gradient verification, training, and evaluation into
//! reproducible experiments.
//!
//! Exit codes: 0 success, 1 usage error, 2 verification failure,
//! 3 runtime/numeric failure.

mod cmd_eval;
mod cmd_gen;
mod cmd_gradcheck;
mod cmd_params;
mod cmd_train;
mod config;
mod opts;

use std::process::ExitCode;

use clap::Parser;
use opts::{Cli, Cmd, GenTask};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match &cli.cmd {
        Cmd::Gen(args) => match &args.task {
            GenTask::Listops(a) => cmd_gen::run_listops(a),
            GenTask::Lrt(a) => cmd_gen::run_lrt(a),
        },
        Cmd::Params(args) => cmd_params::run(args),
        Cmd::Gradcheck(args) => cmd_gradcheck::run(args),
        Cmd::Train(args) => cmd_train::run(args),
        Cmd::Eval(args) => cmd_eval::run(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
