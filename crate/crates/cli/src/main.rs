//! `cloudopf` command-line interface.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 infeasible, 3 no convergence,
//! 4 input error.

mod args;
mod commands;
mod output;

use clap::Parser;
use cloudopf::cloud::CloudError;
use cloudopf::eval::EvalError;
use cloudopf::opf::OpfError;

pub const EXIT_IO: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    pub fn io(message: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_IO,
            message: message.to_string(),
        }
    }
}

impl From<OpfError> for Failure {
    fn from(e: OpfError) -> Self {
        let code = match e {
            OpfError::Infeasible { .. } => EXIT_INFEASIBLE,
            OpfError::NoConvergence(_) => EXIT_NO_CONVERGENCE,
            OpfError::InconsistentDimensions(_) => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<CloudError> for Failure {
    fn from(e: CloudError) -> Self {
        let code = match &e {
            CloudError::Infeasible { .. } => EXIT_INFEASIBLE,
            CloudError::NoConvergence { .. } | CloudError::PowerFlow(_) => EXIT_NO_CONVERGENCE,
            CloudError::Solver { source, .. } => Failure::from(source.clone()).code,
            CloudError::InvalidEpsilon(_) | CloudError::DimensionMismatch(_) | CloudError::Uncertainty(_) => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Cloud(c) => c.into(),
            EvalError::NoGroundTruth => Failure {
                code: EXIT_INFEASIBLE,
                message: e.to_string(),
            },
            EvalError::Cache(_) => Failure::io(e),
            _ => Failure::input(e),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors share the input-error code rather than clap's default 2.
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(f) = commands::run(cli.command) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}
