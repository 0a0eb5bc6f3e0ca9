use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod output;
mod replicate;

use args::Cli;

/// Exit status for a failed validation report.
const EXIT_VALIDATION: u8 = 2;
/// Exit status for malformed input files.
const EXIT_SCHEMA: u8 = 3;

/// Input rejected by the structural checks.
#[derive(Debug)]
pub struct ValidationFailed(pub String);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "validation failed:\n{}", self.0)
    }
}

impl std::error::Error for ValidationFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use tsexp_core::Error as E;
    if err.downcast_ref::<ValidationFailed>().is_some() {
        return EXIT_VALIDATION;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Validation(_)
                | E::ProbabilityOutOfRange { .. }
                | E::InvalidTreatment { .. }
                | E::InvalidOrder { .. } => EXIT_VALIDATION,
                E::Schema(_) | E::Csv(_) | E::Json(_) => EXIT_SCHEMA,
                _ => 1,
            };
        }
        if cause.downcast_ref::<csv::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_SCHEMA;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let result = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| commands::run(&cli))),
        None => commands::run(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
