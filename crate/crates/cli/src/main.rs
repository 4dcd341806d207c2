mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, CmdError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("VCR_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CmdError {
    pub fn exit_code(&self) -> u8 {
        use vcr_core::Error;
        match self {
            CmdError::Core(Error::Shape(_) | Error::Config(_) | Error::Validation(_)) => 2,
            CmdError::Core(Error::Io { .. } | Error::Format { .. }) => 3,
            CmdError::Core(Error::Numeric(_)) | CmdError::ChecksFailed(_) => 4,
        }
    }
}
