//! One module per subcommand. Each exposes `run(&Args) -> Result<(), CliError>`;
//! exit-code mapping happens in the dispatcher.

pub mod diagnose;
pub mod estimate;
pub mod map;
pub mod oracle;
pub mod sweep;
