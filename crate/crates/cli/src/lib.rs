//! Library side of the `caim` binary: configuration handling and one
//! function per subcommand.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_build_qubo, cmd_evaluate, cmd_simulate, cmd_solve, cmd_sweep};
pub use config::RunConfig;
pub use error::{CliError, Result};

/// Runs `f` on a dedicated pool of `workers` threads (0 = all cores).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?;
    Ok(pool.install(f))
}
