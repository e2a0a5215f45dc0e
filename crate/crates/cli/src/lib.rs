//! Command-line front end: `train`, `explain`, `flip` and `render`.

pub mod args;
pub mod commands;
pub mod error;
pub mod layout;
pub mod plot;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult, ExitCode};

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> CliResult<()> {
    layout::configure_threads(cli.threads);
    match &cli.command {
        Command::Train(a) => {
            let out = commands::cmd_train(a)?;
            if let Some(acc) = out.report.final_accuracy() {
                println!("test accuracy {acc:.4}");
            }
            println!("model written to {}", out.model.display());
        }
        Command::Explain(a) => {
            let out = commands::cmd_explain(a)?;
            for (index, dir, _) in &out.images {
                println!("image {index}: {}", dir.display());
            }
        }
        Command::Flip(a) => {
            let out = commands::cmd_flip(a)?;
            for (method, auc) in &out.summary.auc {
                println!("{method:<12} auc[0, {}] = {auc:.6}", out.summary.auc_fraction);
            }
        }
        Command::Render(a) => {
            let out = commands::cmd_render(a)?;
            for p in out.curves.iter().map(|(p, _)| p).chain(&out.grid) {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
