//! Command implementations behind the `hairmatte` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod recolor;

pub use commands::{cmd_bench, cmd_eval, cmd_infer, cmd_recolor, cmd_refine, cmd_synth, cmd_train};
pub use config::{CommandKind, RunConfig};
pub use error::{CliError, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

/// Runs the configured command and returns what it prints on success.
pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let lines = |paths: Vec<std::path::PathBuf>| paths.iter().map(|p| format!("{}\n", p.display())).collect();
    Ok(match cfg.command {
        CommandKind::Synth => {
            let s = cmd_synth(cfg)?;
            format!("wrote {} train, {} val, {} test samples\n", s.train.len(), s.val.len(), s.test.len())
        }
        CommandKind::Train => {
            let a = cmd_train(cfg)?;
            let best = a.history.best_epoch.map_or("none".into(), |e| e.to_string());
            format!("best epoch {best}\n{}", std::fs::read_to_string(&a.summary_file)?)
        }
        CommandKind::Infer => lines(cmd_infer(cfg)?),
        CommandKind::Eval => commands::render_eval(&cmd_eval(cfg)?),
        CommandKind::Refine => lines(vec![cmd_refine(cfg)?]),
        CommandKind::Recolor => lines(vec![cmd_recolor(cfg)?]),
        CommandKind::Bench => cmd_bench(cfg)?.to_table(),
    })
}
