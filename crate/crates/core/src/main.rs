use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use provsched::harness::{exit_code, run_command, CommandOutput, ExperimentConfig, Mode, Overrides};
use provsched::sim::SchedulerKind;

#[derive(Parser)]
#[command(name = "provsched", version, about = "Provenance-aware scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Restrict evaluation to one scheduler.
        #[arg(long, value_enum)]
        scheduler: Option<SchedulerKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_delta_gate: bool,
        /// Train in-loop instead of on a separate thread.
        #[arg(long)]
        sync_train: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AEGIS_SIM_LOG", "info")).init();
    let Command::Run {
        config,
        mode,
        scheduler,
        seed,
        weights,
        out,
        no_delta_gate,
        sync_train,
    } = Cli::parse().command;

    let cfg = match config.as_deref().map(ExperimentConfig::load).transpose() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    let Some(mode) = mode.or_else(|| cfg.as_ref().and_then(|c| c.mode)) else {
        eprintln!("error: no --mode given and the config does not set one");
        return ExitCode::from(2);
    };
    let overrides = Overrides {
        scheduler,
        seed,
        weights,
        out,
        no_delta_gate,
        sync_train,
    };
    match run_command(mode, cfg.as_ref(), &overrides) {
        Ok(CommandOutput::Train(r)) => {
            println!(
                "converged after {} decisions, {} ticks, {} train steps",
                r.decisions, r.ticks, r.train_steps
            );
            ExitCode::SUCCESS
        }
        Ok(CommandOutput::Eval(r)) => {
            println!("scheduler,loss_ratio,dropped,produced,idle_ticks,inferences,skip_ratio");
            for row in &r.rows {
                let m = &row.metrics;
                println!(
                    "{},{:.6},{},{},{},{},{:.4}",
                    row.scheduler, m.loss_ratio, m.dropped, m.produced, m.idle_ticks, m.inference_count, m.skip_ratio
                );
            }
            ExitCode::SUCCESS
        }
        Ok(CommandOutput::Worstcase(r)) => {
            println!("monotone across E4-E6: {}", r.monotone);
            ExitCode::SUCCESS
        }
        Ok(CommandOutput::Table5(_)) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
