use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ventctl::pipeline::{load_config, Run, Scoreboard};
use ventctl::Result;

#[derive(Parser)]
#[command(name = "ventctl", version, about = "Learned-simulator ventilator control pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// RunConfig JSON; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Collect exploration breaths on each lung setting.
    Collect(Common),
    /// Train one simulator per setting.
    TrainSim(Common),
    /// Open-loop distance of each simulator to its oracle.
    EvalSim(Common),
    /// Exhaustive PID grid search per setting and across settings.
    GridPid(Common),
    /// Train residual controllers through the simulators.
    TrainCtrl(Common),
    /// Score PID winners and residual policies on the oracle.
    Score(Common),
    /// Write head-to-head comparison reports with traces.
    Compare(Common),
    /// Every stage in order.
    RunAll(Common),
    /// Print the default RunConfig JSON.
    DefaultConfig,
}

fn summary(sb: &Scoreboard) {
    for (tag, s) in &sb.settings {
        let ol = s.sim.open_loop_per_step.map_or("-".into(), |v| format!("{v:.3}"));
        let pid = s.pid.as_ref().and_then(|p| p.score.as_ref()).map(|s| s.overall);
        let res = s.residual.as_ref().and_then(|r| r.score.as_ref()).map(|s| s.overall);
        let fmt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
        println!("{tag:>8}  sim/step {ol:>6}  pid {:>8}  residual {:>8}", fmt(pid), fmt(res));
    }
    if let (Some(p), Some(r)) = (sb.multi.pid_mean, sb.multi.residual_mean) {
        println!("   multi  pid mean {p:.4}  residual mean {r:.4}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let (common, stage): (Common, fn(&Run) -> Result<()>) = match cli.command {
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&ventctl::config::RunConfig::default())?);
            return Ok(());
        }
        Command::Collect(c) => (c, Run::collect),
        Command::TrainSim(c) => (c, Run::train_sim),
        Command::EvalSim(c) => (c, Run::eval_sim),
        Command::GridPid(c) => (c, Run::grid_pid),
        Command::TrainCtrl(c) => (c, Run::train_ctrl),
        Command::Score(c) => (c, Run::score),
        Command::Compare(c) => (c, Run::compare),
        Command::RunAll(c) => (c, |r: &Run| r.run_all().map(|_| ())),
    };
    let cfg = load_config(common.config.as_deref(), common.seed)?;
    let run = Run::new(cfg, common.out)?;
    stage(&run)?;
    summary(&run.scoreboard()?);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
