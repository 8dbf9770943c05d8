use clap::Parser;
use metatune_cli::commands::{eval, train, tune};

/// Train, evaluate and deploy a recurrent PI-tuning agent.
#[derive(Parser)]
#[command(name = "metatune", version, about)]
enum Cli {
    /// Train an agent offline across a distribution of simulated processes.
    Train(train::TrainArgs),
    /// Run a named experiment against a checkpoint and export artifacts.
    Eval(eval::EvalArgs),
    /// Stream closed-loop records through the online actor, emitting gains.
    Tune(tune::TuneArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli {
        Cli::Train(args) => train::run(args),
        Cli::Eval(args) => eval::run(args),
        Cli::Tune(args) => tune::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(metatune_cli::exit_code_for(&err));
    }
}
