mod args;
mod commands;

use clap::Parser;

fn main() -> anyhow::Result<()> {
    let cli = args::Cli::parse();
    match cli.command {
        args::Command::Train(a) => commands::train(&a),
        args::Command::Ablate(a) => commands::ablate(&a),
        args::Command::Sweep(a) => commands::sweep(&a),
        args::Command::Speedup(a) => commands::speedup(&a),
        args::Command::Analyze(a) => commands::analyze(&a),
    }
}
