use std::process::ExitCode;

use twincg::experiment::{probe_probabilities, run_experiment};
use twincg_cli::{parse_args, Invocation};

fn main() -> ExitCode {
    let invocation = match parse_args(std::env::args_os()) {
        Ok(inv) => inv,
        Err(e) => e.exit(),
    };
    match execute(invocation) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(invocation: Invocation) -> twincg::Result<()> {
    match invocation {
        Invocation::Run { spec, out } => {
            let result = run_experiment(&spec)?;
            print!("{}", result.table());
            for failure in &result.failures {
                eprintln!("run failed: {failure}");
            }
            if let Some(path) = out {
                result.write_csv_file(&path)?;
            }
        }
        Invocation::Probe {
            lambda,
            d,
            samples,
            seed,
        } => {
            print!("{}", probe_probabilities(lambda, d, samples, seed)?);
        }
    }
    Ok(())
}
