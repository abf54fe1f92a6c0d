use std::process::ExitCode;

use bprs::cli::{cmd_bench, cmd_evaluate, cmd_oracle, cmd_recommend, Cli, CliError, Command};
use clap::error::ErrorKind;
use clap::Parser;

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Evaluate { run, dump_split } => {
            let out = cmd_evaluate(&run, dump_split)?;
            let r = &out.report;
            println!(
                "mode {}  users {}  test pairs {}",
                r.mode, r.active_users, r.test_pairs
            );
            println!("rmse {:.4}  (iteration 1: {:.4})", r.rmse, r.rmse_curve[0]);
            println!("movie-avg rmse {:.4}", r.movie_avg_rmse);
            for (k, p) in &r.precision_at_k {
                println!("precision@{k} {p:.4}");
            }
            println!(
                "iterations mean {:.2} median {:.1}  converged {:.1}%  coverage {:.2}%",
                r.mean_iterations,
                r.median_iterations,
                100.0 * r.converged_fraction,
                100.0 * r.coverage
            );
            for f in &out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Recommend { run, user } => {
            let rec = cmd_recommend(&run, user)?;
            println!(
                "user {}  iterations {}  converged {}",
                rec.user, rec.iterations, rec.converged
            );
            for (rank, it) in rec.items.iter().enumerate() {
                println!(
                    "{:>3}  {:>5}  {:.4}  {}",
                    rank + 1,
                    it.item,
                    it.prediction,
                    it.title
                );
            }
        }
        Command::Bench {
            run,
            sample,
            synthetic,
        } => {
            let out = cmd_bench(&run, sample, synthetic)?;
            println!("user,ratings_count,graph_size,ms");
            for r in &out.rows {
                println!(
                    "{},{},{},{:.3}",
                    r.user, r.ratings_count, r.graph_size, r.ms
                );
            }
            match out.slope {
                Some(s) => println!("log-log slope {s:.3}"),
                None => println!("log-log slope undefined"),
            }
        }
        Command::Oracle { seed } => {
            for (item, bp, exact) in cmd_oracle(seed) {
                println!(
                    "item {item}: bp {:?}\n        exact {:?}\n        max diff {:.3e}",
                    bp.0,
                    exact.0,
                    bp.max_abs_diff(&exact)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
