mod config;
mod output;
mod run;

use std::process::ExitCode;

use clap::Parser;

use crate::config::{Args, RunConfig};

const EXIT_INPUT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

/// One line, `error: kind=<Kind> msg="<message>"`, for scripts to parse.
fn report(kind: &str, msg: &str) {
    let msg = msg.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    eprintln!("error: kind={kind} msg=\"{msg}\"");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ANOCO_LOG", "warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            report("InvalidArgs", e.kind().as_str().unwrap_or("bad arguments"));
            return ExitCode::from(EXIT_INPUT);
        }
    };
    let result = std::panic::catch_unwind(|| RunConfig::resolve(args).and_then(|cfg| run::run(&cfg)));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            report(e.kind(), &e.to_string());
            ExitCode::from(if e.is_internal() { EXIT_INTERNAL } else { EXIT_INPUT })
        }
        Err(_) => {
            report("Internal", "unexpected panic");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
