use std::io::{BufRead, IsTerminal, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;

use topobroker_cli::{
    build_broker, parse_line, parse_remote, serve, Command, Remote, Session, EXIT_USER,
};

/// Question-answering broker for algebraic topology.
#[derive(Debug, Parser)]
#[command(name = "topobroker", version)]
struct Cli {
    /// Rule file for the homotopy expert system.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Use a kernel served elsewhere: NAME=HOST:PORT (repeatable).
    #[arg(long = "remote-kernel", global = true, value_parser = parse_remote)]
    remote_kernels: Vec<(String, String)>,
    /// Print front-door JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Send commands to a running front door instead of a private broker.
    #[arg(long, global = true, env = "TOPOBROKER_CONNECT")]
    connect: Option<String>,
    #[command(subcommand)]
    command: Command,
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(u8::try_from(code).unwrap_or(2))
}

fn repl(session: &mut Session) -> i32 {
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    let mut worst = 0;
    let mut lines = stdin.lock().lines();
    loop {
        if interactive {
            print!("topobroker> ");
            let _ = std::io::stdout().flush();
        }
        let Some(Ok(line)) = lines.next() else { break };
        if matches!(line.trim(), "quit" | "exit") {
            break;
        }
        let out = match parse_line(&line) {
            Ok(None) => continue,
            Ok(Some(c)) => session.eval(&c),
            Err(e) => {
                println!("error: {e}");
                worst = worst.max(EXIT_USER);
                continue;
            }
        };
        println!("{}", out.text);
        worst = worst.max(out.code);
    }
    worst
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let broker = || match build_broker(cli.rules.as_deref(), &cli.remote_kernels) {
        Ok(b) => Ok(Arc::new(b)),
        Err(e) => {
            eprintln!("error: {e}");
            Err(exit(EXIT_USER))
        }
    };

    if let Command::Serve { port, host, http } = &cli.command {
        let broker = match broker() {
            Ok(b) => b,
            Err(code) => return code,
        };
        return match serve(broker, &format!("{host}:{port}"), http) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                exit(2)
            }
        };
    }

    let mut session = match &cli.connect {
        Some(url) => Session::new(Box::new(Remote::new(url)), cli.json),
        None => match broker() {
            Ok(b) => Session::local(b, cli.json),
            Err(code) => return code,
        },
    };
    let code = match &cli.command {
        Command::Repl => repl(&mut session),
        c => {
            let out = session.eval(c);
            // a script transcript is output even when some lines failed
            if out.code == 0 || matches!(c, Command::Script { .. }) {
                println!("{}", out.text);
            } else {
                eprintln!("{}", out.text);
            }
            out.code
        }
    };
    exit(code)
}
