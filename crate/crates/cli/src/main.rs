use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use vista_core::bridge::{run_conformance, serve, ModelFn, Transport};
use vista_core::denoise::{gaussian_smoother, Denoiser};
use vista_core::error::EXIT_FAILURE;
use vista_core::experiment::{compare, run, ExperimentConfig};
use vista_core::{Error, Image};

/// Plug-and-play reconstruction with viscosity stabilization.
#[derive(Parser)]
#[command(name = "vista", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config. Extra `--field.path VALUE` flags override config fields.
    Run {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        overrides: Vec<String>,
    },
    /// Run several configs and print a peak/asymptotic PSNR table.
    Compare {
        /// Directory receiving one subdirectory per config plus compare.csv/compare.txt.
        #[arg(long, default_value = "runs/compare")]
        out: PathBuf,
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Check that a denoiser server speaks the bridge protocol.
    BridgeCheck {
        /// `tcp:HOST:PORT` or `cmd:PROGRAM ARGS...`
        #[arg(long)]
        transport: String,
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
        /// The server hosts an identity model; verify bit-exact echo.
        #[arg(long)]
        identity: bool,
    },
    /// Serve an in-process denoiser over the bridge protocol (stdio unless --tcp).
    BridgeServe {
        #[arg(long, default_value = "identity")]
        model: String,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Listen on this address instead of stdio.
        #[arg(long)]
        tcp: Option<String>,
    },
}

/// Turns `--a.b 1 --c=2` into `[("a.b", "1"), ("c", "2")]`.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg.strip_prefix("--").ok_or_else(|| {
            Error::Config(format!(
                "unexpected argument `{arg}`; overrides look like --field.path VALUE"
            ))
        })?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let value = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("override `{arg}` is missing a value")))?;
                out.push((key.to_string(), value.clone()));
            }
        }
    }
    Ok(out)
}

fn model_fn(model: &str, sigma: f64) -> Result<Box<ModelFn<'static>>, Error> {
    match model {
        "identity" => Ok(Box::new(|x: &Image| Ok(x.clone()))),
        "gaussian" => {
            let g = gaussian_smoother(sigma)?;
            Ok(Box::new(move |x: &Image| g.denoise(x).map_err(|e| e.to_string())))
        }
        other => Err(Error::Config(format!(
            "unknown model `{other}`; use identity or gaussian"
        ))),
    }
}

fn execute(command: Command) -> Result<i32, Error> {
    match command {
        Command::Run { config, overrides } => {
            let overrides = parse_overrides(&overrides)?;
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            for r in run(&cfg)? {
                let s = &r.summary;
                println!(
                    "{} [{}]: peak {:.2} dB @ {}, asymptotic {:.2} dB @ {}{}{} -> {}",
                    s.label,
                    s.image,
                    s.peak_psnr,
                    s.peak_iter,
                    s.asymptotic_psnr,
                    s.asymptotic_iter,
                    if s.diverged { ", diverged" } else { "" },
                    if s.bridge_failed { ", bridge failed" } else { "" },
                    r.output_dir.display()
                );
            }
            Ok(0)
        }
        Command::Compare { out, configs } => {
            let cfgs = configs
                .iter()
                .map(|p| ExperimentConfig::load(p, &[]))
                .collect::<Result<Vec<_>, _>>()?;
            let table = compare(&cfgs, &out)?;
            print!("{}", table.to_text());
            Ok(0)
        }
        Command::BridgeCheck {
            transport,
            timeout,
            identity,
        } => {
            let transport = Transport::parse(&transport).map_err(|e| Error::Config(e.to_string()))?;
            if !(timeout > 0.0 && timeout.is_finite()) {
                return Err(Error::Config("--timeout must be positive".into()));
            }
            let results = run_conformance(&transport, Duration::from_secs_f64(timeout), identity);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(if results.iter().all(|r| r.passed) {
                0
            } else {
                EXIT_FAILURE
            })
        }
        Command::BridgeServe { model, sigma, tcp } => {
            let mut f = model_fn(&model, sigma)?;
            match tcp {
                None => {
                    let stdin = std::io::stdin().lock();
                    let stdout = std::io::stdout().lock();
                    if let Err(e) = serve(stdin, stdout, &mut *f) {
                        log::warn!("session ended: {e}");
                    }
                }
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).map_err(|e| Error::io(addr.clone(), e))?;
                    eprintln!(
                        "listening on {}",
                        listener.local_addr().map_err(|e| Error::io(addr.clone(), e))?
                    );
                    for stream in listener.incoming() {
                        let stream = stream.map_err(|e| Error::io(addr.clone(), e))?;
                        let reader = stream.try_clone().map_err(|e| Error::io(addr.clone(), e))?;
                        if let Err(e) = serve(reader, &stream, &mut *f) {
                            log::warn!("session ended: {e}");
                        }
                    }
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
