use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mspde_core::{cmd_converge, cmd_run, cmd_verify, Error, RunConfig};

/// Space-time finite element simulations of 1D periodic multisymplectic PDEs.
#[derive(Parser, Debug)]
#[command(name = "mspde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one configuration and write invariants.csv.
    Run(Options),
    /// Refinement study over levels imin..=imax; writes convergence.csv.
    Converge(Options),
    /// Run the property suite and print the largest residual of each group.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flip the sign of the jump term in G (the suite must then fail).
        #[arg(long)]
        inject_fault: bool,
    },
}

#[derive(Args, Debug)]
struct Options {
    /// key = value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// linear-wave, nonlinear-wave or nls
    #[arg(long)]
    problem: Option<String>,
    /// cg, cg-momentum or dg
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    dx: Option<f64>,
    /// Refinement level: steps from the problem's level-i grid.
    #[arg(long)]
    i: Option<i32>,
    #[arg(long)]
    imin: Option<i32>,
    #[arg(long)]
    imax: Option<i32>,
    /// Final time.
    #[arg(long = "T", alias = "t-final")]
    t_final: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    newton_tolerance: Option<f64>,
    #[arg(long)]
    max_newton_iterations: Option<usize>,
}

impl Options {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut kv = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                kv.push((k, v));
            }
        };
        put("problem", self.problem.clone());
        put("variant", self.variant.clone());
        put("q", self.q.map(|v| v.to_string()));
        put("p", self.p.map(|v| v.to_string()));
        put("dt", self.dt.map(|v| v.to_string()));
        put("dx", self.dx.map(|v| v.to_string()));
        put("i", self.i.map(|v| v.to_string()));
        put("imin", self.imin.map(|v| v.to_string()));
        put("imax", self.imax.map(|v| v.to_string()));
        put("T", self.t_final.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|v| v.display().to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("newton_tolerance", self.newton_tolerance.map(|v| v.to_string()));
        put("max_newton_iterations", self.max_newton_iterations.map(|v| v.to_string()));
        kv
    }

    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path).map_err(|e| match e {
                Error::Io(io) => Error::InvalidArgument(format!("cannot read {}: {io}", path.display())),
                other => other,
            })?,
            None => RunConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run(opts) => {
            let cfg = opts.resolve()?;
            let report = cmd_run(&cfg)?;
            let s = &report.series;
            println!(
                "{} slabs, {} Newton iterations; max deviation: momentum {:.3e}, energy {:.3e}",
                report.slabs,
                report.newton_iterations,
                s.max_dev_momentum(),
                s.max_dev_energy()
            );
            println!("wrote {}", report.csv.display());
        }
        Command::Converge(opts) => {
            let cfg = opts.resolve()?;
            let report = cmd_converge(&cfg)?;
            for (k, i) in report.levels.iter().enumerate() {
                let e = report.record.errors[k][0];
                match k.checked_sub(1).map(|j| report.record.eoc[j][0]) {
                    Some(r) => println!("i={i} h={:.4e} e_0={e:.4e} eoc_0={r:.4}", report.record.h[k]),
                    None => println!("i={i} h={:.4e} e_0={e:.4e}", report.record.h[k]),
                }
            }
            println!("wrote {}", report.csv.display());
        }
        Command::Verify { seed, inject_fault } => {
            let report = cmd_verify(seed, inject_fault)?;
            for c in &report.checks {
                let status = if c.passed() { "ok  " } else { "FAIL" };
                println!("{status} {:<24} max residual {:.3e} (tolerance {:.1e})", c.name, c.max_residual, c.tolerance);
            }
            if !report.passed() {
                eprintln!("mspde: property checks failed");
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("mspde: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
