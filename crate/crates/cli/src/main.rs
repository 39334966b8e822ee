use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use opfactor_core::analysis::{self, level_cuts, lowrank_study, write_lowrank_csv, write_sweep_csv};
use opfactor_core::oracles::StencilScale;
use opfactor_core::{
    build_problem, recover, run_experiment, Error, ExperimentConfig, Mode, ProblemKind, ProblemSpec, SparseFactor,
};

#[derive(Parser)]
#[command(name = "opfactor", version, about = "Sparse Cholesky factors of solution operators from black-box solves")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "OPFACTOR_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover a factor and write it to a file.
    Recover {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value = "inf")]
        rho: f64,
        #[arg(long, default_value = "simplicial")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep rho and write `rho,matvecs,rel_err` as CSV.
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Comma-separated, ascending.
        #[arg(long, value_delimiter = ',', required = true)]
        rho_list: Vec<f64>,
        #[arg(long, default_value = "simplicial")]
        mode: Mode,
        #[arg(long, default_value_t = 20)]
        eval_iters: usize,
        /// CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Query a stored factor.
    Query {
        factor: PathBuf,
        #[command(subcommand)]
        query: Query,
    },
    /// Error of leading-color truncations at the given rho, as CSV.
    Lowrank {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value = "inf")]
        rho: f64,
        #[arg(long, default_value_t = 20)]
        eval_iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant checks on small problems.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum Query {
    /// Entry (i, j) of L L^T.
    Entry { i: usize, j: usize },
    /// log det(L L^T).
    Logdet,
    /// One Gaussian sample with covariance L L^T.
    Sample {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, default_value = "laplace_potential")]
    problem: ProblemKind,
    /// Grid points per axis.
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Fractional order.
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Matrix Market file for `--problem matrix_file`.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Coordinates sidecar for `--matrix`.
    #[arg(long)]
    coords: Option<PathBuf>,
    /// Scale the stencil by 1/h^2.
    #[arg(long)]
    mesh_scaled: bool,
}

impl ProblemArgs {
    fn spec(&self) -> anyhow::Result<ProblemSpec> {
        if self.problem == ProblemKind::MatrixFile && self.matrix.is_none() {
            bail!("--problem matrix_file needs --matrix");
        }
        if self.problem != ProblemKind::MatrixFile && (self.matrix.is_some() || self.coords.is_some()) {
            bail!("--matrix and --coords only apply to --problem matrix_file");
        }
        Ok(ProblemSpec {
            kind: self.problem,
            n: self.n,
            dim: self.dim,
            s: self.s,
            seed: self.seed,
            matrix: self.matrix.clone(),
            coords: self.coords.clone(),
            scale: if self.mesh_scaled { StencilScale::MeshWidth } else { StencilScale::Unit },
        })
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Recover { problem, rho, mode, out } => {
            let problem = build_problem(&problem.spec()?)?;
            let rec = recover(&problem, rho, mode)?;
            rec.factor.save(&out).with_context(|| format!("writing {}", out.display()))?;
            let f = &rec.factor;
            eprintln!("n {} colors {} matvecs {} nnz {}", f.n(), f.ncolors(), f.provenance().matvecs, f.nnz());
        }
        Command::Sweep { problem, rho_list, mode, eval_iters, out } => {
            let config =
                ExperimentConfig { seed: problem.seed, problem: problem.spec()?, rhos: rho_list, mode, eval_iters };
            let rows = run_experiment(&config)?;
            let mut w = output(out.as_deref())?;
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::Query { factor, query } => {
            let f = SparseFactor::load(&factor).with_context(|| format!("reading {}", factor.display()))?;
            let mut w = output(None)?;
            match query {
                Query::Entry { i, j } => writeln!(w, "{:e}", f.entry(i, j)?)?,
                Query::Logdet => writeln!(w, "{:e}", f.logdet()?)?,
                Query::Sample { seed } => {
                    for v in f.sample(seed) {
                        writeln!(w, "{v:e}")?;
                    }
                }
            }
            w.flush()?;
        }
        Command::Lowrank { problem, rho, eval_iters, out } => {
            let seed = problem.seed;
            let problem = build_problem(&problem.spec()?)?;
            let rec = recover(&problem, rho, Mode::Simplicial)?;
            let cuts = level_cuts(&rec.factor, &rec.coloring);
            let rows = lowrank_study(&problem, &rec.factor, &cuts, eval_iters, seed)?;
            let mut w = output(out.as_deref())?;
            write_lowrank_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::Selftest { seed } => {
            let results = analysis::selftest(seed);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                bail!("self test failed");
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
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let spd = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_spd_violation));
            ExitCode::from(if spd { 2 } else { 1 })
        }
    }
}
