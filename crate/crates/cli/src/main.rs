use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nhk_lab::commands::{
    resolve, run_analyze, run_classify, run_gallery, run_verify, CliError, CliResult, RunOptions, Source, Suite,
};
use nhk_lab::report::Report;

#[derive(Parser)]
#[command(name = "nhk-lab", version, about = "Structure analysis for almost hypercomplex manifolds with Hermitian-Norden metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quaternionic Kähler analysis: extraction of ω, curvature identities, Einstein check.
    Analyze(InputArgs),
    /// Class verdicts for J1 (Hermitian) and J2, J3 (Norden).
    Classify(ClassifyArgs),
    /// Run a theorem suite on seeded samples.
    Verify(VerifyArgs),
    /// List the built-in fixtures.
    Gallery(OutputArgs),
}

#[derive(Args)]
struct OutputArgs {
    /// Also write the JSON report here.
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    tol_alg: Option<f64>,
    #[arg(long)]
    tol_fd: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct SourceArgs {
    /// Built-in fixture name (see `nhk-lab gallery`).
    #[arg(long, group = "source")]
    fixture: Option<String>,
    /// JSON manifest describing a chart.
    #[arg(long, value_name = "PATH", group = "source")]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    output: OutputArgs,
    /// First-derivative step; the nested steps scale with it.
    #[arg(long)]
    fd_step: Option<f64>,
    /// Stencil order, 2 or 4.
    #[arg(long)]
    fd_order: Option<u32>,
    /// Potential φ for SYNTH-QK-CHART, e.g. "sin(x1)".
    #[arg(long)]
    phi: Option<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Verdict that must hold, as KEY or KEY=false. Repeatable.
    #[arg(long, value_name = "KEY[=BOOL]")]
    require: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Algebraic,
    Chart,
    All,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: SuiteArg,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    output: OutputArgs,
}

impl InputArgs {
    fn source(&self) -> Source {
        match (&self.source.fixture, &self.source.manifest) {
            (Some(f), _) => Source::Fixture(f.clone()),
            (None, Some(p)) => Source::Manifest(p.clone()),
            (None, None) => unreachable!("clap requires one source"),
        }
    }

    fn options(&self, require: &[String]) -> RunOptions {
        RunOptions {
            tol_alg: self.common.tol_alg,
            tol_fd: self.common.tol_fd,
            fd_step: self.fd_step,
            fd_order: self.fd_order,
            samples: self.common.samples,
            seed: self.common.seed,
            dim: self.common.dim,
            phi: self.phi.clone(),
            require: require.to_vec(),
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("NHK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Input(format!("NHK_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Numerical(format!("cannot configure the thread pool: {e}")))
}

fn emit(report: &Report, json: Option<&PathBuf>) -> CliResult<()> {
    if let Some(path) = json {
        std::fs::write(path, report.to_json()?)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn run(cli: Cli) -> CliResult<bool> {
    configure_threads()?;
    let (report, json) = match cli.command {
        Command::Analyze(a) => {
            let res = resolve(&a.source(), &a.options(&[]))?;
            (run_analyze(&res)?, a.output.json)
        }
        Command::Classify(c) => {
            let opts = c.input.options(&c.require);
            let res = resolve(&c.input.source(), &opts)?;
            (run_classify(&res, &opts.require)?, c.input.output.json)
        }
        Command::Verify(v) => {
            let opts = RunOptions {
                tol_alg: v.common.tol_alg,
                tol_fd: v.common.tol_fd,
                samples: v.common.samples,
                seed: v.common.seed,
                dim: v.common.dim,
                ..Default::default()
            };
            let suite = match v.suite {
                SuiteArg::Algebraic => Suite::Algebraic,
                SuiteArg::Chart => Suite::Chart,
                SuiteArg::All => Suite::All,
            };
            (run_verify(suite, &opts)?, v.output.json)
        }
        Command::Gallery(o) => (run_gallery()?, o.json),
    };
    emit(&report, json.as_ref())?;
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("nhk-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
