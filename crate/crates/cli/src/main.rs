use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gir_fusion::error::Error;
use gir_fusion::frontend::CompGraph;
use gir_fusion::fusion::SearchOptions;
use gir_fusion::gir::GirGraph;
use gir_fusion::lowering::templates;
use gir_fusion::pipeline::{compile, traces, verify, Compiled, CompileOptions};
use gir_fusion::profile::HardwareProfile;

/// Memory-oriented tensor fusion compiler.
#[derive(Parser)]
#[command(name = "girc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a model into kernels, a manifest and reports.
    Compile {
        model: PathBuf,
        /// Artifact directory.
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Compile, then check compiled execution against the reference.
    Verify {
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check the kernel graphs stored in this artifact directory instead
        /// of freshly compiled ones.
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// List the lowering templates and their parameters.
    Templates,
}

#[derive(Args)]
struct Opts {
    /// Built-in profile name or path to a profile JSON file.
    #[arg(long, default_value = "generic-gpu")]
    profile: String,
    #[arg(long, default_value_t = SearchOptions::default().beam_width)]
    beam_width: usize,
    #[arg(long, default_value_t = SearchOptions::default().exhaustive_cap)]
    exhaustive_cap: u64,
    /// FLOPs per element above which an operator is a library call
    /// [default: the profile's machine balance].
    #[arg(long)]
    balance_threshold: Option<f64>,
    /// Include a graph snapshot after every rewrite in the traces.
    #[arg(long)]
    dump_rewrites: bool,
}

impl Opts {
    fn compile_options(&self) -> CompileOptions {
        CompileOptions {
            search: SearchOptions {
                beam_width: self.beam_width,
                exhaustive_cap: self.exhaustive_cap,
            },
            balance_threshold: self.balance_threshold,
            dump_rewrites: self.dump_rewrites,
        }
    }
}

enum Failure {
    Error(Error),
    ChecksFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::UnsupportedOperator(_) => "unsupported_operator",
        Error::Schema(_) => "schema",
        Error::Allocation { .. } => "allocation",
        Error::Profile(_) => "profile",
        Error::Io(_) => "io",
        Error::Lowering(_) => "lowering",
        Error::Merge(_) => "merge",
        Error::InvalidGraph(_) | Error::Cycle | Error::OutOfBounds { .. } | Error::Coverage => "graph",
        Error::UndefinedRead { .. } | Error::Execution(_) => "execution",
    }
}

fn load(model: &Path, opts: &Opts) -> Result<(CompGraph, HardwareProfile), Error> {
    let text = fs::read_to_string(model).map_err(|e| Error::Io(format!("{}: {e}", model.display())))?;
    let g = CompGraph::from_json(&text)?;
    let p = HardwareProfile::load(&opts.profile)?;
    Ok((g, p))
}

fn write_artifacts(c: &Compiled, profile: &HardwareProfile, dir: &Path) -> Result<(), Failure> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir.join("traces"))?;
    for k in &c.kernels {
        fs::write(dir.join(format!("{}.kernel", k.kernel.name)), &k.kernel.source)?;
        fs::write(dir.join(format!("{}.gir.json", k.kernel.name)), k.kernel.graph.to_json() + "\n")?;
    }
    for (name, trace) in traces(c) {
        fs::write(dir.join("traces").join(format!("{name}.json")), trace + "\n")?;
    }
    fs::write(dir.join("manifest.json"), c.manifest_json(profile) + "\n")?;
    fs::write(dir.join("plan.json"), c.plan_json() + "\n")?;
    fs::write(dir.join("summary.json"), c.summary_json() + "\n")?;
    Ok(())
}

/// Swaps in kernel graphs read back from an artifact directory.
fn load_kernels(c: &mut Compiled, dir: &Path) -> Result<(), Error> {
    for k in &mut c.kernels {
        let path = dir.join(format!("{}.gir.json", k.kernel.name));
        let text = fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        k.kernel.graph = GirGraph::from_json(&text)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Compile { model, out, opts } => {
            let (g, p) = load(&model, &opts)?;
            let c = compile(&g, &p, &opts.compile_options())?;
            write_artifacts(&c, &p, &out)?;
            println!("{}", c.summary_json());
        }
        Command::Verify { model, seed, artifacts, opts } => {
            let (g, p) = load(&model, &opts)?;
            let mut c = compile(&g, &p, &opts.compile_options())?;
            if let Some(dir) = artifacts {
                load_kernels(&mut c, &dir)?;
            }
            let report = verify(&c, &p, seed)?;
            for check in &report.checks {
                println!("{:<12} {} {}", check.name, if check.passed { "PASS" } else { "FAIL" }, check.detail);
            }
            if !report.passed() {
                return Err(Failure::ChecksFailed);
            }
        }
        Command::Templates => {
            for t in templates() {
                println!("{:<13} {:<8} {:<22} {}", t.op, t.variant, t.parameters, t.description);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::ChecksFailed) => ExitCode::from(1),
        Err(Failure::Error(e)) => {
            let line = serde_json::json!({ "error": kind(&e), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(if matches!(e, Error::UnsupportedOperator(_)) { 2 } else { 1 })
        }
    }
}
