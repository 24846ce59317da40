//! Command-line front end behind the `micachesim` binary.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::SimConfigFile;
use crate::engine::{run, EngineConfig, Policy, PolicyConfig};
use crate::report::{classify, run_sweep, write_artifacts};
use crate::trace::gen::generate;
use crate::trace::reuse::TraceSummary;
use crate::trace::{read_trace, read_trace_text, write_trace, write_trace_text, LayerKind, LayerSpec, Trace};

/// Generator seed used when neither `--seed` nor `MICACHESIM_SEED` is given.
pub const DEFAULT_SEED: u64 = 1;
pub const SEED_ENV: &str = "MICACHESIM_SEED";

#[derive(Parser, Debug)]
#[command(name = "micachesim", version, about = "Cycle-approximate GPU cache policy simulator")]
pub struct Cli {
    /// Print the default configuration file and exit.
    #[arg(long)]
    pub print_defaults: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic layer trace.
    Gen(GenArgs),
    /// Simulate one trace under one policy.
    Run(RunArgs),
    /// Simulate traces under the six-cell policy matrix and write reports.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// streaming, pooling, fc, gemm, rnn, lrn or softmax
    #[arg(long)]
    pub layer: String,
    /// Comma-separated dimensions, layout depends on the layer.
    #[arg(long)]
    pub dims: String,
    #[arg(long, default_value_t = 1)]
    pub batch: u32,
    /// Defaults to $MICACHESIM_SEED, else 1.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 64)]
    pub cus: u16,
    #[arg(long, default_value_t = 4)]
    pub element_bytes: u8,
    #[arg(long)]
    pub lds_filter: Option<f64>,
    /// Write the text form instead of the binary form.
    #[arg(long)]
    pub text: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// uncached, cacher or cacherw
    #[arg(long, conflicts_with = "preset")]
    pub policy: Option<String>,
    /// Named configuration: a static policy, cacherw-ab, cacherw-cr or cacherw-pcby.
    #[arg(long)]
    pub preset: Option<String>,
    /// Allocation bypass.
    #[arg(long)]
    pub ab: bool,
    /// Cache rinsing.
    #[arg(long)]
    pub cr: bool,
    /// PC-based L2 bypass.
    #[arg(long)]
    pub pcby: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Trace file; repeat for several workloads.
    #[arg(long, required = true)]
    pub trace: Vec<PathBuf>,
    #[arg(long)]
    pub outdir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    ExitCode::from(run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock()))
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Runtime(m)) = &f;
            let _ = writeln!(err, "error: {m}");
            f.code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    if cli.print_defaults {
        write!(out, "{}", SimConfigFile::defaults_toml()).map_err(runtime)?;
        return Ok(());
    }
    match cli.command {
        Some(Command::Gen(a)) => cmd_gen(&a, out),
        Some(Command::Run(a)) => cmd_run(&a, out),
        Some(Command::Sweep(a)) => cmd_sweep(&a, out),
        None => Err(Failure::Usage("no command given; try --help".into())),
    }
}

fn default_seed() -> Result<u64, String> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn parse_dims(s: &str) -> Result<Vec<u64>, String> {
    s.split(',')
        .map(|d| d.trim().parse::<u64>().map_err(|_| format!("bad dimension {d:?} in --dims")))
        .collect()
}

/// Builds the layer spec described by `gen` flags.
pub fn layer_spec(a: &GenArgs) -> Result<LayerSpec, String> {
    let kind: LayerKind = a.layer.parse().map_err(|e| format!("{e}"))?;
    let dims = parse_dims(&a.dims)?;
    let seed = match a.seed {
        Some(s) => s,
        None => default_seed()?,
    };
    let mut spec = LayerSpec::new(kind, &dims)
        .batch(a.batch)
        .seed(seed)
        .cus(a.cus)
        .element_bytes(a.element_bytes);
    if let Some(f) = a.lds_filter {
        spec = spec.lds_filter(f);
    }
    Ok(spec)
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let spec = layer_spec(a).map_err(Failure::Usage)?;
    let trace = generate(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
    let file = std::fs::File::create(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let mut w = std::io::BufWriter::new(file);
    if a.text {
        write_trace_text(&trace, &mut w).map_err(runtime)?;
    } else {
        write_trace(&trace, &mut w).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    writeln!(out, "{}", spec.params_string()).map_err(runtime)?;
    writeln!(out, "seed={}", spec.seed).map_err(runtime)?;
    writeln!(out, "{}", TraceSummary::of(&trace)).map_err(runtime)?;
    Ok(())
}

/// Reads a trace in either form; the binary form is recognized by its magic bytes.
pub fn load_trace(path: &Path) -> Result<Trace, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed = if bytes.starts_with(b"MITR") {
        read_trace(bytes.as_slice())
    } else {
        let text = String::from_utf8(bytes).map_err(|_| format!("{}: neither a binary nor a text trace", path.display()))?;
        read_trace_text(&text)
    };
    parsed.map_err(|e| format!("{}: {e}", path.display()))
}

fn engine_config(path: &Option<PathBuf>) -> Result<EngineConfig, Failure> {
    match path {
        None => Ok(EngineConfig::default()),
        Some(p) => SimConfigFile::load(p)
            .and_then(|c| c.to_engine_config())
            .map_err(|e| Failure::Usage(e.to_string())),
    }
}

/// Resolves `--policy`/`--preset` and the optimization flags into a validated cell.
pub fn policy_from_args(a: &RunArgs) -> Result<PolicyConfig, String> {
    let mut cell = match (&a.policy, &a.preset) {
        (Some(p), None) => PolicyConfig::of(p.parse::<Policy>().map_err(|e| e.to_string())?),
        (None, Some(name)) => PolicyConfig::preset(name).map_err(|e| e.to_string())?,
        (None, None) => return Err("one of --policy or --preset is required".into()),
        (Some(_), Some(_)) => return Err("--policy and --preset are exclusive".into()),
    };
    cell.allocation_bypass |= a.ab;
    cell.cache_rinse |= a.cr;
    cell.pc_bypass |= a.pcby;
    cell.validate().map_err(|e| e.to_string())?;
    Ok(cell)
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cell = policy_from_args(a).map_err(Failure::Usage)?;
    let cfg = engine_config(&a.config)?;
    let trace = load_trace(&a.trace).map_err(Failure::Runtime)?;
    let stats = run(&trace, &cfg, cell).map_err(runtime)?;
    let text = format!("policy={}\nflags={}\n{stats}\n", cell.label(), cell.flags());
    out.write_all(text.as_bytes()).map_err(runtime)?;
    if let Some(p) = &a.out {
        std::fs::write(p, &text).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn workload_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.parallel == 0 {
        return Err(Failure::Usage("--parallel must be at least 1".into()));
    }
    let cfg = engine_config(&a.config)?;
    let mut sweeps = Vec::new();
    for path in &a.trace {
        let name = workload_name(path);
        if sweeps.iter().any(|s: &crate::report::SweepResult| s.workload == name) {
            return Err(Failure::Usage(format!("duplicate workload name {name:?}")));
        }
        let trace = load_trace(path).map_err(Failure::Runtime)?;
        let sweep = run_sweep(&name, &trace, &cfg, &PolicyConfig::SWEEP, a.parallel).map_err(runtime)?;
        let class = classify(&sweep).map_err(runtime)?;
        writeln!(out, "{name}: {class}").map_err(runtime)?;
        sweeps.push(sweep);
    }
    for p in write_artifacts(&sweeps, &a.outdir).map_err(runtime)? {
        writeln!(out, "wrote {}", p.display()).map_err(runtime)?;
    }
    Ok(())
}
