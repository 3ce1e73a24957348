//! Command-line front end.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::dp_noise::Method;
use crate::error::{Error, Result};
use crate::harness::benchmark::{generate_benchmark_data, write_benchmark, BenchmarkSpec};
use crate::harness::experiment::{run_experiment, ExperimentPlan, MarginsArg};
use crate::harness::ingest::{load_csv, LoadOptions};
use crate::harness::report::emit_reports;
use crate::ipf::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::metrics::{disclosure, utility_summary};
use crate::rng::RngStream;
use crate::synth::{stratified_synth, synthesize, SampleSize, SynthesisConfig};
use crate::tabulate::{build_table, Codebook, StructuralZeros};

#[derive(Debug, Parser)]
#[command(
    name = "dpsynth",
    version,
    about = "Differentially private synthetic categorical data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Catall,
    Ipf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Catall => Method::Catall,
            MethodArg::Ipf => Method::Ipf,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SampleSizeArg {
    Fixed,
    Poisson,
}

impl From<SampleSizeArg> for SampleSize {
    fn from(s: SampleSizeArg) -> SampleSize {
        match s {
            SampleSizeArg::Fixed => SampleSize::Fixed,
            SampleSizeArg::Poisson => SampleSize::Poisson,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise one dataset.
    Synth(SynthArgs),
    /// Run an ε sweep described by a plan file and write reports.
    Experiment {
        #[arg(long)]
        plan: PathBuf,
        /// Output directory; overrides the plan's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a synthetic file against the original.
    Metrics {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Margin order for the utility summary.
        #[arg(long, default_value_t = 2)]
        order: usize,
    },
    /// Write a benchmark dataset drawn from a log-linear model.
    Generate {
        /// TOML benchmark description.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "benchmark")]
        stem: String,
    },
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long)]
    pub structural_zeros: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Ipf)]
    pub method: MethodArg,
    /// Privacy budget; omit for a non-private synthesis.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub nprior: f64,
    /// `two-way`, `order:<r>` or `file:<path>`.
    #[arg(long, default_value = "two-way")]
    pub margins: MarginsArg,
    #[arg(long, default_value_t = 0.0)]
    pub clamp_floor: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub ipf_tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub ipf_max_iter: usize,
    #[arg(long, value_enum, default_value_t = SampleSizeArg::Fixed)]
    pub sample_size: SampleSizeArg,
    #[arg(long)]
    pub stratify_by: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Quantile classes for numeric columns when no codebook is given.
    #[arg(long)]
    pub bin_classes: Option<usize>,
    /// Synthetic CSV; provenance goes to `<out>.provenance.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Experiment { plan, out } => experiment(&plan, out),
        Command::Metrics {
            original,
            synthetic,
            codebook,
            order,
        } => metrics(
            &original,
            &synthetic,
            codebook.as_deref(),
            order,
            &mut io::stdout().lock(),
        ),
        Command::Generate { spec, out, stem } => generate(&spec, &out, &stem),
    }
}

fn read_codebook(path: Option<&Path>) -> Result<Option<Codebook>> {
    path.map(Codebook::read).transpose()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn synth(args: SynthArgs) -> Result<()> {
    let codebook = read_codebook(args.codebook.as_deref())?;
    let data = load_csv(
        &args.input,
        codebook.as_ref(),
        LoadOptions {
            bin_classes: args.bin_classes,
        },
    )?;
    let zeros = match &args.structural_zeros {
        Some(p) => StructuralZeros::read(p, &data.codebook)?,
        None => StructuralZeros::none(),
    };
    let table = build_table(&data.records, data.codebook.clone(), Arc::new(zeros))?;
    let margins = args.margins.selection(table.codebook(), Path::new(""))?;
    let config = SynthesisConfig {
        method: args.method.into(),
        epsilon: args.epsilon,
        nprior: args.nprior,
        margins,
        clamp_floor: args.clamp_floor,
        ipf_tol: args.ipf_tol,
        ipf_max_iter: args.ipf_max_iter,
        sample_size: args.sample_size.into(),
        seed: args.seed,
        replications: 1,
    };
    let stream = RngStream::new(args.seed, 0);
    let dataset = match &args.stratify_by {
        Some(name) => {
            let var = table
                .codebook()
                .variable_index(name)
                .ok_or_else(|| Error::Config(format!("--stratify-by: no variable `{name}`")))?;
            stratified_synth(&table, var, &config, stream)?.dataset
        }
        None => synthesize(&table, &config, stream)?,
    };
    if dataset.provenance.converged == Some(false) {
        log::warn!(
            "ipf did not converge in {} iterations",
            dataset.provenance.ipf_iterations.unwrap_or(0)
        );
    }
    let mut out = create(&args.out)?;
    dataset.write_csv(&mut out)?;
    out.flush().map_err(|e| Error::io(&args.out, e))?;
    let mut prov_path = args.out.clone().into_os_string();
    prov_path.push(".provenance.json");
    let prov_path = PathBuf::from(prov_path);
    let json = serde_json::to_string_pretty(&dataset.provenance).expect("provenance serialises");
    fs::write(&prov_path, json + "\n").map_err(|e| Error::io(&prov_path, e))
}

fn experiment(plan_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let plan = ExperimentPlan::read(plan_path)?;
    let outdir = match out {
        Some(o) => o,
        None => plan
            .output
            .as_ref()
            .map(|o| plan.resolve(o))
            .ok_or_else(|| {
                Error::Config("no output directory: pass --out or set `output`".into())
            })?,
    };
    let report = run_experiment(&plan)?;
    let files = emit_reports(&report, &outdir)?;
    log::info!("wrote {}", files.arms.display());
    Ok(())
}

/// Writes the disclosure measures as `# key=value` lines followed by the
/// per-margin utility CSV.
pub fn metrics(
    original: &Path,
    synthetic: &Path,
    codebook: Option<&Path>,
    order: usize,
    out: &mut impl Write,
) -> Result<()> {
    let codebook = match read_codebook(codebook)? {
        Some(cb) => cb,
        None => {
            // Categories must cover both files.
            let o = load_csv(original, None, LoadOptions::default())?;
            let s = load_csv(synthetic, None, LoadOptions::default())?;
            union_codebook(&o.codebook, &s.codebook)?
        }
    };
    let o = load_csv(original, Some(&codebook), LoadOptions::default())?;
    let s = load_csv(synthetic, Some(&codebook), LoadOptions::default())?;
    let zeros = Arc::new(StructuralZeros::none());
    let orig = build_table(&o.records, o.codebook.clone(), zeros.clone())?;
    let syn = build_table(&s.records, o.codebook.clone(), zeros)?;
    let d = disclosure(&orig, &syn)?;
    let io_err = |e| Error::io("<stdout>", e);
    writeln!(
        out,
        "# n={} k={} p1={} p0={} ru={}",
        d.n, d.k, d.p1, d.p0, d.ru
    )
    .map_err(io_err)?;
    match d.ru_of_p1 {
        Some(r) => writeln!(out, "# ru_pct_of_p1={r}"),
        None => writeln!(out, "# ru_pct_of_p1=absent"),
    }
    .map_err(io_err)?;
    let u = utility_summary(&orig, &syn, order)?;
    u.write_csv(orig.codebook(), out)
}

fn union_codebook(a: &Codebook, b: &Codebook) -> Result<Codebook> {
    if a.variables().len() != b.variables().len()
        || a.variables()
            .iter()
            .zip(b.variables())
            .any(|(x, y)| x.name != y.name)
    {
        return Err(Error::TableMismatch(
            "original and synthetic have different columns".into(),
        ));
    }
    let vars = a
        .variables()
        .iter()
        .zip(b.variables())
        .map(|(x, y)| {
            let mut cats = x.categories.clone();
            cats.extend(
                y.categories
                    .iter()
                    .filter(|c| !x.categories.contains(c))
                    .cloned(),
            );
            crate::tabulate::Variable::new(x.name.clone(), cats)
        })
        .collect();
    Codebook::new(vars)
}

fn generate(spec_path: &Path, out: &Path, stem: &str) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: BenchmarkSpec = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", spec_path.display())))?;
    let data = generate_benchmark_data(&spec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_benchmark(&data, out, stem)?;
    Ok(())
}
