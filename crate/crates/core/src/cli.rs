//! The `cnnr` command line. [`run`] parses arguments and returns the exit
//! code: 0 on success, 1 when a check fails, 2 on usage or input errors.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::complexity::{
    audit_blocks, kr_classify, naive_count_uncompressed, parse_network_spec, sample_complexity_uncompressed,
    ComplexityReport, DEFAULT_KR_THRESHOLD,
};
use crate::decomposition::{cp_als, hooi_refine, hosvd, tucker_error, CpAlsOptions};
use crate::experiments::{run_study, write_outputs, ExperimentConfig, ExperimentError};
use crate::tensor::DenseTensor;
use crate::verify::{verify_five_layer, verify_three_layer};

#[derive(Debug, Parser)]
#[command(name = "cnnr", version, about = "Composite-weight analysis of convolutional networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare direct evaluation with the composite-weight form on random networks.
    VerifyLinearization(VerifyArgs),
    /// Parameter counts, sample complexities and the K/R classification.
    Complexity(ComplexityArgs),
    /// Audit the blocks of a network description file and print a CSV report.
    AuditBlocks(AuditArgs),
    /// Run a simulation study described by a TOML config.
    RunExperiment(ExperimentArgs),
    /// Tucker or CP decomposition of a tensor file.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Random networks per architecture (three-layer and five-layer).
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Largest input order.
    #[arg(long, default_value_t = 3)]
    pub max_order: usize,
    /// Largest input extent per mode.
    #[arg(long, default_value_t = 12)]
    pub max_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted |oracle - linear| / (1 + |oracle|).
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    /// Number of kernels.
    #[arg(long = "K")]
    pub k: usize,
    /// Pooled size (product of pooled extents).
    #[arg(long = "P")]
    pub p: usize,
    /// Kernel size (product of kernel extents), for the uncompressed report.
    #[arg(long = "L", conflicts_with_all = ["tucker", "cp"], required_unless_present_any = ["tucker", "cp"])]
    pub l: Option<usize>,
    /// Tucker ranks as `R1,...,RN:R`.
    #[arg(long, conflicts_with = "cp", requires = "modes")]
    pub tucker: Option<String>,
    /// CP rank R.
    #[arg(long, requires = "modes")]
    pub cp: Option<usize>,
    /// Kernel extents `l1,...,lN` for the compressed reports.
    #[arg(long = "l", id = "modes", value_delimiter = ',')]
    pub modes: Option<Vec<usize>>,
    /// K/R ratio above which a block is flagged as redundant.
    #[arg(long, default_value_t = DEFAULT_KR_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Network description, one block per line.
    pub specfile: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KR_THRESHOLD)]
    pub threshold: f64,
    /// Pooled size P used for every block's counts.
    #[arg(long, default_value_t = 1)]
    pub pooled_size: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML experiment config.
    pub configfile: PathBuf,
    /// Directory for the CSV, SVG and summary files.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// First line: shape; then one value per line, first index fastest.
    pub tensorfile: PathBuf,
    /// Tucker ranks, one per mode.
    #[arg(long, value_delimiter = ',', conflicts_with = "cp", required_unless_present = "cp")]
    pub tucker: Option<Vec<usize>>,
    /// CP rank.
    #[arg(long)]
    pub cp: Option<usize>,
    /// Starts for CP-ALS (the first is SVD-initialized).
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the factor matrices.
    #[arg(long)]
    pub factors: bool,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn check_failed(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::VerifyLinearization(a) => cmd_verify(&a, out),
        Command::Complexity(a) => cmd_complexity(&a, out),
        Command::AuditBlocks(a) => cmd_audit(&a, out, err),
        Command::RunExperiment(a) => cmd_experiment(&a, out),
        Command::Decompose(a) => cmd_decompose(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn io(e: std::io::Error) -> Failure {
    check_failed(format!("write failed: {e}"))
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> CmdResult {
    if a.max_order == 0 || a.max_dim == 0 {
        return Err(usage("--max-order and --max-dim must be positive"));
    }
    let three = verify_three_layer(a.trials, a.max_order, a.max_dim, a.seed, a.tol)
        .map_err(|e| check_failed(e.to_string()))?;
    let five = verify_five_layer(a.trials, a.max_order, a.max_dim, a.seed ^ 0x5f5f, a.tol)
        .map_err(|e| check_failed(e.to_string()))?;
    writeln!(out, "three-layer: {three}").map_err(io)?;
    writeln!(out, "five-layer: {five}").map_err(io)?;
    let worst = three.max_deviation.max(five.max_deviation);
    writeln!(out, "max relative deviation {worst:.3e} (tolerance {:e})", a.tol).map_err(io)?;
    match three.first_failure.or(five.first_failure) {
        Some(f) => Err(check_failed(format!("equivalence check failed: {f}"))),
        None => Ok(()),
    }
}

/// Parses `R1,...,RN:R`.
pub fn parse_tucker_ranks(text: &str) -> Result<(Vec<usize>, usize), String> {
    let (modes, r) = text
        .split_once(':')
        .ok_or_else(|| format!("expected R1,...,RN:R, got '{text}'"))?;
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("'{s}' is not a non-negative integer"));
    let ranks = modes.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
    Ok((ranks, num(r)?))
}

pub fn cmd_complexity(a: &ComplexityArgs, out: &mut dyn Write) -> CmdResult {
    let bad = |e: crate::complexity::ComplexityError| usage(e.to_string());
    let mut s = String::new();
    let report = if let Some(t) = &a.tucker {
        let (ranks, r) = parse_tucker_ranks(t).map_err(usage)?;
        let l = a.modes.as_deref().unwrap_or_default();
        Some(ComplexityReport::tucker(&ranks, r, l, a.k, a.p).map_err(bad)?)
    } else if let Some(r) = a.cp {
        let l = a.modes.as_deref().unwrap_or_default();
        Some(ComplexityReport::cp(r, l, a.k, a.p).map_err(bad)?)
    } else {
        None
    };
    match report {
        Some(rep) => {
            let class = kr_classify(rep.kr_ratio, a.threshold);
            let _ = writeln!(s, "formula               {:?}", rep.kind);
            let _ = writeln!(s, "naive_uncompressed    {}", rep.naive_uncompressed);
            let _ = writeln!(s, "naive_compressed      {}", rep.naive_compressed);
            let _ = writeln!(s, "sample_uncompressed   {}", rep.sample_uncompressed);
            let _ = writeln!(s, "sample_compressed     {}", rep.sample_compressed);
            let _ = writeln!(s, "discrepancy           {}", rep.discrepancy);
            let _ = writeln!(s, "kr_ratio              {}", rep.kr_ratio);
            let _ = writeln!(s, "classification        {}", class.as_str());
        }
        None => {
            let l = a.l.expect("clap requires --L here");
            let naive = naive_count_uncompressed(a.k, a.p, l).map_err(bad)?;
            let sample = sample_complexity_uncompressed(a.k, a.p, l).map_err(bad)?;
            let _ = writeln!(s, "naive_uncompressed    {naive}");
            let _ = writeln!(s, "sample_uncompressed   {sample}");
        }
    }
    out.write_all(s.as_bytes()).map_err(io)
}

pub fn cmd_audit(a: &AuditArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let text = std::fs::read_to_string(&a.specfile)
        .map_err(|e| usage(format!("{}: {e}", a.specfile.display())))?;
    let blocks = parse_network_spec(&text).map_err(|e| usage(format!("{}: {e}", a.specfile.display())))?;
    let audit = audit_blocks(&blocks, a.pooled_size, a.threshold).map_err(|e| usage(e.to_string()))?;
    for (i, b) in blocks.iter().enumerate() {
        if b.kr_ratio().below_one() {
            let _ = writeln!(
                err,
                "warning: block {} has K/R = {} < 1; the output layer is narrower than the bottleneck",
                i + 1,
                b.kr_ratio()
            );
        }
    }
    let csv = audit.to_csv();
    match &a.out {
        Some(p) => std::fs::write(p, csv).map_err(|e| check_failed(format!("{}: {e}", p.display()))),
        None => out.write_all(csv.as_bytes()).map_err(io),
    }
}

pub fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write) -> CmdResult {
    let classify = |e: ExperimentError| match e {
        ExperimentError::Estimation(_) => check_failed(e.to_string()),
        ExperimentError::Io { .. } => check_failed(e.to_string()),
        other => usage(other.to_string()),
    };
    let cfg = ExperimentConfig::load(&a.configfile).map_err(|e| usage(e.to_string()))?;
    let result = run_study(&cfg).map_err(classify)?;
    let paths = write_outputs(&cfg, &result, &a.out_dir).map_err(classify)?;
    for f in &result.fits {
        let failed: usize = result.records_for(&f.setting).map(|r| r.failed_reps).sum();
        writeln!(
            out,
            "{:<10} slope={:.3} R2={:.4} R2_uncentered={:.4} failed_reps={failed}",
            f.setting, f.slope, f.r2, f.r2_uncentered
        )
        .map_err(io)?;
    }
    for p in paths {
        writeln!(out, "wrote {}", p.display()).map_err(io)?;
    }
    Ok(())
}

/// Reads the text tensor format: the shape on the first line, then one value
/// per line in first-index-fastest order. Blank lines and `#` comments are skipped.
pub fn parse_tensor_text(text: &str) -> Result<DenseTensor, String> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, head) = lines.next().ok_or("empty tensor file")?;
    let shape = head
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| format!("line 1: bad extent '{t}'")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut data = Vec::new();
    for (n, l) in lines {
        data.push(l.parse::<f64>().map_err(|_| format!("line {n}: '{l}' is not a number"))?);
    }
    DenseTensor::from_vec(&shape, data).map_err(|e| e.to_string())
}

pub fn format_tensor_text(t: &DenseTensor) -> String {
    let mut s = t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
    s.push('\n');
    for v in t.data() {
        let _ = writeln!(s, "{v:e}");
    }
    s
}

fn write_matrix(s: &mut String, name: &str, m: &nalgebra::DMatrix<f64>) {
    let _ = writeln!(s, "{name} ({}x{}):", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.6}")).collect();
        let _ = writeln!(s, "  {}", cells.join(" "));
    }
}

pub fn cmd_decompose(a: &DecomposeArgs, out: &mut dyn Write) -> CmdResult {
    let text = std::fs::read_to_string(&a.tensorfile)
        .map_err(|e| usage(format!("{}: {e}", a.tensorfile.display())))?;
    let t = parse_tensor_text(&text).map_err(|e| usage(format!("{}: {e}", a.tensorfile.display())))?;
    let mut s = String::new();
    if let Some(ranks) = &a.tucker {
        if ranks.contains(&0) {
            return Err(usage("Tucker ranks must be positive"));
        }
        let init = hosvd(&t, ranks).map_err(|e| usage(e.to_string()))?;
        let refined = hooi_refine(&t, &init, 100, 1e-12).map_err(|e| usage(e.to_string()))?;
        let err = tucker_error(&t, &refined.form);
        let _ = writeln!(s, "tucker ranks {ranks:?}");
        let _ = writeln!(s, "hosvd relative error {:.3e}", refined.errors[0]);
        let _ = writeln!(s, "relative error {err:.3e}");
        let _ = writeln!(s, "fit {:.12}", 1.0 - err);
        if a.factors {
            for (j, f) in refined.form.factors.iter().enumerate() {
                write_matrix(&mut s, &format!("factor {}", j + 1), f);
            }
            let _ = writeln!(s, "core:\n{}", format_tensor_text(&refined.form.core));
        }
    } else {
        let r = a.cp.expect("clap requires --tucker or --cp");
        if r == 0 {
            return Err(usage("CP rank must be positive"));
        }
        if a.restarts == 0 {
            return Err(usage("--restarts must be at least 1"));
        }
        let opts = CpAlsOptions {
            restarts: a.restarts,
            seed: a.seed,
            ..CpAlsOptions::default()
        };
        let fit = cp_als(&t, r, opts).map_err(|e| usage(e.to_string()))?;
        if fit.rank_warning {
            let _ = writeln!(s, "note: rank {r} exceeds the maximal CP rank bound for this shape");
        }
        let _ = writeln!(s, "cp rank {r}");
        let _ = writeln!(s, "fit {:.12}", fit.fit);
        let _ = writeln!(s, "sweeps {}", fit.fit_trace.len());
        let weights: Vec<String> = fit.form.weights.iter().map(|w| format!("{w:.6}")).collect();
        let _ = writeln!(s, "weights {}", weights.join(" "));
        if a.factors {
            for (j, f) in fit.form.factors.iter().enumerate() {
                write_matrix(&mut s, &format!("factor {}", j + 1), f);
            }
        }
    }
    out.write_all(s.as_bytes()).map_err(io)
}

