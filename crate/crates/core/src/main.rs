use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lpcontract::coupling::{simulate_ensemble, Coupling, SimConfig};
use lpcontract::drift::{Certificate, DissipativityProfile, DriftModel};
use lpcontract::harness::{self, ExperimentSpec, ModelSpec, SigmaSpec};
use lpcontract::lyapunov::{certify, AuxiliaryFunction, RateCertificate};
use lpcontract::transport::{
    brute_force_ot_oracle, plan_checksum, wasserstein_exact_1d, wasserstein_exact_assignment, EmpiricalMeasure, Ground,
};
use lpcontract::Error;

/// Environment variable naming the default output directory of `experiment`.
const OUT_ENV: &str = "LPCONTRACT_OUT";

#[derive(Parser)]
#[command(name = "lpcontract", version, about = "Contraction-rate certificates for diffusions dissipative at infinity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certified rate λ and companion constants, as JSON.
    Rate(RateArgs),
    /// Tabulated auxiliary function ψ, as CSV.
    Psi(PsiArgs),
    /// Simulate a coupled ensemble; per-slice statistics as CSV.
    Simulate(SimulateArgs),
    /// Exact transport distance between two CSV point clouds, as JSON.
    Distance(DistanceArgs),
    /// Run an experiment spec and write its report.
    Experiment(ExperimentArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model as `family[:key=value,...]`, e.g. `double_well` or `linear:k=1`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// σ as a multiple of the identity.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

impl ModelArgs {
    fn build(&self) -> Result<Option<DriftModel>, Error> {
        self.model
            .as_deref()
            .map(|m| ModelSpec::parse_compact(m, self.dim, SigmaSpec::Scalar(self.sigma))?.build())
            .transpose()
    }
}

#[derive(Args, Clone)]
struct CertArgs {
    /// Certificate constant: κ(r) ≤ −c r^θ for r ≥ η.
    #[arg(long)]
    c: f64,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// Defaults to half the linearized c.
    #[arg(long)]
    eps: Option<f64>,
    /// Powers for the sandwich constants.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    p: Vec<f64>,
    #[command(flatten)]
    model: ModelArgs,
}

impl CertArgs {
    /// Without a model only `η = 0` makes sense: κ is then taken as `−c r^θ`.
    fn certify(&self) -> Result<(AuxiliaryFunction, RateCertificate, Option<DriftModel>), Error> {
        let cert = Certificate::new(self.c, self.eta, self.theta)?;
        let model = self.model.build()?;
        let profile = match &model {
            Some(m) => DissipativityProfile::from_model(m)?,
            None if self.eta == 0.0 => {
                let (c, theta) = (self.c, self.theta);
                DissipativityProfile::from_fn("certificate", move |r| -c * r.powf(theta))
            }
            None => return Err(Error::Config("a certificate with η > 0 needs --model".into())),
        }
        .with_certificate(cert);
        let (aux, rate) = certify(&profile, self.eps, &self.p)?;
        Ok((aux, rate, model))
    }
}

#[derive(Args)]
struct RateArgs {
    #[command(flatten)]
    cert: CertArgs,
}

#[derive(Args)]
struct PsiArgs {
    #[command(flatten)]
    cert: CertArgs,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingArg {
    Sync,
    Reflect,
    Hybrid,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "reflect")]
    coupling: CouplingArg,
    /// Switch radius of the hybrid coupling.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x0: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    y0: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Steps between recorded slices.
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Linear certificate `c` (with η = --eta, or 0) for the mean_psi column.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GaugeArg {
    Lp,
    PhiP,
    Psi,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    #[value(name = "1d")]
    OneD,
    Assignment,
    Oracle,
}

#[derive(Args)]
struct DistanceArgs {
    /// CSV of points, one per row.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, value_enum, default_value = "lp")]
    gauge: GaugeArg,
    #[arg(long, value_enum, default_value = "assignment")]
    method: MethodArg,
    /// ψ gauge certificate `c` (with --eta, --theta, --eps, --model).
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long)]
    eps: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment spec.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory (default: the spec's output.dir, then $LPCONTRACT_OUT, then `.`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn rate(args: RateArgs) -> Result<ExitCode, Error> {
    let (_, rate, model) = args.cert.certify()?;
    let cond = model.as_ref().map_or(1.0, |m| m.sigma().cond());
    let mut out = serde_json::to_value(&rate)?;
    let mut prefactor = serde_json::Map::new();
    for &p in &args.cert.p {
        prefactor.insert(p.to_string(), json!(rate.prefactor(cond, p)?.value));
    }
    out["prefactor"] = prefactor.into();
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn psi(args: PsiArgs) -> Result<ExitCode, Error> {
    let (aux, rate, _) = args.cert.certify()?;
    aux.write_csv(rate.lambda, sink(args.out.as_deref())?)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(args: SimulateArgs) -> Result<ExitCode, Error> {
    let model = args.model.build()?.ok_or_else(|| Error::Config("simulate needs --model".into()))?;
    let coupling = match args.coupling {
        CouplingArg::Sync => Coupling::Synchronous,
        CouplingArg::Reflect => Coupling::Reflection,
        CouplingArg::Hybrid => {
            Coupling::Hybrid { eta: args.eta.ok_or_else(|| Error::Config("hybrid coupling needs --eta".into()))? }
        }
    };
    let cfg = SimConfig::new(args.dt, args.horizon, args.paths, args.seed, coupling).with_stride(args.stride);
    let aux = match args.c {
        Some(c) => {
            let cert = Certificate::new(c, args.eta.unwrap_or(0.0), args.theta)?;
            let profile = DissipativityProfile::from_model(&model)?.with_certificate(cert);
            Some(certify(&profile, None, &[1.0])?.0)
        }
        None => None,
    };
    let ens = simulate_ensemble(&model, &cfg, &args.x0, &args.y0)?;
    ens.write_csv(aux.as_ref(), sink(args.out.as_deref())?)?;
    Ok(ExitCode::SUCCESS)
}

/// Point cloud from CSV rows; a non-numeric first row is taken as a header.
fn read_points(path: &Path) -> Result<EmpiricalMeasure, Error> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match row {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::Config(format!("{}: row {} is not numeric", path.display(), i + 1))),
        }
    }
    EmpiricalMeasure::from_rows(&rows)
}

fn distance(args: DistanceArgs) -> Result<ExitCode, Error> {
    let (a, b) = (read_points(&args.a)?, read_points(&args.b)?);
    let ground = match args.gauge {
        GaugeArg::Lp => Ground::Lp(args.p),
        GaugeArg::PhiP => Ground::PhiP(args.p),
        GaugeArg::Psi => {
            let cert = CertArgs {
                c: args.c.ok_or_else(|| Error::Config("the ψ gauge needs --c".into()))?,
                eta: args.eta,
                theta: args.theta,
                eps: args.eps,
                p: vec![1.0],
                model: args.model.clone(),
            };
            let aux = cert.certify()?.0;
            Ground::Gauge(std::sync::Arc::new(move |r| aux.psi(r)))
        }
    };
    let (value, checksum, method) = match args.method {
        MethodArg::OneD => {
            let Ground::Lp(p) = ground else {
                return Err(Error::Config("the 1d method computes W_p only (--gauge lp)".into()));
            };
            (wasserstein_exact_1d(&a, &b, p)?, None, "1d")
        }
        MethodArg::Assignment => {
            let (v, plan) = wasserstein_exact_assignment(&a, &b, &ground)?;
            (v, Some(plan_checksum(&plan)), "assignment")
        }
        MethodArg::Oracle => (brute_force_ot_oracle(&a, &b, &ground)?, None, "oracle"),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "distance": value,
            "n": a.len(),
            "method": method,
            "plan_checksum": checksum,
        }))?
    );
    Ok(ExitCode::SUCCESS)
}

fn experiment(args: ExperimentArgs) -> Result<ExitCode, Error> {
    let spec = ExperimentSpec::load(&args.spec)?;
    let dir = args
        .out
        .or_else(|| spec.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let outcome = harness::run(&spec)?;
    harness::write_outputs(&outcome, &dir)?;
    let report = &outcome.report;
    println!(
        "{}: {} rows, {} failing; report written to {}",
        report.metadata.kind,
        report.rows.len(),
        report.failures().count(),
        dir.display()
    );
    if report.all_pass() {
        return Ok(ExitCode::SUCCESS);
    }
    for r in report.failures() {
        eprintln!(
            "FAIL {} [{}] t={:?} p={:?}: estimate {:.6e} (CI {:.6e}..{:.6e}) vs bound {:?}",
            r.check, r.estimator, r.t, r.p, r.estimate, r.ci_low, r.ci_high, r.bound
        );
    }
    Ok(ExitCode::from(1))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Rate(a) => rate(a),
        Command::Psi(a) => psi(a),
        Command::Simulate(a) => simulate(a),
        Command::Distance(a) => distance(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
