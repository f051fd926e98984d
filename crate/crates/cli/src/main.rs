use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use barrier_pair::bundle::{tool_version, ArtifactBundle, SynthConfig};
use barrier_pair::config::{load_model, load_scenario};
use barrier_pair::lmi::logdet;
use barrier_pair::sim::{self, CbfParams};
use barrier_pair::supervisor::SwitchMode;
use barrier_pair::verify::{verify, VerifyOptions};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

mod report;

#[derive(Parser)]
#[command(name = "bpair", version, about = "Barrier pair synthesis, supervised simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a bundle from a model file.
    Synth(SynthArgs),
    /// Rebuild the composite barrier of an existing bundle.
    Compose(ComposeArgs),
    /// Run a scenario and write the trace CSV plus a JSON sidecar.
    Simulate(SimulateArgs),
    /// Re-check a bundle's certificates and sample its guarantees.
    Verify(VerifyArgs),
    /// Split a trace into per-panel CSV series.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    model: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    mu_cl: Option<f64>,
    /// Comma-separated, one per uncertainty channel.
    #[arg(long, value_delimiter = ',')]
    mu_p: Option<Vec<f64>>,
    #[arg(long)]
    directions: Option<usize>,
    #[arg(long)]
    interp: Option<usize>,
    /// Defaults to `<model stem>.bundle.json`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ComposeArgs {
    bundle: PathBuf,
    #[arg(long)]
    directions: usize,
    #[arg(long, default_value_t = 0)]
    interp: usize,
    /// Defaults to overwriting the input bundle.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    bundle: PathBuf,
    scenario: PathBuf,
    /// Trace CSV; the sidecar goes next to it with a `.json` extension.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eps_lower: Option<f64>,
    #[arg(long)]
    eps_upper: Option<f64>,
    /// Blend with the sigmoidal law instead of hysteresis switching.
    #[arg(long)]
    sigmoidal: bool,
    /// Replace the supervisor with the CBF-QP filter on the nominal model.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    bundle: PathBuf,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// JSON report; printed to stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Trace CSV written by `simulate`; its sidecar must sit next to it.
    trace: PathBuf,
    #[arg(short, long, default_value = "report")]
    out_dir: PathBuf,
}

/// Written next to every trace.
#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub tool: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub model_hash: String,
    pub model_name: String,
    pub eps_lower: f64,
    pub eps_upper: f64,
    /// Rows of `F`, each `|F_i x_p| ≤ 1`.
    pub f: Vec<Vec<f64>>,
    pub u_bar: Vec<f64>,
    pub summary: sim::TraceSummary,
    pub safe: bool,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let (file, plant, cons) = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let defaults = file.synthesis.clone();
    let cfg = SynthConfig {
        eps: a.eps.or(defaults.as_ref().map(|d| d.eps)).context("--eps is required when the model has no [synthesis] table")?,
        mu_cl: a.mu_cl.or(defaults.as_ref().map(|d| d.mu_cl)).unwrap_or(0.1),
        mu_p: a.mu_p.or(defaults.as_ref().and_then(|d| d.mu_p.clone())),
        directions: a.directions.or(defaults.as_ref().map(|d| d.directions)).unwrap_or(0),
        interp: a.interp.or(defaults.as_ref().map(|d| d.interp)).unwrap_or(0),
    };
    let b = ArtifactBundle::synthesize(&file.name, &plant, &cons, &cfg, &Default::default(), &Default::default())?;
    let out = a.out.unwrap_or_else(|| a.model.with_extension("bundle.json"));
    b.save(&out)?;
    println!("model      {}", file.name);
    println!("eps        {}", b.pair.scalars.eps);
    println!("logdet Y   {:.6}", logdet(&b.pair.y).unwrap_or(f64::NAN));
    println!("r_e        {:.6}", b.estimator.r_e);
    print_generators(&b);
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn print_generators(b: &ArtifactBundle) {
    for (i, g) in b.composite.generators.iter().enumerate().skip(1) {
        println!("rho[{i}]     {:.6}", g.rho.unwrap_or(f64::NAN));
    }
    for (i, why) in &b.metadata.dropped {
        println!("direction {i} dropped: {why}");
    }
    println!("generators {} + {} interpolants", b.composite.len(), b.composite.pool.len());
}

fn compose(a: ComposeArgs) -> Result<ExitCode> {
    let mut b = ArtifactBundle::load(&a.bundle).with_context(|| format!("loading {}", a.bundle.display()))?;
    let opts = b.metadata.composite.clone();
    b.recompose(a.directions, a.interp, &opts)?;
    let out = a.out.unwrap_or(a.bundle);
    b.save(&out)?;
    print_generators(&b);
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let b = ArtifactBundle::load(&a.bundle).with_context(|| format!("loading {}", a.bundle.display()))?;
    let mut sc = load_scenario(&a.scenario).with_context(|| format!("loading {}", a.scenario.display()))?;
    if let Some(v) = a.eps_lower {
        sc.supervisor.eps_lower = v;
    }
    if let Some(v) = a.eps_upper {
        sc.supervisor.eps_upper = v;
    }
    if a.sigmoidal {
        sc.supervisor.mode = SwitchMode::Sigmoidal;
    }
    if a.baseline {
        sc.baseline = Some(sc.baseline.unwrap_or_else(CbfParams::default));
    }
    if let Some(v) = a.dt {
        sc.dt = v;
    }
    if let Some(v) = a.horizon {
        sc.horizon = v;
    }
    let trace = sim::run(&sc, b.artifacts())?;
    let out = a.out.unwrap_or_else(|| a.scenario.with_extension("csv"));
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    trace.write_csv(b.constraints.n_s(), &mut w)?;
    w.flush()?;
    let s = &trace.summary;
    let sidecar = Sidecar {
        tool: tool_version(),
        scenario: sc.name.clone(),
        scenario_hash: sc.hash(),
        model_hash: b.model_hash.clone(),
        model_name: b.metadata.model_name.clone(),
        eps_lower: sc.supervisor.eps_lower,
        eps_upper: sc.supervisor.eps_upper,
        f: b.constraints.f.row_iter().map(|r| r.iter().copied().collect()).collect(),
        u_bar: b.constraints.u_bar.clone(),
        summary: s.clone(),
        safe: trace.is_safe(),
    };
    write_json(&out.with_extension("json"), &sidecar)?;
    println!("ticks {}  switches {}  max B_true {:.4}  max B_bar {:.4}", s.ticks, s.switches, s.max_b_true, s.max_b_bar);
    for (i, r) in b.constraints.f.row_iter().enumerate() {
        let peak = trace.rows.iter().map(|row| r.iter().zip(&row.x_p).map(|(a, x)| a * x).sum::<f64>().abs()).fold(0.0, f64::max);
        println!("constraint {}: max |F x| = {peak:.4}", i + 1);
    }
    if s.bound_violations > 0 {
        println!("bound below the true value at {} ticks (worst gap {:.3e})", s.bound_violations, s.worst_bound_gap);
    }
    println!("wrote {}", out.display());
    if trace.is_safe() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "safety violation: {} state ticks (worst margin {:.4}), {} input ticks",
            s.state_violations, s.worst_state_margin, s.input_violations
        );
        Ok(ExitCode::from(1))
    }
}

fn verify_cmd(a: VerifyArgs) -> Result<ExitCode> {
    let b = ArtifactBundle::from_json(&std::fs::read_to_string(&a.bundle).with_context(|| format!("reading {}", a.bundle.display()))?)?;
    let opts = VerifyOptions {
        samples: a.samples,
        seed: a.seed,
        ..Default::default()
    };
    let mut report = verify(&b.plant, &b.constraints, &b.pair, &b.composite, &b.estimator, &opts)?;
    let hash = barrier_pair::bundle::model_hash(&b.plant, &b.constraints);
    report.properties.insert(
        0,
        barrier_pair::verify::PropertyResult {
            name: "model-hash".into(),
            passed: hash == b.model_hash,
            checked: 1,
            failures: usize::from(hash != b.model_hash),
            worst: if hash == b.model_hash { 0.0 } else { -1.0 },
            detail: String::new(),
        },
    );
    for p in &report.properties {
        eprintln!(
            "{:<16} {}  {}/{} failed, worst {:.3e}",
            p.name,
            if p.passed { "pass" } else { "FAIL" },
            p.failures,
            p.checked,
            p.worst
        );
    }
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Compose(a) => compose(a),
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Report(a) => report::run(&a.trace, &a.out_dir).map(|_| ExitCode::SUCCESS),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
