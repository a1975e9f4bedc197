//! `ssml` — run the learner, evaluate closed forms, and drive experiment sweeps.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde_json::{json, Value};

use ssml_core::experiment::{execute, json_text, load_experiment, sig_digits, write_outputs, TOOL_VERSION};
use ssml_core::montecarlo::{trial_rng, Estimate, RunOptions};
use ssml_core::runstats::{
    effective_success, eps_cert, noise_blowup_mean, noise_cert_eps, quantile_scaling,
    quantile_sufficient_shots, run_mean, run_tail_bound, CertificateQuery, NoiseCert, RunQuery,
};
use ssml_core::{run_trial, NoiseModel, SsmlConfig, SsmlError, Target};

const EXIT_USAGE: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "ssml", version, about = "Single-shot measurement learning simulator and analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run learning trials against Haar-random targets.
    Simulate(SimulateArgs),
    /// Evaluate a closed-form quantity.
    Analytic(AnalyticArgs),
    /// Run an experiment file and write `<prefix>.csv` / `<prefix>.json`.
    Experiment(ExperimentArgs),
}

/// Accepts `1000000`, `1e6` or `10^6`.
fn parse_count(s: &str) -> Result<u64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let value = if let Some((base, exp)) = s.split_once('^') {
        let base: f64 = base.parse().map_err(|_| format!("invalid count '{s}'"))?;
        let exp: i32 = exp.parse().map_err(|_| format!("invalid count '{s}'"))?;
        base.powi(exp)
    } else {
        s.parse::<f64>().map_err(|_| format!("invalid count '{s}'"))?
    };
    if value >= 0.0 && value.fract() == 0.0 && value <= u64::MAX as f64 {
        Ok(value as u64)
    } else {
        Err(format!("'{s}' is not a non-negative integer"))
    }
}

fn parse_noise(s: &str) -> Result<NoiseModel, String> {
    s.parse().map_err(|e: SsmlError| e.to_string())
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Halting threshold: consecutive recorded successes required.
    #[arg(long, value_parser = parse_count, default_value = "10")]
    mh: u64,
    #[arg(long, default_value_t = ssml_core::learner::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = ssml_core::learner::DEFAULT_BETA)]
    beta: f64,
    /// `none`, `bsc:Q` or `fn:Q`.
    #[arg(long, value_parser = parse_noise, default_value = "none")]
    noise: NoiseModel,
    #[arg(long, value_parser = parse_count, default_value = "10^6")]
    max_shots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_count, default_value = "1")]
    trials: u64,
    /// Emit a JSON envelope instead of CSV rows.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("quantity").required(true).multiple(false)))]
struct AnalyticArgs {
    /// Mean waiting time for K consecutive successes.
    #[arg(long, num_args = 2, value_names = ["P", "K"], group = "quantity")]
    run_mean: Option<Vec<String>>,
    /// Block bound on P(X_K > N).
    #[arg(long, num_args = 3, value_names = ["P", "K", "N"], group = "quantity")]
    tail: Option<Vec<String>>,
    /// Certified infidelity scale, optionally under BSC noise Q.
    #[arg(long, num_args = 2..=3, value_names = ["MH", "DELTA", "Q"], group = "quantity")]
    eps_cert: Option<Vec<String>>,
    /// Best-case mean halting time under label noise Q.
    #[arg(long, num_args = 2, value_names = ["Q", "MH"], group = "quantity")]
    blowup: Option<Vec<String>>,
    /// Sufficient shots for halting with probability >= 1 - DELTA.
    #[arg(long, num_args = 3, value_names = ["P", "K", "DELTA"], group = "quantity")]
    quantile_shots: Option<Vec<String>>,
    /// Recorded-success probability for fidelity F through a label channel.
    #[arg(long, num_args = 3, value_names = ["F", "CHANNEL", "Q"], group = "quantity")]
    effective_f: Option<Vec<String>>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output prefix; files are `<prefix>.csv`, `<prefix>.json` and extras.
    #[arg(long)]
    output: PathBuf,
    /// Record wall-clock timing in the JSON envelope (breaks byte reproducibility).
    #[arg(long)]
    with_timing: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(SsmlError),
}

impl From<SsmlError> for Failure {
    fn from(e: SsmlError) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Core(e) => match e {
                SsmlError::Budget { .. } => EXIT_BUDGET,
                SsmlError::NumericIntegrity(_) | SsmlError::Fit(_) => EXIT_RUNTIME,
                _ => EXIT_USAGE,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type CmdResult = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Analytic(a) => analytic(&a),
        Command::Experiment(a) => experiment(&a),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn simulate(a: &SimulateArgs) -> CmdResult {
    let cfg = SsmlConfig {
        d: a.d,
        mh: a.mh,
        alpha: a.alpha,
        beta: a.beta,
        noise: a.noise,
        max_shots: a.max_shots,
        seed: a.seed,
        multi_failure: true,
    };
    cfg.validate()?;
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(a.trials as usize);
    for t in 0..a.trials as usize {
        let mut rng = trial_rng(cfg.seed, 0, t);
        rows.push(run_trial(&cfg, &Target::Haar, &[], &mut rng)?);
    }
    let halted: Vec<_> = rows.iter().filter(|r| r.halted).collect();
    let mean_t = Estimate::from_samples(&halted.iter().map(|r| r.shots as f64).collect::<Vec<_>>());
    let mean_eps = Estimate::from_samples(&halted.iter().map(|r| r.epsilon_t).collect::<Vec<_>>());

    if a.json {
        let envelope = json!({
            "tool_version": TOOL_VERSION,
            "spec": { "config": cfg, "trials": a.trials },
            "rows": rows.iter().enumerate().map(|(i, r)| json!({
                "trial": i,
                "T": r.shots,
                "epsilon_T": r.epsilon_t,
                "halted": r.halted,
            })).collect::<Vec<_>>(),
            "summary": {
                "halted": halted.len(),
                "mean_t": mean_t,
                "mean_epsilon_t": mean_eps,
            },
        });
        return Ok(json_text(&envelope)?);
    }

    let mut out = String::from("trial,T,epsilon_T,halted\n");
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!("{i},{},{:.16e},{}\n", r.shots, r.epsilon_t, r.halted));
    }
    let fmt = |e: Option<Estimate>| {
        e.map_or("-".to_string(), |e| {
            let se = if e.se.is_finite() { sig_digits(e.se, 6) } else { "-".into() };
            format!("{} (se {se})", sig_digits(e.mean, 6))
        })
    };
    out.push_str(&format!(
        "\nhalted {}/{}; mean T {}; mean epsilon_T {}\n",
        halted.len(),
        rows.len(),
        fmt(mean_t),
        fmt(mean_eps)
    ));
    Ok(out)
}

fn num<T: std::str::FromStr>(v: &str, name: &str) -> Result<T, Failure> {
    v.trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("invalid {name} '{v}'")))
}

fn count(v: &str, name: &str) -> Result<u64, Failure> {
    parse_count(v).map_err(|e| Failure::Usage(format!("{name}: {e}")))
}

/// Named values of one closed-form evaluation; the first is the headline.
struct Evaluation {
    quantity: &'static str,
    inputs: Value,
    values: Vec<(&'static str, Value)>,
}

fn analytic(a: &AnalyticArgs) -> CmdResult {
    let eval = if let Some(v) = &a.run_mean {
        let q = RunQuery::new(num(&v[0], "P")?, count(&v[1], "K")?)?;
        Evaluation {
            quantity: "run_mean",
            inputs: json!({ "p": q.p, "k": q.k }),
            values: vec![("mean", json!(run_mean(&q)))],
        }
    } else if let Some(v) = &a.tail {
        let q = RunQuery::new(num(&v[0], "P")?, count(&v[1], "K")?)?;
        let n = count(&v[2], "N")?;
        Evaluation {
            quantity: "tail",
            inputs: json!({ "p": q.p, "k": q.k, "n": n }),
            values: vec![("bound", json!(run_tail_bound(&q, n)))],
        }
    } else if let Some(v) = &a.eps_cert {
        let mh = count(&v[0], "MH")?;
        let delta: f64 = num(&v[1], "DELTA")?;
        match v.get(2) {
            None => {
                let s = eps_cert(mh, delta)?;
                Evaluation {
                    quantity: "eps_cert",
                    inputs: json!({ "mh": mh, "delta": delta }),
                    values: vec![("eps", json!(s.exact)), ("approx", json!(s.approx))],
                }
            }
            Some(q) => {
                let cq = CertificateQuery::new(mh, delta, num(q, "Q")?)?;
                let values = match noise_cert_eps(&cq)? {
                    NoiseCert::Scale(s) => vec![("eps", json!(s.exact)), ("approx", json!(s.approx))],
                    NoiseCert::Ceiling => vec![("eps", json!("ceiling"))],
                };
                Evaluation {
                    quantity: "eps_cert",
                    inputs: json!({ "mh": mh, "delta": delta, "q": cq.q }),
                    values,
                }
            }
        }
    } else if let Some(v) = &a.blowup {
        let q: f64 = num(&v[0], "Q")?;
        let mh = count(&v[1], "MH")?;
        let b = noise_blowup_mean(q, mh)?;
        Evaluation {
            quantity: "blowup",
            inputs: json!({ "q": q, "mh": mh }),
            values: vec![("mean", json!(b.exact)), ("asymptotic", json!(b.asymptotic))],
        }
    } else if let Some(v) = &a.quantile_shots {
        let q = RunQuery::new(num(&v[0], "P")?, count(&v[1], "K")?)?;
        let delta: f64 = num(&v[2], "DELTA")?;
        let n = quantile_sufficient_shots(&q, delta)?;
        Evaluation {
            quantity: "quantile_shots",
            inputs: json!({ "p": q.p, "k": q.k, "delta": delta }),
            values: vec![("shots", json!(n)), ("scaling", json!(quantile_scaling(&q, delta)))],
        }
    } else if let Some(v) = &a.effective_f {
        let f: f64 = num(&v[0], "F")?;
        let q: f64 = num(&v[2], "Q")?;
        let noise = match v[1].to_ascii_lowercase().as_str() {
            "bsc" => NoiseModel::Bsc(q),
            "fn" => NoiseModel::FalseNegative(q),
            other => return Err(Failure::Usage(format!("unknown channel '{other}', expected bsc or fn"))),
        };
        noise.validate()?;
        Evaluation {
            quantity: "effective_f",
            inputs: json!({ "f": f, "noise": noise }),
            values: vec![("success", json!(effective_success(f, noise)?))],
        }
    } else {
        return Err(Failure::Usage("no quantity selected".into()));
    };

    if a.json {
        let row: serde_json::Map<String, Value> =
            eval.values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let envelope = json!({
            "tool_version": TOOL_VERSION,
            "spec": { "quantity": eval.quantity, "inputs": eval.inputs },
            "rows": [row],
        });
        return Ok(json_text(&envelope)?);
    }
    // Plain `Display` so that whole-number results print as `6`, not `6.0`.
    let show = |v: &Value| match v {
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_u64() => n.to_string(),
        Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), |x| x.to_string()),
        other => other.to_string(),
    };
    let mut out = format!("{}\n", show(&eval.values[0].1));
    for (name, v) in &eval.values[1..] {
        out.push_str(&format!("{name} {}\n", show(v)));
    }
    Ok(out)
}

fn experiment(a: &ExperimentArgs) -> CmdResult {
    let spec = load_experiment(&a.config)?;
    let opts = RunOptions::from_env()?;
    let start = Instant::now();
    let output = execute(&spec, &opts)?;
    let timing = a.with_timing.then(|| {
        json!({
            "wall_seconds": start.elapsed().as_secs_f64(),
            "workers": opts.workers.unwrap_or_else(default_threads),
        })
    });
    let files = write_outputs(&output, &a.output, timing)?;
    let mut out = output.console_summary();
    out.push('\n');
    for f in files {
        out.push_str(&format!("wrote {}\n", f.display()));
    }
    Ok(out)
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
