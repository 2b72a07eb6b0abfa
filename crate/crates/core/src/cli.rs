//! Command-line surface: load a model, run lipschitz/certify/landscape/
//! jacobian/oracle commands, and emit machine-readable JSON or CSV.

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::io::Write;
use std::path::PathBuf;

use crate::cert;
use crate::error::{Error, Result};
use crate::jacbound::BoundMethod;
use crate::lipschitz;
use crate::model::{load_network, Network};
use crate::oracle;
use crate::preact::{self, Ball, Norm};

pub const SCHEMA_VERSION: u32 = 1;
const DEFAULT_SAMPLES: usize = 200;

/// Exit codes: 0 success, 2 config error, 3 model error,
/// 4 certification refused (misclassified center with --strict).
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Parse(_) => 3,
        Error::DimensionMismatch(_)
        | Error::UnknownActivation(_)
        | Error::InvalidActivation(_)
        | Error::NonFinite(_)
        | Error::InvalidPool(_) => 3,
        Error::Misclassified { .. } => 4,
        _ => 2,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "jacobound",
    about = "Certified Jacobian bounds, Lipschitz constants and robustness certificates for feed-forward networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Certified local/global Lipschitz constants over a radius grid.
    Lipschitz(LipschitzArgs),
    /// Certified robustness radii for labeled inputs.
    Certify(CertifyArgs),
    /// Stationary-point exclusion radii.
    Landscape(LandscapeArgs),
    /// Element-wise Jacobian bound matrices.
    Jacobian(JacobianArgs),
    /// Brute-force validation: sampling lower bound and, on small
    /// piecewise-linear networks, exact enumeration versus the bounds.
    Oracle(OracleArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Model JSON file.
    #[arg(long)]
    pub model: PathBuf,
    /// Norm: 1, 2 or inf.
    #[arg(long, default_value = "inf")]
    pub p: String,
    /// RNG seed for anything sampled.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-output/per-target parallelism (0 = all cores).
    /// Results do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Output format.
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    pub format: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct LipschitzArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Center vector file (JSON array of reals).
    #[arg(long)]
    pub center: PathBuf,
    /// Single ball radius.
    #[arg(long, conflicts_with = "radius_grid")]
    pub radius: Option<f64>,
    /// Radius grid START,STOP,COUNT[,log].
    #[arg(long)]
    pub radius_grid: Option<String>,
    /// Comma list of methods (recurjac-b, recurjac-f0, recurjac-f1,
    /// fastlip, naive, sampled-lower) or `all`.
    #[arg(long, default_value = "recurjac-b")]
    pub method: String,
}

#[derive(Args, Debug, Clone)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Inputs file: JSON array of {"x": [reals], "label": int}.
    #[arg(long)]
    pub inputs: PathBuf,
    /// Search cap on the certified radius.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Integral grid intervals.
    #[arg(long, default_value_t = cert::DEFAULT_INTERVALS)]
    pub intervals: usize,
    /// Target mode: runner-up, random, least-likely or all.
    #[arg(long, default_value = "all", value_parser = ["runner-up", "random", "least-likely", "all"])]
    pub target_mode: String,
    /// Fail (exit 4) on the first misclassified input instead of skipping it.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug, Clone)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Inputs file (labels choose the output row).
    #[arg(long, conflicts_with = "center")]
    pub inputs: Option<PathBuf>,
    /// Center vector file; pairs with --output-index.
    #[arg(long)]
    pub center: Option<PathBuf>,
    /// Output row whose gradient is tracked when --center is used.
    #[arg(long, default_value_t = 0)]
    pub output_index: usize,
    /// Search cap on the exclusion radius.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
}

#[derive(Args, Debug, Clone)]
pub struct JacobianArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub center: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
    /// Bound method (naive has no Jacobian bounds).
    #[arg(long, default_value = "recurjac-b")]
    pub method: String,
    /// Emit every level, not just the full Jacobian.
    #[arg(long)]
    pub all_levels: bool,
}

#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub center: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
    /// Cap on unstable neurons for exact enumeration.
    #[arg(long, default_value_t = oracle::DEFAULT_ENUMERATION_CAP)]
    pub cap: usize,
}

#[derive(Deserialize, Serialize, Clone)]
pub struct LabeledInput {
    pub x: Vec<f64>,
    pub label: usize,
}

/// Parsed and validated run configuration.
pub struct RunConfig {
    pub p: Norm,
    pub seed: u64,
    pub threads: usize,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl RunConfig {
    fn from_common(c: &CommonArgs) -> Result<(RunConfig, Network)> {
        let p = Norm::parse(&c.p)?;
        let format = match c.format.as_str() {
            "json" => OutputFormat::Json,
            "csv" => OutputFormat::Csv,
            other => return Err(Error::Config(format!("unknown format `{other}`"))),
        };
        let net = load_network(&c.model)?;
        Ok((
            RunConfig {
                p,
                seed: c.seed,
                threads: c.threads,
                format,
                out: c.out.clone(),
            },
            net,
        ))
    }

    /// Runs `f` inside a rayon pool of the configured size so per-output
    /// and per-target parallelism is bounded (0 = rayon default).
    /// Reductions stay ordered, so results are independent of the count.
    fn with_pool<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        if self.threads == 0 {
            return f();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(f)
    }

    fn emit(&self, report: &serde_json::Value, csv_rows: impl FnOnce() -> Vec<Vec<String>>) -> Result<()> {
        let text = match self.format {
            OutputFormat::Json => serde_json::to_string_pretty(report).expect("serializable") + "\n",
            OutputFormat::Csv => {
                let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
                for row in csv_rows() {
                    wtr.write_record(&row).map_err(|e| Error::Config(e.to_string()))?;
                }
                String::from_utf8(wtr.into_inner().map_err(|e| Error::Config(e.to_string()))?)
                    .expect("csv is utf8")
            }
        };
        match &self.out {
            Some(path) => std::fs::write(path, text)?,
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
            }
        }
        Ok(())
    }
}

fn read_center(path: &PathBuf, dim: usize) -> Result<Array1<f64>> {
    let text = std::fs::read_to_string(path)?;
    let values: Vec<f64> = serde_json::from_str(&text)?;
    if values.len() != dim {
        return Err(Error::Config(format!(
            "center has {} entries, model expects {dim}",
            values.len()
        )));
    }
    Ok(Array1::from_vec(values))
}

fn read_inputs(path: &PathBuf, dim: usize) -> Result<Vec<LabeledInput>> {
    let text = std::fs::read_to_string(path)?;
    let inputs: Vec<LabeledInput> = serde_json::from_str(&text)?;
    for (i, inp) in inputs.iter().enumerate() {
        if inp.x.len() != dim {
            return Err(Error::Config(format!(
                "input {i} has {} entries, model expects {dim}",
                inp.x.len()
            )));
        }
    }
    Ok(inputs)
}

fn parse_grid(args: &LipschitzArgs) -> Result<Vec<f64>> {
    if let Some(r) = args.radius {
        return Ok(vec![r]);
    }
    let spec = args
        .radius_grid
        .as_ref()
        .ok_or_else(|| Error::Config("need --radius or --radius-grid".into()))?;
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() < 3 || parts.len() > 4 {
        return Err(Error::Config(
            "radius grid must be START,STOP,COUNT[,log]".into(),
        ));
    }
    let start: f64 = parts[0].parse().map_err(|_| Error::Config("bad grid start".into()))?;
    let stop: f64 = parts[1].parse().map_err(|_| Error::Config("bad grid stop".into()))?;
    let count: usize = parts[2].parse().map_err(|_| Error::Config("bad grid count".into()))?;
    let log = match parts.get(3) {
        None => false,
        Some(&"log") => true,
        Some(other) => return Err(Error::Config(format!("unknown grid flag `{other}`"))),
    };
    if count < 1 {
        return Err(Error::Config("grid count must be >= 1".into()));
    }
    if log && (start <= 0.0 || stop <= 0.0) {
        return Err(Error::Config("log grid needs positive endpoints".into()));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let mut grid = Vec::with_capacity(count);
    for i in 0..count {
        let f = i as f64 / (count - 1) as f64;
        grid.push(if log {
            (start.ln() + f * (stop.ln() - start.ln())).exp()
        } else {
            start + f * (stop - start)
        });
    }
    Ok(grid)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CliMethod {
    Bound(BoundMethod),
    SampledLower,
}

impl CliMethod {
    fn label(self) -> &'static str {
        match self {
            CliMethod::Bound(b) => b.label(),
            CliMethod::SampledLower => "sampled-lower",
        }
    }
}

fn parse_methods(spec: &str) -> Result<Vec<CliMethod>> {
    if spec == "all" {
        return Ok(vec![
            CliMethod::SampledLower,
            CliMethod::Bound(BoundMethod::RecurjacBackward),
            CliMethod::Bound(BoundMethod::RecurjacForward0),
            CliMethod::Bound(BoundMethod::RecurjacForward1),
            CliMethod::Bound(BoundMethod::FastLip),
            CliMethod::Bound(BoundMethod::Naive),
        ]);
    }
    spec.split(',')
        .map(|m| {
            if m == "sampled-lower" {
                Ok(CliMethod::SampledLower)
            } else {
                BoundMethod::parse(m).map(CliMethod::Bound)
            }
        })
        .collect()
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    dispatch(cli)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Lipschitz(args) => cmd_lipschitz(args),
        Command::Certify(args) => cmd_certify(args),
        Command::Landscape(args) => cmd_landscape(args),
        Command::Jacobian(args) => cmd_jacobian(args),
        Command::Oracle(args) => cmd_oracle(args),
    }
}

fn cmd_lipschitz(args: LipschitzArgs) -> Result<()> {
    let (cfg, net) = RunConfig::from_common(&args.common)?;
    let center = read_center(&args.center, net.input_dim())?;
    let grid = parse_grid(&args)?;
    let methods = parse_methods(&args.method)?;

    let rows: Vec<serde_json::Value> = cfg.with_pool(|| {
        let mut rows = Vec::new();
        for &radius in &grid {
            let mut entry = serde_json::Map::new();
            entry.insert("radius".into(), json!(radius));
            for m in &methods {
                let value = match m {
                    CliMethod::Bound(method) => {
                        let ball = Ball::new(center.clone(), radius, cfg.p)?;
                        lipschitz::local_lipschitz(&net, &ball, *method)?.value
                    }
                    CliMethod::SampledLower => {
                        let ball = Ball::new(center.clone(), radius, cfg.p)?;
                        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                        oracle::sample_lipschitz_lower(&net, &ball, DEFAULT_SAMPLES, &mut rng)?
                    }
                };
                entry.insert(m.label().into(), json!(value));
            }
            rows.push(serde_json::Value::Object(entry));
        }
        Ok(rows)
    })?;

    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "lipschitz",
        "p": cfg.p.label(),
        "seed": cfg.seed,
        "samples": DEFAULT_SAMPLES,
        "results": rows,
    });
    cfg.emit(&report, || {
        let mut out = Vec::new();
        let mut header = vec!["radius".to_string()];
        header.extend(methods.iter().map(|m| m.label().to_string()));
        out.push(header);
        for row in &rows {
            let mut line = vec![format!("{}", row["radius"].as_f64().unwrap())];
            for m in &methods {
                line.push(format!("{}", row[m.label()].as_f64().unwrap()));
            }
            out.push(line);
        }
        out
    })
}

fn pick_targets(
    outputs: &Array1<f64>,
    label: usize,
    mode: &str,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let k = outputs.len();
    let others: Vec<usize> = (0..k).filter(|&j| j != label).collect();
    match mode {
        "runner-up" => {
            let mut best = others[0];
            for &j in &others {
                if outputs[j] > outputs[best] {
                    best = j;
                }
            }
            vec![best]
        }
        "least-likely" => {
            let mut worst = others[0];
            for &j in &others {
                if outputs[j] < outputs[worst] {
                    worst = j;
                }
            }
            vec![worst]
        }
        "random" => vec![others[rng.random_range(0..others.len())]],
        _ => unreachable!("validated by clap"),
    }
}

fn cmd_certify(args: CertifyArgs) -> Result<()> {
    let (cfg, net) = RunConfig::from_common(&args.common)?;
    let inputs = read_inputs(&args.inputs, net.input_dim())?;
    if args.intervals < 1 {
        return Err(Error::Config("intervals must be >= 1".into()));
    }
    let modes: Vec<&str> = match args.target_mode.as_str() {
        "all" => vec!["runner-up", "random", "least-likely"],
        m => vec![m],
    };

    let per_input: Vec<serde_json::Value> = cfg.with_pool(|| {
        let mut per_input = Vec::new();
        for (idx, inp) in inputs.iter().enumerate() {
            let x = Array1::from_vec(inp.x.clone());
            let predicted = net.predict(x.view())?;
            if predicted != inp.label {
                if args.strict {
                    return Err(Error::Misclassified {
                        expected: inp.label,
                        predicted,
                    });
                }
                per_input.push(json!({
                    "index": idx,
                    "label": inp.label,
                    "predicted": predicted,
                    "skipped": true,
                }));
                continue;
            }
            let (outputs, _) = net.forward(x.view())?;
            let mut mode_reports = serde_json::Map::new();
            for mode in &modes {
                // stream offset keeps the random mode deterministic per input
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(idx as u64));
                let targets = pick_targets(&outputs, inp.label, mode, &mut rng);
                let certificate = cert::certify_radius(
                    &net,
                    x.view(),
                    inp.label,
                    &targets,
                    cfg.p,
                    args.radius,
                    args.intervals,
                )?;
                mode_reports.insert(
                    mode.to_string(),
                    json!({
                        "targets": targets,
                        "radius": certificate.radius,
                        "margins": certificate.targets.iter().map(|t| t.margin).collect::<Vec<_>>(),
                    }),
                );
            }
            per_input.push(json!({
                "index": idx,
                "label": inp.label,
                "predicted": predicted,
                "skipped": false,
                "modes": serde_json::Value::Object(mode_reports),
            }));
        }
        Ok(per_input)
    })?;

    let mut means = serde_json::Map::new();
    for mode in &modes {
        let radii: Vec<f64> = per_input
            .iter()
            .filter(|v| v["skipped"] == json!(false))
            .map(|v| v["modes"][mode]["radius"].as_f64().unwrap())
            .collect();
        let mean = if radii.is_empty() {
            0.0
        } else {
            radii.iter().sum::<f64>() / radii.len() as f64
        };
        means.insert(mode.to_string(), json!(mean));
    }

    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "certify",
        "p": cfg.p.label(),
        "seed": cfg.seed,
        "intervals": args.intervals,
        "r_max": args.radius,
        "inputs": per_input,
        "mean_radius": serde_json::Value::Object(means),
    });
    cfg.emit(&report, || {
        let mut out = vec![vec![
            "index".to_string(),
            "label".to_string(),
            "predicted".to_string(),
            "skipped".to_string(),
            "mode".to_string(),
            "radius".to_string(),
        ]];
        for v in &per_input {
            let skipped = v["skipped"] == json!(true);
            if skipped {
                out.push(vec![
                    v["index"].to_string(),
                    v["label"].to_string(),
                    v["predicted"].to_string(),
                    "true".to_string(),
                    String::new(),
                    String::new(),
                ]);
                continue;
            }
            for mode in &modes {
                out.push(vec![
                    v["index"].to_string(),
                    v["label"].to_string(),
                    v["predicted"].to_string(),
                    "false".to_string(),
                    mode.to_string(),
                    format!("{}", v["modes"][mode]["radius"].as_f64().unwrap()),
                ]);
            }
        }
        out
    })
}

fn cmd_landscape(args: LandscapeArgs) -> Result<()> {
    let (cfg, net) = RunConfig::from_common(&args.common)?;
    let cases: Vec<(Array1<f64>, usize)> = match (&args.inputs, &args.center) {
        (Some(path), None) => read_inputs(path, net.input_dim())?
            .into_iter()
            .map(|inp| (Array1::from_vec(inp.x), inp.label))
            .collect(),
        (None, Some(path)) => vec![(read_center(path, net.input_dim())?, args.output_index)],
        _ => return Err(Error::Config("need exactly one of --inputs or --center".into())),
    };
    for (_, j) in &cases {
        if *j >= net.output_dim() {
            return Err(Error::Config(format!(
                "output index {j} out of range for {} outputs",
                net.output_dim()
            )));
        }
    }

    let results: Vec<cert::ExclusionResult> = cfg.with_pool(|| {
        cases
            .iter()
            .map(|(x, j)| cert::exclusion_radius(&net, x.view(), *j, cfg.p, args.radius))
            .collect()
    })?;

    let rows: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            json!({
                "output": r.output,
                "radius": if r.radius.is_finite() { json!(r.radius) } else { json!("inf") },
                "witness": r.witness.map(|(k, tag)| json!({
                    "coordinate": k,
                    "sign": match tag {
                        cert::SignTag::AlwaysPositive => "always_positive",
                        cert::SignTag::AlwaysNegative => "always_negative",
                    },
                })),
            })
        })
        .collect();
    let finite: Vec<f64> = results
        .iter()
        .filter(|r| r.radius.is_finite())
        .map(|r| r.radius)
        .collect();
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "landscape",
        "p": cfg.p.label(),
        "seed": cfg.seed,
        "r_max": args.radius,
        "results": rows,
        "mean_finite_radius": if finite.is_empty() { json!(null) } else {
            json!(finite.iter().sum::<f64>() / finite.len() as f64)
        },
        "num_infinite": results.iter().filter(|r| r.radius.is_infinite()).count(),
    });
    cfg.emit(&report, || {
        let mut out = vec![vec![
            "output".to_string(),
            "radius".to_string(),
            "witness_coordinate".to_string(),
            "witness_sign".to_string(),
        ]];
        for r in &results {
            out.push(vec![
                r.output.to_string(),
                if r.radius.is_finite() {
                    format!("{}", r.radius)
                } else {
                    "inf".to_string()
                },
                r.witness.map(|(k, _)| k.to_string()).unwrap_or_default(),
                r.witness
                    .map(|(_, t)| match t {
                        cert::SignTag::AlwaysPositive => "always_positive".to_string(),
                        cert::SignTag::AlwaysNegative => "always_negative".to_string(),
                    })
                    .unwrap_or_default(),
            ]);
        }
        out
    })
}

fn matrix_json(m: &Array2<f64>) -> serde_json::Value {
    json!(m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn cmd_jacobian(args: JacobianArgs) -> Result<()> {
    let (cfg, net) = RunConfig::from_common(&args.common)?;
    let center = read_center(&args.center, net.input_dim())?;
    let method = BoundMethod::parse(&args.method)?;
    let ball = Ball::new(center, args.radius, cfg.p)?;
    let (jb, m) = cfg.with_pool(|| {
        let li = preact::bounded_intervals(&net, &ball)?;
        let jb = lipschitz::jacobian_bounds(&net, &li, method)?;
        let m = lipschitz::worst_case_matrix(&jb);
        Ok((jb, m))
    })?;

    let mut levels = Vec::new();
    let emit_all = args.all_levels && jb.levels.len() > 1;
    let level_range: Vec<usize> = if emit_all {
        (1..=jb.levels.len()).collect()
    } else {
        vec![1]
    };
    for l in &level_range {
        let lb = jb.level(*l).unwrap();
        levels.push(json!({
            "level": l,
            "lower": matrix_json(&lb.lower),
            "upper": matrix_json(&lb.upper),
        }));
    }
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "jacobian",
        "p": cfg.p.label(),
        "seed": cfg.seed,
        "radius": args.radius,
        "method": method.label(),
        "levels": levels,
        "worst_case": matrix_json(&m.m),
    });
    cfg.emit(&report, || {
        let mut out = vec![vec![
            "kind".to_string(),
            "level".to_string(),
            "row".to_string(),
            "col".to_string(),
            "value".to_string(),
        ]];
        for l in &level_range {
            let lb = jb.level(*l).unwrap();
            for (kind, mat) in [("lower", &lb.lower), ("upper", &lb.upper)] {
                for ((r, c), v) in mat.indexed_iter() {
                    out.push(vec![
                        kind.to_string(),
                        l.to_string(),
                        r.to_string(),
                        c.to_string(),
                        format!("{v}"),
                    ]);
                }
            }
        }
        for ((r, c), v) in m.m.indexed_iter() {
            out.push(vec![
                "worst_case".to_string(),
                "1".to_string(),
                r.to_string(),
                c.to_string(),
                format!("{v}"),
            ]);
        }
        out
    })
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let (cfg, net) = RunConfig::from_common(&args.common)?;
    let center = read_center(&args.center, net.input_dim())?;
    let ball = Ball::new(center, args.radius, cfg.p)?;

    let (sampled, enumeration, jb) = cfg.with_pool(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sampled = oracle::sample_lipschitz_lower(&net, &ball, DEFAULT_SAMPLES, &mut rng)?;
        let li = preact::bounded_intervals(&net, &ball)?;
        let jb = crate::jacbound::recurjac_backward(&net, &li)?;
        let enumeration = match oracle::enumerate_exact(&net, &li, args.cap) {
            Ok(e) => Some(e),
            Err(Error::NotPiecewiseLinear(_)) | Err(Error::EnumerationCap { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok((sampled, enumeration, jb))
    })?;

    let enum_json = enumeration.as_ref().map(|e| {
        let lb = jb.level1();
        let contained = e
            .min
            .iter()
            .zip(e.max.iter())
            .zip(lb.lower.iter().zip(lb.upper.iter()))
            .all(|((mn, mx), (l, u))| *l <= mn + 1e-9 && *u + 1e-9 >= *mx);
        json!({
            "unstable": e.unstable.len(),
            "patterns": e.pattern_count(),
            "min": matrix_json(&e.min),
            "max": matrix_json(&e.max),
            "contained_in_bounds": contained,
        })
    });
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "oracle",
        "p": cfg.p.label(),
        "seed": cfg.seed,
        "radius": args.radius,
        "samples": DEFAULT_SAMPLES,
        "sampled_lower": sampled,
        "bounds_lower": matrix_json(&jb.level1().lower),
        "bounds_upper": matrix_json(&jb.level1().upper),
        "enumeration": enum_json,
    });
    cfg.emit(&report, || {
        vec![
            vec!["quantity".to_string(), "value".to_string()],
            vec!["sampled_lower".to_string(), format!("{sampled}")],
            vec![
                "enumeration_patterns".to_string(),
                enumeration
                    .as_ref()
                    .map(|e| e.pattern_count().to_string())
                    .unwrap_or_default(),
            ],
        ]
    })
}
