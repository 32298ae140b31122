//! Operator CLI: model a scenario, compute metrics, pick the best
//! response, and exchange it with the provider over the secure channel.
//!
//! Exit codes: 0 success, 1 bad input, 2 path explosion, 3 risk
//! threshold unreachable, 4 network failure, 5 denied or failed request.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;

use harmmtd_core::harm::{build_harm, HarmError, PathLimits};
use harmmtd_core::metrics::{analyze, fmt3, MetricsError, MetricsReport};
use harmmtd_core::protocol::{
    suite::load_or_generate_keypair, EnterpriseClient, KeyMaterial, ProtocolError, ProviderServer,
    PublicKey, SuiteId,
};
use harmmtd_core::scenario::{load_enrollment, Scenario, ScenarioError};
use harmmtd_core::strategy::{
    comparison_report, evaluate_all, radar_export, select_with_threshold, EvalOptions,
    EvaluationRun, Strategy, StrategyError, StrategyEvaluation,
};

const EXIT_BAD_INPUT: i32 = 1;
const EXIT_PATH_EXPLOSION: i32 = 2;
const EXIT_THRESHOLD: i32 = 3;
const EXIT_NETWORK: i32 = 4;
const EXIT_DENIED: i32 = 5;

#[derive(Parser)]
#[command(
    name = "harmmtd",
    version,
    about = "Cloud risk modeling and response toolkit"
)]
struct Cli {
    #[command(flatten)]
    config: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunConfig {
    /// Scenario file (JSON)
    #[arg(long, global = true, default_value = "scenarios/ep1.json")]
    scenario: PathBuf,

    /// Directory for reports, exports, and state dumps
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Maximum attack-path length (nodes beyond the attacker)
    #[arg(long, global = true, default_value_t = 12)]
    max_depth: usize,

    /// Abort enumeration past this many paths
    #[arg(long, global = true, default_value_t = 100_000)]
    max_paths: usize,

    /// Do not derive co-residency edges from placement
    #[arg(long, global = true)]
    no_coresidency: bool,

    /// Acceptable cloud-risk ceiling for strategy selection
    #[arg(long, global = true)]
    threshold: Option<f64>,

    /// Repeat selection every N seconds, re-reading the scenario
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    interval: Option<u64>,

    /// Provider endpoint as host:port
    #[arg(long, global = true, default_value = "127.0.0.1:7788")]
    endpoint: String,

    /// Key directory (PEM files; generated on first use)
    #[arg(long, global = true, default_value = "keys")]
    keys: PathBuf,

    /// serve: enrollment table JSON; request: file holding the ep_code
    #[arg(long, global = true)]
    ep_code_file: Option<PathBuf>,

    /// Digest suite: md5-compat or modern
    #[arg(long, global = true, default_value = "md5-compat")]
    suite: String,
}

impl RunConfig {
    fn limits(&self) -> PathLimits {
        PathLimits {
            max_depth: self.max_depth,
            max_paths: self.max_paths,
        }
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            limits: self.limits(),
            derive_coresidency: !self.no_coresidency,
            include_patching: true,
            threshold: self.threshold,
        }
    }

    fn suite(&self) -> Result<SuiteId, CliError> {
        SuiteId::from_str(&self.suite).map_err(|e| CliError::new(EXIT_BAD_INPUT, e))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the model and report cloud risk, RoA, and MAPL
    Analyze,
    /// Evaluate all responses and write the selected strategy
    Select,
    /// Run the provider server against the scenario state
    Serve,
    /// Register with the provider and submit the selected strategy
    Request,
    /// Run the full analysis and write every report artifact
    Report,
}

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::new(EXIT_BAD_INPUT, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Harm(HarmError::PathExplosion { .. }) => {
                CliError::new(EXIT_PATH_EXPLOSION, e.to_string())
            }
            other => CliError::new(EXIT_BAD_INPUT, other.to_string()),
        }
    }
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        match e {
            StrategyError::ThresholdUnreachable { .. } => {
                CliError::new(EXIT_THRESHOLD, e.to_string())
            }
            StrategyError::Metrics(m) => m.into(),
            StrategyError::Harm(HarmError::PathExplosion { .. }) => {
                CliError::new(EXIT_PATH_EXPLOSION, e.to_string())
            }
            other => CliError::new(EXIT_BAD_INPUT, other.to_string()),
        }
    }
}

impl From<HarmError> for CliError {
    fn from(e: HarmError) -> Self {
        match e {
            HarmError::PathExplosion { .. } => CliError::new(EXIT_PATH_EXPLOSION, e.to_string()),
            other => CliError::new(EXIT_BAD_INPUT, other.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::RegistrationDenied(_) => CliError::new(EXIT_DENIED, e.to_string()),
            other => CliError::new(EXIT_NETWORK, other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(EXIT_BAD_INPUT, e.to_string())
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HARMMTD_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze => cmd_analyze(&cli.config),
        Command::Select => cmd_select(&cli.config),
        Command::Serve => cmd_serve(&cli.config),
        Command::Request => cmd_request(&cli.config),
        Command::Report => cmd_report(&cli.config),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::new(EXIT_BAD_INPUT, e.to_string()))?;
    text.push('\n');
    write_out(dir, name, &text)
}

fn print_metrics(report: &MetricsReport) {
    println!("paths: {}", report.path_count);
    println!("cloud_risk: {}", fmt3(report.cloud_risk));
    println!("roa: {}", fmt3(report.roa));
    println!("mapl: {}", fmt3(report.mapl));
}

fn run_metrics(config: &RunConfig, scenario: &Scenario) -> Result<MetricsReport, CliError> {
    let graph = build_harm(&scenario.cloud, &scenario.topology, !config.no_coresidency)?;
    Ok(analyze(&graph, &config.limits())?)
}

fn cmd_analyze(config: &RunConfig) -> Result<(), CliError> {
    let scenario = Scenario::from_file(&config.scenario)?;
    let report = run_metrics(config, &scenario)?;
    println!("scenario: {}", config.scenario.display());
    print_metrics(&report);
    write_json(&config.out_dir, "metrics.json", &report.to_json())?;
    write_out(&config.out_dir, "metrics.csv", &report.to_csv())?;
    Ok(())
}

fn strategy_file_value(
    run: &EvaluationRun,
    selected: Option<&StrategyEvaluation>,
) -> serde_json::Value {
    match selected {
        Some(best) => serde_json::json!({
            "selected": best.strategy,
            "baseline_cr": best.baseline_cr,
            "projected_cr": best.projected_cr,
            "delta_pct": best.delta_pct,
        }),
        None => serde_json::json!({
            "selected": null,
            "baseline_cr": run.baseline.cloud_risk,
            "note": "no attack paths from attacker to target",
        }),
    }
}

fn selection_round(config: &RunConfig) -> Result<(), CliError> {
    let scenario = Scenario::from_file(&config.scenario)?;
    let opts = config.eval_options();
    let run = evaluate_all(&scenario.cloud, &scenario.topology, &opts)?;

    let table = comparison_report(&run);
    write_out(&config.out_dir, "comparison.csv", &table.to_csv())?;
    write_json(&config.out_dir, "comparison.json", &table.to_json())?;
    write_json(&config.out_dir, "radar.json", &radar_export(&run))?;

    if run.no_threat() {
        println!("no attack paths from attacker to target; nothing to defend");
        write_json(
            &config.out_dir,
            "strategy.json",
            &strategy_file_value(&run, None),
        )?;
        return Ok(());
    }

    for failed in &run.failed {
        eprintln!(
            "candidate {} skipped: {}",
            failed.strategy.describe(),
            failed.reason
        );
    }

    let best = select_with_threshold(&run.evaluations, opts.threshold)?;
    println!(
        "baseline cloud_risk: {} over {} paths",
        fmt3(run.baseline.cloud_risk),
        run.baseline.path_count
    );
    println!(
        "selected: {} (projected {}, {}%)",
        best.strategy.describe(),
        fmt3(best.projected_cr),
        fmt3(best.delta_pct)
    );
    write_json(
        &config.out_dir,
        "strategy.json",
        &strategy_file_value(&run, Some(best)),
    )?;
    Ok(())
}

fn cmd_select(config: &RunConfig) -> Result<(), CliError> {
    match config.interval {
        None => selection_round(config),
        Some(seconds) => loop {
            selection_round(config)?;
            info!("round complete; sleeping {seconds}s");
            std::thread::sleep(Duration::from_secs(seconds));
        },
    }
}

fn cmd_report(config: &RunConfig) -> Result<(), CliError> {
    let scenario = Scenario::from_file(&config.scenario)?;
    let report = run_metrics(config, &scenario)?;
    println!("scenario: {}", config.scenario.display());
    print_metrics(&report);
    write_json(&config.out_dir, "metrics.json", &report.to_json())?;
    write_out(&config.out_dir, "metrics.csv", &report.to_csv())?;

    let run = evaluate_all(&scenario.cloud, &scenario.topology, &config.eval_options())?;
    let table = comparison_report(&run);
    write_out(&config.out_dir, "comparison.csv", &table.to_csv())?;
    write_json(&config.out_dir, "comparison.json", &table.to_json())?;
    write_json(&config.out_dir, "radar.json", &radar_export(&run))?;

    if run.no_threat() {
        println!("no attack paths; comparison table is empty");
        return Ok(());
    }
    println!();
    println!(
        "{:<12} {:>12} {:>12}  selected",
        "vm_id", "patch %", "vm-lm %"
    );
    for row in &table.rows {
        println!(
            "{:<12} {:>12} {:>12}  {}",
            row.vm_id,
            row.patch_delta_pct.map(fmt3).unwrap_or_default(),
            row.vmlm_delta_pct.map(fmt3).unwrap_or_default(),
            row.selected
        );
    }
    Ok(())
}

fn cmd_serve(config: &RunConfig) -> Result<(), CliError> {
    let scenario = Scenario::from_file(&config.scenario)?;
    let enrollment_path = config.ep_code_file.as_ref().ok_or_else(|| {
        CliError::new(
            EXIT_BAD_INPUT,
            "serve requires --ep-code-file pointing at the enrollment table",
        )
    })?;
    let enrollment = load_enrollment(enrollment_path)?;
    let keypair = load_or_generate_keypair(
        config.keys.join("provider.key"),
        config.keys.join("provider.pub"),
    )
    .map_err(|e| CliError::new(EXIT_BAD_INPUT, e.to_string()))?;

    fs::create_dir_all(&config.out_dir)?;
    let mut server = ProviderServer::new(keypair, enrollment, &scenario);
    server.state_dump = Some(config.out_dir.join("provider_state.json"));

    let listener = TcpListener::bind(&config.endpoint)
        .map_err(|e| CliError::new(EXIT_NETWORK, format!("bind {}: {e}", config.endpoint)))?;
    // announce the actual address so callers can use port 0
    println!("listening on {}", listener.local_addr()?);
    Arc::new(server)
        .serve(listener)
        .map_err(|e| CliError::new(EXIT_NETWORK, e.to_string()))
}

fn read_strategy_file(path: &Path) -> Result<Strategy, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::new(
            EXIT_BAD_INPUT,
            format!(
                "cannot read strategy file {}: {e} (run `select` first)",
                path.display()
            ),
        )
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::new(EXIT_BAD_INPUT, format!("bad strategy file: {e}")))?;
    let selected = value
        .get("selected")
        .cloned()
        .unwrap_or(serde_json::Value::Null);
    if selected.is_null() {
        return Err(CliError::new(
            EXIT_BAD_INPUT,
            "strategy file records no selected strategy (no-threat round)",
        ));
    }
    serde_json::from_value(selected)
        .map_err(|e| CliError::new(EXIT_BAD_INPUT, format!("bad strategy file: {e}")))
}

fn cmd_request(config: &RunConfig) -> Result<(), CliError> {
    let scenario = Scenario::from_file(&config.scenario)?;
    let strategy = read_strategy_file(&config.out_dir.join("strategy.json"))?;

    let ep_code = match &config.ep_code_file {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| CliError::new(EXIT_BAD_INPUT, format!("ep_code file: {e}")))?
            .trim()
            .to_string(),
        None => scenario.ep_code.clone(),
    };

    let keypair = load_or_generate_keypair(
        config.keys.join("enterprise.key"),
        config.keys.join("enterprise.pub"),
    )
    .map_err(|e| CliError::new(EXIT_BAD_INPUT, e.to_string()))?;
    let provider_pub_path = config.keys.join("provider.pub");
    let provider_pub = PublicKey::from_pem_file(&provider_pub_path).map_err(|_| {
        CliError::new(
            EXIT_BAD_INPUT,
            format!(
                "cannot read provider public key {} (provisioned out of band)",
                provider_pub_path.display()
            ),
        )
    })?;

    let km = KeyMaterial::new(keypair, ep_code);
    let mut client = EnterpriseClient::connect(
        &config.endpoint,
        km,
        provider_pub,
        config.suite()?,
        Duration::from_secs(10),
    )?;
    let ack = client.request_strategy(&strategy)?;
    if ack.success {
        println!("SUCCESS: provider deployed {}", strategy.describe());
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_DENIED,
            format!("provider rejected the request: {}", ack.reason),
        ))
    }
}
