use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use classpulse_core::affect::{
    calibrate_rows, classify_emotion, read_dataset, train_regressor, write_dataset, CalibrationMode, DatasetRow,
    FuzzyConfig, HyperParams, KnnClassifier, Split, SplitRatios, VaRegressor,
};
use classpulse_core::ingest::{replay_file, SensorSample};
use classpulse_core::mdp::{
    check_ergodicity, solve, stationary_distribution, ErgodicityReport, MdpConfig, MdpModel, Policy,
    StationaryOptions,
};
use classpulse_core::simulator::{
    evaluate, generate_dataset, read_truth, run_closed_loop, write_truth, DynamicsPreset, GenerationConfig,
    PopulationPreset, ScenarioConfig, TruthRow,
};
use classpulse_core::{Action, Emotion, VaPoint};
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::{
    Baseline, Calibration, EvalArgs, GenDataArgs, MdpAnalyzeArgs, ReplayArgs, ServeArgs, SimulateArgs, Switch,
    TrainArgs,
};

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("reports serialize"));
}

fn load_dataset(path: &Path) -> CliResult<Vec<DatasetRow>> {
    read_dataset(open(path)?).map_err(|e| CliError::schema(path, e))
}

fn load_truth(path: &Path) -> CliResult<Vec<TruthRow>> {
    read_truth(open(path)?).map_err(|e| CliError::schema(path, e))
}

fn load_model(path: &Path) -> CliResult<VaRegressor> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let model = VaRegressor::from_json(&text).map_err(|e| CliError::schema(path, e))?;
    if !model.is_trained() {
        return Err(CliError::schema(path, "model is untrained"));
    }
    Ok(model)
}

fn load_mdp(path: Option<&Path>) -> CliResult<MdpConfig> {
    match path {
        Some(p) => MdpConfig::load(p).map_err(|e| CliError::new("schema", e)),
        None => Ok(MdpConfig::default_config()),
    }
}

fn token_or_env(token: &Option<String>) -> Option<String> {
    token
        .clone()
        .or_else(|| std::env::var("CLASSPULSE_TOKEN").ok())
        .filter(|t| !t.is_empty())
}

impl From<Calibration> for CalibrationMode {
    fn from(c: Calibration) -> Self {
        match c {
            Calibration::PerUser => CalibrationMode::PerUser,
            Calibration::Global => CalibrationMode::Global,
        }
    }
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let preset = match &args.population {
        Some(p) => PopulationPreset::load(p).map_err(|e| CliError::new("schema", e))?,
        None => PopulationPreset::default(),
    };
    let cfg = GenerationConfig::new(args.users, args.rows, args.seed);
    let ds = generate_dataset(&preset, &cfg).map_err(CliError::usage)?;
    let mut out = create(&args.out)?;
    write_dataset(&mut out, &ds.rows).map_err(|e| CliError::io(&args.out, e))?;
    out.flush().map_err(|e| CliError::io(&args.out, e))?;
    let mut truth = create(&args.truth)?;
    write_truth(&mut truth, &ds.truth).map_err(|e| CliError::io(&args.truth, e))?;
    truth.flush().map_err(|e| CliError::io(&args.truth, e))?;
    println!(
        "wrote {} rows for {} users to {} and {}",
        ds.rows.len(),
        args.users,
        args.out.display(),
        args.truth.display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let ratios = SplitRatios::parse(&args.split).map_err(|e| CliError::usage(format!("--split: {e}")))?;
    for (flag, v) in [("--c", args.c), ("--kernel-scale", args.kernel_scale)] {
        if v.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
            return Err(CliError::usage(format!("{flag} must be positive")));
        }
    }
    if !(args.epsilon.is_finite() && args.epsilon >= 0.0) {
        return Err(CliError::usage("--epsilon must be non-negative"));
    }
    let rows = load_dataset(&args.data)?;
    let mode = CalibrationMode::from(args.calibration);
    let labeled = calibrate_rows(&rows, mode);
    let hyper = HyperParams {
        kernel_scale: args.kernel_scale,
        c: args.c,
        epsilon: args.epsilon,
        ..HyperParams::default()
    };
    let (mut model, report) =
        train_regressor(&labeled, ratios, &hyper, args.seed).map_err(|e| CliError::new("train", e))?;
    if let Some(meta) = model.training.as_mut() {
        meta.calibration = mode;
    }
    fs::write(&args.out, model.to_json()).map_err(|e| CliError::io(&args.out, e))?;
    print_json(&report);
    Ok(())
}

fn write_confusion(path: &Path, confusion: &BTreeMap<Emotion, BTreeMap<Emotion, f64>>) -> CliResult<()> {
    let mut text = String::from("true");
    for e in Emotion::ALL {
        text.push(',');
        text.push_str(e.as_str());
    }
    text.push('\n');
    for t in Emotion::ALL {
        text.push_str(t.as_str());
        for p in Emotion::ALL {
            let v = confusion.get(&t).and_then(|row| row.get(&p)).copied().unwrap_or(0.0);
            text.push_str(&format!(",{v:.6}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Emotion named by a dataset row's own (self-reported) ratings.
fn reported_emotion(valence: f64, arousal: f64, fuzzy: &FuzzyConfig) -> Option<Emotion> {
    classify_emotion(VaPoint::clamped(valence, arousal), fuzzy).ok().map(|s| s.label)
}

fn knn_accuracy(
    rows: &[DatasetRow],
    truth: &[TruthRow],
    split: &Split,
    mode: CalibrationMode,
    k: usize,
) -> CliResult<f64> {
    if k == 0 {
        return Err(CliError::usage("--knn-k must be positive"));
    }
    let fuzzy = FuzzyConfig::default();
    let calibrated = calibrate_rows(rows, mode);
    let points = split
        .train
        .iter()
        .filter_map(|&i| {
            let r = &calibrated[i];
            reported_emotion(r.valence, r.arousal, &fuzzy).map(|e| (r.features.clone(), e))
        })
        .collect();
    let knn = KnnClassifier::new(k, points);
    let mut hits = 0usize;
    for &i in &split.test {
        let expected = classify_emotion(truth[i].point(), &fuzzy).map_err(|e| CliError::new("eval", e))?.label;
        if knn.predict(&calibrated[i].features) == Some(expected) {
            hits += 1;
        }
    }
    Ok(hits as f64 / split.test.len().max(1) as f64)
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let rows = load_dataset(&args.data)?;
    let truth = load_truth(&args.truth)?;
    let mode = model.training.map(|t| t.calibration).unwrap_or_default();
    // Score on the held-out test partition when the model was trained on
    // this dataset; otherwise every row is unseen.
    let split = model.split_for(rows.len());
    let indices: Vec<usize> = match &split {
        Some(s) => s.test.clone(),
        None => (0..rows.len()).collect(),
    };
    let report = evaluate(&model, &rows, &truth, &indices, mode).map_err(|e| CliError::schema(&args.truth, e))?;
    write_confusion(&args.confusion, &report.confusion)?;
    let mut out = json!({
        "n_rows": report.n_rows,
        "held_out": split.is_some(),
        "calibration": mode,
        "accuracy": report.accuracy,
        "valence_rmse": report.valence_rmse,
        "arousal_rmse": report.arousal_rmse,
        "confusion": report.confusion,
    });
    if let Some(Baseline::Knn) = args.baseline {
        let split = split.unwrap_or_else(|| Split::new(rows.len(), SplitRatios::default(), 0));
        let acc = knn_accuracy(&rows, &truth, &split, mode, args.knn_k)?;
        out["baseline"] = json!({ "method": "knn", "k": args.knn_k, "accuracy": acc });
    }
    print_json(&out);
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let dynamics = DynamicsPreset::load(&args.preset).map_err(|e| CliError::new("schema", e))?;
    let cfg = ScenarioConfig::new(args.students, args.minutes, args.controller == Switch::On, args.seed, dynamics);
    let model = match &args.model {
        Some(p) => Some(Arc::new(load_model(p)?)),
        None => None,
    };
    let outcome = run_closed_loop(&cfg, model).map_err(|e| CliError::new("simulate", e))?;
    let mut lat = outcome.latency_ms.clone();
    lat.sort_by(f64::total_cmp);
    let mean = lat.iter().sum::<f64>() / lat.len().max(1) as f64;
    let summary = format!(
        "ticks={} suggestions={} curious_dwell={:.4} latency_ms mean={mean:.3} p50={:.3} p95={:.3} max={:.3}",
        outcome.report.ticks,
        outcome.report.suggestions,
        outcome.report.dwell_fractions.get(&Emotion::Curious).copied().unwrap_or(0.0),
        percentile(&lat, 0.5),
        percentile(&lat, 0.95),
        lat.last().copied().unwrap_or(0.0),
    );
    match &args.report {
        Some(path) => {
            write_json(path, &outcome.report)?;
            println!("{summary}");
        }
        None => {
            print_json(&outcome.report);
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn post_batch(client: &reqwest::blocking::Client, url: &str, token: Option<&str>, body: String) -> CliResult<usize> {
    let mut req = client
        .post(url)
        .header(reqwest::header::CONTENT_TYPE, "application/x-ndjson")
        .body(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().map_err(|e| CliError::new("http", format!("{url}: {e}")))?;
    let status = resp.status();
    let text = resp.text().unwrap_or_default();
    if !status.is_success() {
        return Err(CliError::new("http", format!("{url}: {status}: {text}")));
    }
    let report: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::new("http", format!("{url}: bad response: {e}")))?;
    let rejected = report["rejected_count"].as_u64().unwrap_or(0) as usize;
    if rejected > 0 {
        eprintln!("warning: {url}: {rejected} sample(s) rejected: {}", report["rejected"]);
    }
    Ok(rejected)
}

pub fn replay(args: &ReplayArgs) -> CliResult<()> {
    if !(args.speed.is_finite() && args.speed >= 0.0) {
        return Err(CliError::usage("--speed must be finite and non-negative"));
    }
    if args.batch == 0 {
        return Err(CliError::usage("--batch must be positive"));
    }
    let url = format!("{}/ingest", args.session.trim_end_matches('/'));
    let token = token_or_env(&args.token);
    let client = reqwest::blocking::Client::new();
    // Pacing happens inside the iterator before a sample is yielded, so a
    // batch is complete once the next timestamp arrives.
    let samples = replay_file(&args.file, args.speed).map_err(CliError::usage)?;
    let paced = args.speed > 0.0;
    let mut batch: Vec<SensorSample> = Vec::new();
    let (mut sent, mut posts, mut rejected) = (0usize, 0usize, 0usize);
    let mut flush = |batch: &mut Vec<SensorSample>| -> CliResult<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let body: String = batch.iter().map(|s| s.render() + "\n").collect();
        rejected += post_batch(&client, &url, token.as_deref(), body)?;
        sent += batch.len();
        posts += 1;
        batch.clear();
        Ok(())
    };
    for (i, item) in samples.enumerate() {
        let sample = item.map_err(|e| CliError::schema(&args.file, format!("sample {}: {e}", i + 1)))?;
        let new_ts = batch.last().is_some_and(|b| b.ts_ms != sample.ts_ms);
        if (paced && new_ts) || batch.len() >= args.batch {
            flush(&mut batch)?;
        }
        batch.push(sample);
    }
    flush(&mut batch)?;
    print_json(&json!({ "samples": sent, "requests": posts, "rejected": rejected }));
    Ok(())
}

pub fn serve(args: &ServeArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let mdp = load_mdp(args.mdp_config.as_deref())?;
    let mut config = classpulse_service::AppConfig::new(model, mdp);
    config.storage = Some(args.storage.clone());
    config.token = token_or_env(&args.token);
    let app = classpulse_service::AppState::new(config).map_err(|e| CliError::new("config", e))?;
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("server", e))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::new("server", format!("{addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::new("server", e))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        classpulse_service::serve(listener, app, shutdown)
            .await
            .map_err(|e| CliError::new("server", e))
    })
}

#[derive(Debug, Serialize)]
struct ChainAnalysis {
    ergodicity: ErgodicityReport,
    ergodic: bool,
    stationary: Option<BTreeMap<Emotion, f64>>,
    /// Why no stationary distribution was computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn analyse_chain(model: &MdpModel, chain: &[Vec<f64>]) -> CliResult<ChainAnalysis> {
    let ergodicity = check_ergodicity(chain).map_err(|e| CliError::new("mdp", e))?;
    let (stationary, note) = match stationary_distribution(chain, &StationaryOptions::default()) {
        Ok(pi) => (Some(model.states.iter().copied().zip(pi).collect()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ChainAnalysis {
        ergodic: ergodicity.ergodic(),
        ergodicity,
        stationary,
        note,
    })
}

fn policy_table(model: &MdpModel, policy: &Policy) -> String {
    let name = |a: Option<&Action>| a.map_or("-", |a| a.as_str());
    let mut out = format!("{:<10} {:<18} {:<18} {:>10}\n", "state", "optimal", "sub-optimal", "value");
    for s in &model.states {
        out.push_str(&format!(
            "{:<10} {:<18} {:<18} {:>10.4}\n",
            s.as_str(),
            name(policy.optimal.get(s)),
            name(policy.suboptimal.get(s)),
            policy.values.get(s).copied().unwrap_or(f64::NAN),
        ));
    }
    out
}

pub fn mdp_analyze(args: &MdpAnalyzeArgs) -> CliResult<()> {
    let cfg = load_mdp(args.config.as_deref())?;
    let model = cfg.to_model().map_err(|e| CliError::new("schema", e))?;
    let policy = solve(&model, &cfg.value_iteration).map_err(|e| CliError::new("mdp", e))?;

    let mut chains = BTreeMap::new();
    chains.insert(
        "optimal_policy".to_string(),
        analyse_chain(&model, &model.chain_under(|s| policy.optimal[&s]))?,
    );
    chains.insert("uniform_actions".to_string(), analyse_chain(&model, &model.uniform_action_chain())?);
    for &a in &model.actions {
        chains.insert(format!("always_{}", a.as_str()), analyse_chain(&model, &model.chain_under(|_| a))?);
    }

    print!("{}", policy_table(&model, &policy));
    println!(
        "value iteration: {} sweeps, converged={}, residual={:.3e}",
        policy.iterations, policy.converged, policy.residual
    );
    let opt = &chains["optimal_policy"];
    println!("optimal-policy chain: ergodic={} period={}", opt.ergodic, opt.ergodicity.period);
    if let Some(pi) = &opt.stationary {
        let parts: Vec<String> = pi.iter().map(|(s, p)| format!("{}={p:.4}", s.as_str())).collect();
        println!("stationary distribution: {}", parts.join(" "));
    }

    if let Some(path) = &args.report {
        let report = json!({
            "config": args.config.as_ref().map_or("default".to_string(), |p| p.display().to_string()),
            "optimal": policy.optimal,
            "suboptimal": policy.suboptimal,
            "policy": policy,
            "chains": chains,
        });
        write_json(path, &report)?;
    }
    Ok(())
}
