//! Subcommand implementations.

use crate::config::ExperimentConfig;
use adapi::bundle::ModelBundle;
use adapi::cost::{
    cost_report, energy_estimate, model_latency, reference_calibrations, CommCalibration,
    CostReport, DeviceProfile,
};
use adapi::masks::DensitySchedule;
use adapi::mpc::TrustedDealer;
use adapi::nn::data::Dataset;
use adapi::nn::{count_ops, MaskValues, Model};
use adapi::runtime::{deploy, ComparisonMode, DeployedShare, InferenceTranscript, SecureRuntime};
use adapi::train::{
    train_adaptive, train_single, train_teacher, SequentialPlan, TeacherContext,
};
use adapi::transport::{in_process_pair, Channel, TcpChannel};
use adapi::{Error, Result};
use std::path::{Path, PathBuf};
use std::thread;

fn teacher_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("teacher.ckpt")
}

fn load_teacher_context(
    cfg: &ExperimentConfig,
    train: &Dataset,
) -> Result<Option<TeacherContext>> {
    match cfg.kd_config() {
        None => Ok(None),
        Some(kd) => {
            let path = teacher_path(cfg);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "distillation is enabled but {} is missing; run train-teacher first",
                    path.display()
                )));
            }
            let teacher = Model::load(&path)?;
            let ctx = if cfg.kd.pairs.is_empty() {
                TeacherContext::build(&teacher, train, kd)?
            } else {
                TeacherContext::build_with_pairs(&teacher, train, kd, cfg.kd.pairs.clone())?
            };
            Ok(Some(ctx))
        }
    }
}

pub fn cmd_train_teacher(cfg: &ExperimentConfig) -> Result<()> {
    let resolved_dir = cfg.output_dir.clone();
    cfg.emit_resolved(&resolved_dir)?;
    let (train, test) = cfg.dataset.build(cfg.seed)?;
    let mut model = cfg.model.build(cfg.seed);
    let report = train_teacher(&mut model, &train, &test, &cfg.teacher_train_config())?;
    model.save(teacher_path(cfg))?;

    let stats = &report.stats;
    let mut csv = String::from("model,weights,macs,relus,train_accuracy,test_accuracy\n");
    csv.push_str(&format!(
        "teacher,{},{},{},{},{}\n",
        report.parameters,
        stats.total_macs(),
        stats.total_relus(),
        report.train_accuracy,
        report.test_accuracy
    ));
    std::fs::write(cfg.output_dir.join("teacher_stats.csv"), csv)?;
    println!(
        "teacher: {} params, {} MACs, {} ReLUs, train acc {:.4}, test acc {:.4}",
        report.parameters,
        stats.total_macs(),
        stats.total_relus(),
        report.train_accuracy,
        report.test_accuracy
    );
    println!("saved {}", teacher_path(cfg).display());
    Ok(())
}

pub enum TrainMode {
    Adaptive,
    Single,
}

pub fn cmd_train_adaptive(
    cfg: &ExperimentConfig,
    mode: TrainMode,
    freeze_override: Option<adapi::train::FreezeMode>,
) -> Result<()> {
    let resolved = cfg.emit_resolved(&cfg.output_dir)?;
    let (train, test) = cfg.dataset.build(cfg.seed)?;
    let teacher = load_teacher_context(cfg, &train)?;
    let schedule = cfg.density_schedule()?;
    let train_cfg = cfg.adaptive_train_config();

    match mode {
        TrainMode::Adaptive => {
            let mut model = cfg.model.build(cfg.seed);
            let plan = SequentialPlan::new(
                schedule,
                cfg.soft.epochs,
                cfg.sequential.epochs_per_level,
                freeze_override.unwrap_or(cfg.sequential.freeze_mode),
            );
            let (family, outcome, _trace) = train_adaptive(
                &mut model,
                &plan,
                &train,
                &test,
                &train_cfg,
                teacher.as_ref(),
            )?;
            let bundle = ModelBundle {
                model,
                family,
                codec: cfg.codec(),
                seed: cfg.seed,
                metrics: outcome.metrics.clone(),
                resolved_config: resolved,
            };
            let dir = cfg.output_dir.join("bundle");
            bundle.save_dir(&dir)?;
            for m in &outcome.metrics {
                println!(
                    "level {}: weight density {:.3}, relu density {:.3}, test acc {:.4}",
                    m.label, m.weight_density, m.relu_density, m.test_accuracy
                );
            }
            println!("saved bundle at {}", dir.display());
        }
        TrainMode::Single => {
            let base = cfg.model.build(cfg.seed);
            for level in &schedule.levels {
                let (model, family, metrics) = train_single(
                    &base,
                    level,
                    (cfg.single.epochs, cfg.sequential.epochs_per_level),
                    &train,
                    &test,
                    &train_cfg,
                    teacher.as_ref(),
                )?;
                let bundle = ModelBundle {
                    model,
                    family,
                    codec: cfg.codec(),
                    seed: cfg.seed,
                    metrics: vec![metrics.clone()],
                    resolved_config: resolved.clone(),
                };
                let dir = cfg.output_dir.join(format!("single-{}", level.label));
                bundle.save_dir(&dir)?;
                println!(
                    "single {}: test acc {:.4} -> {}",
                    level.label,
                    metrics.test_accuracy,
                    dir.display()
                );
            }
        }
    }
    Ok(())
}

pub fn cmd_export(bundle_dir: &Path, level: &str, out_dir: &Path) -> Result<()> {
    let bundle = ModelBundle::load_dir(bundle_dir)?;
    let (server, client) = deploy(&bundle, level)?;
    std::fs::create_dir_all(out_dir)?;
    server.save(out_dir.join("server.pkg.json"))?;
    client.save(out_dir.join("client.pkg.json"))?;
    println!(
        "exported level {level} share packages to {}",
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_verify_bundle(bundle_dir: &Path) -> Result<()> {
    let bundle = ModelBundle::load_dir(bundle_dir)?;
    bundle.validate()?;
    for (level, sched) in bundle.family.levels.iter().zip(&bundle.family.schedule.levels) {
        for (kind, masks, target) in [
            ("weight", &level.weight, sched.weight_density),
            ("feature", &level.feature, sched.relu_density),
        ] {
            for (ti, m) in masks.iter().enumerate() {
                let realized = m.density();
                if (realized - target).abs() > 1.0 / m.len() as f64 + 1e-12 {
                    return Err(Error::Config(format!(
                        "level {} {kind} tensor {ti}: realized density {realized} misses {target}",
                        level.label
                    )));
                }
            }
        }
    }
    println!(
        "bundle ok: digest {:016x}, {} levels, nesting and densities verified",
        bundle.model.architecture_digest(),
        bundle.family.levels.len()
    );
    Ok(())
}

pub struct SimulateArgs {
    pub bundle_dir: PathBuf,
    pub level: String,
    pub transport: String,
    pub role: String,
    pub port: u16,
    pub limit: Option<usize>,
    pub comparison: Option<ComparisonMode>,
    pub out_dir: Option<PathBuf>,
}

fn test_set_from_bundle(bundle: &ModelBundle) -> Result<(ExperimentConfig, Dataset)> {
    let cfg: ExperimentConfig = serde_json::from_value(bundle.resolved_config.clone())
        .map_err(|e| Error::Config(format!("bundle carries no usable config: {e}")))?;
    let (_, test) = cfg.dataset.build(cfg.seed)?;
    Ok((cfg, test))
}

fn serve_inputs<C: Channel>(
    pkg: &DeployedShare,
    ch: &mut C,
    seed: u64,
    mode: ComparisonMode,
) -> Result<InferenceTranscript> {
    let mut dealer = TrustedDealer::new(seed, pkg.party_id);
    let mut rt = SecureRuntime::new(pkg, ch, &mut dealer, seed, mode)?;
    rt.handshake()?;
    while rt.infer(None).is_ok() {}
    Ok(rt.transcript().clone())
}

struct DriveOutcome {
    predictions: Vec<usize>,
    transcript: InferenceTranscript,
}

fn drive_inputs<C: Channel>(
    pkg: &DeployedShare,
    ch: &mut C,
    seed: u64,
    mode: ComparisonMode,
    inputs: &[adapi::nn::Tensor],
) -> Result<DriveOutcome> {
    let mut dealer = TrustedDealer::new(seed, pkg.party_id);
    let mut rt = SecureRuntime::new(pkg, ch, &mut dealer, seed, mode)?;
    rt.handshake()?;
    let mut predictions = Vec::with_capacity(inputs.len());
    for x in inputs {
        let logits = rt.infer(Some(x))?;
        predictions.push(logits.argmax());
    }
    Ok(DriveOutcome {
        predictions,
        transcript: rt.transcript().clone(),
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let bundle = ModelBundle::load_dir(&args.bundle_dir)?;
    let (cfg, test) = test_set_from_bundle(&bundle)?;
    let mode = args.comparison.unwrap_or(cfg.runtime.comparison);
    let limit = args.limit.unwrap_or(test.len()).min(test.len());
    let inputs = &test.inputs[..limit];
    let labels = &test.labels[..limit];
    let session_seed = cfg.seed ^ 0x5e55_1011;

    let (server_pkg, client_pkg) = deploy(&bundle, &args.level)?;

    // pure server role: block until a client drives the session, then exit
    if args.transport == "tcp" && args.role == "server" {
        let mut ch = TcpChannel::listen(("127.0.0.1", args.port), adapi::runtime::SERVER)?;
        let transcript = serve_inputs(&server_pkg, &mut ch, session_seed, mode)?;
        println!(
            "served {} inferences, {} frame bytes",
            transcript.inputs, transcript.total_frame_bytes
        );
        return Ok(());
    }

    let (outcome, _server_transcript) = match (args.transport.as_str(), args.role.as_str()) {
        ("local", _) => {
            let (mut ch0, mut ch1) = in_process_pair();
            let spkg = server_pkg.clone();
            let server = thread::spawn(move || serve_inputs(&spkg, &mut ch0, session_seed, mode));
            let outcome = drive_inputs(&client_pkg, &mut ch1, session_seed, mode, inputs)?;
            drop(ch1);
            let st = server
                .join()
                .map_err(|_| Error::Protocol("server thread panicked".into()))??;
            (outcome, Some(st))
        }
        ("tcp", "both") => {
            let port = args.port;
            let spkg = server_pkg.clone();
            let server = thread::spawn(move || {
                let mut ch = TcpChannel::listen(("127.0.0.1", port), adapi::runtime::SERVER)?;
                serve_inputs(&spkg, &mut ch, session_seed, mode)
            });
            let mut ch = loop {
                match TcpChannel::connect(("127.0.0.1", args.port), adapi::runtime::CLIENT) {
                    Ok(c) => break c,
                    Err(_) => thread::sleep(std::time::Duration::from_millis(20)),
                }
            };
            let outcome = drive_inputs(&client_pkg, &mut ch, session_seed, mode, inputs)?;
            drop(ch);
            let st = server
                .join()
                .map_err(|_| Error::Protocol("server thread panicked".into()))??;
            (outcome, Some(st))
        }
        ("tcp", "client") => {
            let mut ch = TcpChannel::connect(("127.0.0.1", args.port), adapi::runtime::CLIENT)?;
            let outcome = drive_inputs(&client_pkg, &mut ch, session_seed, mode, inputs)?;
            (outcome, None)
        }
        (t, r) => {
            return Err(Error::Config(format!(
                "unsupported transport/role combination {t}/{r}"
            )))
        }
    };

    // plaintext reference and agreement
    let values = bundle.mask_values(&args.level)?;
    let mut plain_hits = 0usize;
    let mut secure_hits = 0usize;
    let mut agree = 0usize;
    for ((x, &y), &pred) in inputs.iter().zip(labels).zip(&outcome.predictions) {
        let plain = bundle.model.predict(x, Some(&values))?;
        if plain == y {
            plain_hits += 1;
        }
        if pred == y {
            secure_hits += 1;
        }
        if pred == plain {
            agree += 1;
        }
    }
    let n = limit.max(1) as f64;

    // analytic model for the same level
    let counts = count_ops(&bundle.model, Some(&values))?;
    let latency = model_latency(&counts, &cfg.device);
    let energy = energy_estimate(latency, &cfg.device);
    let modeled_mb = adapi::cost::comm_volume(
        &counts,
        adapi::cost::CommVolumeMode::FirstPrinciples,
        None,
    );
    let measured_mb = outcome.transcript.total_frame_bytes as f64 / 1e6 / n;

    println!("level {} over {} inputs ({mode:?})", args.level, limit);
    println!("  2pc accuracy        {:.4}", secure_hits as f64 / n);
    println!("  plaintext accuracy  {:.4}", plain_hits as f64 / n);
    println!("  argmax agreement    {:.4}", agree as f64 / n);
    println!("  measured MB/input   {measured_mb:.6}");
    println!("  modeled MB/input    {modeled_mb:.6}");
    println!("  modeled latency (s) {latency:.6}");
    println!("  modeled energy (J)  {energy:.6}");

    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| args.bundle_dir.join(format!("sim-{}", args.level)));
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(
        out_dir.join("transcript.json"),
        serde_json::to_vec_pretty(&outcome.transcript)?,
    )?;
    let report = build_cost_report(
        &bundle,
        &cfg.device,
        &[(args.level.clone(), outcome.transcript.clone())],
    )?;
    std::fs::write(
        out_dir.join("cost_report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    std::fs::write(out_dir.join("cost_report.csv"), report.to_csv())?;
    println!("wrote transcript and reconciliation to {}", out_dir.display());
    Ok(())
}

fn reference_calibration() -> CommCalibration {
    // first reference corpus; slope is shared across all of them
    reference_calibrations()[0].1
}

fn build_cost_report(
    bundle: &ModelBundle,
    profile: &DeviceProfile,
    transcripts: &[(String, InferenceTranscript)],
) -> Result<CostReport> {
    let levels: Vec<(String, f64, f64, MaskValues)> = bundle
        .family
        .schedule
        .levels
        .iter()
        .map(|l| {
            (
                l.label.clone(),
                l.weight_density,
                l.relu_density,
                bundle.mask_values(&l.label).unwrap(),
            )
        })
        .collect();
    cost_report(
        &bundle.model,
        &levels,
        profile,
        Some(&reference_calibration()),
        transcripts,
    )
}

pub fn cmd_cost_report(
    config: Option<&Path>,
    bundle_dir: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let (report, out_dir) = match (config, bundle_dir) {
        (_, Some(dir)) => {
            let bundle = ModelBundle::load_dir(dir)?;
            let profile = serde_json::from_value::<ExperimentConfig>(bundle.resolved_config.clone())
                .map(|c| c.device)
                .unwrap_or_default();
            (
                build_cost_report(&bundle, &profile, &[])?,
                out.map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf()),
            )
        }
        (Some(path), None) => {
            let cfg = ExperimentConfig::load(path)?;
            // analytic-only run: realize masks from the initialized weights
            let model = cfg.model.build(cfg.seed);
            let schedule: DensitySchedule = cfg.density_schedule()?;
            let mut soft = adapi::train::SoftMasks::init(
                &model,
                &mut adapi::prg::session_rng(cfg.seed, 0, "soft-init"),
            );
            // feature soft masks are noise at init; any fixed values realize
            // the scheduled densities exactly, which is all the report needs
            for t in soft.feature.iter_mut() {
                for (i, v) in t.data.iter_mut().enumerate() {
                    *v += (i as f64).sin() * 1e-3;
                }
            }
            let family = adapi::masks::mask_family(&soft.weight, &soft.feature, &schedule)?;
            let levels: Vec<(String, f64, f64, MaskValues)> = family
                .schedule
                .levels
                .iter()
                .zip(&family.levels)
                .map(|(s, l)| {
                    (
                        s.label.clone(),
                        s.weight_density,
                        s.relu_density,
                        l.to_mask_values(),
                    )
                })
                .collect();
            let report = cost_report(
                &model,
                &levels,
                &cfg.device,
                Some(&reference_calibration()),
                &[],
            )?;
            (
                report,
                out.map(Path::to_path_buf).unwrap_or(cfg.output_dir.clone()),
            )
        }
        (None, None) => {
            return Err(Error::Config(
                "cost-report needs --config or --bundle".into(),
            ))
        }
    };
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(
        out_dir.join("cost_report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    std::fs::write(out_dir.join("cost_report.csv"), report.to_csv())?;
    print!("{}", report.to_csv());
    println!("wrote cost report to {}", out_dir.display());
    Ok(())
}
