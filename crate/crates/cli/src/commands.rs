use std::path::{Path, PathBuf};

use cdpr::control::PidController;
use cdpr::persist::{encode_policy, load_policy, ArtifactBatch, PolicyMeta};
use cdpr::report::{config_header, csv_body, metrics_csv, summary_csv, sweep_csv, tracking_csv};
use cdpr::rl::{evaluate_policy, train as run_training, PolicyController};
use cdpr::trajectory::{dt_sweep, track, SweepController, TrajectorySpec};
use cdpr::{tune_gains, Algorithm, CdprError, ExperimentConfig, PidGains, Policy, TrackingResult};

use crate::args::{CommonArgs, EvalArgs, SweepArgs, TrainArgs, TuneArgs};
use crate::{resolve_config_path, CliError, CliResult, Context};

type Pairs = Vec<(String, String)>;

/// Console output is best effort; a closed pipe must not fail a command.
macro_rules! say {
    ($w:expr, $($arg:tt)*) => {
        let _ = writeln!($w, $($arg)*);
    };
}

fn load_config(ctx: &Context<'_>, common: &CommonArgs, base: Option<&Pairs>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in base.into_iter().flatten() {
        cfg.set(k, v)?;
    }
    if let Some(path) = resolve_config_path(common.config.as_deref(), ctx.config_dir.as_deref())? {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn read_policy(path: &Path) -> CliResult<(Policy, PolicyMeta)> {
    load_policy(path).map_err(|e| match e {
        CdprError::Io { .. } => CliError::Artifact(e.to_string()),
        other => CliError::from(other).with_context(&path.display().to_string()),
    })
}

impl CliError {
    fn with_context(self, ctx: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{ctx}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{ctx}: {m}")),
            CliError::Artifact(m) => CliError::Artifact(format!("{ctx}: {m}")),
        }
    }
}

fn with_extra(cfg: &ExperimentConfig, extra: &[(&str, String)]) -> Pairs {
    let mut pairs = cfg.to_pairs();
    pairs.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    pairs
}

fn commit(files: Vec<(PathBuf, Vec<u8>)>) -> CliResult<()> {
    let mut batch = ArtifactBatch::default();
    for (path, bytes) in &files {
        batch.stage(path, bytes)?;
    }
    batch.commit()?;
    Ok(())
}

pub fn train(ctx: &mut Context<'_>, args: &TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(ctx, &args.common, None)?;
    if let Some(a) = &args.algo {
        cfg.train.algorithm = Algorithm::parse(a)?;
    }
    if let Some(m) = &args.action_mode {
        cfg.set_action_mode(m)?;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    cfg.validate()?;
    let init = args.init.as_deref().map(read_policy).transpose()?.map(|(p, _)| p);
    let setup = cfg.env_setup()?;

    let mut last = None;
    let out = run_training(&setup, &cfg.train, cfg.budget, cfg.seed, init, &mut |row, _| {
        say!(
            ctx.err,
            "iter {:>4}  steps {:>8}  reward {:>10.3}  length {:>7.2}  success {:>5.3}  kl {:.5}  lr {:.2e}",
            row.iteration,
            row.env_steps,
            row.mean_episode_reward,
            row.mean_episode_length,
            row.success_rate,
            row.kl,
            row.lr
        );
        last = Some(row.iteration);
        Ok(())
    })
    .map_err(|e| {
        let at = last.map_or("before the first iteration".to_string(), |i| {
            format!("after iteration {i}")
        });
        CliError::from(e).with_context(&format!("training failed {at}"))
    })?;

    let final_success = out.metrics.last().map_or(0.0, |r| r.success_rate);
    let pairs = with_extra(&cfg, &[("final_success_rate", final_success.to_string())]);
    let meta = PolicyMeta {
        algorithm: cfg.train.algorithm.name().to_string(),
        seed: cfg.seed,
        budget: cfg.budget,
        config: cfg.to_pairs(),
    };
    let metrics_path = args.metrics.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".metrics.csv");
        PathBuf::from(p)
    });
    commit(vec![
        (args.out.clone(), encode_policy(&out.policy, &meta)),
        (metrics_path, metrics_csv(&pairs, &out.metrics).into_bytes()),
    ])?;
    say!(ctx.out, "final_success_rate={final_success}");
    Ok(())
}

enum ControllerEntry {
    Pid,
    Policy { label: String, policy: Box<Policy> },
}

impl ControllerEntry {
    fn label(&self) -> String {
        match self {
            ControllerEntry::Pid => "pid".into(),
            ControllerEntry::Policy { label, .. } => label.clone(),
        }
    }
}

fn parse_controllers(list: &str) -> CliResult<Vec<ControllerEntry>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item == "pid" {
            out.push(ControllerEntry::Pid);
            continue;
        }
        let (label, path) = item
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("controller {item:?} is neither `pid` nor `label:policy-file`")))?;
        let (policy, _) = read_policy(Path::new(path))?;
        out.push(ControllerEntry::Policy {
            label: label.to_string(),
            policy: Box::new(policy),
        });
    }
    if out.is_empty() {
        return Err(CliError::Config("no controllers given".into()));
    }
    Ok(out)
}

fn parse_trajectories(cfg: &ExperimentConfig, list: &str) -> CliResult<Vec<TrajectorySpec>> {
    if list == "all" {
        return Ok(TrajectorySpec::all().iter().map(|s| cfg.trajectory(s.kind)).collect());
    }
    list.split(',')
        .map(|n| cfg.trajectory_named(n.trim()).map_err(CliError::from))
        .collect()
}

fn parse_gains(text: &str, cfg: &ExperimentConfig) -> CliResult<Option<PidGains>> {
    match text {
        "auto" => Ok(None),
        "config" => Ok(Some(cfg.pid_gains)),
        _ => {
            let v: Vec<f64> = text
                .split(':')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| CliError::Config(format!("bad gains {text:?}")))
                })
                .collect::<CliResult<_>>()?;
            match v[..] {
                [kp, ki, kd] => Ok(Some(PidGains::uniform(kp, ki, kd))),
                _ => Err(CliError::Config(format!(
                    "gains must be auto, config or kp:ki:kd, got {text:?}"
                ))),
            }
        }
    }
}

fn gains_text(g: &PidGains) -> String {
    format!("{}:{}:{}", g.kp.x, g.ki.x, g.kd.x)
}

/// Tracks one trajectory with the PID gains used, if any; the result is
/// `None` when every gain candidate diverged.
fn run_tracking(
    entry: &ControllerEntry,
    gains: Option<PidGains>,
    cfg: &ExperimentConfig,
    spec: &TrajectorySpec,
    dt: f64,
) -> CliResult<(Option<TrackingResult>, Option<PidGains>)> {
    let geom = cfg.geometry()?;
    let params = cfg.dynamics.with_dt(dt);
    match entry {
        ControllerEntry::Pid => {
            let gains = match gains {
                Some(g) => g,
                None => match tune_gains(&geom, &params, spec, &cfg.pid_grid, cfg.integral_limit) {
                    Ok((g, _)) => g,
                    Err(CdprError::AllCandidatesDiverged) => return Ok((None, None)),
                    Err(e) => return Err(e.into()),
                },
            };
            let mut pid = PidController::new(gains, cfg.integral_limit);
            Ok((Some(track(&mut pid, &geom, &params, spec, dt)?), Some(gains)))
        }
        ControllerEntry::Policy { label, policy } => {
            let mut ctrl = PolicyController::new((**policy).clone()).with_label(label.clone());
            Ok((Some(track(&mut ctrl, &geom, &params, spec, dt)?), None))
        }
    }
}

pub fn eval(ctx: &mut Context<'_>, args: &EvalArgs) -> CliResult<()> {
    let single_policy = args.policy.as_deref().map(read_policy).transpose()?;
    let cfg = load_config(ctx, &args.common, single_policy.as_ref().map(|(_, m)| &m.config))?;
    cfg.validate()?;

    if let Some(n) = args.episodes {
        let (policy, meta) = single_policy.ok_or_else(|| CliError::Config("--episodes needs --policy".into()))?;
        let setup = cfg.env_setup()?;
        let eps = evaluate_policy(&setup, &policy, n, cfg.seed, !args.deterministic)?;
        let k = eps.len().max(1) as f64;
        let success = eps.iter().filter(|e| e.success).count() as f64 / k;
        let reward = eps.iter().map(|e| e.reward).sum::<f64>() / k;
        let length = eps.iter().map(|e| e.length as f64).sum::<f64>() / k;
        say!(
            ctx.out,
            "{} episodes={n} success_rate={success} mean_reward={reward} mean_length={length}",
            meta.algorithm
        );
        return Ok(());
    }

    let entries = match (single_policy, &args.controller, &args.controllers) {
        (Some((policy, meta)), _, _) => vec![ControllerEntry::Policy {
            label: meta.algorithm,
            policy: Box::new(policy),
        }],
        (None, Some(c), _) if c == "pid" => vec![ControllerEntry::Pid],
        (None, Some(c), _) => return Err(CliError::Config(format!("unknown controller {c:?}"))),
        (None, None, Some(list)) => parse_controllers(list)?,
        (None, None, None) => {
            return Err(CliError::Config(
                "give --policy, --controller pid or --controllers".into(),
            ))
        }
    };
    let gains = parse_gains(&args.gains, &cfg)?;
    let trajectories = parse_trajectories(&cfg, &args.trajectory)?;
    let dt = args.dt.unwrap_or(cfg.dynamics.dt);
    if !(dt > 0.0) {
        return Err(CliError::Config("--dt must be positive".into()));
    }
    let single = entries.len() == 1 && trajectories.len() == 1;
    if args.csv.is_some() && !single {
        return Err(CliError::Config(
            "--csv needs exactly one controller and one trajectory".into(),
        ));
    }

    let mut grid = Vec::with_capacity(trajectories.len());
    let mut chosen: Vec<(String, String)> = Vec::new();
    let mut files = Vec::new();
    for spec in &trajectories {
        let mut row = Vec::with_capacity(entries.len());
        for entry in &entries {
            let (res, used) = run_tracking(entry, gains, &cfg, spec, dt)?;
            if let Some(g) = &used {
                say!(
                    ctx.err,
                    "{} dt={dt}: pid gains kp:ki:kd = {}",
                    spec.name(),
                    gains_text(g)
                );
                chosen.push((format!("pid.gains.{}", spec.name()), gains_text(g)));
            }
            if single {
                let res = res
                    .as_ref()
                    .ok_or_else(|| CliError::Numeric("every PID gain candidate diverged".into()))?;
                let flag = if res.diverged { " diverged=true" } else { "" };
                say!(
                    ctx.out,
                    "{} {} dt={dt} rms={}{flag}",
                    spec.name(),
                    res.controller,
                    res.rms
                );
                if let Some(path) = &args.csv {
                    let mut pairs =
                        with_extra(&cfg, &[("trajectory", spec.name().into()), ("eval.dt", dt.to_string())]);
                    pairs.extend(chosen.iter().cloned());
                    files.push((path.clone(), tracking_csv(&pairs, res).into_bytes()));
                }
            }
            row.push(res.filter(|r| !r.diverged).map(|r| r.rms));
        }
        grid.push(row);
    }

    let names: Vec<String> = trajectories.iter().map(|s| s.name().to_string()).collect();
    let labels: Vec<String> = entries.iter().map(ControllerEntry::label).collect();
    let mut pairs = with_extra(&cfg, &[("eval.dt", dt.to_string())]);
    pairs.extend(chosen);
    let table = summary_csv(&pairs, &names, &labels, &grid);
    if !single {
        for line in csv_body(&table) {
            say!(ctx.out, "{line}");
        }
    }
    if let Some(path) = &args.summary {
        files.push((path.clone(), table.into_bytes()));
    }
    commit(files)
}

pub fn sweep(ctx: &mut Context<'_>, args: &SweepArgs) -> CliResult<()> {
    let cfg = load_config(ctx, &args.common, None)?;
    cfg.validate()?;
    let dts: Vec<f64> = match &args.dt {
        Some(list) => list
            .split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("bad interval {x:?} in --dt")))
            })
            .collect::<CliResult<_>>()?,
        None => cfg.sweep_dt.clone(),
    };
    if dts.is_empty() || dts.iter().any(|d| !(*d > 0.0)) {
        return Err(CliError::Config("--dt needs positive intervals".into()));
    }
    let spec = cfg.trajectory_named(&args.trajectory)?;
    let controllers: Vec<SweepController> = parse_controllers(&args.controllers)?
        .into_iter()
        .map(|e| match e {
            ControllerEntry::Pid => SweepController::Pid {
                grid: cfg.pid_grid.clone(),
                integral_limit: cfg.integral_limit,
            },
            ControllerEntry::Policy { label, policy } => SweepController::Policy { label, policy: *policy },
        })
        .collect();
    let rows = dt_sweep(&controllers, &cfg.geometry()?, &cfg.dynamics, &spec, &dts)?;
    let mut pairs = with_extra(&cfg, &[("trajectory", spec.name().into())]);
    for r in &rows {
        if let Some(g) = &r.gains {
            pairs.push((format!("pid.gains.dt={}", r.dt), gains_text(g)));
        }
    }
    let table = sweep_csv(&pairs, &rows);
    for line in csv_body(&table) {
        say!(ctx.out, "{line}");
    }
    match &args.out {
        Some(path) => commit(vec![(path.clone(), table.into_bytes())]),
        None => Ok(()),
    }
}

pub fn tune_pid(ctx: &mut Context<'_>, args: &TuneArgs) -> CliResult<()> {
    let cfg = load_config(ctx, &args.common, None)?;
    cfg.validate()?;
    let spec = cfg.trajectory_named(&args.trajectory)?;
    let dt = args.dt.unwrap_or(cfg.dynamics.dt);
    let params = cfg.dynamics.with_dt(dt);
    let (gains, rms) = tune_gains(&cfg.geometry()?, &params, &spec, &cfg.pid_grid, cfg.integral_limit)?;
    say!(
        ctx.out,
        "kp={} ki={} kd={} rms={rms}",
        gains.kp.x,
        gains.ki.x,
        gains.kd.x
    );
    if let Some(path) = &args.out {
        let pairs = with_extra(&cfg, &[("trajectory", spec.name().into()), ("tune.dt", dt.to_string())]);
        let mut text = config_header(&pairs);
        text.push_str(&format!(
            "pid.kp = {}\npid.ki = {}\npid.kd = {}\n",
            gains.kp.x, gains.ki.x, gains.kd.x
        ));
        commit(vec![(path.clone(), text.into_bytes())])?;
    }
    Ok(())
}
