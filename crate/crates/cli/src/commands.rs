use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use expdesign::environment::{calibrate_path, calibrate_record, GameSpec};
use expdesign::kalman::ParameterBelief;
use expdesign::policynet::PolicyValueNet;
use expdesign::trainer::{design_experiment, run_training, EpisodeResult, IterationReport};
use serde_json::json;

use crate::config::Resolved;
use crate::io::{self, belief_json, format_path};
use crate::validate::{self, Level};

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_manifest(r: &Resolved, command: &str) -> Result<String> {
    let hash = r.hash()?;
    fs::write(r.out.join("config.toml"), r.to_toml()?).context("writing config.toml")?;
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "preset": r.preset,
        "seed": r.seed,
        "config_hash": hash,
    });
    fs::write(r.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(hash)
}

fn labels(spec: &GameSpec, path: &[u8]) -> String {
    path.iter().map(|&a| spec.action_label(a)).collect::<Vec<_>>().join(" ")
}

fn print_params(spec: &GameSpec, belief: &ParameterBelief) {
    println!("{:<6} {:>12} {:>12} {:>12}", "param", "mean", "std", "truth");
    let std = belief.std();
    for (i, id) in spec.calibrate.iter().enumerate() {
        let truth = spec.truth.get(*id).unwrap_or(f64::NAN);
        println!("{:<6} {:>12.6} {:>12.3e} {:>12.6}", id.name(), belief.mean[i], std[i], truth);
    }
}

fn load_net(path: Option<&PathBuf>, spec: &GameSpec) -> Result<PolicyValueNet> {
    let path = path.context("--checkpoint is required")?;
    let net = PolicyValueNet::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    net.check_shape(spec.encoding_len(), spec.action_count())
        .with_context(|| format!("checkpoint {} does not match the configured game", path.display()))?;
    Ok(net)
}

struct TrainLogs {
    scores: csv::Writer<fs::File>,
    iterations: csv::Writer<fs::File>,
    episodes: std::io::BufWriter<fs::File>,
    checkpoints: PathBuf,
}

impl TrainLogs {
    fn open(out: &Path) -> Result<Self> {
        let mut scores = csv::Writer::from_writer(io::create(&out.join("scores.csv"))?);
        scores.write_record(["iteration", "episode", "score"])?;
        let mut iterations = csv::Writer::from_writer(io::create(&out.join("iterations.csv"))?);
        iterations.write_record([
            "iteration", "c_puct", "mean", "std", "episodes", "failures", "loss", "greedy_path", "greedy_score",
        ])?;
        let episodes = std::io::BufWriter::new(io::create(&out.join("episodes.jsonl"))?);
        let checkpoints = out.join("checkpoints");
        prepare_out(&checkpoints)?;
        Ok(Self { scores, iterations, episodes, checkpoints })
    }

    fn record(&mut self, spec: &GameSpec, r: &IterationReport, episodes: &[EpisodeResult], net: &PolicyValueNet) -> Result<()> {
        let it = r.iteration + 1;
        for (e, ep) in episodes.iter().enumerate() {
            let ep_no = e + 1;
            match ep {
                Ok(ep) => {
                    self.scores.write_record([it.to_string(), ep_no.to_string(), ep.score.to_string()])?;
                    for (k, d) in ep.decisions.iter().enumerate() {
                        let line = json!({
                            "iteration": it,
                            "episode": ep_no,
                            "step": k + 1,
                            "action": d.action,
                            "label": spec.action_label(d.action),
                            "strain_increment": spec.action_to_strain(d.action)?.to_array(),
                            "visits": d.visits,
                            "policy": d.policy,
                            "delta_kl": ep.outcome.kl.increments.get(k),
                            "cumulative_kl": ep.outcome.kl.cumulative.get(k),
                            "mean": ep.outcome.trace.get(k + 1).map(|b| b.mean.as_slice().to_vec()),
                            "nse": ep.outcome.nse,
                            "score": ep.score,
                        });
                        writeln!(self.episodes, "{line}")?;
                    }
                }
                Err(msg) => writeln!(self.episodes, "{}", json!({"iteration": it, "episode": ep_no, "error": msg}))?,
            }
        }
        self.iterations.write_record([
            it.to_string(),
            r.c_puct.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.scores.len().to_string(),
            r.failures.to_string(),
            r.loss.map(|l| l.to_string()).unwrap_or_default(),
            format_path(&r.greedy_path),
            r.greedy_score.to_string(),
        ])?;
        self.scores.flush()?;
        self.iterations.flush()?;
        self.episodes.flush()?;
        net.save(&self.checkpoints.join(format!("iter_{it:03}.bin")))?;
        println!(
            "iteration {it:>3}  c_puct {:>5.2}  mean {:.4}  std {:.4}  failures {}  greedy {} ({:.4})",
            r.c_puct,
            r.mean,
            r.std,
            r.failures,
            format_path(&r.greedy_path),
            r.greedy_score
        );
        Ok(())
    }
}

pub fn train(r: &Resolved, checkpoint: Option<&PathBuf>) -> Result<()> {
    prepare_out(&r.out)?;
    let hash = write_manifest(r, "train")?;
    let spec = &r.game;
    let net = match checkpoint {
        Some(_) => load_net(checkpoint, spec)?,
        None => PolicyValueNet::new(r.net.clone())?,
    };
    println!("training {} ({}), config {}", spec.name, r.out.display(), &hash[..12]);
    let mut logs = TrainLogs::open(&r.out)?;
    let (net, reports) = run_training(spec, &r.setup(), net, |rep, eps, net| {
        logs.record(spec, rep, eps, net).map_err(|e| expdesign::Error::Training(format!("{e:#}")))
    })?;
    net.save(&r.out.join("net.bin"))?;

    let last = reports.last().context("no iterations were run")?;
    let path = design_experiment(&net, spec, r.seed)?;
    let outcome = calibrate_path(spec, &path, r.seed)?;
    io::write_strain_program(&r.out.join("program.csv"), spec, &path)?;
    io::write_record(&r.out.join("record.csv"), &outcome.strains, &outcome.measured)?;
    io::write_lines(
        &r.out.join("beliefs.jsonl"),
        outcome.trace.iter().enumerate().map(|(k, b)| belief_json(k, b, &spec.calibrate, if k == 0 { Some(0.0) } else { outcome.kl.cumulative.get(k - 1).copied() })),
    )?;
    let names: Vec<&str> = spec.calibrate.iter().map(|id| id.name()).collect();
    let summary = json!({
        "game": spec.name,
        "config_hash": hash,
        "iterations": reports.len(),
        "final_mean": last.mean,
        "final_std": last.std,
        "design": path,
        "design_labels": path.iter().map(|&a| spec.action_label(a)).collect::<Vec<_>>(),
        "score": outcome.reward,
        "kl": outcome.kl.total,
        "nse": outcome.nse,
        "params": names,
        "calibrated": outcome.belief.mean.as_slice(),
        "std": outcome.belief.std().as_slice(),
        "truth": spec.truth.values(&spec.calibrate)?,
    });
    fs::write(r.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!();
    println!("final state {}  ({})", format_path(&path), labels(spec, &path));
    println!("score {:.4}  final-iteration mean {:.4} std {:.4}", outcome.reward, last.mean, last.std);
    print_params(spec, &outcome.belief);
    Ok(())
}

pub fn design(r: &Resolved, checkpoint: Option<&PathBuf>) -> Result<()> {
    let spec = &r.game;
    let net = load_net(checkpoint, spec)?;
    let path = design_experiment(&net, spec, r.seed)?;
    prepare_out(&r.out)?;
    let program = r.out.join("program.csv");
    io::write_strain_program(&program, spec, &path)?;
    println!("{}", format_path(&path));
    for (k, &a) in path.iter().enumerate() {
        println!("{:>3}  {:<3} {}", k + 1, a, spec.action_label(a));
    }
    println!("strain program written to {}", program.display());
    Ok(())
}

pub fn calibrate(r: &Resolved, path: Option<&str>, data: Option<&PathBuf>) -> Result<()> {
    let spec = &r.game;
    let (belief, trace, cumulative) = match (path, data) {
        (Some(p), None) => {
            let actions = io::parse_path(p)?;
            let o = calibrate_path(spec, &actions, r.seed)?;
            println!("path {}  ({})", format_path(&actions), labels(spec, &actions));
            println!("score {:.6}  kl {:.6}{}", o.reward, o.kl.total, o.nse.map(|n| format!("  nse {n:.6}")).unwrap_or_default());
            (o.belief, o.trace, o.kl.cumulative)
        }
        (None, Some(file)) => {
            let (strains, stresses) = io::read_record(file)?;
            let c = calibrate_record(spec, &strains, &stresses)?;
            println!("record {} ({} rows)  kl {:.6}", file.display(), strains.len(), c.kl.total);
            (c.belief, c.trace, c.kl.cumulative)
        }
        _ => bail!("give exactly one of --path or --data"),
    };
    print_params(spec, &belief);
    println!("kl trace: {}", cumulative.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "));
    prepare_out(&r.out)?;
    write_manifest(r, "calibrate")?;
    io::write_lines(
        &r.out.join("beliefs.jsonl"),
        trace.iter().enumerate().map(|(k, b)| belief_json(k, b, &spec.calibrate, if k == 0 { Some(0.0) } else { cumulative.get(k - 1).copied() })),
    )?;
    let names: Vec<&str> = spec.calibrate.iter().map(|id| id.name()).collect();
    let report = json!({
        "params": names,
        "mean": belief.mean.as_slice(),
        "std": belief.std().as_slice(),
        "kl_trace": cumulative,
    });
    fs::write(r.out.join("calibration.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

/// Prints the pass/fail matrix; `Ok(false)` if any check failed.
pub fn validate(level: Level) -> Result<bool> {
    let t = std::time::Instant::now();
    let checks = validate::run(level);
    println!("{:<16} {:<40} {:<26} {:<18} result", "suite", "check", "measured", "bound");
    for c in &checks {
        println!("{:<16} {:<40} {:<26} {:<18} {}", c.suite, c.name, c.measured, c.bound, if c.pass { "PASS" } else { "FAIL" });
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} checks, {} failed, {:.1} s", checks.len(), failed, t.elapsed().as_secs_f64());
    Ok(failed == 0)
}
