//! Subcommand implementations.

use anyhow::{bail, Context};
use capnav_core::config::{load_config, Config, Preset};
use capnav_core::dataset::TrajectoryDataset;
use capnav_core::distill::{self, DistillSetup};
use capnav_core::evalbench::{
    export_report, scene_svg, BenchPolicy, BenchmarkSuite, SceneResult, MANIFEST_NAME,
};
use capnav_core::nn::checkpoint;
use capnav_core::rlexpert::{train::curve_to_csv, train::ExpertTrainSetup, ExpertPolicy};
use capnav_core::student::{finetune, LabeledStep, StudentPolicy};
use capnav_core::world::{generate_scene, scene_to_blob, Capability};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn config_or_default(path: Option<&Path>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(Config::default()),
    }
}

fn apply_seed(cfg: &mut Config, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
}

pub fn gen_scene(
    capability: Capability,
    seed: u64,
    config: Option<&Path>,
    out: &Path,
    svg: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = config_or_default(config)?;
    let scene = generate_scene(capability, seed, &cfg.scene)?;
    std::fs::write(out, scene_to_blob(&scene))
        .with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = svg {
        std::fs::write(p, scene_svg(&scene, &[], &[]))
            .with_context(|| format!("writing {}", p.display()))?;
    }
    println!(
        "scene {capability} seed={seed}: {} statics, {} dynamics, {} wall segments -> {}",
        scene.statics.len(),
        scene.dynamics.len(),
        scene.walls.len(),
        out.display()
    );
    Ok(())
}

pub fn train_expert(
    capability: Capability,
    preset: Option<&str>,
    config: Option<&Path>,
    seed: Option<u64>,
    out_dir: &Path,
) -> anyhow::Result<()> {
    let mut cfg = config_or_default(config)?;
    apply_seed(&mut cfg, seed);
    if let Some(p) = preset {
        cfg.nn.preset = match p {
            "desk" => Preset::Desk,
            "paper" => Preset::Paper,
            other => bail!("unknown preset '{other}' (expected desk or paper)"),
        };
    }
    std::fs::create_dir_all(out_dir)?;
    cfg.write_effective(&out_dir.join(format!("effective_train_{capability}.toml")))?;

    let arch = cfg.expert_arch();
    let setup = ExpertTrainSetup {
        scene: &cfg.scene,
        sim: &cfg.sim,
        sensing: &cfg.sensing,
        ppo: &cfg.ppo,
        rewards: &cfg.reward,
        arch: &arch,
    };
    println!(
        "training {capability} expert: seed={}, envs={}, horizon={}, max_updates={}",
        cfg.seed, cfg.ppo.envs, cfg.ppo.horizon, cfg.ppo.max_updates
    );
    let out = capnav_core::rlexpert::train_expert(capability, &setup, cfg.seed)?;
    let ckpt = out_dir.join(format!("expert_{capability}.ckpt"));
    out.policy.save(&ckpt)?;
    let csv = out_dir.join(format!("expert_{capability}_curve.csv"));
    std::fs::write(&csv, curve_to_csv(&out.curve))?;
    let last = out.curve.last();
    println!(
        "done: {} updates, final SR {:.1}% -> {}",
        out.curve.len(),
        last.map_or(0.0, |p| p.success_rate * 100.0),
        ckpt.display()
    );
    Ok(())
}

fn load_experts(
    dir: &Path,
    caps: &[Capability],
) -> anyhow::Result<BTreeMap<Capability, ExpertPolicy>> {
    let mut experts = BTreeMap::new();
    for cap in caps {
        let path = dir.join(format!("expert_{cap}.ckpt"));
        let policy = ExpertPolicy::load(&path)
            .with_context(|| format!("loading expert checkpoint {}", path.display()))?;
        if policy.capability != *cap {
            bail!(
                "{} holds a {} expert, expected {cap}",
                path.display(),
                policy.capability
            );
        }
        experts.insert(*cap, policy);
    }
    Ok(experts)
}

pub fn collect_offline(
    experts_dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = config_or_default(config)?;
    apply_seed(&mut cfg, seed);
    let experts = load_experts(experts_dir, &cfg.distill.capabilities)?;
    let setup = DistillSetup {
        scene: &cfg.scene,
        sim: &cfg.sim,
        sensing: &cfg.sensing,
        student_train: &cfg.student,
        distill: &cfg.distill,
    };
    println!(
        "collecting {} success-filtered steps across {:?}",
        cfg.distill.offline_steps, cfg.distill.capabilities
    );
    let ds = distill::collect_offline(&experts, &setup, cfg.seed)?;
    ds.save(out)?;
    println!(
        "dataset: {} steps, {} episodes -> {}",
        ds.len(),
        ds.episodes.len(),
        out.display()
    );
    Ok(())
}

pub fn pretrain_student(
    dataset: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = config_or_default(config)?;
    apply_seed(&mut cfg, seed);
    let ds = TrajectoryDataset::load(dataset, &cfg.sensing)?;
    if ds.is_empty() {
        bail!("dataset {} is empty", dataset.display());
    }
    let mut student = StudentPolicy::new(cfg.student_arch(), cfg.seed)?;
    let refs: Vec<&LabeledStep> = ds.steps.iter().collect();
    let mut shuffle = capnav_core::rng::stream(cfg.seed, "pretrain", 0);
    println!(
        "pretraining student on {} steps for {} epochs",
        refs.len(),
        cfg.student.pretrain_epochs
    );
    let curve = finetune(
        &mut student,
        &refs,
        cfg.student.pretrain_epochs,
        &cfg.student,
        &mut shuffle,
    )?;
    student.save(out)?;
    let mut csv = String::from("epoch,bc_loss\n");
    for (i, l) in curve.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    let curve_path = out.with_extension("loss.csv");
    std::fs::write(&curve_path, csv)?;
    println!(
        "final BC loss {:.6} -> {}",
        curve.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

pub fn iterate(
    config: Option<&Path>,
    student_path: &Path,
    experts_dir: &Path,
    offline: &Path,
    seed: Option<u64>,
    out_dir: &Path,
) -> anyhow::Result<()> {
    let mut cfg = config_or_default(config)?;
    apply_seed(&mut cfg, seed);
    std::fs::create_dir_all(out_dir)?;
    cfg.write_effective(&out_dir.join("effective.toml"))?;

    let mut student = StudentPolicy::load(student_path)?;
    let experts = load_experts(experts_dir, &cfg.distill.capabilities)?;
    let offline_ds = TrajectoryDataset::load(offline, &cfg.sensing)?;
    let setup = DistillSetup {
        scene: &cfg.scene,
        sim: &cfg.sim,
        sensing: &cfg.sensing,
        student_train: &cfg.student,
        distill: &cfg.distill,
    };
    println!(
        "iterating: {} steps/iteration, up to {} iterations, balanced={}",
        cfg.distill.iteration_steps, cfg.distill.max_iterations, cfg.distill.balanced
    );
    let reports = distill::iterate(&mut student, &experts, &offline_ds, &setup, cfg.seed)?;
    let jsonl = distill::reports_to_jsonl(&reports)?;
    let jl_path = out_dir.join("iterations.jsonl");
    std::fs::write(&jl_path, jsonl)?;
    let final_ckpt = out_dir.join("student_final.ckpt");
    student.save(&final_ckpt)?;
    for r in &reports {
        let sr: Vec<String> = r
            .student_after
            .iter()
            .map(|(c, m)| format!("{c} {:.0}%", m.sr * 100.0))
            .collect();
        println!(
            "iteration {}: proportions {:?} -> SR {}",
            r.iteration,
            r.proportions
                .iter()
                .map(|(c, p)| format!("{c}={p:.3}"))
                .collect::<Vec<_>>(),
            sr.join(", ")
        );
    }
    println!("{} iterations -> {}", reports.len(), jl_path.display());
    Ok(())
}

enum PolicyArg {
    Checkpoint(PathBuf),
    ScriptedZero,
    ScriptedStraight,
}

fn parse_policy(s: &str) -> anyhow::Result<PolicyArg> {
    Ok(match s {
        "scripted:zero" => PolicyArg::ScriptedZero,
        "scripted:straight" => PolicyArg::ScriptedStraight,
        path => PolicyArg::Checkpoint(PathBuf::from(path)),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    policy: &str,
    suite_dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    regen: bool,
    svg: bool,
    out_dir: Option<&Path>,
) -> anyhow::Result<()> {
    let mut cfg = config_or_default(config)?;
    apply_seed(&mut cfg, seed);
    std::fs::create_dir_all(suite_dir)?;
    let manifest_path = suite_dir.join(MANIFEST_NAME);
    let suite = if manifest_path.exists() && !regen {
        BenchmarkSuite::load(&manifest_path)?
    } else {
        let suite = BenchmarkSuite::generate(
            cfg.eval.suite_seed,
            &Capability::ALL,
            &cfg.scene,
            &cfg.sim,
            cfg.eval.episodes_per_scene,
        )?;
        suite.save(&manifest_path)?;
        println!("wrote benchmark manifest {}", manifest_path.display());
        suite
    };

    let arg = parse_policy(policy)?;
    // Checkpoints must outlive the borrowing BenchPolicy.
    let mut expert_holder = None;
    let mut student_holder = None;
    let (bench, label): (BenchPolicy, String) = match &arg {
        PolicyArg::ScriptedZero => (BenchPolicy::ScriptedZero, "scripted-zero".into()),
        PolicyArg::ScriptedStraight => (BenchPolicy::ScriptedStraight, "scripted-straight".into()),
        PolicyArg::Checkpoint(path) => {
            let (meta, _) = checkpoint::load(path)?;
            match meta["kind"].as_str() {
                Some("expert") => {
                    expert_holder = Some(ExpertPolicy::load(path)?);
                    let e = expert_holder.as_ref().unwrap();
                    let label = format!("expert-{}", e.capability);
                    (BenchPolicy::Expert(e), label)
                }
                Some("student") => {
                    student_holder = Some(StudentPolicy::load(path)?);
                    (BenchPolicy::Student(student_holder.as_ref().unwrap()), "student".into())
                }
                other => bail!("unknown checkpoint kind {other:?} in {}", path.display()),
            }
        }
    };
    let _ = (&expert_holder, &student_holder);

    println!(
        "evaluating {label} on {} scenes x {} episodes",
        suite.scenes.len(),
        suite.scenes.first().map_or(0, |s| s.episode_seeds.len())
    );
    let results = capnav_core::evalbench::run_benchmark(
        &bench,
        &suite,
        cfg.seed,
        &cfg.sim,
        &cfg.sensing,
        svg,
    )?;
    for (cap, r) in &results {
        let wtt = if r.metrics.wtt.is_finite() {
            format!("{:.1}s", r.metrics.wtt)
        } else {
            "inf".into()
        };
        println!(
            "  {cap}: SR {:.1}%  CR {:.1}%  WTT {wtt}",
            r.metrics.sr * 100.0,
            r.metrics.cr * 100.0
        );
    }
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| suite_dir.join(format!("eval_{label}")));
    let mut map: BTreeMap<String, BTreeMap<Capability, SceneResult>> = BTreeMap::new();
    map.insert(label, results);
    export_report(&map, &dir)?;
    println!("report -> {}", dir.join("results.csv").display());
    Ok(())
}

pub fn report(results: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let mut merged = String::new();
    for (i, p) in results.iter().enumerate() {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        for (j, line) in text.lines().enumerate() {
            if j == 0 {
                if i == 0 {
                    merged.push_str(line);
                    merged.push('\n');
                } else if line != merged.lines().next().unwrap_or("") {
                    bail!("{} has a different header", p.display());
                }
                continue;
            }
            merged.push_str(line);
            merged.push('\n');
        }
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, merged)?;
    println!("merged {} files -> {}", results.len(), out.display());
    Ok(())
}

pub fn inspect_dataset(dataset: &Path, config: Option<&Path>) -> anyhow::Result<()> {
    // Prefer the self-describing sidecar for the ray layout; fall back to the
    // config.
    let mut cfg = config_or_default(config)?;
    let sidecar = {
        let mut p = dataset.as_os_str().to_owned();
        p.push(".meta.json");
        PathBuf::from(p)
    };
    if sidecar.exists() {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&sidecar)?)?;
        if let (Some(r), Some(w)) = (v["rays"].as_u64(), v["window"].as_u64()) {
            cfg.sensing.rays = r as usize;
            cfg.sensing.window = w as usize;
        }
    }
    let ds = TrajectoryDataset::load(dataset, &cfg.sensing)?;
    println!("dataset {}", dataset.display());
    println!("  rays/view: {}  window: {}", ds.rays, ds.window);
    println!("  records: {}  episodes: {}", ds.len(), ds.episodes.len());
    for (cap, n) in ds.counts_by_capability() {
        println!("  {cap}: {n} steps");
    }
    if !ds.episodes.is_empty() {
        let succ = ds.episodes.values().filter(|m| m.success).count();
        println!(
            "  episode success: {}/{} ({:.1}%)",
            succ,
            ds.episodes.len(),
            100.0 * succ as f64 / ds.episodes.len() as f64
        );
        let fovs: Vec<f64> = ds.episodes.values().map(|m| m.fov.to_degrees()).collect();
        let (min, max) = fovs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        println!("  fov range: [{min:.1}, {max:.1}] deg");
    }
    Ok(())
}
