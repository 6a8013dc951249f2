//! Fixed benchmark scenes, the evaluation episode runner, and SR / CR / WTT.
//!
//! A [`BenchmarkSuite`] freezes everything an evaluation needs — scene blobs,
//! per-episode seeds, timeouts, distance caps — in a JSON manifest, so runs
//! stay comparable across policies and machines. Evaluation is deterministic
//! given (policy parameters, suite, run seed).

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::rlexpert::ExpertPolicy;
use crate::rng;
use crate::runner::EpisodeDriver;
use crate::sensing::SensingParams;
use crate::simkernel::{Action, SimParams};
use crate::student::StudentPolicy;
use crate::threads;
use crate::world::{
    sample_episode, scene_from_blob, scene_to_blob, Capability, EpisodeParams, Scene, SceneParams,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const MANIFEST_NAME: &str = "benchmark_manifest.json";

/// One frozen scene entry in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteScene {
    pub capability: Capability,
    pub scene_seed: u64,
    /// Versioned scene blob, hex-encoded.
    pub scene_hex: String,
    pub episode_seeds: Vec<u64>,
    pub timeout: f64,
    pub max_goal_dist: f64,
    pub min_goal_dist: f64,
}

impl SuiteScene {
    pub fn scene(&self) -> Result<Scene> {
        let bytes = hex::decode(&self.scene_hex).map_err(|e| Error::Format {
            offset: 0,
            reason: format!("scene blob hex: {e}"),
        })?;
        scene_from_blob(&bytes)
    }

    pub fn episode_params(&self) -> EpisodeParams {
        EpisodeParams {
            max_goal_dist: self.max_goal_dist,
            min_goal_dist: self.min_goal_dist,
            timeout: self.timeout,
            clearance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub version: u32,
    pub suite_seed: u64,
    pub scenes: Vec<SuiteScene>,
}

/// Evaluation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    pub episodes_per_scene: usize,
    pub suite_seed: u64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            episodes_per_scene: 100,
            suite_seed: 2024,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Vec<String> {
        if self.episodes_per_scene == 0 {
            vec!["eval.episodes_per_scene must be positive".into()]
        } else {
            Vec::new()
        }
    }
}

impl BenchmarkSuite {
    /// Generate a frozen suite for the given capabilities.
    pub fn generate(
        suite_seed: u64,
        capabilities: &[Capability],
        scene_params: &SceneParams,
        sim: &SimParams,
        episodes_per_scene: usize,
    ) -> Result<BenchmarkSuite> {
        let mut scenes = Vec::with_capacity(capabilities.len());
        for &cap in capabilities {
            let scene_seed = rng::child_seed(suite_seed, "bench-scene", cap.code() as u64);
            let scene = crate::world::generate_scene(cap, scene_seed, scene_params)?;
            let p = scene_params.for_capability(cap);
            let episode_seeds = (0..episodes_per_scene)
                .map(|i| rng::child_seed(suite_seed, "bench-episode", ((cap.code() as u64) << 32) | i as u64))
                .collect();
            scenes.push(SuiteScene {
                capability: cap,
                scene_seed,
                scene_hex: hex::encode(scene_to_blob(&scene)),
                episode_seeds,
                timeout: sim.timeout_for(cap),
                max_goal_dist: p.max_goal_dist,
                min_goal_dist: p.min_goal_dist,
            });
        }
        Ok(BenchmarkSuite {
            version: 1,
            suite_seed,
            scenes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<BenchmarkSuite> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let suite: BenchmarkSuite = serde_json::from_slice(&raw)?;
        if suite.version != 1 {
            return Err(Error::Format {
                offset: 0,
                reason: format!("unsupported manifest version {}", suite.version),
            });
        }
        Ok(suite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    Collided,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub outcome: Outcome,
    pub duration: f64,
}

/// Serialize a possibly-infinite WTT as the literal string "inf".
pub mod wtt_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum W {
            Num(f64),
            Str(serde::de::IgnoredAny),
        }
        Ok(match W::deserialize(d)? {
            W::Num(v) => v,
            W::Str(_) => f64::INFINITY,
        })
    }
}

/// Aggregated evaluation metrics for one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    /// Success rate: fraction of episodes reaching the goal.
    pub sr: f64,
    /// Collision rate.
    pub cr: f64,
    pub timeout_rate: f64,
    /// Weighted travel time: mean success duration / SR; +∞ when SR = 0.
    #[serde(with = "wtt_serde")]
    pub wtt: f64,
    pub episodes: usize,
    #[serde(skip)]
    pub records: Vec<EpisodeRecord>,
}

impl Metrics {
    pub fn from_records(records: Vec<EpisodeRecord>) -> Result<Metrics> {
        let wtt = compute_wtt(&records)?;
        let n = records.len() as f64;
        let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count() as f64;
        Ok(Metrics {
            sr: count(Outcome::Reached) / n,
            cr: count(Outcome::Collided) / n,
            timeout_rate: count(Outcome::TimedOut) / n,
            wtt,
            episodes: records.len(),
            records,
        })
    }
}

/// Mean duration of successful episodes divided by the success rate; +∞ at
/// zero successes.
pub fn compute_wtt(records: &[EpisodeRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain("compute_wtt on empty outcome list".into()));
    }
    let successes: Vec<f64> = records
        .iter()
        .filter(|r| r.outcome == Outcome::Reached)
        .map(|r| r.duration)
        .collect();
    if successes.is_empty() {
        return Ok(f64::INFINITY);
    }
    let mean = successes.iter().sum::<f64>() / successes.len() as f64;
    let sr = successes.len() as f64 / records.len() as f64;
    Ok(mean / sr)
}

/// Which observation type a policy consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationKind {
    Privileged,
    Student,
    Scripted,
}

/// Policy adapter for evaluation. Expert adapters are handed
/// `ExpertObservation`s, student adapters `StudentObservation`s; the runner
/// cannot cross the streams because each arm's forward has the matching
/// signature.
pub enum BenchPolicy<'a> {
    Expert(&'a ExpertPolicy),
    Student(&'a StudentPolicy),
    /// Emits zero velocity forever.
    ScriptedZero,
    /// Drives straight at the goal.
    ScriptedStraight,
}

impl BenchPolicy<'_> {
    pub fn observation_kind(&self) -> ObservationKind {
        match self {
            BenchPolicy::Expert(_) => ObservationKind::Privileged,
            BenchPolicy::Student(_) => ObservationKind::Student,
            _ => ObservationKind::Scripted,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            BenchPolicy::Expert(_) => "expert",
            BenchPolicy::Student(_) => "student",
            BenchPolicy::ScriptedZero => "scripted-zero",
            BenchPolicy::ScriptedStraight => "scripted-straight",
        }
    }
}

/// Result of evaluating one scene, with optional per-episode trails for SVG
/// overlays.
#[derive(Debug, Clone)]
pub struct SceneResult {
    pub metrics: Metrics,
    pub trails: Vec<Vec<Vec2>>,
    pub starts_goals: Vec<(Vec2, Vec2)>,
    pub scene: Scene,
}

fn run_episode(
    policy: &BenchPolicy,
    scene: &Scene,
    suite_scene: &SuiteScene,
    episode_seed: u64,
    run_seed: u64,
    sim: &SimParams,
    sensing: &SensingParams,
    record_trail: bool,
) -> Result<(EpisodeRecord, Vec<Vec2>, (Vec2, Vec2))> {
    let driver_seed = rng::child_seed(run_seed, "bench-run", episode_seed);
    let spec = sample_episode(scene, episode_seed, &suite_scene.episode_params())?;
    let start_goal = (spec.start.pos, spec.goal);
    let mut driver = EpisodeDriver::new(spec, sim, sensing, driver_seed);
    let mut token = match policy {
        BenchPolicy::Expert(e) => e.zero_token(),
        _ => Vec::new(),
    };
    let mut trail = Vec::new();
    loop {
        if record_trail {
            trail.push(driver.episode.state.position);
        }
        let views = driver.capture();
        let action = match policy {
            BenchPolicy::Expert(e) => {
                let obs = driver.expert_obs(&views);
                let flat = e.flat_obs(&obs, &token);
                let (mean, _, next) = e.forward(&e.store, &flat)?;
                token = next;
                Action([mean[0], mean[1], mean[2]])
            }
            BenchPolicy::Student(s) => {
                let obs = driver.student_obs()?;
                s.act(&obs, sensing)?
            }
            BenchPolicy::ScriptedZero => Action::ZERO,
            BenchPolicy::ScriptedStraight => {
                let g = crate::sensing::goal_in_robot_frame(
                    &driver.episode.state,
                    driver.episode.spec.goal,
                );
                Action([(g.x * 4.0).clamp(-1.0, 1.0), (g.y * 4.0).clamp(-1.0, 1.0), 0.0])
            }
        };
        let out = driver.apply(action)?;
        if out.terminal() {
            if record_trail {
                trail.push(out.next_state.position);
            }
            let outcome = if out.collided {
                Outcome::Collided
            } else if out.reached {
                Outcome::Reached
            } else {
                Outcome::TimedOut
            };
            return Ok((
                EpisodeRecord {
                    outcome,
                    duration: out.elapsed,
                },
                trail,
                start_goal,
            ));
        }
    }
}

/// Evaluate a policy on every scene of the suite. Episodes run independently
/// on per-episode seed streams; aggregation is a fold in episode order.
pub fn run_benchmark(
    policy: &BenchPolicy,
    suite: &BenchmarkSuite,
    run_seed: u64,
    sim: &SimParams,
    sensing: &SensingParams,
    record_trails: bool,
) -> Result<BTreeMap<Capability, SceneResult>> {
    let mut out = BTreeMap::new();
    for ss in &suite.scenes {
        let scene = ss.scene()?;
        let results: Vec<Result<(EpisodeRecord, Vec<Vec2>, (Vec2, Vec2))>> =
            threads::indexed_map(ss.episode_seeds.len(), |i| {
                run_episode(
                    policy,
                    &scene,
                    ss,
                    ss.episode_seeds[i],
                    run_seed,
                    sim,
                    sensing,
                    record_trails,
                )
            });
        let mut records = Vec::with_capacity(results.len());
        let mut trails = Vec::new();
        let mut starts_goals = Vec::new();
        for r in results {
            let (rec, trail, sg) = r?;
            records.push(rec);
            if record_trails {
                trails.push(trail);
                starts_goals.push(sg);
            }
        }
        out.insert(
            ss.capability,
            SceneResult {
                metrics: Metrics::from_records(records)?,
                trails,
                starts_goals,
                scene,
            },
        );
    }
    Ok(out)
}

/// Render a results table with a stable column order. WTT serializes as
/// "inf" when infinite.
pub fn results_csv(rows: &[(String, Capability, &Metrics)]) -> String {
    let mut out = String::from("policy,scene,episodes,sr,cr,timeout_rate,wtt\n");
    for (policy, cap, m) in rows {
        let wtt = if m.wtt.is_finite() {
            format!("{}", m.wtt)
        } else {
            "inf".to_string()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            policy, cap, m.episodes, m.sr, m.cr, m.timeout_rate, wtt
        ));
    }
    out
}

/// Write the CSV table plus one SVG per scene (when trails were recorded).
pub fn export_report(
    results: &BTreeMap<String, BTreeMap<Capability, SceneResult>>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (policy, per_scene) in results {
        for (cap, sr) in per_scene {
            rows.push((policy.clone(), *cap, &sr.metrics));
        }
    }
    let csv_path = dir.join("results.csv");
    std::fs::write(&csv_path, results_csv(&rows))
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    for (policy, per_scene) in results {
        for (cap, sr) in per_scene {
            if !sr.trails.is_empty() {
                let svg = scene_svg(&sr.scene, &sr.trails, &sr.starts_goals);
                let p = dir.join(format!("{policy}_{cap}.svg"));
                std::fs::write(&p, svg).map_err(|e| Error::io(p.display().to_string(), e))?;
            }
        }
    }
    Ok(())
}

/// Plot obstacle outlines and one polyline per episode.
pub fn scene_svg(scene: &Scene, trails: &[Vec<Vec2>], starts_goals: &[(Vec2, Vec2)]) -> String {
    let b = scene.bounds;
    let margin = 0.5;
    let (w, h) = (b.width() + 2.0 * margin, b.height() + 2.0 * margin);
    // SVG y grows downward; flip by mapping y -> max.y - y.
    let px = |p: Vec2| (p.x - b.min.x + margin, b.max.y - p.y + margin);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.2} {h:.2}\" width=\"{:.0}\" height=\"{:.0}\">\n",
        w * 20.0,
        h * 20.0
    ));
    s.push_str(&format!(
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"white\" stroke=\"black\" stroke-width=\"0.05\"/>\n",
        b.width(),
        b.height()
    ));
    let mut draw_collider = |c: &crate::geom::Collider, color: &str| match *c {
        crate::geom::Collider::Circle { center, radius } => {
            let (x, y) = px(center);
            s.push_str(&format!(
                "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"{radius:.3}\" fill=\"{color}\"/>\n"
            ));
        }
        crate::geom::Collider::Rect(r) => {
            let pts: Vec<String> = r
                .corners()
                .iter()
                .map(|&p| {
                    let (x, y) = px(p);
                    format!("{x:.3},{y:.3}")
                })
                .collect();
            s.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{color}\"/>\n",
                pts.join(" ")
            ));
        }
        crate::geom::Collider::Capsule { a, b: bb, radius } => {
            let (x1, y1) = px(a);
            let (x2, y2) = px(bb);
            s.push_str(&format!(
                "<line x1=\"{x1:.3}\" y1=\"{y1:.3}\" x2=\"{x2:.3}\" y2=\"{y2:.3}\" stroke=\"{color}\" stroke-width=\"{:.3}\" stroke-linecap=\"round\"/>\n",
                2.0 * radius
            ));
        }
    };
    for o in &scene.statics {
        draw_collider(&o.collider(), "#777777");
    }
    for w in &scene.walls {
        draw_collider(&w.collider(), "#333333");
    }
    for d in &scene.dynamics {
        draw_collider(&d.body.collider(), "#cc6633");
    }
    for trail in trails {
        if trail.len() < 2 {
            continue;
        }
        let pts: Vec<String> = trail
            .iter()
            .map(|&p| {
                let (x, y) = px(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#3366cc\" stroke-width=\"0.04\" stroke-opacity=\"0.6\"/>\n",
            pts.join(" ")
        ));
    }
    for (start, goal) in starts_goals {
        let (x, y) = px(*start);
        s.push_str(&format!(
            "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"0.12\" fill=\"#22aa22\"/>\n"
        ));
        let (x, y) = px(*goal);
        s.push_str(&format!(
            "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"0.12\" fill=\"#aa2222\"/>\n"
        ));
    }
    s.push_str("</svg>\n");
    s
}
