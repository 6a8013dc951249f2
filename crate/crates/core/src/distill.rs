//! Teacher-student distillation: success-filtered offline collection, online
//! DAgger collection under the student's rollout distribution, and the
//! capability-balanced aggregation loop.
//!
//! Per-capability collection budgets follow smoothed performance gaps between
//! the student and its teachers, measured in weighted travel time:
//!
//! ```text
//! g = max{0, (W_student − W_expert) / W_expert} + ε        (ε = 0.1)
//! p = g^α / Σ g^α                                          (α = 0.3)
//! ```

use crate::dataset::{EpisodeMeta, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::evalbench::{run_benchmark, BenchPolicy, BenchmarkSuite, Metrics};
use crate::rlexpert::ExpertPolicy;
use crate::rng;
use crate::runner::EpisodeDriver;
use crate::sensing::SensingParams;
use crate::simkernel::{Action, SimParams};
use crate::student::{finetune, LabeledStep, StudentPolicy, StudentTrainParams};
use crate::world::{generate_scene, sample_episode, Capability, EpisodeParams, SceneParams};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Sentinel gap base when the student never succeeds (its WTT is +∞).
pub const GAP_MAX: f64 = 1e6;

/// Distillation loop knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillParams {
    /// Offline success-filtered collection budget, steps.
    pub offline_steps: usize,
    /// Online DAgger budget per iteration, steps.
    pub iteration_steps: usize,
    pub max_iterations: usize,
    /// Convergence threshold on per-iteration SR improvement (fraction; 0.02
    /// = 2 SR points), applied over 2 consecutive iterations.
    pub min_delta: f64,
    /// Fraction of each fine-tune mix drawn from older slices.
    pub replay_fraction: f64,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// ε in the gap formula.
    pub epsilon: f64,
    /// α in the proportion smoothing.
    pub alpha_smooth: f64,
    /// When false, every iteration uses uniform proportions (the ablation).
    pub balanced: bool,
    /// Capabilities in play (subset of the trainable three).
    pub capabilities: Vec<Capability>,
    /// Abort collection when an expert's success rate over the probation
    /// window sits below this.
    pub min_expert_sr: f64,
}

impl Default for DistillParams {
    fn default() -> Self {
        DistillParams {
            offline_steps: 100_000,
            iteration_steps: 20_000,
            max_iterations: 6,
            min_delta: 0.02,
            replay_fraction: 0.25,
            eval_episodes: 40,
            eval_seed: 7_771,
            epsilon: 0.1,
            alpha_smooth: 0.3,
            balanced: true,
            capabilities: Capability::TRAINABLE.to_vec(),
            min_expert_sr: 0.05,
        }
    }
}

impl DistillParams {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.offline_steps == 0 || self.iteration_steps == 0 {
            bad.push("distill: step budgets must be positive".into());
        }
        if self.max_iterations == 0 {
            bad.push("distill.max_iterations must be positive".into());
        }
        if !(0.0..1.0).contains(&self.replay_fraction) {
            bad.push("distill.replay_fraction must be in [0,1)".into());
        }
        if self.epsilon <= 0.0 {
            bad.push("distill.epsilon must be positive".into());
        }
        if self.alpha_smooth <= 0.0 {
            bad.push("distill.alpha_smooth must be positive".into());
        }
        if self.eval_episodes == 0 {
            bad.push("distill.eval_episodes must be positive".into());
        }
        if self.capabilities.is_empty()
            || self.capabilities.iter().any(|c| *c == Capability::Mixed)
        {
            bad.push("distill.capabilities must be a non-empty subset of the trainable three".into());
        }
        bad
    }
}

/// Student-vs-expert WTT gap for one capability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityGap {
    pub capability: Capability,
    pub w_vla: f64,
    pub w_rl: f64,
    pub g: f64,
}

/// Per-capability collection shares for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub proportions: BTreeMap<Capability, f64>,
    pub alpha_smooth: f64,
    pub step_budget: usize,
}

/// `max{0, (w_vla − w_rl)/w_rl} + ε`, with a large finite sentinel when the
/// student has no successes (w_vla = +∞) so proportions stay well-defined.
pub fn compute_gap(w_vla: f64, w_rl: f64, epsilon: f64) -> Result<f64> {
    if !(w_rl > 0.0) || !w_rl.is_finite() {
        return Err(Error::Domain(format!(
            "expert WTT must be positive and finite, got {w_rl}"
        )));
    }
    if !(w_vla > 0.0) {
        return Err(Error::Domain(format!("student WTT must be positive, got {w_vla}")));
    }
    if w_vla.is_infinite() {
        return Ok(GAP_MAX + epsilon);
    }
    Ok(((w_vla - w_rl) / w_rl).max(0.0) + epsilon)
}

/// Power-smoothed normalization: p = g^α / Σ g^α.
pub fn compute_proportions(
    gaps: &BTreeMap<Capability, f64>,
    alpha: f64,
) -> Result<BTreeMap<Capability, f64>> {
    if gaps.is_empty() {
        return Err(Error::Domain("compute_proportions with no gaps".into()));
    }
    if gaps.values().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::Domain("gaps must be positive and finite".into()));
    }
    let powered: BTreeMap<Capability, f64> =
        gaps.iter().map(|(c, g)| (*c, g.powf(alpha))).collect();
    let total: f64 = powered.values().sum();
    Ok(powered.into_iter().map(|(c, v)| (c, v / total)).collect())
}

/// Gaps and the mix plan for one iteration, from measured metrics. This is
/// the exact code path `iterate` uses to emit its reports.
pub fn plan_mix(
    student: &BTreeMap<Capability, Metrics>,
    experts: &BTreeMap<Capability, Metrics>,
    params: &DistillParams,
) -> Result<(Vec<CapabilityGap>, MixPlan)> {
    let mut gaps = Vec::new();
    let mut gap_map = BTreeMap::new();
    for cap in &params.capabilities {
        let sm = student
            .get(cap)
            .ok_or_else(|| Error::Domain(format!("missing student metrics for {cap}")))?;
        let em = experts
            .get(cap)
            .ok_or_else(|| Error::Domain(format!("missing expert metrics for {cap}")))?;
        let g = compute_gap(sm.wtt, em.wtt, params.epsilon)?;
        gaps.push(CapabilityGap {
            capability: *cap,
            w_vla: sm.wtt,
            w_rl: em.wtt,
            g,
        });
        gap_map.insert(*cap, g);
    }
    let proportions = if params.balanced {
        compute_proportions(&gap_map, params.alpha_smooth)?
    } else {
        let u = 1.0 / params.capabilities.len() as f64;
        params.capabilities.iter().map(|c| (*c, u)).collect()
    };
    Ok((
        gaps,
        MixPlan {
            proportions,
            alpha_smooth: params.alpha_smooth,
            step_budget: params.iteration_steps,
        },
    ))
}

/// Shared context for collection and iteration.
#[derive(Debug, Clone, Copy)]
pub struct DistillSetup<'a> {
    pub scene: &'a SceneParams,
    pub sim: &'a SimParams,
    pub sensing: &'a SensingParams,
    pub student_train: &'a StudentTrainParams,
    pub distill: &'a DistillParams,
}

impl DistillSetup<'_> {
    fn validate(&self) -> Result<()> {
        let mut bad = self.distill.validate();
        bad.extend(self.scene.validate());
        bad.extend(self.sim.validate());
        bad.extend(self.sensing.validate());
        bad.extend(self.student_train.validate());
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { keys: bad })
        }
    }
}

/// Episode-id namespaces: offline is phase 0, DAgger iteration i is phase i.
fn episode_id(phase: u64, capability: Capability, counter: u64) -> u64 {
    (phase << 48) | ((capability.code() as u64) << 40) | counter
}

struct CollectedEpisode {
    steps: Vec<LabeledStep>,
    meta: EpisodeMeta,
    reached: bool,
}

/// Roll one episode. `driver_of_action` chooses who moves the robot; the
/// expert always labels. Returns the labeled steps regardless of outcome —
/// the caller decides whether to filter.
#[allow(clippy::too_many_arguments)]
fn collect_episode(
    capability: Capability,
    expert: &ExpertPolicy,
    student: Option<&StudentPolicy>,
    setup: &DistillSetup,
    scene_seed: u64,
    ep_seed: u64,
    id: u64,
    timeout: f64,
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<CollectedEpisode> {
    let scene = generate_scene(capability, scene_seed, setup.scene)?;
    let cap_params = setup.scene.for_capability(capability);
    let ep_params = EpisodeParams {
        timeout,
        ..EpisodeParams::new(cap_params, timeout)
    };
    let spec = sample_episode(&scene, ep_seed, &ep_params)?;
    let mut driver = EpisodeDriver::new(spec, setup.sim, setup.sensing, ep_seed);
    let mut token = expert.zero_token();
    let mut steps: Vec<LabeledStep> = Vec::new();
    let mut step_index = 0u32;
    loop {
        let views = driver.capture();
        let eobs = driver.expert_obs(&views);
        let flat = expert.flat_obs(&eobs, &token);
        let (label, _, next_token) = expert.forward(&expert.store, &flat)?;
        token = next_token;

        let sobs = driver.student_obs()?;
        let (fine, coarse) = sobs.to_parts(setup.sensing);
        let executed = match student {
            Some(s) => s.act(&sobs, setup.sensing)?,
            None => Action([label[0], label[1], label[2]]),
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(StepTrace {
                executed: executed.0,
                label: [label[0], label[1], label[2]],
                expert_flat: flat,
            });
        }
        steps.push(LabeledStep {
            episode_id: id,
            step_index,
            capability,
            timestamp: driver.episode.elapsed,
            goal_rel: [sobs.goal_rel.x, sobs.goal_rel.y],
            expert_action: [label[0], label[1], label[2]],
            fine_rays: fine.iter().map(|&v| v as f32).collect(),
            coarse_history: coarse.iter().flatten().map(|&v| v as f32).collect(),
            terminal: false,
            reached: false,
            expert_obs_hash: eobs.digest(),
        });
        step_index += 1;

        let out = driver.apply(executed)?;
        if out.terminal() {
            let last = steps.last_mut().expect("at least one step");
            last.terminal = true;
            last.reached = out.reached;
            return Ok(CollectedEpisode {
                meta: EpisodeMeta {
                    capability,
                    fov: driver.rig.fov,
                    success: out.reached,
                    steps: step_index,
                    duration: out.elapsed,
                },
                steps,
                reached: out.reached,
            });
        }
    }
}

/// One logged DAgger step, for definitional checks: who moved, who labeled.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub executed: [f64; 3],
    pub label: [f64; 3],
    /// The expert's flat policy input (privileged observation + its token).
    pub expert_flat: Vec<f64>,
}

/// Success-filtered offline collection: experts drive their own scenes with
/// per-episode rig randomization; only episodes that reach the goal are
/// retained, until every capability holds its share of `offline_steps`.
pub fn collect_offline(
    experts: &BTreeMap<Capability, ExpertPolicy>,
    setup: &DistillSetup,
    seed: u64,
) -> Result<TrajectoryDataset> {
    setup.validate()?;
    let caps = &setup.distill.capabilities;
    for cap in caps {
        if !experts.contains_key(cap) {
            return Err(Error::Contract(format!("missing expert for {cap}")));
        }
    }
    let mut ds = TrajectoryDataset::new(setup.sensing);
    let share = setup.distill.offline_steps.div_ceil(caps.len());
    // SR probation: with fewer than this many attempts the rate is noise.
    const PROBATION: usize = 200;

    for cap in caps {
        let expert = &experts[cap];
        let timeout = setup.sim.timeout_for(*cap);
        let mut retained = 0usize;
        let mut attempts = 0u64;
        let mut successes = 0u64;
        let mut counter = 0u64;
        while retained < share {
            let scene_seed = rng::child_seed(seed, "offline-scene", ((cap.code() as u64) << 32) | counter);
            let ep_seed = rng::child_seed(seed, "offline-episode", ((cap.code() as u64) << 32) | counter);
            let id = episode_id(0, *cap, counter);
            counter += 1;
            let ep = collect_episode(
                *cap, expert, None, setup, scene_seed, ep_seed, id, timeout, None,
            )?;
            attempts += 1;
            if ep.reached {
                successes += 1;
                retained += ep.steps.len();
                ds.push_episode(id, ep.steps, ep.meta)?;
            }
            if attempts >= PROBATION as u64
                && (successes as f64 / attempts as f64) < setup.distill.min_expert_sr
            {
                return Err(Error::Collection(format!(
                    "{cap} expert success rate {:.1}% over {attempts} episodes is below {:.0}%",
                    100.0 * successes as f64 / attempts as f64,
                    100.0 * setup.distill.min_expert_sr
                )));
            }
        }
    }
    Ok(ds)
}

/// Online DAgger collection: the student drives, each expert labels every
/// state visited in its capability's scenes. No success filter. Per-capability
/// step counts overshoot `p·budget` by at most one episode.
pub fn dagger_collect(
    student: &StudentPolicy,
    experts: &BTreeMap<Capability, ExpertPolicy>,
    plan: &MixPlan,
    setup: &DistillSetup,
    seed: u64,
    phase: u64,
) -> Result<TrajectoryDataset> {
    dagger_collect_traced(student, experts, plan, setup, seed, phase, None)
}

/// As [`dagger_collect`], optionally logging per-step traces (diagnostics).
pub fn dagger_collect_traced(
    student: &StudentPolicy,
    experts: &BTreeMap<Capability, ExpertPolicy>,
    plan: &MixPlan,
    setup: &DistillSetup,
    seed: u64,
    phase: u64,
    mut traces: Option<&mut Vec<StepTrace>>,
) -> Result<TrajectoryDataset> {
    setup.validate()?;
    let mut ds = TrajectoryDataset::new(setup.sensing);
    for (cap, p) in &plan.proportions {
        let target = (p * plan.step_budget as f64).round() as usize;
        if target == 0 {
            continue;
        }
        let expert = experts
            .get(cap)
            .ok_or_else(|| Error::Contract(format!("missing expert for {cap}")))?;
        let timeout = setup.sim.timeout_for(*cap);
        let mut collected = 0usize;
        let mut counter = 0u64;
        while collected < target {
            let sel = ((cap.code() as u64) << 32) | counter;
            let scene_seed = rng::child_seed(seed, "dagger-scene", sel ^ (phase << 16));
            let ep_seed = rng::child_seed(seed, "dagger-episode", sel ^ (phase << 16));
            let id = episode_id(phase, *cap, counter);
            counter += 1;
            let ep = collect_episode(
                *cap,
                expert,
                Some(student),
                setup,
                scene_seed,
                ep_seed,
                id,
                timeout,
                traces.as_deref_mut(),
            )?;
            collected += ep.steps.len();
            ds.push_episode(id, ep.steps, ep.meta)?;
        }
    }
    Ok(ds)
}

/// One row of `iterations.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Student metrics the gaps were computed from (pre-collection).
    pub student: BTreeMap<Capability, Metrics>,
    /// Student metrics after this iteration's fine-tune.
    pub student_after: BTreeMap<Capability, Metrics>,
    pub experts: BTreeMap<Capability, Metrics>,
    pub gaps: BTreeMap<Capability, f64>,
    pub proportions: BTreeMap<Capability, f64>,
    /// Cumulative collected steps per capability (offline + all slices).
    pub dataset_sizes: BTreeMap<Capability, usize>,
    pub new_steps: usize,
    pub total_steps: usize,
    pub converged: bool,
}

/// Evaluate the student on every configured capability scene.
pub fn evaluate_student(
    student: &StudentPolicy,
    suite: &BenchmarkSuite,
    setup: &DistillSetup,
    run_seed: u64,
) -> Result<BTreeMap<Capability, Metrics>> {
    let res = run_benchmark(
        &BenchPolicy::Student(student),
        suite,
        run_seed,
        setup.sim,
        setup.sensing,
        false,
    )?;
    Ok(res.into_iter().map(|(c, r)| (c, r.metrics)).collect())
}

/// Evaluate each expert on its own capability's scene.
pub fn evaluate_experts(
    experts: &BTreeMap<Capability, ExpertPolicy>,
    suite: &BenchmarkSuite,
    setup: &DistillSetup,
    run_seed: u64,
) -> Result<BTreeMap<Capability, Metrics>> {
    let mut out = BTreeMap::new();
    for ss in &suite.scenes {
        let expert = experts
            .get(&ss.capability)
            .ok_or_else(|| Error::Contract(format!("missing expert for {}", ss.capability)))?;
        let sub = BenchmarkSuite {
            version: suite.version,
            suite_seed: suite.suite_seed,
            scenes: vec![ss.clone()],
        };
        let res = run_benchmark(
            &BenchPolicy::Expert(expert),
            &sub,
            run_seed,
            setup.sim,
            setup.sensing,
            false,
        )?;
        let (c, r) = res.into_iter().next().expect("one scene");
        out.insert(c, r.metrics);
    }
    Ok(out)
}

fn eval_suite(setup: &DistillSetup) -> Result<BenchmarkSuite> {
    BenchmarkSuite::generate(
        setup.distill.eval_seed,
        &setup.distill.capabilities,
        setup.scene,
        setup.sim,
        setup.distill.eval_episodes,
    )
}

/// The capability-balanced online training loop.
///
/// Each iteration: evaluate → gaps → proportions → DAgger collect → fine-tune
/// on the new slice plus a replay sample of everything older (the offline
/// dataset is slice zero). Stops after `max_iterations`, or earlier once the
/// best per-capability SR improvement stays under `min_delta` for two
/// consecutive iterations.
pub fn iterate(
    student: &mut StudentPolicy,
    experts: &BTreeMap<Capability, ExpertPolicy>,
    offline: &TrajectoryDataset,
    setup: &DistillSetup,
    seed: u64,
) -> Result<Vec<IterationReport>> {
    setup.validate()?;
    let suite = eval_suite(setup)?;
    let expert_metrics = evaluate_experts(experts, &suite, setup, setup.distill.eval_seed)?;
    for (cap, m) in &expert_metrics {
        if !m.wtt.is_finite() {
            return Err(Error::Collection(format!(
                "{cap} expert has no successful evaluation episodes; cannot anchor gaps"
            )));
        }
    }

    let mut slices: Vec<TrajectoryDataset> = vec![offline.clone()];
    let mut prev_eval = evaluate_student(student, &suite, setup, setup.distill.eval_seed)?;
    let mut prev_stall = false;
    let mut reports = Vec::new();
    let mut replay_rng = rng::stream(seed, "replay", 0);
    let mut ft_rng = rng::stream(seed, "finetune", 0);

    for it in 1..=setup.distill.max_iterations {
        let (gaps, plan) = plan_mix(&prev_eval, &expert_metrics, setup.distill)?;
        let slice = dagger_collect(student, experts, &plan, setup, seed, it as u64)?;
        let new_steps = slice.len();

        // Fine-tune mix: the whole new slice plus replay from older slices
        // sized so replayed samples are `replay_fraction` of the mix.
        let old_pool: Vec<&LabeledStep> = slices.iter().flat_map(|s| s.steps.iter()).collect();
        let replay_count = if setup.distill.replay_fraction > 0.0 && !old_pool.is_empty() {
            let f = setup.distill.replay_fraction;
            ((new_steps as f64 * f / (1.0 - f)).round() as usize).min(old_pool.len())
        } else {
            0
        };
        let mut train_refs: Vec<&LabeledStep> = slice.steps.iter().collect();
        for _ in 0..replay_count {
            train_refs.push(old_pool[replay_rng.gen_range(0..old_pool.len())]);
        }
        finetune(
            student,
            &train_refs,
            setup.student_train.finetune_epochs,
            setup.student_train,
            &mut ft_rng,
        )?;

        let eval_now = evaluate_student(student, &suite, setup, setup.distill.eval_seed)?;
        let improvement = setup
            .distill
            .capabilities
            .iter()
            .map(|c| eval_now[c].sr - prev_eval[c].sr)
            .fold(f64::NEG_INFINITY, f64::max);
        let stall = improvement < setup.distill.min_delta;
        let converged = stall && prev_stall;

        slices.push(slice);
        let mut dataset_sizes: BTreeMap<Capability, usize> = BTreeMap::new();
        for s in &slices {
            for (c, n) in s.counts_by_capability() {
                *dataset_sizes.entry(c).or_insert(0) += n;
            }
        }
        let total_steps = slices.iter().map(|s| s.len()).sum();
        reports.push(IterationReport {
            iteration: it,
            student: prev_eval.clone(),
            student_after: eval_now.clone(),
            experts: expert_metrics.clone(),
            gaps: gaps.iter().map(|g| (g.capability, g.g)).collect(),
            proportions: plan.proportions.clone(),
            dataset_sizes,
            new_steps,
            total_steps,
            converged,
        });

        prev_eval = eval_now;
        prev_stall = stall;
        if converged {
            break;
        }
    }
    Ok(reports)
}

/// Append reports as JSON lines.
pub fn reports_to_jsonl(reports: &[IterationReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_formula_cases() {
        assert!((compute_gap(60.0, 40.0, 0.1).unwrap() - 0.6).abs() < 1e-12);
        assert!((compute_gap(30.0, 40.0, 0.1).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(compute_gap(f64::INFINITY, 40.0, 0.1).unwrap(), GAP_MAX + 0.1);
        assert!(compute_gap(60.0, 0.0, 0.1).is_err());
        assert!(compute_gap(60.0, -1.0, 0.1).is_err());
        assert!(compute_gap(60.0, f64::INFINITY, 0.1).is_err());
    }

    fn gaps_of(v: &[(Capability, f64)]) -> BTreeMap<Capability, f64> {
        v.iter().copied().collect()
    }

    #[test]
    fn equal_gaps_give_uniform_proportions() {
        for g in [0.1, 0.5, 3.0] {
            let gaps = gaps_of(&[
                (Capability::Reaching, g),
                (Capability::Squeezing, g),
                (Capability::Avoiding, g),
            ]);
            let p = compute_proportions(&gaps, 0.3).unwrap();
            for v in p.values() {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn skewed_gaps_match_scalar_oracle() {
        // 0.6^0.3 / (0.6^0.3 + 2·0.1^0.3), recomputed directly.
        let gaps = gaps_of(&[
            (Capability::Reaching, 0.6),
            (Capability::Squeezing, 0.1),
            (Capability::Avoiding, 0.1),
        ]);
        let p = compute_proportions(&gaps, 0.3).unwrap();
        let a = 0.6f64.powf(0.3);
        let b = 0.1f64.powf(0.3);
        let expect_hi = a / (a + 2.0 * b);
        let expect_lo = b / (a + 2.0 * b);
        assert!((p[&Capability::Reaching] - expect_hi).abs() < 1e-12);
        assert!((p[&Capability::Squeezing] - expect_lo).abs() < 1e-12);
        assert!((p[&Capability::Reaching] - 0.4612).abs() < 1e-4);
        assert!((p[&Capability::Squeezing] - 0.2694).abs() < 1e-4);
        let sum: f64 = p.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn proportions_scale_invariant() {
        let base = gaps_of(&[
            (Capability::Reaching, 0.7),
            (Capability::Squeezing, 0.2),
            (Capability::Avoiding, 0.35),
        ]);
        let p1 = compute_proportions(&base, 0.3).unwrap();
        let scaled: BTreeMap<_, _> = base.iter().map(|(c, g)| (*c, g * 17.3)).collect();
        let p2 = compute_proportions(&scaled, 0.3).unwrap();
        for c in base.keys() {
            assert!((p1[c] - p2[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn proportion_monotonicity() {
        let base = gaps_of(&[
            (Capability::Reaching, 0.4),
            (Capability::Squeezing, 0.3),
            (Capability::Avoiding, 0.2),
        ]);
        let p1 = compute_proportions(&base, 0.3).unwrap();
        let mut bumped = base.clone();
        bumped.insert(Capability::Squeezing, 0.5);
        let p2 = compute_proportions(&bumped, 0.3).unwrap();
        assert!(p2[&Capability::Squeezing] > p1[&Capability::Squeezing]);
        assert!(p2[&Capability::Reaching] < p1[&Capability::Reaching]);
        assert!(p2[&Capability::Avoiding] < p1[&Capability::Avoiding]);
    }

    #[test]
    fn capability_keyed_maps_serialize_as_json_objects() {
        let gaps = gaps_of(&[(Capability::Reaching, 0.6), (Capability::Avoiding, 0.1)]);
        let s = serde_json::to_string(&gaps).unwrap();
        assert!(s.contains("\"reaching\":0.6"), "{s}");
        let back: BTreeMap<Capability, f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, gaps);
    }

    #[test]
    fn smoothing_pulls_toward_uniform() {
        // With α = 0.3 the ratio p_a/p_b is closer to 1 than with α = 1.
        let gaps = gaps_of(&[(Capability::Reaching, 0.8), (Capability::Squeezing, 0.2)]);
        let smooth = compute_proportions(&gaps, 0.3).unwrap();
        let raw = compute_proportions(&gaps, 1.0).unwrap();
        let r_smooth = smooth[&Capability::Reaching] / smooth[&Capability::Squeezing];
        let r_raw = raw[&Capability::Reaching] / raw[&Capability::Squeezing];
        assert!(r_smooth < r_raw);
        assert!(r_smooth > 1.0);
    }
}
