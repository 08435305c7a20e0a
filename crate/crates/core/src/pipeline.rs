//! Demo validation, goal-sequence execution, ablation, and batch evaluation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{env_violation, is_freestanding, penetration_violation, RUNTIME_TOL};
use crate::geometry::{compose, relative_transform, Pose};
use crate::primitives::{policy_for, required_contact, PrimitiveKind};
use crate::retarget::{
    ablated_switch_goals, build_switch_goals, retarget_q, Demo, GoalRegion, GoalSequence, RetargetError,
};
use crate::scene::{ObjectModel, Scene};
use crate::sim::{move_robot_to, rollout, Outcome, SimEvent, SimState, Trajectory};
use crate::solver::SolverConfig;

/// Tolerance of the demo switch checks.
pub const DEMO_TOL: f64 = 0.005;
pub const DEFAULT_MAX_STEPS: usize = 2000;
/// Default lift for a grasp-terminated task.
pub const DEFAULT_LIFT: f64 = 0.10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
}

impl PipelineError {
    /// Whether the error means no goal sequence exists for this task.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, PipelineError::Precondition(_) | PipelineError::Retarget(RetargetError::Infeasible { .. }) | PipelineError::Retarget(RetargetError::Contact(_)))
    }
}

/// Terminal goal of a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FinalGoal {
    Region { region: GoalRegion },
    /// Hold the object `height` above the last switch goal.
    LiftAfterGrasp { height: f64 },
    /// Ball around the demo's last relative transform applied to the last
    /// switch goal; ending with a grasp also requires the object held.
    Remapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(default)]
    pub name: String,
    pub scene: Scene,
    pub object: ObjectModel,
    pub x0: Pose,
    pub demo: Demo,
    pub final_goal: FinalGoal,
}

impl TaskSpec {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let t: TaskSpec = serde_json::from_str(text).map_err(|e| PipelineError::InvalidTask(e.to_string()))?;
        t.demo.check_schema()?;
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub max_steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Retargeted,
    Ablated,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Retargeted => "retargeted",
            Variant::Ablated => "ablated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveReport {
    pub kind: PrimitiveKind,
    pub outcome: Outcome,
    pub steps: usize,
    pub rollout_ms: f64,
}

/// Contact-switch membership of the state handed from one primitive to the
/// next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchCheck {
    pub index: usize,
    pub freestanding: bool,
    pub sigma_prev: bool,
    pub sigma_next: bool,
}

impl SwitchCheck {
    pub fn passed(&self) -> bool {
        self.freestanding && self.sigma_prev && self.sigma_next
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub variant: Variant,
    pub scene: Scene,
    pub object: ObjectModel,
    pub labels: Vec<PrimitiveKind>,
    pub goal_sequence: GoalSequence,
    pub primitives: Vec<PrimitiveReport>,
    pub switch_checks: Vec<SwitchCheck>,
    pub success: bool,
    pub failure_reason: Option<String>,
    pub solve_ms: f64,
    pub total_steps: usize,
    pub final_pose: Pose,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub segments: Vec<Trajectory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchValidation {
    pub index: usize,
    pub keyframe: usize,
    pub freestanding: bool,
    /// Worst residual over the union of both primitives' contacts; zero when met.
    pub residual: f64,
    pub violated: Option<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoValidation {
    pub switches: Vec<SwitchValidation>,
    pub passed: bool,
}

/// Check every demo switch pose is freestanding and meets both adjacent
/// primitives' environment contacts in the demo scene.
pub fn validate_demo(demo: &Demo) -> Result<DemoValidation, RetargetError> {
    demo.check_schema()?;
    let mut switches = Vec::new();
    for (i, &k) in demo.switch_indices.iter().enumerate() {
        let x = demo.keyframes[k].pose;
        let env = crate::contact::env_intersection(&required_contact(demo.labels[i]), &required_contact(demo.labels[i + 1]));
        let v = env_violation(&x, &env, &demo.scene, &demo.object, DEMO_TOL);
        let freestanding = is_freestanding(&x, &demo.object, &demo.scene, DEMO_TOL);
        let passed = v.is_none() && freestanding;
        switches.push(SwitchValidation {
            index: i + 1,
            keyframe: k,
            freestanding,
            residual: v.as_ref().map(|(_, r)| r.abs()).unwrap_or(0.0),
            violated: v.map(|(c, _)| c.to_string()),
            passed,
        });
    }
    let passed = switches.iter().all(|s| s.passed);
    Ok(DemoValidation { switches, passed })
}

fn resolve_final(final_goal: &FinalGoal, demo: &Demo, switch_goals: &[GoalRegion], x0: &Pose) -> GoalRegion {
    match final_goal {
        FinalGoal::Remapped => {
            let a = demo.anchors();
            let n = a.len();
            let base = switch_goals.last().map(|g| g.center).unwrap_or(*x0);
            GoalRegion {
                require_attached: demo.labels.last() == Some(&PrimitiveKind::Grasp),
                ..GoalRegion::ball(compose(&relative_transform(&a[n - 2], &a[n - 1]), &base))
            }
        }
        FinalGoal::Region { region } => region.clone(),
        FinalGoal::LiftAfterGrasp { height } => {
            let base = switch_goals.last().map(|g| g.center).unwrap_or(*x0);
            let mut center = base;
            center.position.z += height;
            GoalRegion {
                require_attached: true,
                ..GoalRegion::ball(center)
            }
        }
    }
}

/// Schema, scene and start-state checks shared by every entry point.
pub fn check_task(task: &TaskSpec) -> Result<(), PipelineError> {
    task.demo.check_schema()?;
    task.scene
        .validate()
        .map_err(|e| PipelineError::InvalidTask(e.to_string()))?;
    if !is_freestanding(&task.x0, &task.object, &task.scene, RUNTIME_TOL) {
        return Err(PipelineError::Precondition("x0 is not freestanding in the test scene".into()));
    }
    Ok(())
}

/// Switch goals followed by the task's resolved final goal.
pub fn goal_sequence(task: &TaskSpec, switch_goals: Vec<GoalRegion>) -> GoalSequence {
    let last = resolve_final(&task.final_goal, &task.demo, &switch_goals, &task.x0);
    let mut goals = switch_goals;
    goals.push(last);
    GoalSequence { goals }
}

/// Build the retargeted goal sequence and execute every primitive against it.
pub fn compose_policy(task: &TaskSpec, cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    check_task(task)?;
    let t0 = Instant::now();
    let switch_goals = build_switch_goals(&task.demo, &task.scene, &task.object, &task.x0, &cfg.solver)?;
    let solve_ms = t0.elapsed().as_secs_f64() * 1e3;
    Ok(execute(task, switch_goals, Variant::Retargeted, solve_ms, cfg))
}

/// As [`compose_policy`] with the remapped guesses used directly as goals.
pub fn compose_policy_ablated(task: &TaskSpec, cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    check_task(task)?;
    let switch_goals = ablated_switch_goals(&task.demo, &task.x0);
    Ok(execute(task, switch_goals, Variant::Ablated, 0.0, cfg))
}

pub fn run_variant(task: &TaskSpec, variant: Variant, cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    match variant {
        Variant::Retargeted => compose_policy(task, cfg),
        Variant::Ablated => compose_policy_ablated(task, cfg),
    }
}

fn execute(task: &TaskSpec, switch_goals: Vec<GoalRegion>, variant: Variant, solve_ms: f64, cfg: &PipelineConfig) -> RunOutput {
    let scene = &task.scene;
    let obj = &task.object;
    let labels = &task.demo.labels;
    let final_goal = resolve_final(&task.final_goal, &task.demo, &switch_goals, &task.x0);
    let mut goals = switch_goals;
    goals.push(final_goal);
    let mut state = SimState::parked(task.x0, scene, obj);
    let mut primitives = Vec::new();
    let mut segments = Vec::new();
    let mut switch_checks = Vec::new();
    let mut failure = None;
    let mut solve_ms = solve_ms;
    for (i, &kind) in labels.iter().enumerate() {
        let sigma = required_contact(kind);
        let goal = &goals[i];
        if i > 0 {
            let prev = required_contact(labels[i - 1]);
            let x = &state.object_pose;
            let check = SwitchCheck {
                index: i,
                freestanding: is_freestanding(x, obj, scene, RUNTIME_TOL),
                sigma_prev: env_violation(x, &prev.env, scene, obj, RUNTIME_TOL).is_none(),
                sigma_next: env_violation(x, &sigma.env, scene, obj, RUNTIME_TOL).is_none(),
            };
            switch_checks.push(check);
        }
        let goal_violation = penetration_violation(&goal.center, scene, obj, RUNTIME_TOL)
            .or_else(|| env_violation(&goal.center, &goal.require_env, scene, obj, RUNTIME_TOL));
        if let Some((c, _)) = goal_violation {
            failure = Some(format!("precondition: {c}"));
            break;
        }
        if let Some((c, _)) = env_violation(&state.object_pose, &sigma.env, scene, obj, RUNTIME_TOL) {
            failure = Some(format!("precondition: {c}"));
            break;
        }
        if i > 0 && !is_freestanding(&state.object_pose, obj, scene, RUNTIME_TOL) {
            failure = Some("precondition: freestanding".into());
            break;
        }
        let t = Instant::now();
        let q = match retarget_q(&state.object_pose, kind, scene, obj, &cfg.solver) {
            Ok(q) => q,
            Err(e) => {
                failure = Some(format!("robot contact: {e}"));
                break;
            }
        };
        solve_ms += t.elapsed().as_secs_f64() * 1e3;
        state = match move_robot_to(&state, &q, scene, obj) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let t = Instant::now();
        let mut policy = policy_for(kind);
        let traj = rollout(policy.as_mut(), state.clone(), goal, scene, obj, cfg.max_steps);
        let rollout_ms = t.elapsed().as_secs_f64() * 1e3;
        primitives.push(PrimitiveReport {
            kind,
            outcome: traj.outcome.clone(),
            steps: traj.actions.len(),
            rollout_ms,
        });
        state = traj.last_state().clone();
        let outcome = traj.outcome.clone();
        segments.push(traj);
        match outcome {
            Outcome::ReachedGoal => {}
            Outcome::Timeout => {
                failure = Some(format!("{kind}: timeout"));
                break;
            }
            Outcome::Failure(r) => {
                failure = Some(format!("{kind}: {r}"));
                break;
            }
        }
    }
    let last_goal = goals.last().expect("at least one goal");
    let success = failure.is_none()
        && primitives.len() == labels.len()
        && last_goal.contains(&state, scene, obj);
    if failure.is_none() && !success {
        failure = Some("final goal not reached".into());
    }
    RunOutput {
        report: RunReport {
            task: task.name.clone(),
            variant,
            scene: scene.clone(),
            object: obj.clone(),
            labels: labels.clone(),
            goal_sequence: GoalSequence { goals },
            primitives,
            switch_checks,
            success,
            failure_reason: failure,
            solve_ms,
            total_steps: segments.iter().map(|s| s.actions.len()).sum(),
            final_pose: state.object_pose,
        },
        segments,
    }
}

/// One line of a trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TrajectoryRecord {
    Header {
        task: String,
        scene: Scene,
        object: ObjectModel,
        labels: Vec<PrimitiveKind>,
        goals: Vec<GoalRegion>,
    },
    State {
        segment: usize,
        step: usize,
        state: SimState,
    },
    Event {
        segment: usize,
        step: usize,
        event: SimEvent,
    },
}

impl RunOutput {
    pub fn records(&self) -> Vec<TrajectoryRecord> {
        let r = &self.report;
        let mut out = vec![TrajectoryRecord::Header {
            task: r.task.clone(),
            scene: r.scene.clone(),
            object: r.object.clone(),
            labels: r.labels.clone(),
            goals: r.goal_sequence.goals.clone(),
        }];
        for (segment, traj) in self.segments.iter().enumerate() {
            for (step, state) in traj.states.iter().enumerate() {
                out.push(TrajectoryRecord::State {
                    segment,
                    step,
                    state: state.clone(),
                });
            }
            for (step, event) in &traj.events {
                out.push(TrajectoryRecord::Event {
                    segment,
                    step: *step,
                    event: event.clone(),
                });
            }
        }
        out
    }
}

/// Recompute task success from trajectory records alone: every primitive ran
/// and each segment ended inside its goal.
pub fn audit(records: &[TrajectoryRecord]) -> Result<bool, String> {
    let Some(TrajectoryRecord::Header {
        scene,
        object,
        labels,
        goals,
        ..
    }) = records.first()
    else {
        return Err("trajectory has no header".into());
    };
    if goals.len() != labels.len() {
        return Err("goal count does not match primitive count".into());
    }
    let mut last: Vec<Option<&SimState>> = vec![None; labels.len()];
    for r in &records[1..] {
        if let TrajectoryRecord::State { segment, state, .. } = r {
            let slot = last.get_mut(*segment).ok_or("segment index out of range")?;
            *slot = Some(state);
        }
    }
    Ok(last
        .iter()
        .zip(goals)
        .all(|(s, g)| s.is_some_and(|s| g.contains(s, scene, object))))
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: String,
    pub variant: Variant,
    pub object: String,
    pub seed: u64,
    pub success: bool,
    pub failure_reason: String,
    pub solve_ms: f64,
    pub steps: usize,
}

/// A single trial of the batch.
#[derive(Clone, Debug)]
pub struct Trial {
    pub task: TaskSpec,
    pub template: String,
    pub object: String,
    pub seed: u64,
}

/// Run every trial under every variant. Rows come back in trial order, then
/// variant order.
pub fn evaluate(batch: &[Trial], variants: &[Variant], cfg: &PipelineConfig) -> Vec<EvalRow> {
    let jobs: Vec<(&Trial, Variant)> = batch
        .iter()
        .flat_map(|t| variants.iter().map(move |&v| (t, v)))
        .collect();
    jobs.par_iter()
        .map(|(trial, variant)| {
            let (success, failure_reason, solve_ms, steps) = match run_variant(&trial.task, *variant, cfg) {
                Ok(out) => (
                    out.report.success,
                    out.report.failure_reason.unwrap_or_default(),
                    out.report.solve_ms,
                    out.report.total_steps,
                ),
                Err(e) => (false, e.to_string(), 0.0, 0),
            };
            EvalRow {
                task: trial.template.clone(),
                variant: *variant,
                object: trial.object.clone(),
                seed: trial.seed,
                success,
                failure_reason,
                solve_ms,
                steps,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryLine {
    pub task: String,
    pub variant: Variant,
    pub successes: usize,
    pub trials: usize,
    pub mean_solve_ms: f64,
}

impl SummaryLine {
    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

/// Per task and variant success counts, in first-appearance order.
pub fn summarize(rows: &[EvalRow]) -> Vec<SummaryLine> {
    let mut out: Vec<SummaryLine> = Vec::new();
    for r in rows {
        let line = match out.iter_mut().find(|l| l.task == r.task && l.variant == r.variant) {
            Some(l) => l,
            None => {
                out.push(SummaryLine {
                    task: r.task.clone(),
                    variant: r.variant,
                    successes: 0,
                    trials: 0,
                    mean_solve_ms: 0.0,
                });
                out.last_mut().expect("just pushed")
            }
        };
        line.trials += 1;
        line.successes += r.success as usize;
        line.mean_solve_ms += (r.solve_ms - line.mean_solve_ms) / line.trials as f64;
    }
    out
}
