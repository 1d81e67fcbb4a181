//! Keyframe policy: register observed clouds against every stored
//! combined cloud for a key, keep the best-scoring pair, and turn its two
//! registration poses into an action.
//!
//! For a pair `(T_a, T_b)` mapping the observed clouds into a stored
//! combined cloud, the pick action is `T_b^-1 T_a` (gripper pose relative
//! to the observed object) and the place action is `T_a^-1 T_b` (motion
//! of the object that recreates the stored arrangement with the
//! placement held fixed).

use serde::{Deserialize, Serialize};

use crate::demo_store::{DemoStore, Stage};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::par;
use crate::registration::{prepare, register_prepared, PreparedCloud, RegistrationParams};

/// Registration of both observed clouds against one stored combined cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRegistration {
    pub t_a_hat: RigidTransform,
    pub t_b_hat: RigidTransform,
    pub s_a: f64,
    pub s_b: f64,
    pub demo_index: usize,
}

impl PairRegistration {
    pub fn average_fitness(&self) -> f64 {
        0.5 * (self.s_a + self.s_b)
    }
}

/// How a stage's pair becomes an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// `a` is the gripper, `b` the object to grasp.
    Pick,
    /// `a` is the placement, `b` the object being arranged.
    Place,
}

impl Role {
    pub fn of(stage: Stage) -> Role {
        match stage {
            Stage::Pick => Role::Pick,
            Stage::Preplace | Stage::Place => Role::Place,
        }
    }
}

pub fn pick_action(pr: &PairRegistration) -> RigidTransform {
    pr.t_b_hat.inverse().compose(&pr.t_a_hat)
}

pub fn place_action(pr: &PairRegistration) -> RigidTransform {
    pr.t_a_hat.inverse().compose(&pr.t_b_hat)
}

pub fn action_for(role: Role, pr: &PairRegistration) -> RigidTransform {
    match role {
        Role::Pick => pick_action(pr),
        Role::Place => place_action(pr),
    }
}

/// Highest average fitness; ties go to the lower `demo_index`.
pub fn select_best(candidates: &[PairRegistration]) -> Result<PairRegistration> {
    candidates
        .iter()
        .copied()
        .reduce(|best, c| {
            let (a, b) = (c.average_fitness(), best.average_fitness());
            if a > b || (a == b && c.demo_index < best.demo_index) {
                c
            } else {
                best
            }
        })
        .ok_or(Error::NoCandidates)
}

fn pair_prepared(
    a: &PreparedCloud,
    b: &PreparedCloud,
    combined: &PreparedCloud,
    params: &RegistrationParams,
    demo_index: usize,
) -> Result<PairRegistration> {
    let ra = register_prepared(a, combined, params)?.best;
    let rb = register_prepared(b, combined, params)?.best;
    Ok(PairRegistration {
        t_a_hat: ra.transform,
        t_b_hat: rb.transform,
        s_a: ra.fitness,
        s_b: rb.fitness,
        demo_index,
    })
}

/// Registers both observed clouds into the combined cloud `p_ab`.
pub fn infer_pair(
    p_a_hat: &PointCloud,
    p_b_hat: &PointCloud,
    p_ab: &PointCloud,
    params: &RegistrationParams,
) -> Result<PairRegistration> {
    let a = prepare(p_a_hat, params)?;
    let b = prepare(p_b_hat, params)?;
    let ab = prepare(p_ab, params)?;
    pair_prepared(&a, &b, &ab, params, 0)
}

/// Outcome of one stage: its action and the pair that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAction {
    pub key: String,
    pub role: Role,
    pub action: RigidTransform,
    pub evidence: PairRegistration,
}

impl StageAction {
    pub fn average_fitness(&self) -> f64 {
        self.evidence.average_fitness()
    }
}

fn infer_stage_prepared(
    store: &DemoStore,
    key: &str,
    role: Role,
    a: &PreparedCloud,
    b: &PreparedCloud,
    params: &RegistrationParams,
) -> Result<StageAction> {
    let demos = store.lookup(key);
    if demos.is_empty() {
        return Err(Error::UnknownKey(key.to_string()));
    }
    let candidates = par::map_range(demos.len(), |i| {
        let combined = prepare(&demos[i], params)?;
        pair_prepared(a, b, &combined, params, i)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let best = select_best(&candidates)?;
    Ok(StageAction { key: key.to_string(), role, action: action_for(role, &best), evidence: best })
}

/// Runs one stage against every demo stored under `key`, without any
/// confidence filtering.
pub fn infer_stage(
    store: &DemoStore,
    key: &str,
    role: Role,
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    params: &RegistrationParams,
) -> Result<StageAction> {
    params.validate()?;
    if !store.contains(key) {
        return Err(Error::UnknownKey(key.to_string()));
    }
    let a = prepare(cloud_a, params)?;
    let b = prepare(cloud_b, params)?;
    infer_stage_prepared(store, key, role, &a, &b, params)
}

/// One step of a keyframe sequence: the stored key, how to read its pair,
/// and the clouds observed for it.
#[derive(Debug, Clone)]
pub struct SequenceStage<'a> {
    pub key: String,
    pub role: Role,
    pub cloud_a: &'a PointCloud,
    pub cloud_b: &'a PointCloud,
}

/// The stage that fell below the fitness threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub stage_index: usize,
    pub stage: StageAction,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceOutcome {
    /// Accepted stages in order.
    pub actions: Vec<StageAction>,
    pub rejection: Option<Rejection>,
}

impl SequenceOutcome {
    pub fn accepted(&self) -> bool {
        self.rejection.is_none()
    }

    pub fn into_result(self) -> Result<Vec<StageAction>> {
        match self.rejection {
            None => Ok(self.actions),
            Some(r) => Err(Error::LowConfidence {
                key: r.stage.key.clone(),
                s_a: r.stage.evidence.s_a,
                s_b: r.stage.evidence.s_b,
                average: r.stage.average_fitness(),
                threshold: r.threshold,
            }),
        }
    }
}

fn check_keys<'k>(store: &DemoStore, keys: impl IntoIterator<Item = &'k str>) -> Result<()> {
    for key in keys {
        if !store.contains(key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
    }
    Ok(())
}

fn run_sequence(
    store: &DemoStore,
    stages: &[(String, Role, &PreparedCloud, &PreparedCloud)],
    params: &RegistrationParams,
    fitness_threshold: f64,
) -> Result<SequenceOutcome> {
    let mut actions = Vec::with_capacity(stages.len());
    for (i, (key, role, a, b)) in stages.iter().enumerate() {
        let stage = infer_stage_prepared(store, key, *role, a, b, params)?;
        if stage.average_fitness() < fitness_threshold {
            return Ok(SequenceOutcome {
                actions,
                rejection: Some(Rejection { stage_index: i, stage, threshold: fitness_threshold }),
            });
        }
        actions.push(stage);
    }
    Ok(SequenceOutcome { actions, rejection: None })
}

/// Infers the stages in order, stopping at the first whose selected pair
/// averages below `fitness_threshold`.
pub fn infer_sequence(
    store: &DemoStore,
    stages: &[SequenceStage<'_>],
    params: &RegistrationParams,
    fitness_threshold: f64,
) -> Result<SequenceOutcome> {
    params.validate()?;
    check_keys(store, stages.iter().map(|s| s.key.as_str()))?;
    let prepared = stages
        .iter()
        .map(|s| Ok((prepare(s.cloud_a, params)?, prepare(s.cloud_b, params)?)))
        .collect::<Result<Vec<_>>>()?;
    let plan: Vec<_> = stages
        .iter()
        .zip(&prepared)
        .map(|(s, (a, b))| (s.key.clone(), s.role, a, b))
        .collect();
    run_sequence(store, &plan, params, fitness_threshold)
}

/// The three actions of one pick-and-place step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeAction {
    pub pick: RigidTransform,
    pub preplace: RigidTransform,
    pub place: RigidTransform,
    pub evidence: [PairRegistration; 3],
}

impl KeyframeAction {
    fn from_stages(stages: &[StageAction]) -> Self {
        KeyframeAction {
            pick: stages[0].action,
            preplace: stages[1].action,
            place: stages[2].action,
            evidence: [stages[0].evidence, stages[1].evidence, stages[2].evidence],
        }
    }
}

/// Pick, preplace and place inference for `task`, reported stage by stage.
/// The gripper defaults to the canonical synthetic gripper cloud.
pub fn infer_keyframe_outcome(
    store: &DemoStore,
    task: &str,
    observed_gripper: Option<&PointCloud>,
    observed_object: &PointCloud,
    observed_placement: &PointCloud,
    params: &RegistrationParams,
    fitness_threshold: f64,
) -> Result<SequenceOutcome> {
    params.validate()?;
    let keys = Stage::ALL.map(|s| s.key(task));
    check_keys(store, keys.iter().map(String::as_str))?;
    let default_gripper;
    let gripper = match observed_gripper {
        Some(g) => g,
        None => {
            default_gripper = crate::synth::make_gripper_cloud();
            &default_gripper
        }
    };
    let gripper = prepare(gripper, params)?;
    let object = prepare(observed_object, params)?;
    let placement = prepare(observed_placement, params)?;
    let plan: Vec<_> = Stage::ALL
        .iter()
        .zip(keys)
        .map(|(stage, key)| {
            let a = if *stage == Stage::Pick { &gripper } else { &placement };
            (key, Role::of(*stage), a, &object)
        })
        .collect();
    run_sequence(store, &plan, params, fitness_threshold)
}

/// Like [`infer_keyframe_outcome`], with a low-confidence stage turned
/// into [`Error::LowConfidence`].
pub fn infer_keyframe(
    store: &DemoStore,
    task: &str,
    observed_gripper: Option<&PointCloud>,
    observed_object: &PointCloud,
    observed_placement: &PointCloud,
    params: &RegistrationParams,
    fitness_threshold: f64,
) -> Result<KeyframeAction> {
    let stages = infer_keyframe_outcome(
        store,
        task,
        observed_gripper,
        observed_object,
        observed_placement,
        params,
        fitness_threshold,
    )?
    .into_result()?;
    Ok(KeyframeAction::from_stages(&stages))
}

/// Machine-readable action output: one record per inferred stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub task: String,
    pub accepted: bool,
    pub fitness_threshold: f64,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub role: Role,
    /// Row-major homogeneous 4x4 action.
    pub transform: RigidTransform,
    pub s_a: f64,
    pub s_b: f64,
    pub demo_index: usize,
    pub accepted: bool,
}

impl ActionRecord {
    pub fn from_outcome(task: &str, outcome: &SequenceOutcome, fitness_threshold: f64) -> Self {
        let record = |s: &StageAction, accepted| StageRecord {
            key: s.key.clone(),
            role: s.role,
            transform: s.action,
            s_a: s.evidence.s_a,
            s_b: s.evidence.s_b,
            demo_index: s.evidence.demo_index,
            accepted,
        };
        let mut stages: Vec<_> = outcome.actions.iter().map(|s| record(s, true)).collect();
        if let Some(r) = &outcome.rejection {
            stages.push(record(&r.stage, false));
        }
        ActionRecord { task: task.to_string(), accepted: outcome.accepted(), fitness_threshold, stages }
    }
}
