//! Latency model, finish-time recurrences and the episodic offloading
//! environment built on them. All times are milliseconds.

use serde::{Deserialize, Serialize};

use crate::dag::{DagApp, RankedDag, TaskProfile};
use crate::error::{Error, Result};

/// Device, host and channel capacities (cycles/s and bits/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystemParams", into = "RawSystemParams")]
pub struct SystemParams {
    f_ue: f64,
    f_host: f64,
    user_count: u32,
    r_ul: f64,
    r_dl: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSystemParams {
    f_ue: f64,
    f_host: f64,
    user_count: u32,
    r_ul: f64,
    r_dl: f64,
}

impl TryFrom<RawSystemParams> for SystemParams {
    type Error = Error;
    fn try_from(r: RawSystemParams) -> Result<Self> {
        SystemParams::new(r.f_ue, r.f_host, r.user_count, r.r_ul, r.r_dl)
    }
}

impl From<SystemParams> for RawSystemParams {
    fn from(p: SystemParams) -> Self {
        RawSystemParams {
            f_ue: p.f_ue,
            f_host: p.f_host,
            user_count: p.user_count,
            r_ul: p.r_ul,
            r_dl: p.r_dl,
        }
    }
}

impl Default for SystemParams {
    /// 1 GHz UE, one user on a 10 GHz VM (4 cores at 2.5 GHz), 8.5 Mbps links.
    fn default() -> Self {
        SystemParams::new(1e9, 10e9, 1, 8.5e6, 8.5e6).expect("valid defaults")
    }
}

impl SystemParams {
    pub fn new(f_ue: f64, f_host: f64, user_count: u32, r_ul: f64, r_dl: f64) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(f_ue) && ok(f_host) && ok(r_ul) && ok(r_dl)) || user_count == 0 {
            return Err(Error::Config(format!(
                "system parameters must be positive: f_ue={f_ue} f_host={f_host} users={user_count} r_ul={r_ul} r_dl={r_dl}"
            )));
        }
        Ok(SystemParams {
            f_ue,
            f_host,
            user_count,
            r_ul,
            r_dl,
        })
    }

    /// Same device and host with symmetric links at `rate` bits/s.
    pub fn with_rate(self, rate: f64) -> Result<Self> {
        SystemParams::new(self.f_ue, self.f_host, self.user_count, rate, rate)
    }

    pub fn f_ue(&self) -> f64 {
        self.f_ue
    }

    pub fn f_host(&self) -> f64 {
        self.f_host
    }

    pub fn user_count(&self) -> u32 {
        self.user_count
    }

    /// Per-VM capacity under equal sharing of the host.
    pub fn f_vm(&self) -> f64 {
        self.f_host / self.user_count as f64
    }

    pub fn r_ul(&self) -> f64 {
        self.r_ul
    }

    pub fn r_dl(&self) -> f64 {
        self.r_dl
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLatencies {
    pub t_ul: f64,
    pub t_s: f64,
    pub t_dl: f64,
    pub t_ue: f64,
    /// `t_ul + t_s + t_dl`
    pub t_offload_total: f64,
}

pub fn task_latencies(profile: &TaskProfile, params: &SystemParams) -> TaskLatencies {
    let t_ul = 8.0 * profile.data_send / params.r_ul * 1e3;
    let t_s = profile.cycles / params.f_vm() * 1e3;
    let t_dl = 8.0 * profile.data_recv / params.r_dl * 1e3;
    let t_ue = profile.cycles / params.f_ue * 1e3;
    TaskLatencies {
        t_ul,
        t_s,
        t_dl,
        t_ue,
        t_offload_total: t_ul + t_s + t_dl,
    }
}

/// Latencies of every task in rank order.
pub fn latency_table(ranked: &RankedDag, params: &SystemParams) -> Vec<TaskLatencies> {
    (0..ranked.len())
        .map(|pos| task_latencies(ranked.profile_at(pos), params))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Local = 0,
    Offload = 1,
}

impl Action {
    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn from_bit(b: bool) -> Self {
        if b {
            Action::Offload
        } else {
            Action::Local
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.bit()
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Action::Local),
            1 => Ok(Action::Offload),
            _ => Err(Error::Format(format!("action must be 0 or 1, got {v}"))),
        }
    }
}

/// One decision per task, aligned with rank order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchedulePlan {
    pub decisions: Vec<Action>,
}

impl SchedulePlan {
    pub fn new(decisions: Vec<Action>) -> Self {
        SchedulePlan { decisions }
    }

    pub fn uniform(n: usize, action: Action) -> Self {
        SchedulePlan::new(vec![action; n])
    }

    /// Plan number `code` in lexicographic order: the first decision is the
    /// most significant bit.
    pub fn from_code(code: u64, n: usize) -> Self {
        SchedulePlan::new((0..n).map(|i| Action::from_bit(code >> (n - 1 - i) & 1 == 1)).collect())
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter().map(|&b| Action::try_from(b)).collect::<Result<_>>().map(SchedulePlan::new)
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn bits(&self) -> Vec<u8> {
        self.decisions.iter().map(|a| a.bit()).collect()
    }
}

/// Resource available times plus per-task finish times, in whatever task
/// id space the caller schedules in. Unused resources report finish time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub avail_ul: f64,
    pub avail_s: f64,
    pub avail_dl: f64,
    pub avail_ue: f64,
    pub ft_ul: Vec<f64>,
    pub ft_s: Vec<f64>,
    pub ft_dl: Vec<f64>,
    pub ft_ue: Vec<f64>,
}

impl Timeline {
    pub fn new(n: usize) -> Self {
        Timeline {
            avail_ul: 0.0,
            avail_s: 0.0,
            avail_dl: 0.0,
            avail_ue: 0.0,
            ft_ul: vec![0.0; n],
            ft_s: vec![0.0; n],
            ft_dl: vec![0.0; n],
            ft_ue: vec![0.0; n],
        }
    }

    /// Completion time of a task as seen by its consumers.
    #[inline]
    pub fn done_at(&self, task: usize) -> f64 {
        self.ft_ue[task].max(self.ft_dl[task])
    }

    #[inline]
    fn parents_done(&self, parents: &[usize]) -> f64 {
        parents.iter().fold(0.0, |m, &j| m.max(self.done_at(j)))
    }

    /// Finish time the task would get under `action`, without committing.
    pub fn finish_if(&self, parents: &[usize], lat: &TaskLatencies, action: Action) -> f64 {
        let ready = self.parents_done(parents);
        match action {
            Action::Local => self.avail_ue.max(ready) + lat.t_ue,
            Action::Offload => {
                let ul = self.avail_ul.max(ready) + lat.t_ul;
                let host_ready = parents.iter().fold(ul, |m, &j| m.max(self.ft_s[j]));
                let s = self.avail_s.max(host_ready) + lat.t_s;
                self.avail_dl.max(s) + lat.t_dl
            }
        }
    }

    /// Commits the task and returns its completion time.
    pub fn place(&mut self, task: usize, parents: &[usize], lat: &TaskLatencies, action: Action) -> f64 {
        let ready = self.parents_done(parents);
        match action {
            Action::Local => {
                let ue = self.avail_ue.max(ready) + lat.t_ue;
                self.ft_ue[task] = ue;
                self.avail_ue = self.avail_ue.max(ue);
                ue
            }
            Action::Offload => {
                let ul = self.avail_ul.max(ready) + lat.t_ul;
                let host_ready = parents.iter().fold(ul, |m, &j| m.max(self.ft_s[j]));
                let s = self.avail_s.max(host_ready) + lat.t_s;
                let dl = self.avail_dl.max(s) + lat.t_dl;
                self.ft_ul[task] = ul;
                self.ft_s[task] = s;
                self.ft_dl[task] = dl;
                self.avail_ul = self.avail_ul.max(ul);
                self.avail_s = self.avail_s.max(s);
                self.avail_dl = self.avail_dl.max(dl);
                dl
            }
        }
    }
}

/// Scheduling progress over a ranked DAG; task ids are rank positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub timeline: Timeline,
    pub cursor: usize,
    pub plan_so_far: Vec<Action>,
    /// Latest completion among scheduled tasks, i.e. the partial-plan latency.
    pub makespan: f64,
}

impl ScheduleState {
    pub fn new(n: usize) -> Self {
        ScheduleState {
            timeline: Timeline::new(n),
            cursor: 0,
            plan_so_far: Vec::with_capacity(n),
            makespan: 0.0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.cursor == self.timeline.ft_ue.len()
    }

    /// Schedules the task at the cursor.
    pub fn advance(&mut self, ranked: &RankedDag, params: &SystemParams, action: Action) -> Result<()> {
        if self.cursor >= ranked.len() {
            return Err(Error::Protocol(format!(
                "all {} tasks are already scheduled",
                ranked.len()
            )));
        }
        let lat = task_latencies(ranked.profile_at(self.cursor), params);
        self.advance_with(ranked, &lat, action)
    }

    /// `advance` with a precomputed latency for the cursor task.
    pub fn advance_with(&mut self, ranked: &RankedDag, lat: &TaskLatencies, action: Action) -> Result<()> {
        let pos = self.cursor;
        if pos >= ranked.len() || ranked.len() != self.timeline.ft_ue.len() {
            return Err(Error::Protocol(format!(
                "cursor {pos} invalid for a DAG of {} tasks",
                ranked.len()
            )));
        }
        let done = self.timeline.place(pos, ranked.parents_at(pos), lat, action);
        self.makespan = self.makespan.max(done);
        self.plan_so_far.push(action);
        self.cursor += 1;
        Ok(())
    }
}

/// Maximum over exit tasks of their completion time.
pub fn total_latency(state: &ScheduleState, ranked: &RankedDag) -> Result<f64> {
    if state.cursor != ranked.len() || state.timeline.ft_ue.len() != ranked.len() {
        return Err(Error::Protocol(format!(
            "plan incomplete: {} of {} tasks scheduled",
            state.cursor,
            ranked.len()
        )));
    }
    Ok(ranked
        .dag
        .exit_set()
        .iter()
        .map(|&t| state.timeline.done_at(ranked.position_of(t)))
        .fold(0.0, f64::max))
}

pub fn evaluate_plan(ranked: &RankedDag, plan: &SchedulePlan, params: &SystemParams) -> Result<f64> {
    evaluate_with_table(ranked, plan, &latency_table(ranked, params))
}

pub fn evaluate_with_table(ranked: &RankedDag, plan: &SchedulePlan, table: &[TaskLatencies]) -> Result<f64> {
    if plan.len() != ranked.len() {
        return Err(Error::Shape(format!(
            "plan has {} decisions for {} tasks",
            plan.len(),
            ranked.len()
        )));
    }
    let mut state = ScheduleState::new(ranked.len());
    for (lat, &a) in table.iter().zip(&plan.decisions) {
        state.advance_with(ranked, lat, a)?;
    }
    total_latency(&state, ranked)
}

/// Convenience for unranked callers: ranks under `params` first.
pub fn evaluate_dag_plan(dag: &DagApp, plan: &SchedulePlan, params: &SystemParams) -> Result<f64> {
    evaluate_plan(&crate::dag::compute_rank(dag, params), plan, params)
}

/// How per-step rewards are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardScale {
    /// Divide by the DAG's mean local execution time.
    #[default]
    MeanLocal,
    /// Raw milliseconds.
    Raw,
}

impl RewardScale {
    pub fn factor(self, table: &[TaskLatencies]) -> f64 {
        match self {
            RewardScale::Raw => 1.0,
            RewardScale::MeanLocal => {
                table.iter().map(|l| l.t_ue).sum::<f64>() / table.len().max(1) as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    /// Decisions taken so far; together with the DAG embedding this is the
    /// observation for the next decision.
    pub plan_so_far: Vec<Action>,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment over one ranked DAG. Each step decides the task at
/// the next rank position; the reward is the negative increase of the
/// partial-plan latency divided by the reward scale.
#[derive(Debug, Clone)]
pub struct OffloadEnv<'a> {
    ranked: &'a RankedDag,
    table: Vec<TaskLatencies>,
    scale: f64,
    state: Option<ScheduleState>,
}

impl<'a> OffloadEnv<'a> {
    pub fn new(ranked: &'a RankedDag, params: &SystemParams, scale: RewardScale) -> Self {
        let table = latency_table(ranked, params);
        let scale = scale.factor(&table);
        OffloadEnv {
            ranked,
            table,
            scale,
            state: None,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn reset(&mut self) -> EnvStep {
        self.state = Some(ScheduleState::new(self.ranked.len()));
        EnvStep {
            plan_so_far: Vec::new(),
            reward: 0.0,
            done: false,
        }
    }

    pub fn step(&mut self, action: Action) -> Result<EnvStep> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::Protocol("step before reset".into()))?;
        if state.is_complete() {
            return Err(Error::Protocol("step after episode end".into()));
        }
        let before = state.makespan;
        let lat = self.table[state.cursor];
        state.advance_with(self.ranked, &lat, action)?;
        Ok(EnvStep {
            plan_so_far: state.plan_so_far.clone(),
            reward: -(state.makespan - before) / self.scale,
            done: state.is_complete(),
        })
    }

    pub fn state(&self) -> Option<&ScheduleState> {
        self.state.as_ref()
    }

    /// Final latency once the episode is done.
    pub fn latency(&self) -> Result<f64> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::Protocol("no episode in progress".into()))?;
        total_latency(state, self.ranked)
    }
}
