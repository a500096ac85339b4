//! Reference schedulers: HEFT-based, greedy, exhaustive optimum and the
//! two trivial plans.

use rayon::prelude::*;

use crate::dag::RankedDag;
use crate::error::{Error, Result};
use crate::sim::{
    latency_table, task_latencies, Action, SchedulePlan, ScheduleState, SystemParams, TaskLatencies,
    Timeline,
};

pub const DEFAULT_OPTIMAL_LIMIT: usize = 20;

/// Earliest-finish choice for one task; ties go to local execution.
fn earliest(timeline: &Timeline, parents: &[usize], lat: &TaskLatencies) -> Action {
    let local = timeline.finish_if(parents, lat, Action::Local);
    let remote = timeline.finish_if(parents, lat, Action::Offload);
    if remote < local {
        Action::Offload
    } else {
        Action::Local
    }
}

/// Commits each task, in descending rank order, to whichever side finishes
/// it earlier given everything scheduled before it.
pub fn heft_schedule(ranked: &RankedDag, params: &SystemParams) -> SchedulePlan {
    let table = latency_table(ranked, params);
    let mut state = ScheduleState::new(ranked.len());
    for lat in &table {
        let a = earliest(&state.timeline, ranked.parents_at(state.cursor), lat);
        state
            .advance_with(ranked, lat, a)
            .expect("cursor stays within the DAG");
    }
    SchedulePlan::new(state.plan_so_far)
}

/// Earliest-finish commitment in original index order. The returned plan is
/// expressed in rank order.
pub fn greedy_schedule(ranked: &RankedDag, params: &SystemParams) -> Result<SchedulePlan> {
    let dag = &ranked.dag;
    if !dag.is_index_topological() {
        return Err(Error::Protocol(
            "greedy scheduling needs parents indexed before their children".into(),
        ));
    }
    let mut timeline = Timeline::new(dag.len());
    let mut by_rank = vec![Action::Local; dag.len()];
    for (task, profile) in dag.tasks().iter().enumerate() {
        let lat = task_latencies(profile, params);
        let a = earliest(&timeline, dag.parents(task), &lat);
        timeline.place(task, dag.parents(task), &lat, a);
        by_rank[ranked.position_of(task)] = a;
    }
    Ok(SchedulePlan::new(by_rank))
}

pub fn all_local(ranked: &RankedDag) -> SchedulePlan {
    SchedulePlan::uniform(ranked.len(), Action::Local)
}

pub fn all_offload(ranked: &RankedDag) -> SchedulePlan {
    SchedulePlan::uniform(ranked.len(), Action::Offload)
}

/// Depth-first enumeration of every plan with code in
/// `[prefix << rest, (prefix + 1) << rest)`; returns the lowest code
/// achieving the minimum.
fn search(ranked: &RankedDag, table: &[TaskLatencies], prefix: u64, depth: usize) -> (f64, u64) {
    let n = ranked.len();
    let mut state = ScheduleState::new(n);
    for i in 0..depth {
        let a = Action::from_bit(prefix >> (depth - 1 - i) & 1 == 1);
        state
            .advance_with(ranked, &table[i], a)
            .expect("prefix shorter than DAG");
    }
    let mut best = (f64::INFINITY, 0u64);
    descend(ranked, table, &mut state, prefix, &mut best);
    best
}

fn descend(ranked: &RankedDag, table: &[TaskLatencies], state: &mut ScheduleState, code: u64, best: &mut (f64, u64)) {
    let pos = state.cursor;
    if pos == ranked.len() {
        // makespan over all tasks equals the exit-task maximum here
        if state.makespan < best.0 {
            *best = (state.makespan, code);
        }
        return;
    }
    // makespan never decreases, so a prefix already at the bound cannot win
    if state.makespan >= best.0 {
        return;
    }
    for a in [Action::Local, Action::Offload] {
        let mut next = state.clone();
        next.advance_with(ranked, &table[pos], a)
            .expect("cursor within DAG");
        descend(ranked, table, &mut next, code << 1 | a.bit() as u64, best);
    }
}

/// Minimum-latency plan over all `2^n` plans; ties resolve to the
/// lexicographically smallest plan.
pub fn optimal_schedule(ranked: &RankedDag, params: &SystemParams, limit: usize) -> Result<(SchedulePlan, f64)> {
    let n = ranked.len();
    if n > limit || n > 63 {
        return Err(Error::Capacity(format!(
            "exhaustive search over {n} tasks exceeds the limit of {limit}"
        )));
    }
    let table = latency_table(ranked, params);
    let split = n.min(6);
    let (latency, code) = (0..1u64 << split)
        .into_par_iter()
        .map(|prefix| search(ranked, &table, prefix, split))
        .reduce(
            || (f64::INFINITY, u64::MAX),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    Ok((SchedulePlan::from_code(code, n), latency))
}
