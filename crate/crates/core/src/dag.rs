//! DAG applications: task profiles, the layered synthetic generator, upward
//! rank ordering and fixed-width task embeddings.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{task_latencies, SystemParams};

/// Reference UE clock used to turn a ccr draw into transfer bytes.
pub const CCR_REFERENCE_UE_HZ: f64 = 1e9;
/// Reference link rate used to turn a ccr draw into transfer bytes.
pub const CCR_REFERENCE_RATE_BPS: f64 = 10e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    /// CPU cycles needed to run the task.
    pub cycles: f64,
    /// Bytes uploaded when the task is offloaded.
    pub data_send: f64,
    /// Bytes of result downloaded after remote execution.
    pub data_recv: f64,
}

impl TaskProfile {
    pub fn new(cycles: f64, data_send: f64, data_recv: f64) -> Result<Self> {
        let p = TaskProfile {
            cycles,
            data_send,
            data_recv,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.cycles) && ok(self.data_send) && ok(self.data_recv) {
            Ok(())
        } else {
            Err(Error::Graph(format!("task profile must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DagRecord {
    tasks: Vec<TaskProfile>,
    edges: Vec<(usize, usize)>,
}

/// A validated task graph. Task `i` is identified by its index in `tasks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DagRecord", into = "DagRecord")]
pub struct DagApp {
    tasks: Vec<TaskProfile>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    topo: Vec<usize>,
    exit_set: Vec<usize>,
}

impl TryFrom<DagRecord> for DagApp {
    type Error = Error;

    fn try_from(r: DagRecord) -> Result<Self> {
        DagApp::new(r.tasks, r.edges)
    }
}

impl From<DagApp> for DagRecord {
    fn from(d: DagApp) -> Self {
        DagRecord {
            tasks: d.tasks,
            edges: d.edges,
        }
    }
}

impl DagApp {
    pub fn new(tasks: Vec<TaskProfile>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = tasks.len();
        if n == 0 {
            return Err(Error::Graph("a DAG needs at least one task".into()));
        }
        for t in &tasks {
            t.validate()?;
        }
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in &edges {
            if p >= n || c >= n {
                return Err(Error::Graph(format!("edge ({p}, {c}) out of range for {n} tasks")));
            }
            if p == c {
                return Err(Error::Graph(format!("self loop on task {p}")));
            }
            if children[p].contains(&c) {
                return Err(Error::Graph(format!("duplicate edge ({p}, {c})")));
            }
            children[p].push(c);
            parents[c].push(p);
        }
        for v in parents.iter_mut().chain(children.iter_mut()) {
            v.sort_unstable();
        }

        // Kahn pass; smallest ready index first keeps the order deterministic.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            topo.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if topo.len() != n {
            return Err(Error::Graph("edge relation contains a cycle".into()));
        }
        let exit_set = (0..n).filter(|&i| children[i].is_empty()).collect();
        Ok(DagApp {
            tasks,
            edges,
            parents,
            children,
            topo,
            exit_set,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[TaskProfile] {
        &self.tasks
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parents(&self, task: usize) -> &[usize] {
        &self.parents[task]
    }

    pub fn children(&self, task: usize) -> &[usize] {
        &self.children[task]
    }

    /// Tasks without children.
    pub fn exit_set(&self) -> &[usize] {
        &self.exit_set
    }

    /// A topological order (Kahn, smallest index first).
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// True when every edge points from a lower to a higher index.
    pub fn is_index_topological(&self) -> bool {
        self.edges.iter().all(|&(p, c)| p < c)
    }

    /// Number of tasks on the longest root-to-exit path.
    pub fn height(&self) -> usize {
        let mut depth = vec![1usize; self.len()];
        for &i in &self.topo {
            for &c in &self.children[i] {
                depth[c] = depth[c].max(depth[i] + 1);
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }
}

/// Parameters of the layered random DAG generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub fat: f64,
    pub density: f64,
    pub ccr_range: (f64, f64),
    pub cycles_range: (f64, f64),
    pub data_range: (f64, f64),
    pub pad_width: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 20,
            fat: 0.6,
            density: 0.6,
            ccr_range: (0.3, 0.5),
            cycles_range: (1e7, 1e8),
            data_range: (5e3, 50e3),
            pad_width: 12,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fat) || !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Config(format!(
                "fat ({}) and density ({}) must lie in [0, 1]",
                self.fat, self.density
            )));
        }
        for (name, r) in [
            ("ccr_range", self.ccr_range),
            ("cycles_range", self.cycles_range),
            ("data_range", self.data_range),
        ] {
            if !range_ok(r) {
                return Err(Error::Config(format!("{name} {r:?} must be a nonempty positive interval")));
            }
        }
        if self.pad_width == 0 {
            return Err(Error::Config("pad_width must be at least 1".into()));
        }
        Ok(())
    }

    /// Length of every task embedding produced under this config.
    pub fn embedding_width(&self) -> usize {
        4 + 2 * self.pad_width
    }

    fn level_count(&self) -> usize {
        if self.fat <= 0.0 {
            return self.n;
        }
        let l = ((self.n as f64).sqrt() / self.fat).round() as usize;
        l.clamp(1, self.n)
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Layered generator: `round(sqrt(n) / fat)` levels with at least one task
/// each, remaining tasks spread uniformly at random; every task below the
/// first level draws parents from the previous level with probability
/// `density` and always gets at least one. Task indices follow the levels,
/// so index order is topological.
pub fn generate_dag(config: &GeneratorConfig, rng: &mut impl Rng) -> Result<DagApp> {
    config.validate()?;
    let n = config.n;
    let p = config.pad_width;
    let levels = config.level_count();

    let mut sizes = vec![1usize; levels];
    for _ in levels..n {
        sizes[rng.gen_range(0..levels)] += 1;
    }
    let mut level_of = Vec::with_capacity(n);
    let mut members: Vec<Vec<usize>> = Vec::with_capacity(levels);
    let mut next = 0;
    for (l, &s) in sizes.iter().enumerate() {
        members.push((next..next + s).collect());
        level_of.extend(std::iter::repeat(l).take(s));
        next += s;
    }

    let mut child_count = vec![0usize; n];
    let mut edges = Vec::new();
    for task in 0..n {
        let level = level_of[task];
        if level == 0 {
            continue;
        }
        // Previous level first; fall back to earlier levels only if every
        // task there already has p children.
        let mut candidates: Vec<usize> = Vec::new();
        for l in (0..level).rev() {
            candidates = members[l].iter().copied().filter(|&c| child_count[c] < p).collect();
            if !candidates.is_empty() {
                break;
            }
        }
        if candidates.is_empty() {
            return Err(Error::Capacity(format!(
                "no parent with spare child slots for task {task} (pad width {p})"
            )));
        }
        let mut chosen = Vec::new();
        for _attempt in 0..16 {
            chosen = candidates.iter().copied().filter(|_| rng.gen_bool(config.density)).collect();
            if chosen.is_empty() {
                chosen.push(*candidates.choose(rng).expect("nonempty"));
            }
            if chosen.len() <= p {
                break;
            }
        }
        if chosen.len() > p {
            chosen.shuffle(rng);
            chosen.truncate(p);
            chosen.sort_unstable();
        }
        for parent in chosen {
            child_count[parent] += 1;
            edges.push((parent, task));
        }
    }

    let ccr = uniform(rng, config.ccr_range);
    let tasks = (0..n)
        .map(|_| {
            let cycles = uniform(rng, config.cycles_range).round();
            let compute_s = cycles / CCR_REFERENCE_UE_HZ;
            let total_bytes = ccr * compute_s * CCR_REFERENCE_RATE_BPS / 8.0;
            let half = (total_bytes / 2.0)
                .clamp(config.data_range.0, config.data_range.1)
                .round();
            TaskProfile {
                cycles,
                data_send: half,
                data_recv: half,
            }
        })
        .collect();
    DagApp::new(tasks, edges)
}

/// A DAG with its upward ranks and the descending-rank scheduling order.
///
/// "Position" below always means an index into `order`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDag {
    pub dag: DagApp,
    /// Upward rank per original task index, in milliseconds.
    pub rank: Vec<f64>,
    /// Original task indices sorted by descending rank.
    pub order: Vec<usize>,
    position: Vec<usize>,
    parents_pos: Vec<Vec<usize>>,
    children_pos: Vec<Vec<usize>>,
}

impl RankedDag {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Rank-order position of an original task index.
    pub fn position_of(&self, task: usize) -> usize {
        self.position[task]
    }

    /// Profile of the task at a rank-order position.
    pub fn profile_at(&self, pos: usize) -> &TaskProfile {
        &self.dag.tasks()[self.order[pos]]
    }

    /// Parent positions (ascending) of the task at `pos`.
    pub fn parents_at(&self, pos: usize) -> &[usize] {
        &self.parents_pos[pos]
    }

    pub fn children_at(&self, pos: usize) -> &[usize] {
        &self.children_pos[pos]
    }

    pub fn is_exit_at(&self, pos: usize) -> bool {
        self.children_pos[pos].is_empty()
    }
}

/// Upward rank from the offload path latency of every task.
pub fn compute_rank(dag: &DagApp, params: &SystemParams) -> RankedDag {
    let n = dag.len();
    let mut rank = vec![0.0; n];
    for &i in dag.topological_order().iter().rev() {
        let own = task_latencies(&dag.tasks()[i], params).t_offload_total;
        let tail = dag
            .children(i)
            .iter()
            .map(|&c| rank[c])
            .fold(0.0, f64::max);
        rank[i] = own + tail;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rank[b].total_cmp(&rank[a]).then(a.cmp(&b)));
    let mut position = vec![0; n];
    for (pos, &t) in order.iter().enumerate() {
        position[t] = pos;
    }
    let map = |ids: &[usize]| {
        let mut v: Vec<usize> = ids.iter().map(|&t| position[t]).collect();
        v.sort_unstable();
        v
    };
    let parents_pos = order.iter().map(|&t| map(dag.parents(t))).collect();
    let children_pos = order.iter().map(|&t| map(dag.children(t))).collect();
    RankedDag {
        dag: dag.clone(),
        rank,
        order,
        position,
        parents_pos,
        children_pos,
    }
}

/// Fixed-width task encoding:
/// `[index/n, cycles/max, send/max, recv/max, parents.., children..]`,
/// neighbor slots holding rank positions padded with `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEmbedding(pub Vec<f64>);

impl TaskEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn embed_dag(ranked: &RankedDag, config: &GeneratorConfig) -> Result<Vec<TaskEmbedding>> {
    let n = ranked.len();
    let p = config.pad_width;
    let mut out = Vec::with_capacity(n);
    for pos in 0..n {
        let parents = ranked.parents_at(pos);
        let children = ranked.children_at(pos);
        if parents.len() > p || children.len() > p {
            return Err(Error::Capacity(format!(
                "task at position {pos} has {} parents and {} children, pad width is {p}",
                parents.len(),
                children.len()
            )));
        }
        let prof = ranked.profile_at(pos);
        let mut v = Vec::with_capacity(4 + 2 * p);
        v.push(pos as f64 / n as f64);
        v.push((prof.cycles / config.cycles_range.1).min(1.0));
        v.push((prof.data_send / config.data_range.1).min(1.0));
        v.push((prof.data_recv / config.data_range.1).min(1.0));
        for slots in [parents, children] {
            v.extend(slots.iter().map(|&q| q as f64));
            v.extend(std::iter::repeat(-1.0).take(p - slots.len()));
        }
        out.push(TaskEmbedding(v));
    }
    Ok(out)
}

/// Breadth-first reachability from the roots; every task must be reached.
pub fn all_reachable_from_roots(dag: &DagApp) -> bool {
    let n = dag.len();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| dag.parents(i).is_empty()).collect();
    for &r in &queue {
        seen[r] = true;
    }
    while let Some(i) = queue.pop_front() {
        for &c in dag.children(i) {
            if !seen[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
