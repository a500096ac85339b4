//! Event-order re-simulation of a scheduling plan, written independently of
//! the simulator: it keeps busy intervals per resource and works in original
//! task ids with its own latency arithmetic.

use mrlco_core::dag::RankedDag;
use mrlco_core::sim::{Action, SchedulePlan, SystemParams};

#[derive(Default, Clone, Copy)]
struct Done {
    local: Option<f64>,
    upload: Option<f64>,
    host: Option<f64>,
    download: Option<f64>,
}

impl Done {
    /// When the task's result is usable by a child.
    fn result(&self) -> f64 {
        self.local.or(self.download).expect("parent scheduled first")
    }
}

/// Busy intervals of one resource; the next job starts after the last one.
#[derive(Default)]
struct Resource(Vec<(f64, f64)>);

impl Resource {
    fn run(&mut self, ready: f64, duration: f64) -> f64 {
        let free = self.0.last().map_or(0.0, |&(_, end)| end);
        let start = ready.max(free);
        self.0.push((start, start + duration));
        start + duration
    }
}

pub fn resimulate(ranked: &RankedDag, plan: &SchedulePlan, params: &SystemParams) -> f64 {
    let dag = &ranked.dag;
    let ms = |x: f64| x * 1000.0;
    let f_vm = params.f_host() / params.user_count() as f64;
    let (mut ue, mut ul, mut host, mut dl) = (
        Resource::default(),
        Resource::default(),
        Resource::default(),
        Resource::default(),
    );
    let mut done = vec![Done::default(); dag.len()];
    for (step, &task) in ranked.order.iter().enumerate() {
        let p = &dag.tasks()[task];
        let parents = dag.parents(task);
        let ready = parents.iter().map(|&j| done[j].result()).fold(0.0, f64::max);
        let mut d = Done::default();
        match plan.decisions[step] {
            Action::Local => d.local = Some(ue.run(ready, ms(p.cycles / params.f_ue()))),
            Action::Offload => {
                let up = ul.run(ready, ms(p.data_send * 8.0 / params.r_ul()));
                let parents_on_host = parents.iter().filter_map(|&j| done[j].host).fold(up, f64::max);
                let h = host.run(parents_on_host, ms(p.cycles / f_vm));
                d.upload = Some(up);
                d.host = Some(h);
                d.download = Some(dl.run(h, ms(p.data_recv * 8.0 / params.r_dl())));
            }
        }
        done[task] = d;
    }
    dag.exit_set().iter().map(|&k| done[k].result()).fold(0.0, f64::max)
}
