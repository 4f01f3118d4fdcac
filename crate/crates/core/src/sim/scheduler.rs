//! Least-loaded placement with threshold-triggered migration.

use super::cluster::Cluster;
use super::config::SchedulerConfig;
use super::workload::{ContainerTask, Demand};
use crate::graph::SchedulingDecision;

fn utils(load: &Demand, cluster: &Cluster, h: usize) -> (f64, f64) {
    let s = &cluster.specs[h];
    (load.cpu / s.cpu, load.ram / s.ram)
}

/// Host with the lowest projected cpu utilization (then ram, then index)
/// that can take `d` without exceeding `limit` on either resource. With
/// `allow_idle`, an empty host always qualifies so that oversized tasks
/// still run (overloaded) rather than starve in the queue.
fn least_loaded(
    loads: &[Demand],
    cluster: &Cluster,
    d: &Demand,
    limit: f64,
    skip: Option<usize>,
    allow_idle: bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for h in 0..cluster.hosts() {
        if Some(h) == skip {
            continue;
        }
        let (cpu, ram) = utils(&loads[h], cluster, h);
        let (cpu_after, ram_after) = utils(&(loads[h] + *d), cluster, h);
        let idle = allow_idle && loads[h].cpu == 0.0 && loads[h].ram == 0.0;
        if (cpu_after > limit || ram_after > limit) && !idle {
            continue;
        }
        if best.is_none_or(|(_, bc, br)| cpu < bc || (cpu == bc && ram < br)) {
            best = Some((h, cpu, ram));
        }
    }
    best.map(|b| b.0)
}

/// Places queued tasks then `arrivals` (FIFO), and migrates tasks off hosts
/// above the threshold. Tasks with no feasible host stay queued.
pub fn schedule(cluster: &mut Cluster, arrivals: Vec<ContainerTask>, cfg: &SchedulerConfig) -> SchedulingDecision {
    cluster.queue.extend(arrivals);
    let mut loads = cluster.loads();
    let mut waiting = std::collections::VecDeque::new();
    while let Some(mut task) = cluster.queue.pop_front() {
        let d = task.current();
        match least_loaded(&loads, cluster, &d, 1.0, None, true) {
            Some(h) => {
                loads[h] += d;
                task.host = Some(h);
                cluster.tasks.push(task);
            }
            None => waiting.push_back(task),
        }
    }
    cluster.queue = waiting;

    let thr = cfg.migration_threshold;
    let mut migrations = Vec::new();
    for src in 0..cluster.hosts() {
        for _ in 0..cfg.max_migrations_per_host {
            let (cpu, ram) = utils(&loads[src], cluster, src);
            if cpu <= thr && ram <= thr {
                break;
            }
            let by_cpu = cpu / thr >= ram / thr;
            let pick = cluster
                .tasks
                .iter()
                .enumerate()
                .filter(|(_, t)| t.host == Some(src))
                .max_by(|(_, a), (_, b)| {
                    let (da, db) = (a.current(), b.current());
                    let (ka, kb) = if by_cpu { (da.cpu, db.cpu) } else { (da.ram, db.ram) };
                    ka.total_cmp(&kb).then(b.id.cmp(&a.id))
                })
                .map(|(i, _)| i);
            let Some(i) = pick else { break };
            let d = cluster.tasks[i].current();
            let Some(dst) = least_loaded(&loads, cluster, &d, thr, Some(src), false) else {
                break;
            };
            loads[src] = loads[src] - d;
            loads[dst] += d;
            cluster.tasks[i].host = Some(dst);
            migrations.push((src, dst));
        }
    }
    SchedulingDecision::new(migrations)
}
