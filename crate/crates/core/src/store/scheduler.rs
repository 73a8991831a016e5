//! Parallel closure builds.
//!
//! A coordinator hands ready derivations to a bounded pool of worker
//! threads; a derivation becomes ready once every one of its inputs has
//! reported completion.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use super::{Store, StoreError};
use crate::graph::BuildGraph;
use crate::hash::Digest;

pub(super) fn run(
    store: &Store,
    graph: &BuildGraph,
    order: &[Digest],
    jobs: usize,
) -> Result<(), StoreError> {
    let members: BTreeSet<Digest> = order.iter().copied().collect();
    let mut waiting: BTreeMap<Digest, usize> = BTreeMap::new();
    let mut users: BTreeMap<Digest, Vec<Digest>> = BTreeMap::new();
    for d in order {
        let drv = graph.get(d).ok_or(StoreError::UnknownDerivation(*d))?;
        let deps: BTreeSet<Digest> = drv
            .inputs
            .iter()
            .map(|i| i.digest)
            .filter(|i| members.contains(i))
            .collect();
        waiting.insert(*d, deps.len());
        for dep in deps {
            users.entry(dep).or_default().push(*d);
        }
    }
    let mut ready: BinaryHeap<Reverse<Digest>> = waiting
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(d, _)| Reverse(*d))
        .collect();

    let workers = jobs.min(order.len()).max(1);
    let (job_tx, job_rx) = mpsc::channel::<Digest>();
    let job_rx = Arc::new(Mutex::new(job_rx));
    let (done_tx, done_rx) = mpsc::channel::<(Digest, Result<(), StoreError>)>();

    thread::scope(|scope| {
        for _ in 0..workers {
            let job_rx = Arc::clone(&job_rx);
            let done_tx = done_tx.clone();
            scope.spawn(move || loop {
                let next = job_rx.lock().expect("job queue poisoned").recv();
                let Ok(digest) = next else { break };
                let result = store.build_one(graph, &digest).map(|_| ());
                if done_tx.send((digest, result)).is_err() {
                    break;
                }
            });
        }
        drop(done_tx);

        let mut in_flight = 0usize;
        let mut finished = 0usize;
        let mut failure = None;
        loop {
            if failure.is_none() {
                while let Some(Reverse(d)) = ready.pop() {
                    job_tx.send(d).expect("workers alive while coordinating");
                    in_flight += 1;
                }
            }
            if in_flight == 0 {
                break;
            }
            let (digest, result) = done_rx.recv().expect("a worker reports every job");
            in_flight -= 1;
            match result {
                Ok(()) => {
                    finished += 1;
                    for u in users.get(&digest).into_iter().flatten() {
                        let n = waiting.get_mut(u).expect("user is a member");
                        *n -= 1;
                        if *n == 0 {
                            ready.push(Reverse(*u));
                        }
                    }
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        drop(job_tx);
        match failure {
            Some(e) => Err(e),
            None if finished != order.len() => Err(StoreError::Scheduler(format!(
                "{} of {} derivations never became ready",
                order.len() - finished,
                order.len()
            ))),
            None => Ok(()),
        }
    })
}
