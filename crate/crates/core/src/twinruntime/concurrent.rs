//! Thread-per-replica execution. Replicas meet through a two-phase exchange:
//! every party deposits its message, the last one to arrive computes the
//! shared reply under the lock, and everyone departs with that reply.

use std::sync::{Arc, Condvar, Mutex, MutexGuard, PoisonError, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use super::policy::{self, Resolution, Screen};
use super::{Finish, Ledger, Problem, ReplicaHandle, SyncWindow};
use crate::error::{Error, Result};
use crate::resilience::WindowOutcome;
use crate::solver::{save_checkpoint, Checkpoint, SolverState};

struct Slot<T, R> {
    generation: u64,
    arrived: usize,
    inputs: Vec<Option<T>>,
    reply: Option<std::result::Result<R, String>>,
}

pub(crate) struct Exchange<T, R> {
    parties: usize,
    timeout: Duration,
    slot: Mutex<Slot<T, R>>,
    cv: Condvar,
}

impl<T, R: Clone> Exchange<T, R> {
    pub fn new(parties: usize, timeout: Duration) -> Self {
        Self {
            parties,
            timeout,
            slot: Mutex::new(Slot {
                generation: 0,
                arrived: 0,
                inputs: (0..parties).map(|_| None).collect(),
                reply: None,
            }),
            cv: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Slot<T, R>> {
        self.slot.lock().unwrap_or_else(PoisonError::into_inner)
    }

    /// Deposits `value` for party `id` and blocks until all parties arrived.
    /// `resolve` runs exactly once per round, on the last arriver's thread.
    /// Returns the reply and the time spent blocked.
    pub fn exchange(
        &self,
        id: usize,
        value: T,
        resolve: impl FnOnce(Vec<T>) -> std::result::Result<R, String>,
    ) -> Result<(R, Duration)> {
        let start = Instant::now();
        let mut slot = self.lock();
        let generation = slot.generation;
        slot.inputs[id] = Some(value);
        slot.arrived += 1;
        if slot.arrived == self.parties {
            let inputs = slot
                .inputs
                .iter_mut()
                .map(|v| v.take().expect("every party deposited"))
                .collect();
            let reply = resolve(inputs);
            slot.reply = Some(reply.clone());
            slot.arrived = 0;
            slot.generation += 1;
            self.cv.notify_all();
            return reply.map(|r| (r, start.elapsed())).map_err(Error::LockStep);
        }
        let (slot, timeout) = self
            .cv
            .wait_timeout_while(slot, self.timeout, |s| s.generation == generation)
            .unwrap_or_else(PoisonError::into_inner);
        if timeout.timed_out() {
            return Err(Error::Timeout {
                replica: id,
                secs: self.timeout.as_secs_f64(),
            });
        }
        let reply = slot
            .reply
            .clone()
            .expect("reply published before generation advanced");
        reply.map(|r| (r, start.elapsed())).map_err(Error::LockStep)
    }
}

enum Msg {
    Vote {
        iter: usize,
        converged: bool,
    },
    Arrive {
        iter: usize,
        norm: f64,
        faults: usize,
    },
    Verdict(bool),
    Offer(Option<Arc<SolverState>>),
}

#[derive(Clone)]
enum Reply {
    Due(bool),
    Screened {
        norms: Vec<f64>,
        faults: Vec<usize>,
        screen: Screen,
    },
    Resolved {
        resolution: Resolution,
        verdicts: Vec<bool>,
    },
    State(Arc<SolverState>),
}

fn same_iter(iters: impl Iterator<Item = usize>) -> std::result::Result<usize, String> {
    let iters: Vec<usize> = iters.collect();
    if iters.windows(2).all(|w| w[0] == w[1]) {
        Ok(iters[0])
    } else {
        Err(format!("replicas met at different iterations {iters:?}"))
    }
}

const PROTOCOL: &str = "unexpected message in synchronization window";

struct Shared<'a> {
    p: &'a Problem<'a>,
    exchange: Exchange<Msg, Reply>,
    checkpoint: RwLock<Checkpoint>,
}

struct ReplicaRun {
    finish: Finish,
    ledger: Option<Ledger>,
    wait: Duration,
}

fn replica_loop(sh: &Shared, me: &mut ReplicaHandle) -> Result<ReplicaRun> {
    let p = sh.p;
    let mut ledger = (me.id == 0).then(Ledger::default);
    let mut wait = Duration::ZERO;
    let id = me.id;
    let mut sync = |msg: Msg, resolve: &dyn Fn(Vec<Msg>) -> std::result::Result<Reply, String>| {
        let (reply, waited) = sh.exchange.exchange(id, msg, resolve)?;
        wait += waited;
        Ok::<Reply, Error>(reply)
    };
    // replicas start from identical states, so this decision is shared
    let mut done = me.converged(p.b_norm, p.cfg.tol);
    let mut work = 0;
    let mut aborted = false;
    while !done {
        if work >= p.cfg.max_iter {
            aborted = true;
            break;
        }
        work += 1;
        me.advance(work, p.precond.as_ref());

        let d = p.cfg.d;
        let vote = Msg::Vote {
            iter: me.state.iter,
            converged: me.converged(p.b_norm, p.cfg.tol),
        };
        let Reply::Due(due) = sync(vote, &|msgs| {
            let mut iters = Vec::new();
            let mut any = false;
            for m in msgs {
                let Msg::Vote { iter, converged } = m else {
                    return Err(PROTOCOL.into());
                };
                iters.push(iter);
                any |= converged;
            }
            let iter = same_iter(iters.into_iter())?;
            Ok(Reply::Due(policy::window_due(iter, d, any)))
        })?
        else {
            return Err(Error::LockStep(PROTOCOL.into()));
        };
        if !due {
            continue;
        }

        let iter = me.state.iter;
        let arrive = Msg::Arrive {
            iter,
            norm: me.published_norm(),
            faults: me.take_fault_count(),
        };
        let (variant, eps1) = (p.variant, p.cfg.eps1);
        let Reply::Screened {
            norms,
            faults,
            screen,
        } = sync(arrive, &|msgs| {
            let mut iters = Vec::new();
            let (mut norms, mut faults) = (Vec::new(), Vec::new());
            for m in msgs {
                let Msg::Arrive {
                    iter,
                    norm,
                    faults: f,
                } = m
                else {
                    return Err(PROTOCOL.into());
                };
                iters.push(iter);
                norms.push(norm);
                faults.push(f);
            }
            same_iter(iters.into_iter())?;
            let screen = policy::screen(variant, &norms, eps1);
            Ok(Reply::Screened {
                norms,
                faults,
                screen,
            })
        })?
        else {
            return Err(Error::LockStep(PROTOCOL.into()));
        };

        let (resolution, verdicts) = match screen {
            Screen::Decided(res) => (res, Vec::new()),
            Screen::NeedD2 => {
                let verdict = me.d2(p.b, p.cfg.eps2);
                let Reply::Resolved {
                    resolution,
                    verdicts,
                } = sync(Msg::Verdict(verdict), &|msgs| {
                    let verdicts = msgs
                        .into_iter()
                        .map(|m| match m {
                            Msg::Verdict(v) => Ok(v),
                            _ => Err(String::from(PROTOCOL)),
                        })
                        .collect::<std::result::Result<Vec<bool>, String>>()?;
                    Ok(Reply::Resolved {
                        resolution: policy::after_d2(&verdicts),
                        verdicts,
                    })
                })?
                else {
                    return Err(Error::LockStep(PROTOCOL.into()));
                };
                (resolution, verdicts)
            }
        };

        match resolution.outcome {
            WindowOutcome::ForwardRecovered(faulty) => {
                let source = resolution.source.expect("forward recovery has a source");
                let offer = (me.id == source).then(|| Arc::new(me.state.clone()));
                let Reply::State(healthy) = sync(Msg::Offer(offer), &|msgs| {
                    msgs.into_iter()
                        .find_map(|m| match m {
                            Msg::Offer(Some(s)) => Some(Reply::State(s)),
                            _ => None,
                        })
                        .ok_or_else(|| {
                            String::from("no replica offered its state for forward recovery")
                        })
                })?
                else {
                    return Err(Error::LockStep(PROTOCOL.into()));
                };
                if me.id == faulty {
                    me.recover_from(&healthy)?;
                }
            }
            WindowOutcome::RolledBack => {
                let ckpt = sh.checkpoint.read().unwrap_or_else(PoisonError::into_inner);
                me.roll_back(&ckpt)?;
            }
            _ => {}
        }

        done = policy::finished(&resolution, &norms, p.threshold());
        if let Some(ledger) = ledger.as_mut() {
            if p.refresh_checkpoint(resolution.outcome, iter) {
                *sh.checkpoint
                    .write()
                    .unwrap_or_else(PoisonError::into_inner) = save_checkpoint(&me.state);
            }
            let mut window_verdicts = vec![None; norms.len()];
            for (slot, v) in window_verdicts.iter_mut().zip(&verdicts) {
                *slot = Some(*v);
            }
            ledger.record(SyncWindow {
                window_iter: iter,
                work_iter: work,
                exchanged_norms: norms,
                verdicts: window_verdicts,
                faults,
                outcome: Some(resolution.outcome),
            });
        }
    }
    Ok(ReplicaRun {
        finish: Finish { work, aborted },
        ledger,
        wait,
    })
}

pub(crate) fn run(
    p: &Problem,
    replicas: Vec<ReplicaHandle>,
    timeout: Duration,
) -> Result<(Vec<ReplicaHandle>, Ledger, Finish, Duration)> {
    let shared = Shared {
        p,
        exchange: Exchange::new(replicas.len(), timeout),
        checkpoint: RwLock::new(save_checkpoint(&replicas[0].state)),
    };
    let results: Vec<(ReplicaHandle, Result<ReplicaRun>)> = thread::scope(|s| {
        let handles: Vec<_> = replicas
            .into_iter()
            .map(|mut replica| {
                let shared = &shared;
                s.spawn(move || {
                    let run = replica_loop(shared, &mut replica);
                    (replica, run)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| Error::LockStep("replica thread panicked".into()))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut out = Vec::with_capacity(results.len());
    let mut lead = None;
    let mut wait = Duration::ZERO;
    for (replica, run) in results {
        let run = run?;
        wait += run.wait;
        if let Some(ledger) = run.ledger {
            lead = Some((ledger, run.finish));
        }
        out.push(replica);
    }
    let (ledger, finish) = lead.expect("replica 0 keeps the ledger");
    Ok((out, ledger, finish, wait))
}
