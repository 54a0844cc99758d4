//! Replica lifecycle and the lock-step synchronization window.
//!
//! Replicas iterate independently on private copies of the matrix. Every `d`
//! iterations (and whenever one of them reports convergence) they meet in a
//! window, exchange residual norms, run detection, and apply forward recovery
//! or rollback. Outside a window no replica touches another's state.
//!
//! Two executions are provided with identical observable results: a
//! single-threaded round-robin mode and a thread-per-replica mode.

mod concurrent;
mod policy;

use std::time::Duration;

pub(crate) use policy::Resolution;

use crate::error::{Error, Result};
use crate::faultinject::FaultInjector;
use crate::resilience::{
    d2_check, forward_recover, ExecMode, RunReport, RunSetup, Variant, WindowOutcome, WindowRecord,
};
use crate::solver::{
    self, restore_checkpoint, save_checkpoint, Checkpoint, JacobiPreconditioner, SolverState,
};
use crate::sparsemat::{norm2, spmv, CsrMatrix};

/// One replica: its solver state, its private matrix, and its fault stream.
#[derive(Debug, Clone)]
pub struct ReplicaHandle {
    pub id: usize,
    pub state: SolverState,
    matrix: CsrMatrix,
    injector: FaultInjector,
    broken: bool,
    faults_since_window: usize,
}

impl ReplicaHandle {
    pub fn new(id: usize, state: SolverState, matrix: CsrMatrix, injector: FaultInjector) -> Self {
        Self {
            id,
            state,
            matrix,
            injector,
            broken: false,
            faults_since_window: 0,
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// True after a solver breakdown, until the next recovery.
    pub fn is_broken(&self) -> bool {
        self.broken
    }

    /// Runs iteration number `work_iter` with this iteration's faults active.
    ///
    /// A broken replica only advances its iteration counter so that it stays
    /// in lock-step; it still consumes its fault stream.
    pub fn advance(&mut self, work_iter: usize, precond: Option<&JacobiPreconditioner>) {
        let events = self.injector.inject_iteration(&mut self.matrix, work_iter);
        self.faults_since_window += events.len();
        if !self.broken {
            let iter = self.state.iter;
            if solver::step(&mut self.state, &self.matrix, precond).is_err() {
                self.broken = true;
                self.state.iter = iter + 1;
            }
        } else {
            self.state.iter += 1;
        }
        crate::faultinject::undo(&mut self.matrix, &events);
    }

    /// Residual norm announced at a window; NaN once broken.
    pub fn published_norm(&self) -> f64 {
        if self.broken {
            f64::NAN
        } else {
            self.state.res_norm
        }
    }

    pub fn converged(&self, b_norm: f64, tol: f64) -> bool {
        !self.broken && solver::converged(&self.state, b_norm, tol)
    }

    /// D2 against this replica's (healed) matrix.
    pub fn d2(&self, b: &[f64], eps2: f64) -> bool {
        !self.broken && d2_check(&self.matrix, b, &self.state, eps2)
    }

    fn take_fault_count(&mut self) -> usize {
        std::mem::take(&mut self.faults_since_window)
    }

    fn recover_from(&mut self, healthy: &SolverState) -> Result<()> {
        forward_recover(healthy, &mut self.state)?;
        self.broken = false;
        Ok(())
    }

    fn roll_back(&mut self, ckpt: &Checkpoint) -> Result<()> {
        restore_checkpoint(&mut self.state, ckpt)?;
        self.broken = false;
        Ok(())
    }
}

/// Data the replicas publish when they meet.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncWindow {
    pub window_iter: usize,
    pub work_iter: usize,
    pub exchanged_norms: Vec<f64>,
    /// Per-replica D2 verdicts, filled only when D1 fails.
    pub verdicts: Vec<Option<bool>>,
    pub faults: Vec<usize>,
    pub outcome: Option<WindowOutcome>,
}

impl SyncWindow {
    pub fn d2_evaluations(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_some()).count()
    }
}

/// Gathers the replicas at `window_iter`. Fails if any of them is at a
/// different iteration.
pub fn rendezvous(
    replicas: &mut [ReplicaHandle],
    window_iter: usize,
    work_iter: usize,
) -> Result<SyncWindow> {
    if let Some(r) = replicas.iter().find(|r| r.state.iter != window_iter) {
        return Err(Error::LockStep(format!(
            "replica {} is at iteration {}, window expects {window_iter}",
            r.id, r.state.iter
        )));
    }
    Ok(SyncWindow {
        window_iter,
        work_iter,
        exchanged_norms: replicas.iter().map(ReplicaHandle::published_norm).collect(),
        verdicts: vec![None; replicas.len()],
        faults: replicas
            .iter_mut()
            .map(ReplicaHandle::take_fault_count)
            .collect(),
        outcome: None,
    })
}

/// Runs detection and applies the recovery it calls for.
pub fn resolve_window(
    window: &mut SyncWindow,
    replicas: &mut [ReplicaHandle],
    variant: Variant,
    eps1: f64,
    eps2: f64,
    b: &[f64],
    checkpoint: &Checkpoint,
) -> Result<WindowOutcome> {
    resolve(window, replicas, variant, eps1, eps2, b, checkpoint).map(|res| res.outcome)
}

fn resolve(
    window: &mut SyncWindow,
    replicas: &mut [ReplicaHandle],
    variant: Variant,
    eps1: f64,
    eps2: f64,
    b: &[f64],
    checkpoint: &Checkpoint,
) -> Result<Resolution> {
    let resolution = match policy::screen(variant, &window.exchanged_norms, eps1) {
        policy::Screen::Decided(res) => res,
        policy::Screen::NeedD2 => {
            let verdicts: Vec<bool> = replicas.iter().map(|r| r.d2(b, eps2)).collect();
            window.verdicts = verdicts.iter().map(|&v| Some(v)).collect();
            policy::after_d2(&verdicts)
        }
    };
    apply(&resolution, replicas, checkpoint)?;
    window.outcome = Some(resolution.outcome);
    Ok(resolution)
}

fn apply(res: &Resolution, replicas: &mut [ReplicaHandle], checkpoint: &Checkpoint) -> Result<()> {
    match res.outcome {
        WindowOutcome::ForwardRecovered(faulty) => {
            let source = res.source.expect("forward recovery has a source");
            let healthy = replicas[source].state.clone();
            replicas[faulty].recover_from(&healthy)
        }
        WindowOutcome::RolledBack => replicas
            .iter_mut()
            .try_for_each(|r| r.roll_back(checkpoint)),
        _ => Ok(()),
    }
}

/// Closes the window and turns it into a log record.
pub fn release(window: SyncWindow, span: usize) -> WindowRecord {
    WindowRecord {
        iter: window.window_iter,
        work_iter: window.work_iter,
        span,
        faults: window.faults,
        outcome: window
            .outcome
            .expect("window released before it was resolved"),
    }
}

/// Per-run counters, kept by a single designated replica.
#[derive(Debug, Default)]
pub(crate) struct Ledger {
    pub windows: Vec<WindowRecord>,
    pub fr: usize,
    pub rr: usize,
    pub d2: usize,
    last_work: usize,
}

impl Ledger {
    pub fn record(&mut self, window: SyncWindow) {
        self.d2 += window.d2_evaluations();
        let work = window.work_iter;
        let record = release(window, work - self.last_work);
        match record.outcome {
            WindowOutcome::ForwardRecovered(_) => self.fr += 1,
            WindowOutcome::RolledBack => self.rr += 1,
            _ => {}
        }
        self.last_work = work;
        self.windows.push(record);
    }
}

/// Shared, read-only description of the run.
pub(crate) struct Problem<'a> {
    pub variant: Variant,
    pub b: &'a [f64],
    pub b_norm: f64,
    pub precond: Option<JacobiPreconditioner>,
    pub cfg: crate::resilience::ResilienceConfig,
}

impl Problem<'_> {
    fn threshold(&self) -> f64 {
        self.cfg.tol * self.b_norm
    }

    fn refresh_checkpoint(&self, outcome: WindowOutcome, iter: usize) -> bool {
        outcome == WindowOutcome::NoSignificantFault
            && iter.is_multiple_of(self.cfg.checkpoint_interval)
    }
}

/// How a replica loop ended.
pub(crate) struct Finish {
    pub work: usize,
    pub aborted: bool,
}

pub(crate) fn run(variant: Variant, setup: &RunSetup) -> Result<RunReport> {
    setup.cfg.validate()?;
    let a = setup.a;
    crate::error::check_len(a.n(), setup.b.len())?;
    let precond = if setup.precond {
        Some(JacobiPreconditioner::new(a)?)
    } else {
        None
    };
    let x0 = vec![0.0; a.n()];
    let initial = solver::init_state(a, setup.b, &x0, precond.as_ref())?;
    let replicas: Vec<ReplicaHandle> = (0..variant.replicas())
        .map(|id| {
            let script = setup
                .script
                .iter()
                .filter(|(r, _)| *r == id)
                .map(|(_, s)| *s)
                .collect();
            let injector = FaultInjector::new(setup.faults, id).with_script(script);
            ReplicaHandle::new(id, initial.clone(), a.clone(), injector)
        })
        .collect();
    let problem = Problem {
        variant,
        b: setup.b,
        b_norm: norm2(setup.b),
        precond,
        cfg: setup.cfg,
    };

    let (replicas, ledger, finish, wait_time) = match setup.mode {
        ExecMode::Concurrent { timeout } if replicas.len() > 1 => {
            concurrent::run(&problem, replicas, timeout)?
        }
        _ => {
            let (replicas, ledger, finish) = run_simulated(&problem, replicas)?;
            (replicas, ledger, finish, Duration::ZERO)
        }
    };

    let x = replicas[0].state.x.clone();
    Ok(RunReport {
        variant,
        iterations: if finish.aborted {
            problem.cfg.max_iter
        } else {
            finish.work
        },
        fr_count: ledger.fr,
        rr_count: ledger.rr,
        aborted: finish.aborted,
        final_rel_residual: true_relative_residual(a, setup.b, &x)?,
        windows: ledger.windows,
        d2_evaluations: ledger.d2,
        x,
        wait_time,
    })
}

fn true_relative_residual(a: &CsrMatrix, b: &[f64], x: &[f64]) -> Result<f64> {
    let ax = spmv(a, x)?;
    let res: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
    let b_norm = norm2(b);
    Ok(if b_norm > 0.0 {
        norm2(&res) / b_norm
    } else {
        norm2(&res)
    })
}

fn run_simulated(
    p: &Problem,
    mut replicas: Vec<ReplicaHandle>,
) -> Result<(Vec<ReplicaHandle>, Ledger, Finish)> {
    let mut ledger = Ledger::default();
    let mut checkpoint = save_checkpoint(&replicas[0].state);
    let mut done = replicas.iter().all(|r| r.converged(p.b_norm, p.cfg.tol));
    let mut work = 0;
    let mut aborted = false;
    while !done {
        if work >= p.cfg.max_iter {
            aborted = true;
            break;
        }
        work += 1;
        for r in replicas.iter_mut() {
            r.advance(work, p.precond.as_ref());
        }

        if p.variant == Variant::StandardCg {
            let r = &replicas[0];
            if r.is_broken() {
                aborted = true;
                break;
            }
            done = r.converged(p.b_norm, p.cfg.tol);
            continue;
        }

        let iter = replicas[0].state.iter;
        let any_converged = replicas.iter().any(|r| r.converged(p.b_norm, p.cfg.tol));
        if !policy::window_due(iter, p.cfg.d, any_converged) {
            continue;
        }
        let mut window = rendezvous(&mut replicas, iter, work)?;
        let resolution = resolve(
            &mut window,
            &mut replicas,
            p.variant,
            p.cfg.eps1,
            p.cfg.eps2,
            p.b,
            &checkpoint,
        )?;
        done = policy::finished(&resolution, &window.exchanged_norms, p.threshold());
        if p.refresh_checkpoint(resolution.outcome, iter) {
            checkpoint = save_checkpoint(&replicas[0].state);
        }
        ledger.record(window);
    }
    Ok((replicas, ledger, Finish { work, aborted }))
}

#[cfg(test)]
mod tests;
