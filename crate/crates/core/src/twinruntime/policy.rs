//! Window decisions as pure functions of the data replicas exchange, shared
//! by the simulated and the threaded runtime.

use crate::resilience::{d1_check, Variant, WindowOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Resolution {
    pub outcome: WindowOutcome,
    /// Replica whose state overwrites the faulty one on forward recovery.
    pub source: Option<usize>,
}

impl Resolution {
    fn plain(outcome: WindowOutcome) -> Self {
        Self {
            outcome,
            source: None,
        }
    }

    fn forward(faulty: usize, source: usize) -> Self {
        Self {
            outcome: WindowOutcome::ForwardRecovered(faulty),
            source: Some(source),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Screen {
    Decided(Resolution),
    NeedD2,
}

/// A window is held every `d` iterations, and early whenever some replica
/// believes it has converged.
pub(crate) fn window_due(iter: usize, d: usize, any_converged: bool) -> bool {
    iter.is_multiple_of(d) || any_converged
}

/// First stage, on the exchanged residual norms alone.
pub(crate) fn screen(variant: Variant, norms: &[f64], eps1: f64) -> Screen {
    match variant {
        Variant::StandardCg => {
            Screen::Decided(Resolution::plain(WindowOutcome::NoSignificantFault))
        }
        Variant::OnlineAbft => Screen::NeedD2,
        Variant::TwinCg => {
            if d1_check(norms[0], norms[1], eps1) {
                Screen::Decided(Resolution::plain(WindowOutcome::NoSignificantFault))
            } else {
                Screen::NeedD2
            }
        }
        Variant::Tmr => Screen::Decided(majority(norms, eps1)),
    }
}

/// Replicas that agree (under D1) with no other replica are dissenters.
fn majority(norms: &[f64], eps1: f64) -> Resolution {
    let agrees = |i: usize| (0..norms.len()).any(|j| j != i && d1_check(norms[i], norms[j], eps1));
    let dissenters: Vec<usize> = (0..norms.len()).filter(|&i| !agrees(i)).collect();
    match dissenters.as_slice() {
        [] => Resolution::plain(WindowOutcome::NoSignificantFault),
        [faulty] => {
            let source = (0..norms.len())
                .find(|i| i != faulty)
                .expect("three replicas");
            Resolution::forward(*faulty, source)
        }
        _ => Resolution::plain(WindowOutcome::RolledBack),
    }
}

/// Second stage, once every replica reported its D2 verdict.
pub(crate) fn after_d2(verdicts: &[bool]) -> Resolution {
    let failed: Vec<usize> = (0..verdicts.len()).filter(|&i| !verdicts[i]).collect();
    let passed: Vec<usize> = (0..verdicts.len()).filter(|&i| verdicts[i]).collect();
    match (failed.as_slice(), passed.first()) {
        ([], _) if verdicts.len() == 1 => Resolution::plain(WindowOutcome::NoSignificantFault),
        ([], _) => Resolution::plain(WindowOutcome::ContinuedBothPassedD2),
        ([faulty], Some(&source)) => Resolution::forward(*faulty, source),
        _ => Resolution::plain(WindowOutcome::RolledBack),
    }
}

/// Whether the run stops after this window: nothing rolled back and every
/// replica's post-recovery residual norm is below `threshold`.
pub(crate) fn finished(res: &Resolution, norms: &[f64], threshold: f64) -> bool {
    match res.outcome {
        WindowOutcome::RolledBack => false,
        WindowOutcome::ForwardRecovered(faulty) => {
            let source = res.source.expect("forward recovery has a source");
            norms.iter().enumerate().all(|(i, &n)| {
                if i == faulty {
                    norms[source] <= threshold
                } else {
                    n <= threshold
                }
            })
        }
        _ => norms.iter().all(|&n| n <= threshold),
    }
}
