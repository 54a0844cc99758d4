//! Fault detection, recovery, and the four solver-variant drivers.
//!
//! | variant      | replicas | detection              | recovery          |
//! |--------------|----------|------------------------|-------------------|
//! | StandardCG   | 1        | none                   | none              |
//! | Online-ABFT  | 1        | residual check (D2)    | rollback          |
//! | TwinCG       | 2        | norm compare (D1), D2  | forward, rollback |
//! | TMR          | 3        | pairwise D1 majority   | forward, rollback |

mod checks;
mod probability;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

pub use checks::{d1_check, d2_check, forward_recover, residual_gap};
pub use probability::{p_both_faulty, p_clean_window, p_exactly_one_faulty, p_fault_iter};

use crate::error::{Error, Result};
use crate::faultinject::{FaultModel, ScriptedFault};
use crate::sparsemat::CsrMatrix;
use crate::twinruntime;

/// Detection and stopping parameters. Defaults are d=5, checkpoint every 10
/// iterations, eps1=1e-15, eps2=1e-10, tol=1e-10, abort at 6000 iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResilienceConfig {
    pub d: usize,
    pub checkpoint_interval: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ResilienceConfig {
    fn default() -> Self {
        Self {
            d: 5,
            checkpoint_interval: 10,
            eps1: 1e-15,
            eps2: 1e-10,
            tol: 1e-10,
            max_iter: 6000,
        }
    }
}

impl ResilienceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.d == 0 {
            return bad("detection interval must be >= 1".into());
        }
        if self.checkpoint_interval == 0 || !self.checkpoint_interval.is_multiple_of(self.d) {
            return bad(format!(
                "checkpoint interval {} must be a positive multiple of d={}",
                self.checkpoint_interval, self.d
            ));
        }
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2), ("tol", self.tol)] {
            if !(v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    StandardCg,
    OnlineAbft,
    TwinCg,
    Tmr,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::StandardCg,
        Variant::OnlineAbft,
        Variant::TwinCg,
        Variant::Tmr,
    ];

    pub fn replicas(self) -> usize {
        match self {
            Variant::StandardCg | Variant::OnlineAbft => 1,
            Variant::TwinCg => 2,
            Variant::Tmr => 3,
        }
    }

    /// Display name as used in result tables.
    pub fn name(self) -> &'static str {
        match self {
            Variant::StandardCg => "StandardCG",
            Variant::OnlineAbft => "Online-ABFT",
            Variant::TwinCg => "TwinCG",
            Variant::Tmr => "TMR",
        }
    }

    /// Command-line spelling.
    pub fn key(self) -> &'static str {
        match self {
            Variant::StandardCg => "standard",
            Variant::OnlineAbft => "online-abft",
            Variant::TwinCg => "twincg",
            Variant::Tmr => "tmr",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.key().eq_ignore_ascii_case(s) || v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowOutcome {
    NoSignificantFault,
    /// Carries the id of the replica that was overwritten.
    ForwardRecovered(usize),
    RolledBack,
    /// D1 flagged a divergence but every replica passed D2.
    ContinuedBothPassedD2,
}

/// One synchronization window of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    /// Solver iteration index at which the replicas met.
    pub iter: usize,
    /// Total iterations executed so far, replays included.
    pub work_iter: usize,
    /// Iterations executed since the previous window (or rollback target).
    pub span: usize,
    /// Faults injected into each replica during the span.
    pub faults: Vec<usize>,
    pub outcome: WindowOutcome,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub variant: Variant,
    /// Iterations executed, including replays after rollback. Capped runs
    /// report `max_iter`.
    pub iterations: usize,
    pub fr_count: usize,
    pub rr_count: usize,
    pub aborted: bool,
    /// `|b − A·x| / |b|` on the pristine matrix.
    pub final_rel_residual: f64,
    pub windows: Vec<WindowRecord>,
    pub d2_evaluations: usize,
    pub x: Vec<f64>,
    /// Time replicas spent blocked in rendezvous (concurrent mode only).
    pub wait_time: Duration,
}

impl RunReport {
    /// Compares everything except timing, with `x` and the residual bitwise.
    pub fn same_outcome(&self, other: &RunReport) -> bool {
        self.variant == other.variant
            && self.iterations == other.iterations
            && self.fr_count == other.fr_count
            && self.rr_count == other.rr_count
            && self.aborted == other.aborted
            && self.final_rel_residual.to_bits() == other.final_rel_residual.to_bits()
            && self.windows == other.windows
            && self.d2_evaluations == other.d2_evaluations
            && self.x.len() == other.x.len()
            && self
                .x
                .iter()
                .zip(&other.x)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// How replicas are executed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExecMode {
    /// All replicas stepped round-robin on the calling thread.
    Simulated,
    /// One thread per replica; `timeout` bounds every rendezvous.
    Concurrent { timeout: Duration },
}

impl ExecMode {
    pub fn concurrent() -> Self {
        ExecMode::Concurrent {
            timeout: Duration::from_secs(60),
        }
    }
}

/// Inputs of one solver run.
#[derive(Debug, Clone)]
pub struct RunSetup<'a> {
    pub a: &'a CsrMatrix,
    pub b: &'a [f64],
    pub precond: bool,
    pub cfg: ResilienceConfig,
    pub faults: FaultModel,
    /// `(replica id, flip)` pairs applied on top of the random model.
    pub script: Vec<(usize, ScriptedFault)>,
    pub mode: ExecMode,
}

impl<'a> RunSetup<'a> {
    pub fn new(a: &'a CsrMatrix, b: &'a [f64]) -> Self {
        Self {
            a,
            b,
            precond: false,
            cfg: ResilienceConfig::default(),
            faults: FaultModel::fault_free(),
            script: Vec::new(),
            mode: ExecMode::Simulated,
        }
    }

    pub fn with_cfg(mut self, cfg: ResilienceConfig) -> Self {
        self.cfg = cfg;
        self
    }

    pub fn with_faults(mut self, faults: FaultModel) -> Self {
        self.faults = faults;
        self
    }

    pub fn with_precond(mut self, precond: bool) -> Self {
        self.precond = precond;
        self
    }

    pub fn with_script(mut self, script: Vec<(usize, ScriptedFault)>) -> Self {
        self.script = script;
        self
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Plain (P)CG with fault injection and no protection.
pub fn run_standard_cg(setup: &RunSetup) -> Result<RunReport> {
    twinruntime::run(Variant::StandardCg, setup)
}

/// Single replica, residual check every `d` iterations, rollback on failure.
pub fn run_online_abft(setup: &RunSetup) -> Result<RunReport> {
    twinruntime::run(Variant::OnlineAbft, setup)
}

/// Two lock-stepped replicas with forward recovery.
pub fn run_twin_cg(setup: &RunSetup) -> Result<RunReport> {
    twinruntime::run(Variant::TwinCg, setup)
}

/// Three replicas with majority voting.
pub fn run_tmr(setup: &RunSetup) -> Result<RunReport> {
    twinruntime::run(Variant::Tmr, setup)
}

pub fn run_variant(variant: Variant, setup: &RunSetup) -> Result<RunReport> {
    twinruntime::run(variant, setup)
}
