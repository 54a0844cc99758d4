//! Transient bit flips in the matrix nonzeros.
//!
//! Per iteration a Poisson-distributed number of faults is drawn; each one
//! picks a nonzero and a bit uniformly and XORs it in place. The flips are
//! undone once the iteration completes, so the matrix is only corrupted while
//! that iteration's SpMxV runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparsemat::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultModel {
    /// Mean number of faults per iteration per replica.
    pub lambda: f64,
    /// Lowest eligible bit (inclusive).
    pub bit_lo: u32,
    /// Highest eligible bit (inclusive).
    pub bit_hi: u32,
    pub seed: u64,
}

impl FaultModel {
    pub fn new(lambda: f64, bit_lo: u32, bit_hi: u32, seed: u64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fault rate must be finite and >= 0, got {lambda}"
            )));
        }
        if bit_lo > bit_hi || bit_hi > 63 {
            return Err(Error::InvalidArgument(format!(
                "bit range {bit_lo}:{bit_hi} not within 0..=63"
            )));
        }
        Ok(Self {
            lambda,
            bit_lo,
            bit_hi,
            seed,
        })
    }

    /// Every bit of every nonzero equally likely.
    pub fn uniform(lambda: f64, seed: u64) -> Result<Self> {
        Self::new(lambda, 0, 63, seed)
    }

    pub fn fault_free() -> Self {
        Self {
            lambda: 0.0,
            bit_lo: 0,
            bit_hi: 63,
            seed: 0,
        }
    }

    /// Independent stream for one replica.
    pub fn replica_rng(&self, replica_id: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ replica_id as u64)
    }
}

/// One applied flip, with enough information to undo it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultEvent {
    pub nnz_index: usize,
    pub bit: u32,
    pub original_bits: u64,
}

/// Poisson(lambda) draw by CDF inversion on a single uniform.
pub fn sample_fault_count<R: Rng + ?Sized>(model: &FaultModel, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut term = (-model.lambda).exp();
    let mut cdf = term;
    let mut k = 0;
    while u >= cdf && term > 0.0 {
        k += 1;
        term *= model.lambda / k as f64;
        cdf += term;
    }
    k
}

/// Samples this iteration's faults and applies them to `a`.
pub fn inject<R: Rng + ?Sized>(
    a: &mut CsrMatrix,
    model: &FaultModel,
    rng: &mut R,
) -> Vec<FaultEvent> {
    let count = sample_fault_count(model, rng);
    if count == 0 || a.nnz() == 0 {
        return Vec::new();
    }
    let nnz = a.nnz();
    (0..count)
        .map(|_| {
            let index = rng.random_range(0..nnz);
            let bit = rng.random_range(model.bit_lo..=model.bit_hi);
            flip(a, index, bit)
        })
        .collect()
}

/// Applies one chosen flip.
pub fn flip(a: &mut CsrMatrix, nnz_index: usize, bit: u32) -> FaultEvent {
    let original_bits = a.flip_value_bit(nnz_index, bit);
    FaultEvent {
        nnz_index,
        bit,
        original_bits,
    }
}

/// Reverts `events` in reverse application order.
pub fn undo(a: &mut CsrMatrix, events: &[FaultEvent]) {
    for ev in events.iter().rev() {
        a.flip_value_bit(ev.nnz_index, ev.bit);
        debug_assert_eq!(a.values()[ev.nnz_index].to_bits(), ev.original_bits);
    }
}

/// A flip forced at a given iteration, for replayable test scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedFault {
    /// 1-based count of iterations executed by the replica (replays included).
    pub iteration: usize,
    pub nnz_index: usize,
    pub bit: u32,
}

/// Per-replica fault source: the random model plus any scripted flips.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    model: FaultModel,
    rng: ChaCha8Rng,
    scripted: Vec<ScriptedFault>,
}

impl FaultInjector {
    pub fn new(model: FaultModel, replica_id: usize) -> Self {
        Self {
            model,
            rng: model.replica_rng(replica_id),
            scripted: Vec::new(),
        }
    }

    pub fn with_script(mut self, script: Vec<ScriptedFault>) -> Self {
        self.scripted = script;
        self
    }

    /// Injects the random faults and then the scripted ones for `iteration`.
    pub fn inject_iteration(&mut self, a: &mut CsrMatrix, iteration: usize) -> Vec<FaultEvent> {
        let mut events = inject(a, &self.model, &mut self.rng);
        for s in self.scripted.iter().filter(|s| s.iteration == iteration) {
            events.push(flip(a, s.nnz_index, s.bit));
        }
        events
    }
}
