use super::*;
use crate::faultinject::{FaultModel, ScriptedFault};
use crate::resilience::{run_variant, ResilienceConfig};
use crate::sparsemat::gen_poisson2d;

fn poisson(k: usize) -> (CsrMatrix, Vec<f64>) {
    let a = gen_poisson2d(k).unwrap();
    let b = spmv(&a, &vec![1.0; a.n()]).unwrap();
    (a, b)
}

/// nnz index of `A[row][row]`.
fn diag_index(a: &CsrMatrix, row: usize) -> usize {
    let start = a.row_ptr()[row];
    start
        + a.col_idx()[start..a.row_ptr()[row + 1]]
            .iter()
            .position(|&c| c == row)
            .unwrap()
}

/// Clears the top exponent bit of a 4.0 diagonal entry, turning it into 2^-1022.
fn kill_diag(
    a: &CsrMatrix,
    replica: usize,
    iteration: usize,
    row: usize,
) -> (usize, ScriptedFault) {
    (
        replica,
        ScriptedFault {
            iteration,
            nnz_index: diag_index(a, row),
            bit: 62,
        },
    )
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn fault_free(variant: Variant, a: &CsrMatrix, b: &[f64]) -> RunReport {
    run_variant(variant, &RunSetup::new(a, b)).unwrap()
}

#[test]
fn fault_free_variants_agree() {
    let (a, b) = poisson(10);
    let reference = fault_free(Variant::StandardCg, &a, &b);
    assert!(!reference.aborted);
    for variant in Variant::ALL {
        for precond in [false, true] {
            let setup = RunSetup::new(&a, &b).with_precond(precond);
            let r = run_variant(variant, &setup).unwrap();
            let base = run_variant(Variant::StandardCg, &setup).unwrap();
            assert_eq!(r.iterations, base.iterations, "{variant}");
            assert_eq!(bits(&r.x), bits(&base.x), "{variant}");
            assert_eq!((r.fr_count, r.rr_count, r.aborted), (0, 0, false));
            assert!(r
                .windows
                .iter()
                .all(|w| w.outcome == WindowOutcome::NoSignificantFault));
        }
    }
    let twin = fault_free(Variant::TwinCg, &a, &b);
    assert_eq!(twin.d2_evaluations, 0);
    let abft = fault_free(Variant::OnlineAbft, &a, &b);
    assert_eq!(abft.d2_evaluations, abft.windows.len());
}

#[test]
fn window_schedule_is_every_d_iterations() {
    let (a, b) = poisson(10);
    let r = fault_free(Variant::TwinCg, &a, &b);
    let iters: Vec<usize> = r.windows.iter().map(|w| w.iter).collect();
    let last = *iters.last().unwrap();
    assert_eq!(last, r.iterations);
    let regular: Vec<usize> = (1..).map(|k| 5 * k).take_while(|&i| i < last).collect();
    assert_eq!(&iters[..regular.len()], regular.as_slice());
}

#[test]
fn single_replica_fault_is_forward_recovered() {
    let (a, b) = poisson(10);
    let clean = fault_free(Variant::TwinCg, &a, &b);
    let setup = RunSetup::new(&a, &b).with_script(vec![kill_diag(&a, 0, 3, 0)]);
    let r = run_variant(Variant::TwinCg, &setup).unwrap();
    assert_eq!(r.windows[0].outcome, WindowOutcome::ForwardRecovered(0));
    assert_eq!(r.windows[0].iter, 5);
    assert_eq!((r.fr_count, r.rr_count), (1, 0));
    // no iteration lost: the healthy trajectory simply continues
    assert_eq!(r.iterations, clean.iterations);
    assert_eq!(bits(&r.x), bits(&clean.x));
    assert_eq!(r.d2_evaluations, 2);
    assert_eq!(r.windows[0].faults, vec![1, 0]);
}

#[test]
fn faults_in_both_replicas_roll_back() {
    let (a, b) = poisson(10);
    let clean = fault_free(Variant::TwinCg, &a, &b);
    let setup =
        RunSetup::new(&a, &b).with_script(vec![kill_diag(&a, 0, 2, 0), kill_diag(&a, 1, 4, 1)]);
    let r = run_variant(Variant::TwinCg, &setup).unwrap();
    assert_eq!(r.windows[0].outcome, WindowOutcome::RolledBack);
    assert_eq!((r.fr_count, r.rr_count), (0, 1));
    // five replayed iterations from the iteration-0 checkpoint
    assert_eq!(r.iterations, clean.iterations + 5);
    assert_eq!(bits(&r.x), bits(&clean.x));
}

#[test]
fn online_abft_rolls_back_to_last_checkpoint() {
    let (a, b) = poisson(10);
    let clean = fault_free(Variant::OnlineAbft, &a, &b);
    let setup = RunSetup::new(&a, &b).with_script(vec![kill_diag(&a, 0, 7, 0)]);
    let r = run_variant(Variant::OnlineAbft, &setup).unwrap();
    assert_eq!(r.windows[0].outcome, WindowOutcome::NoSignificantFault);
    assert_eq!(r.windows[1].outcome, WindowOutcome::RolledBack);
    assert_eq!((r.windows[1].iter, r.windows[2].iter), (10, 5));
    assert_eq!(r.rr_count, 1);
    assert_eq!(r.iterations, clean.iterations + 10);
    assert_eq!(bits(&r.x), bits(&clean.x));
}

#[test]
fn online_abft_uses_refreshed_checkpoint() {
    let (a, b) = poisson(10);
    let clean = fault_free(Variant::OnlineAbft, &a, &b);
    // checkpoint refreshed at 10, fault at 12 detected at 15: replay 5
    let setup = RunSetup::new(&a, &b).with_script(vec![kill_diag(&a, 0, 12, 0)]);
    let r = run_variant(Variant::OnlineAbft, &setup).unwrap();
    assert_eq!(r.windows[2].outcome, WindowOutcome::RolledBack);
    assert_eq!(r.windows[3].iter, 15);
    assert!(r.windows[3].work_iter == 20);
    assert_eq!(r.iterations, clean.iterations + 5);
}

#[test]
fn tmr_majority_and_rollback() {
    let (a, b) = poisson(10);
    let clean = fault_free(Variant::Tmr, &a, &b);
    let one = RunSetup::new(&a, &b).with_script(vec![kill_diag(&a, 2, 3, 0)]);
    let r = run_variant(Variant::Tmr, &one).unwrap();
    assert_eq!(r.windows[0].outcome, WindowOutcome::ForwardRecovered(2));
    assert_eq!(r.iterations, clean.iterations);
    assert_eq!(bits(&r.x), bits(&clean.x));
    assert_eq!(r.d2_evaluations, 0);

    let all = RunSetup::new(&a, &b).with_script(vec![
        kill_diag(&a, 0, 3, 0),
        kill_diag(&a, 1, 3, 1),
        kill_diag(&a, 2, 3, 2),
    ]);
    let r = run_variant(Variant::Tmr, &all).unwrap();
    assert_eq!(r.windows[0].outcome, WindowOutcome::RolledBack);
    assert_eq!(r.rr_count, 1);
    assert_eq!(bits(&r.x), bits(&clean.x));
}

#[test]
fn breakdown_aborts_standard_but_is_recovered_by_twin() {
    let (a, b) = poisson(10);
    // -1.0 with the top exponent bit set becomes -Inf
    let inf = |replica| {
        (
            replica,
            ScriptedFault {
                iteration: 2,
                nnz_index: 1,
                bit: 62,
            },
        )
    };
    let setup = RunSetup::new(&a, &b).with_script(vec![inf(0)]);
    let std = run_variant(Variant::StandardCg, &setup).unwrap();
    assert!(std.aborted);
    assert_eq!(std.iterations, ResilienceConfig::default().max_iter);

    let twin = run_variant(Variant::TwinCg, &setup).unwrap();
    assert!(!twin.aborted);
    assert_eq!(twin.windows[0].outcome, WindowOutcome::ForwardRecovered(0));
}

#[test]
fn abort_at_max_iter() {
    let (a, b) = poisson(10);
    let cfg = ResilienceConfig {
        max_iter: 7,
        ..Default::default()
    };
    for variant in Variant::ALL {
        let r = run_variant(variant, &RunSetup::new(&a, &b).with_cfg(cfg)).unwrap();
        assert!(r.aborted);
        assert_eq!(r.iterations, 7);
    }
}

/// Drives two replicas by hand through the public window API.
fn manual_pair(a: &CsrMatrix, b: &[f64], script: Vec<ScriptedFault>) -> Vec<ReplicaHandle> {
    let init = solver::init_state(a, b, &vec![0.0; a.n()], None).unwrap();
    (0..2)
        .map(|id| {
            let s = if id == 0 { script.clone() } else { Vec::new() };
            let inj = FaultInjector::new(FaultModel::fault_free(), id).with_script(s);
            ReplicaHandle::new(id, init.clone(), a.clone(), inj)
        })
        .collect()
}

#[test]
fn window_api_forward_recovery_restores_bit_equality() {
    let (a, b) = poisson(10);
    let fault = ScriptedFault {
        iteration: 2,
        nnz_index: 0,
        bit: 62,
    };
    let mut reps = manual_pair(&a, &b, vec![fault]);
    let ckpt = save_checkpoint(&reps[0].state);
    for work in 1..=5 {
        reps.iter_mut().for_each(|r| r.advance(work, None));
    }
    let mut w = rendezvous(&mut reps, 5, 5).unwrap();
    assert_eq!(w.exchanged_norms.len(), 2);
    let outcome =
        resolve_window(&mut w, &mut reps, Variant::TwinCg, 1e-15, 1e-10, &b, &ckpt).unwrap();
    assert_eq!(outcome, WindowOutcome::ForwardRecovered(0));
    assert!(reps[0].state.bit_eq(&reps[1].state));
    let record = release(w, 5);
    assert_eq!(record.faults, vec![1, 0]);

    // isolation after release
    let peer = reps[1].state.clone();
    reps[0].state.x[0] = 123.0;
    assert!(reps[1].state.bit_eq(&peer));
    reps[0].state.x[0] = peer.x[0];

    for work in 6..=10 {
        reps.iter_mut().for_each(|r| r.advance(work, None));
        assert!(reps[0].state.bit_eq(&reps[1].state));
    }
}

#[test]
fn window_api_rollback_matches_checkpoint() {
    let (a, b) = poisson(10);
    let mut reps = manual_pair(
        &a,
        &b,
        vec![ScriptedFault {
            iteration: 2,
            nnz_index: 0,
            bit: 62,
        }],
    );
    // second replica hit too
    reps[1] = {
        let init = solver::init_state(&a, &b, &vec![0.0; a.n()], None).unwrap();
        let inj =
            FaultInjector::new(FaultModel::fault_free(), 1).with_script(vec![ScriptedFault {
                iteration: 4,
                nnz_index: diag_index(&a, 1),
                bit: 62,
            }]);
        ReplicaHandle::new(1, init, a.clone(), inj)
    };
    let ckpt = save_checkpoint(&reps[0].state);
    for work in 1..=5 {
        reps.iter_mut().for_each(|r| r.advance(work, None));
    }
    let mut w = rendezvous(&mut reps, 5, 5).unwrap();
    let outcome =
        resolve_window(&mut w, &mut reps, Variant::TwinCg, 1e-15, 1e-10, &b, &ckpt).unwrap();
    assert_eq!(outcome, WindowOutcome::RolledBack);
    assert!(reps.iter().all(|r| ckpt.matches(&r.state)));
    assert_eq!(w.d2_evaluations(), 2);
    for work in 6..=10 {
        reps.iter_mut().for_each(|r| r.advance(work, None));
        assert!(reps[0].state.bit_eq(&reps[1].state));
    }
}

#[test]
fn rendezvous_rejects_out_of_step_replicas() {
    let (a, b) = poisson(4);
    let mut reps = manual_pair(&a, &b, Vec::new());
    reps[0].advance(1, None);
    assert!(matches!(
        rendezvous(&mut reps, 1, 1),
        Err(Error::LockStep(_))
    ));
    reps[1].advance(1, None);
    let w = rendezvous(&mut reps, 1, 1).unwrap();
    assert_eq!(w.window_iter, 1);
}

#[test]
fn concurrent_and_simulated_modes_agree() {
    let (a, b) = poisson(12);
    for variant in Variant::ALL {
        for seed in 0..6u64 {
            let faults = FaultModel::new(0.1, 52, 62, seed).unwrap();
            let setup = RunSetup::new(&a, &b)
                .with_faults(faults)
                .with_precond(seed % 2 == 0);
            let sim = run_variant(variant, &setup).unwrap();
            let conc =
                run_variant(variant, &setup.clone().with_mode(ExecMode::concurrent())).unwrap();
            assert!(sim.same_outcome(&conc), "{variant} seed {seed}");
        }
    }
    // scripted schedule as well
    let setup =
        RunSetup::new(&a, &b).with_script(vec![kill_diag(&a, 0, 2, 0), kill_diag(&a, 1, 4, 1)]);
    let sim = run_variant(Variant::TwinCg, &setup).unwrap();
    let conc = run_variant(
        Variant::TwinCg,
        &setup.clone().with_mode(ExecMode::concurrent()),
    )
    .unwrap();
    assert!(sim.same_outcome(&conc));
}

#[test]
fn hundred_window_soak() {
    let (a, b) = poisson(60);
    let cfg = ResilienceConfig {
        d: 1,
        checkpoint_interval: 1,
        ..Default::default()
    };
    let setup = RunSetup::new(&a, &b)
        .with_cfg(cfg)
        .with_mode(ExecMode::concurrent());
    let r = run_variant(Variant::TwinCg, &setup).unwrap();
    assert!(r.windows.len() >= 100, "{}", r.windows.len());
    assert!(r.windows.windows(2).all(|w| w[1].iter == w[0].iter + 1));
    assert!(!r.aborted);
}

#[test]
fn d2_count_matches_failed_d1_windows() {
    let (a, b) = poisson(12);
    for seed in 0..5 {
        let faults = FaultModel::new(0.2, 52, 62, seed).unwrap();
        let r = run_variant(Variant::TwinCg, &RunSetup::new(&a, &b).with_faults(faults)).unwrap();
        let failed_d1 = r
            .windows
            .iter()
            .filter(|w| w.outcome != WindowOutcome::NoSignificantFault)
            .count();
        assert_eq!(r.d2_evaluations, 2 * failed_d1);
    }
}
