//! Closed-form window statistics for replicated CG under Poisson faults.
//!
//! `lambda` is the mean number of faults per replica per iteration and `d`
//! the number of iterations between two detection windows.

/// Chance that at least one of `replicas` replicas is hit in one iteration,
/// treating each replica's hit as a Bernoulli(`lambda`) event.
pub fn p_fault_iter(lambda: f64, replicas: u32) -> f64 {
    1.0 - (1.0 - lambda).powi(replicas as i32)
}

/// Chance that none of `replicas` replicas sees a fault during `d` iterations.
pub fn p_clean_window(lambda: f64, d: u32, replicas: u32) -> f64 {
    (-lambda).exp().powi((d * replicas) as i32)
}

/// Chance that exactly one of two replicas sees at least one fault in a window.
pub fn p_exactly_one_faulty(lambda: f64, d: u32) -> f64 {
    let clean = (-(d as f64) * lambda).exp();
    2.0 * clean * (1.0 - clean)
}

/// Chance that both replicas see at least one fault in a window.
pub fn p_both_faulty(lambda: f64, d: u32) -> f64 {
    let clean = (-(d as f64) * lambda).exp();
    (1.0 - clean).powi(2)
}
