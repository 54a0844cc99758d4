//! Batch experiments: repeated runs of each solver variant on one problem,
//! per-run CSV rows, and aggregate statistics.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::faultinject::{sample_fault_count, FaultModel};
use crate::resilience::{
    p_both_faulty, p_clean_window, p_exactly_one_faulty, run_variant, ExecMode, ResilienceConfig,
    RunSetup, Variant,
};
use crate::sparsemat::{gen_poisson2d, gen_poisson3d, load_matrix_market, spmv, CsrMatrix};

pub const CSV_HEADER: &str = "variant,rep,seed,iterations,fr,rr,aborted,final_rel_residual";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatrixSource {
    File(PathBuf),
    Poisson2d(usize),
    Poisson3d(usize),
}

impl MatrixSource {
    pub fn load(&self) -> Result<CsrMatrix> {
        match self {
            MatrixSource::File(path) => load_matrix_market(path),
            MatrixSource::Poisson2d(k) => gen_poisson2d(*k),
            MatrixSource::Poisson3d(k) => gen_poisson3d(*k),
        }
    }
}

impl FromStr for MatrixSource {
    type Err = Error;

    /// `poisson2d:K`, `poisson3d:K`, or a path to a Matrix Market file.
    fn from_str(s: &str) -> Result<Self> {
        let grid = |k: &str| {
            k.parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("invalid grid size in `{s}`")))
        };
        match s.split_once(':') {
            Some(("poisson2d", k)) => Ok(MatrixSource::Poisson2d(grid(k)?)),
            Some(("poisson3d", k)) => Ok(MatrixSource::Poisson3d(grid(k)?)),
            _ => Ok(MatrixSource::File(PathBuf::from(s))),
        }
    }
}

impl fmt::Display for MatrixSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixSource::File(p) => {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix");
                f.write_str(stem)
            }
            MatrixSource::Poisson2d(k) => write!(f, "poisson2d:{k}"),
            MatrixSource::Poisson3d(k) => write!(f, "poisson3d:{k}"),
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub matrix: MatrixSource,
    pub variants: Vec<Variant>,
    pub precond: bool,
    pub lambda: f64,
    pub bits: (u32, u32),
    pub seed: u64,
    pub reps: usize,
    pub cfg: ResilienceConfig,
    pub mode: ExecMode,
}

impl ExperimentSpec {
    /// All variants, Jacobi PCG, 60 repetitions, no faults.
    pub fn new(matrix: MatrixSource) -> Self {
        Self {
            matrix,
            variants: Variant::ALL.to_vec(),
            precond: true,
            lambda: 0.0,
            bits: (0, 63),
            seed: 0,
            reps: 60,
            cfg: ResilienceConfig::default(),
            mode: ExecMode::concurrent(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be >= 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidArgument("no solver variant selected".into()));
        }
        self.cfg.validate()?;
        self.fault_model(0).map(|_| ())
    }

    pub fn fault_model(&self, rep: usize) -> Result<FaultModel> {
        FaultModel::new(self.lambda, self.bits.0, self.bits.1, self.rep_seed(rep))
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub variant: String,
    pub rep: usize,
    pub seed: u64,
    pub iterations: usize,
    pub fr: usize,
    pub rr: usize,
    pub aborted: bool,
    pub final_rel_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub variant: Variant,
    pub runs: usize,
    pub mean_fr: f64,
    pub mean_rr: f64,
    /// Aborted runs contribute their capped iteration count.
    pub mean_iterations: f64,
    pub abort_fraction: f64,
}

impl AggregateStats {
    pub fn from_rows(variant: Variant, rows: &[RunRow]) -> Self {
        let mine: Vec<&RunRow> = rows
            .iter()
            .filter(|r| r.variant == variant.name())
            .collect();
        let n = mine.len().max(1) as f64;
        let mean = |f: &dyn Fn(&RunRow) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / n;
        Self {
            variant,
            runs: mine.len(),
            mean_fr: mean(&|r| r.fr as f64),
            mean_rr: mean(&|r| r.rr as f64),
            mean_iterations: mean(&|r| r.iterations as f64),
            abort_fraction: mean(&|r| if r.aborted { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub problem: String,
    pub rows: Vec<RunRow>,
    pub stats: Vec<AggregateStats>,
    /// Runs that failed with a runtime error; they appear in `rows` as aborted.
    pub failures: Vec<String>,
}

impl ExperimentResult {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Aggregate table with one line per variant.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:<16} {:>16} {:>16} {:>16} {:>16}",
            "Problem", "Iterative solver", "# RR", "# FR", "# Iter", "% aborted"
        );
        for st in &self.stats {
            let _ = writeln!(
                s,
                "{:<16} {:<16} {:>16} {:>16} {:>16} {:>16}",
                self.problem,
                st.variant.name(),
                sig12(st.mean_rr),
                sig12(st.mean_fr),
                sig12(st.mean_iterations),
                sig12(100.0 * st.abort_fraction),
            );
        }
        s
    }

    pub fn stats_for(&self, variant: Variant) -> Option<&AggregateStats> {
        self.stats.iter().find(|s| s.variant == variant)
    }
}

/// Formats with 12 significant digits.
pub fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Right-hand side with the all-ones vector as exact solution.
pub fn ones_rhs(a: &CsrMatrix) -> Result<Vec<f64>> {
    spmv(a, &vec![1.0; a.n()])
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let a = spec.matrix.load()?;
    let b = ones_rhs(&a)?;
    run_on(spec, &a, &b)
}

/// Like [`run_experiment`] on an already loaded system.
pub fn run_on(spec: &ExperimentSpec, a: &CsrMatrix, b: &[f64]) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.variants.len() * spec.reps);
    let mut failures = Vec::new();
    for &variant in &spec.variants {
        for rep in 0..spec.reps {
            let setup = RunSetup::new(a, b)
                .with_precond(spec.precond)
                .with_cfg(spec.cfg)
                .with_faults(spec.fault_model(rep)?)
                .with_mode(spec.mode);
            let seed = spec.rep_seed(rep);
            let row = match run_variant(variant, &setup) {
                Ok(r) => RunRow {
                    variant: variant.name().into(),
                    rep,
                    seed,
                    iterations: r.iterations,
                    fr: r.fr_count,
                    rr: r.rr_count,
                    aborted: r.aborted,
                    final_rel_residual: r.final_rel_residual,
                },
                Err(e) => {
                    failures.push(format!("{} rep {rep}: {e}", variant.name()));
                    RunRow {
                        variant: variant.name().into(),
                        rep,
                        seed,
                        iterations: spec.cfg.max_iter,
                        fr: 0,
                        rr: 0,
                        aborted: true,
                        final_rel_residual: f64::NAN,
                    }
                }
            };
            rows.push(row);
        }
    }
    let stats = spec
        .variants
        .iter()
        .map(|&v| AggregateStats::from_rows(v, &rows))
        .collect();
    Ok(ExperimentResult {
        problem: spec.matrix.to_string(),
        rows,
        stats,
        failures,
    })
}

/// Analytic window-class probability next to its Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeLine {
    pub label: &'static str,
    pub analytic: f64,
    pub empirical: f64,
    /// Standard error of the empirical frequency, from the analytic probability.
    pub stderr: f64,
}

impl ProbeLine {
    pub fn z_score(&self) -> f64 {
        if self.stderr == 0.0 {
            if self.empirical == self.analytic {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.empirical - self.analytic) / self.stderr
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub lambda: f64,
    pub d: usize,
    pub samples: usize,
    pub lines: [ProbeLine; 3],
}

impl fmt::Display for ProbeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "lambda={} d={} windows={}",
            self.lambda, self.d, self.samples
        )?;
        writeln!(
            f,
            "{:<14} {:>12} {:>12} {:>12} {:>8}",
            "class", "analytic", "monte-carlo", "stderr", "z"
        )?;
        for l in &self.lines {
            writeln!(
                f,
                "{:<14} {:>12.6} {:>12.6} {:>12.2e} {:>8.2}",
                l.label,
                l.analytic,
                l.empirical,
                l.stderr,
                l.z_score()
            )?;
        }
        Ok(())
    }
}

/// Simulates `samples` windows of `d` iterations for two replicas with
/// independent Poisson fault streams and classifies each window as clean,
/// exactly-one-faulty, or both-faulty.
pub fn probe_probabilities(
    lambda: f64,
    d: usize,
    samples: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if d == 0 || samples == 0 {
        return Err(Error::InvalidArgument("d and samples must be >= 1".into()));
    }
    let model = FaultModel::uniform(lambda, seed)?;
    let mut streams = [model.replica_rng(0), model.replica_rng(1)];
    let mut counts = [0usize; 3];
    for _ in 0..samples {
        let hit = streams
            .iter_mut()
            .map(|rng| {
                (0..d)
                    .map(|_| sample_fault_count(&model, rng))
                    .sum::<usize>()
                    > 0
            })
            .filter(|&h| h)
            .count();
        counts[hit] += 1;
    }
    let d32 = d as u32;
    let analytic = [
        p_clean_window(lambda, d32, 2),
        p_exactly_one_faulty(lambda, d32),
        p_both_faulty(lambda, d32),
    ];
    let labels = ["clean", "exactly-one", "both"];
    let n = samples as f64;
    let lines = std::array::from_fn(|i| ProbeLine {
        label: labels[i],
        analytic: analytic[i],
        empirical: counts[i] as f64 / n,
        stderr: (analytic[i] * (1.0 - analytic[i]) / n).sqrt(),
    });
    Ok(ProbeReport {
        lambda,
        d,
        samples,
        lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_source_parsing() {
        assert_eq!(
            "poisson2d:10".parse::<MatrixSource>().unwrap(),
            MatrixSource::Poisson2d(10)
        );
        assert_eq!(
            "poisson3d:4".parse::<MatrixSource>().unwrap(),
            MatrixSource::Poisson3d(4)
        );
        assert_eq!(
            "data/apache1.mtx".parse::<MatrixSource>().unwrap(),
            MatrixSource::File(PathBuf::from("data/apache1.mtx"))
        );
        assert!("poisson2d:x".parse::<MatrixSource>().is_err());
        assert_eq!(
            MatrixSource::File("x/apache1.mtx".into()).to_string(),
            "apache1"
        );
    }

    #[test]
    fn sig12_formatting() {
        assert_eq!(sig12(548.125), "548.125000000");
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(6000.0), "6000.00000000");
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::new(MatrixSource::Poisson2d(4));
        spec.validate().unwrap();
        spec.reps = 0;
        assert!(spec.validate().is_err());
        spec.reps = 1;
        spec.variants.clear();
        assert!(spec.validate().is_err());
        spec.variants = vec![Variant::TwinCg];
        spec.bits = (60, 70);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn fault_free_experiment() {
        let mut spec = ExperimentSpec::new(MatrixSource::Poisson2d(8));
        spec.reps = 2;
        let res = run_experiment(&spec).unwrap();
        assert_eq!(res.rows.len(), 8);
        let iters = res.stats[0].mean_iterations;
        for st in &res.stats {
            assert_eq!(st.mean_iterations, iters);
            assert_eq!((st.abort_fraction, st.mean_fr, st.mean_rr), (0.0, 0.0, 0.0));
        }
        let csv = res.csv_string().unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().count(), 9);
        assert!(res.table().contains("TwinCG"));
    }

    #[test]
    fn probe_zero_rate_is_exact() {
        let r = probe_probabilities(0.0, 5, 1000, 1).unwrap();
        let vals: Vec<(f64, f64)> = r.lines.iter().map(|l| (l.analytic, l.empirical)).collect();
        assert_eq!(vals, vec![(1.0, 1.0), (0.0, 0.0), (0.0, 0.0)]);
        assert!(r.to_string().contains("exactly-one"));
    }

    #[test]
    fn probe_analytic_column() {
        let r = probe_probabilities(0.01, 5, 10, 1).unwrap();
        assert!((r.lines[0].analytic - 0.9048).abs() < 5e-5);
        assert!((r.lines[1].analytic - 0.0928).abs() < 5e-5);
        assert!((r.lines[2].analytic - 0.0024).abs() < 5e-5);
    }
}
