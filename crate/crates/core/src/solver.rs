//! Outer loop: alternate local descent and the optimality certificate,
//! appending atoms until the factorization certifies as a global minimum.

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::certificate::{apply_escape, check, first_order_residual, CertConfig, CertificateReport, Verdict};
use crate::descent::{descend, descend_blocks, DescentConfig};
use crate::error::{Error, Result};
use crate::linalg::vec_norm;
use crate::objective::{objective, Model};
use crate::scalar::{cast, fmt17, Scalar};
use crate::tensor::{Matrix, Tensor3};

/// Full configuration of one certified solve.
#[derive(Debug, Clone)]
pub struct SolverConfig<S> {
    pub lambda: S,
    pub init_r1: usize,
    pub init_r2: usize,
    pub init_seed: u64,
    pub descent: DescentConfig<S>,
    pub cert: CertConfig<S>,
    pub max_outer_rounds: usize,
    /// Drop dead atoms between rounds. Off by default: the optimality theory
    /// assumes atoms are only appended during the certified run.
    pub prune_dead_atoms: bool,
}

impl<S: Scalar> SolverConfig<S> {
    pub fn new(lambda: S) -> Self {
        SolverConfig {
            lambda,
            init_r1: 1,
            init_r2: 1,
            init_seed: 0,
            descent: DescentConfig::accelerated(4000, cast(1e-6)),
            cert: CertConfig::default(),
            max_outer_rounds: 500,
            prune_dead_atoms: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda <= S::zero() {
            return Err(Error::Parameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.max_outer_rounds == 0 {
            return Err(Error::Parameter("max_outer_rounds must be >= 1".into()));
        }
        if self.init_r1 == 0 || self.init_r2 == 0 {
            return Err(Error::Parameter("initial atom counts must be >= 1".into()));
        }
        Ok(())
    }

    fn cert_tol(&self) -> S {
        self.cert.cert_tol
    }
}

/// One outer round: the stationary objective reached, the dictionary sizes,
/// and the certificate evaluated there.
#[derive(Debug, Clone)]
pub struct RoundRecord<S> {
    pub round: usize,
    /// Cumulative descent sweeps up to and including this round.
    pub iter_total: usize,
    pub objective: S,
    pub r1: usize,
    pub r2: usize,
    pub report: CertificateReport<S>,
}

/// History of a solve.
#[derive(Debug, Clone)]
pub struct RunRecord<S> {
    pub rounds: Vec<RoundRecord<S>>,
    pub certified: bool,
    /// First-order identity residual at the final model.
    pub first_order_residual: Option<S>,
    /// Global optimum of the convex relaxation, when it was computed.
    pub oracle_objective: Option<S>,
}

impl<S: Scalar> RunRecord<S> {
    /// Final-round gap to the oracle optimum.
    pub fn oracle_gap(&self) -> Option<S> {
        match (self.oracle_objective, self.rounds.last()) {
            (Some(star), Some(last)) => Some(last.objective - star),
            _ => None,
        }
    }
}

/// Per-round CSV log. The gap column appears only when the oracle optimum is
/// recorded.
pub fn write_run_csv<S: Scalar, W: Write>(w: &mut W, record: &RunRecord<S>) -> Result<()> {
    let with_gap = record.oracle_objective.is_some();
    if with_gap {
        writeln!(w, "round,iter_total,objective,r1,r2,g,p,c,verdict,gap")?;
    } else {
        writeln!(w, "round,iter_total,objective,r1,r2,g,p,c,verdict")?;
    }
    for r in &record.rounds {
        let base = format!(
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            r.iter_total,
            fmt17(r.objective),
            r.r1,
            r.r2,
            fmt17(r.report.g),
            fmt17(r.report.p),
            fmt17(r.report.c),
            r.report.verdict
        );
        if let Some(star) = record.oracle_objective {
            writeln!(w, "{base},{}", fmt17(r.objective - star))?;
        } else {
            writeln!(w, "{base}")?;
        }
    }
    Ok(())
}

/// Error carrying the partial state of a solve whose escape steps stalled
/// twice in a row.
#[derive(Debug)]
pub struct StallAbort<S> {
    pub round: usize,
    pub model: Model<S>,
    pub record: RunRecord<S>,
}

/// Failure modes of [`solve`].
#[derive(Debug)]
pub enum SolveError<S> {
    /// Two consecutive escape steps soft-thresholded to zero; growing the
    /// dictionaries further cannot lower the objective.
    Stalled(Box<StallAbort<S>>),
    Core(Error),
}

impl<S: Scalar> fmt::Display for SolveError<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveError::Stalled(s) => write!(
                f,
                "escape step stalled twice in a row at round {} (objective {})",
                s.round,
                s.record.rounds.last().map(|r| fmt17(r.objective)).unwrap_or_default()
            ),
            SolveError::Core(e) => e.fmt(f),
        }
    }
}

impl<S: Scalar> std::error::Error for SolveError<S> {}

impl<S> From<Error> for SolveError<S> {
    fn from(e: Error) -> Self {
        SolveError::Core(e)
    }
}

/// Seeded initial model: unit-norm Gaussian dictionary columns and zero
/// coefficients.
pub fn init_model<S: Scalar>(g: usize, v: usize, t: usize, cfg: &SolverConfig<S>) -> Model<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let mut unit_columns = |rows: usize, cols: usize| -> Matrix<S> {
        let mut m = Matrix::zeros(rows, cols);
        for c in 0..cols {
            let col = m.col_mut(c);
            loop {
                for x in col.iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *x = cast(n);
                }
                let norm = vec_norm(col);
                if norm > S::zero() {
                    for x in col.iter_mut() {
                        *x = *x / norm;
                    }
                    break;
                }
            }
        }
        m
    };
    let gamma = unit_columns(g, cfg.init_r1);
    let psi = unit_columns(v, cfg.init_r2);
    Model::new(gamma, psi, Tensor3::zeros(cfg.init_r1, cfg.init_r2, t)).expect("consistent dims")
}

/// Remove atoms that contribute nothing: a zero dictionary column or an
/// all-zero coefficient fiber block leaves the reconstruction and the
/// objective untouched. A model pruned empty keeps one zero atom per mode.
pub fn prune<S: Scalar>(m: &Model<S>) -> Model<S> {
    let (r1, r2, t_count) = m.coef().dims();
    let keep1: Vec<usize> = (0..r1)
        .filter(|&i| {
            let col_alive = m.gamma().col(i).iter().any(|&x| x != S::zero());
            let fiber_alive =
                (0..r2).any(|j| (0..t_count).any(|t| m.coef().at(i, j, t) != S::zero()));
            col_alive && fiber_alive
        })
        .collect();
    let keep2: Vec<usize> = (0..r2)
        .filter(|&j| {
            let col_alive = m.psi().col(j).iter().any(|&x| x != S::zero());
            let fiber_alive =
                (0..r1).any(|i| (0..t_count).any(|t| m.coef().at(i, j, t) != S::zero()));
            col_alive && fiber_alive
        })
        .collect();
    if keep1.len() == r1 && keep2.len() == r2 {
        return m.clone();
    }
    let g = m.gamma().rows();
    let v = m.psi().rows();
    if keep1.is_empty() || keep2.is_empty() {
        return Model::zero(g, v, t_count, 1, 1);
    }
    let mut gamma = Matrix::zeros(g, keep1.len());
    for (new_i, &i) in keep1.iter().enumerate() {
        gamma.col_mut(new_i).copy_from_slice(m.gamma().col(i));
    }
    let mut psi = Matrix::zeros(v, keep2.len());
    for (new_j, &j) in keep2.iter().enumerate() {
        psi.col_mut(new_j).copy_from_slice(m.psi().col(j));
    }
    let mut coef = Tensor3::zeros(keep1.len(), keep2.len(), t_count);
    for t in 0..t_count {
        for (new_j, &j) in keep2.iter().enumerate() {
            for (new_i, &i) in keep1.iter().enumerate() {
                coef.set(new_i, new_j, t, m.coef().at(i, j, t));
            }
        }
    }
    Model::new(gamma, psi, coef).expect("consistent dims")
}

/// Run the certified solve from the seeded default initialization.
pub fn solve<S: Scalar>(s: &Tensor3<S>, cfg: &SolverConfig<S>) -> std::result::Result<(Model<S>, RunRecord<S>), SolveError<S>> {
    cfg.validate()?;
    let (g, v, t) = s.dims();
    let m0 = init_model(g, v, t, cfg);
    solve_from(s, m0, cfg)
}

/// Run the certified solve from a caller-supplied warm start.
pub fn solve_from<S: Scalar>(
    s: &Tensor3<S>,
    m0: Model<S>,
    cfg: &SolverConfig<S>,
) -> std::result::Result<(Model<S>, RunRecord<S>), SolveError<S>> {
    cfg.validate()?;
    m0.dims_match(s)?;
    let mut m = m0;
    let mut record = RunRecord { rounds: Vec::new(), certified: false, first_order_residual: None, oracle_objective: None };
    let mut stall_streak = 0usize;
    let mut iter_total = 0usize;
    let tol_floor = cast::<S>(1e-10);

    for round in 0..cfg.max_outer_rounds {
        // descent tolerance halves each round so early rounds stay cheap
        let mut dcfg = cfg.descent.clone();
        dcfg.rel_tol = (cfg.descent.rel_tol * cast::<S>(0.5).powi(round as i32)).max(tol_floor);
        let (next, trace) = descend(s, &m, cfg.lambda, &dcfg)?;
        m = next;
        iter_total += trace.iterations;

        let mut report = check(s, &m, cfg.lambda, &cfg.cert)?;
        if report.verdict == Verdict::GlobalOptimal {
            // the dual bound holds; polish until the first-order identity
            // holds to the same tolerance before declaring optimality
            let mut stationarity = first_order_residual(s, &m, cfg.lambda)?;
            if stationarity > cfg.cert_tol() {
                // plain sweeps (no lookahead) followed by a coefficient-only
                // refresh pin the first-order identity at the final model
                let mut polish = cfg.descent.clone();
                polish.rel_tol = S::epsilon() * cast::<S>(100.0);
                polish.nesterov = false;
                let (next, trace) = descend(s, &m, cfg.lambda, &polish)?;
                iter_total += trace.iterations;
                let (next, trace) = descend_blocks(s, &next, cfg.lambda, &polish, false, false)?;
                m = next;
                iter_total += trace.iterations;
                report = check(s, &m, cfg.lambda, &cfg.cert)?;
                stationarity = first_order_residual(s, &m, cfg.lambda)?;
            }
            if report.verdict == Verdict::GlobalOptimal {
                let f = objective(s, &m, cfg.lambda)?;
                let (r1, r2) = m.atom_counts();
                record.rounds.push(RoundRecord { round, iter_total, objective: f, r1, r2, report });
                record.certified = stationarity <= cfg.cert_tol();
                record.first_order_residual = Some(stationarity);
                return Ok((m, record));
            }
            // polishing exposed a violation: fall through and escape
        }

        let f = objective(s, &m, cfg.lambda)?;
        let stalled = report.stalled;
        let (r1, r2) = m.atom_counts();
        record.rounds.push(RoundRecord { round, iter_total, objective: f, r1, r2, report });

        stall_streak = if stalled { stall_streak + 1 } else { 0 };
        if stall_streak >= 2 {
            return Err(SolveError::Stalled(Box::new(StallAbort { round, model: m, record })));
        }

        let last_report = &record.rounds.last().expect("just pushed").report;
        m = apply_escape(&m, last_report)?;
        if cfg.prune_dead_atoms {
            m = prune(&m);
        }
    }

    record.first_order_residual = Some(first_order_residual(s, &m, cfg.lambda)?);
    Ok((m, record))
}
