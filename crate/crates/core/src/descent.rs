//! Block proximal gradient descent to a stationary point, with optional
//! Nesterov acceleration and restart.
//!
//! One sweep updates Gamma, then the coefficients, then Psi, recomputing the
//! step constants before each block so every block sees the freshest values
//! of the others. A block whose Lipschitz constant is below the degenerate
//! floor has an identically zero gradient and is skipped for that sweep.

use crate::error::{Error, Result};
use crate::objective::{prox_l2_inplace, soft_threshold, Model, LIPSCHITZ_FLOOR};
use crate::scalar::{cast, Scalar};
use crate::tensor::{Matrix, Tensor3};

/// Convergence parameters of one local descent.
#[derive(Debug, Clone)]
pub struct DescentConfig<S> {
    pub max_iters: usize,
    /// Relative objective residual below which the descent stops:
    /// `|f_k - f_{k-1}| / max(1, |f_k|) < rel_tol`.
    pub rel_tol: S,
    pub nesterov: bool,
    /// With acceleration on, reset the lookahead to the previous iterate
    /// whenever the objective increased.
    pub restart_on_increase: bool,
}

impl<S: Scalar> DescentConfig<S> {
    pub fn new(max_iters: usize, rel_tol: S) -> Self {
        DescentConfig { max_iters, rel_tol, nesterov: false, restart_on_increase: false }
    }

    pub fn accelerated(max_iters: usize, rel_tol: S) -> Self {
        DescentConfig { max_iters, rel_tol, nesterov: true, restart_on_increase: true }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > S::zero()) {
            return Err(Error::Parameter(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// Objective history of a descent run.
#[derive(Debug, Clone)]
pub struct DescentTrace<S> {
    /// Objective value after each executed sweep (main iterates, not
    /// lookahead points).
    pub objective: Vec<S>,
    pub iterations: usize,
    pub converged: bool,
}

/// Momentum bookkeeping for the accelerated variant: the extrapolated
/// lookahead variables gradients are taken at, the previous main iterate,
/// and the constants of the previous sweep for the momentum clamp.
#[derive(Debug, Clone)]
pub struct NesterovState<S> {
    pub s_k: S,
    pub lookahead: Model<S>,
    pub previous: Model<S>,
    pub prev_constants: Option<SweepConstants<S>>,
}

/// The three Lipschitz constants actually used by one sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepConstants<S> {
    pub l_gamma: S,
    pub l_c: S,
    pub l_psi: S,
}

impl<S: Scalar> NesterovState<S> {
    pub fn new(m0: &Model<S>) -> Self {
        NesterovState { s_k: S::one(), lookahead: m0.clone(), previous: m0.clone(), prev_constants: None }
    }
}

/// One acceleration update: on decrease, advance the momentum sequence and
/// extrapolate the lookahead; otherwise keep `s_k` and reset the lookahead
/// to the previous iterate.
pub fn nesterov_step<S: Scalar>(
    state: NesterovState<S>,
    current: &Model<S>,
    previous: &Model<S>,
    f_now: S,
    f_prev: S,
    lc: &SweepConstants<S>,
    lc_prev: &SweepConstants<S>,
) -> NesterovState<S> {
    if f_now < f_prev {
        let s_prev = state.s_k;
        let four = cast::<S>(4.0);
        let s_k = (S::one() + (S::one() + four * s_prev * s_prev).sqrt()) / cast::<S>(2.0);
        // the momentum sequence grows without bound; capping the factor at
        // one keeps long runs finite while leaving early iterations exact
        let mu = ((s_prev - S::one()) / cast::<S>(2.0)).min(S::one());
        let clamp = |l_prev: S, l_now: S| -> S {
            if l_prev > S::zero() && l_now > S::zero() {
                mu.min((l_prev / l_now).sqrt())
            } else {
                mu
            }
        };
        let mu_gamma = clamp(lc_prev.l_gamma, lc.l_gamma);
        let mu_c = clamp(lc_prev.l_c, lc.l_c);
        let mu_psi = clamp(lc_prev.l_psi, lc.l_psi);
        let mut look = current.clone();
        extrapolate(look.gamma_mut().data_mut(), current.gamma().data(), previous.gamma().data(), mu_gamma);
        extrapolate(look.coef_mut().data_mut(), current.coef().data(), previous.coef().data(), mu_c);
        extrapolate(look.psi_mut().data_mut(), current.psi().data(), previous.psi().data(), mu_psi);
        NesterovState { s_k, lookahead: look, previous: current.clone(), prev_constants: Some(*lc) }
    } else {
        NesterovState {
            s_k: state.s_k,
            lookahead: previous.clone(),
            previous: current.clone(),
            prev_constants: Some(*lc),
        }
    }
}

fn extrapolate<S: Scalar>(out: &mut [S], current: &[S], previous: &[S], mu: S) {
    for ((o, &c), &p) in out.iter_mut().zip(current).zip(previous) {
        *o = c + mu * (c - p);
    }
}

/// Full descent over all three blocks.
pub fn descend<S: Scalar>(
    s: &Tensor3<S>,
    m0: &Model<S>,
    lambda: S,
    cfg: &DescentConfig<S>,
) -> Result<(Model<S>, DescentTrace<S>)> {
    descend_blocks(s, m0, lambda, cfg, true, true)
}

/// Descent with the dictionary updates optionally disabled; sparse coding
/// against fixed dictionaries runs with both flags off.
pub fn descend_blocks<S: Scalar>(
    s: &Tensor3<S>,
    m0: &Model<S>,
    lambda: S,
    cfg: &DescentConfig<S>,
    update_gamma: bool,
    update_psi: bool,
) -> Result<(Model<S>, DescentTrace<S>)> {
    cfg.validate()?;
    m0.dims_match(s)?;
    if lambda <= S::zero() {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }

    let mut m = m0.clone();
    let mut ws = Workspace::new(s, m0.atom_counts());
    let mut f_prev = ws.objective(s, &m, lambda);
    if !f_prev.is_finite() {
        return Err(Error::Numerical { iteration: 0, message: format!("objective at start is {f_prev}") });
    }
    let mut trace = Vec::new();
    let mut nesterov = NesterovState::new(&m);
    let mut converged = false;

    for k in 1..=cfg.max_iters {
        let mut next = if cfg.nesterov { nesterov.lookahead.clone() } else { m.clone() };
        let (used, f_now) = ws.sweep(s, &mut next, lambda, update_gamma, update_psi);
        if !f_now.is_finite() {
            return Err(Error::Numerical { iteration: k, message: format!("objective became {f_now}") });
        }
        trace.push(f_now);

        if cfg.nesterov {
            let prev_used = nesterov.prev_constants.unwrap_or(used);
            let state = std::mem::replace(&mut nesterov, NesterovState::new(&next));
            nesterov = if cfg.restart_on_increase || f_now < f_prev {
                nesterov_step(state, &next, &m, f_now, f_prev, &used, &prev_used)
            } else {
                // restart disabled: force the momentum branch
                nesterov_step(state, &next, &m, -S::one(), S::zero(), &used, &prev_used)
            };
        }

        let resid = (f_now - f_prev).abs() / f_now.abs().max(S::one());
        // an accelerated restart produces a near-equal objective pair while
        // progress continues, so only decreasing sweeps count as converged
        let decreasing = f_now <= f_prev;
        m = next;
        f_prev = f_now;
        if resid < cfg.rel_tol && decreasing {
            converged = true;
            break;
        }
    }

    let iterations = trace.len();
    Ok((m, DescentTrace { objective: trace, iterations, converged }))
}

/// Per-descent scratch space. Gradients, step constants and the objective
/// are evaluated through the Gram matrices of the dictionaries and cached
/// per-slice contractions through the small first mode, so a sweep never
/// materializes the G x V x T reconstruction.
struct Workspace<S> {
    s_norm2: S,
    /// `S_t Psi`, one `G x r2` block per slice; valid while Psi is unchanged.
    s_psi: Vec<Matrix<S>>,
    s_psi_valid: bool,
    /// `Gamma^T S_t Psi`, one `r1 x r2` block per slice; valid while both
    /// dictionaries are unchanged (constant throughout sparse coding).
    gsp: Vec<Matrix<S>>,
    gsp_valid: bool,
    /// `C_t Q` blocks shared between the Gamma and coefficient steps of one
    /// sweep.
    cq: Vec<Matrix<S>>,
    cq_valid: bool,
}

impl<S: Scalar> Workspace<S> {
    fn new(s: &Tensor3<S>, (r1, r2): (usize, usize)) -> Self {
        let (g, _, t_count) = s.dims();
        Workspace {
            s_norm2: s.data().iter().map(|x| *x * *x).sum(),
            s_psi: (0..t_count).map(|_| Matrix::zeros(g, r2)).collect(),
            s_psi_valid: false,
            gsp: (0..t_count).map(|_| Matrix::zeros(r1, r2)).collect(),
            gsp_valid: false,
            cq: (0..t_count).map(|_| Matrix::zeros(r1, r2)).collect(),
            cq_valid: false,
        }
    }

    fn ensure_s_psi(&mut self, s: &Tensor3<S>, psi: &Matrix<S>) {
        if self.s_psi_valid {
            return;
        }
        let (g, v, t_count) = s.dims();
        for t in 0..t_count {
            let slice = s.slice_data(t);
            let out = &mut self.s_psi[t];
            out.data_mut().fill(S::zero());
            for j in 0..psi.cols() {
                let pj = psi.col(j);
                let oj = out.col_mut(j);
                for vv in 0..v {
                    let w = pj[vv];
                    if w == S::zero() {
                        continue;
                    }
                    let sv = &slice[g * vv..g * (vv + 1)];
                    for (o, &x) in oj.iter_mut().zip(sv) {
                        *o += x * w;
                    }
                }
            }
        }
        self.s_psi_valid = true;
    }

    fn ensure_gsp(&mut self, s: &Tensor3<S>, gamma: &Matrix<S>, psi: &Matrix<S>) {
        if self.gsp_valid {
            return;
        }
        self.ensure_s_psi(s, psi);
        for (block, sp) in self.gsp.iter_mut().zip(&self.s_psi) {
            tr_mat_times_mat(gamma, sp, block);
        }
        self.gsp_valid = true;
    }

    /// One Gauss-Seidel sweep Gamma -> C -> Psi on `w`, followed by the
    /// objective evaluation at the new iterate. Returns the Lipschitz
    /// constants used and the objective value.
    fn sweep(
        &mut self,
        s: &Tensor3<S>,
        w: &mut Model<S>,
        lambda: S,
        update_gamma: bool,
        update_psi: bool,
    ) -> (SweepConstants<S>, S) {
        let floor = cast::<S>(LIPSCHITZ_FLOOR);
        let (r1, r2, t_count) = w.coef().dims();
        let mut used = SweepConstants { l_gamma: S::zero(), l_c: S::zero(), l_psi: S::zero() };

        // the work point moved since the caches were filled
        if update_gamma {
            self.gsp_valid = false;
        }
        if update_psi {
            self.s_psi_valid = false;
            self.gsp_valid = false;
        }
        self.cq_valid = false;

        let q = w.psi().tr_matmul(w.psi()); // r2 x r2
        let pnorm: Vec<S> = (0..r2).map(|j| q.at(j, j).sqrt()).collect();

        if update_gamma {
            // L_Gamma = ||sum_t C_t Q C_t^T||,
            // grad = Gamma M - sum_t (S_t Psi) C_t^T
            let mut m_acc = Matrix::zeros(r1, r1);
            for t in 0..t_count {
                c_times_q(w.coef().slice_data(t), r1, r2, &q, &mut self.cq[t]);
                acc_a_bt(&self.cq[t], w.coef().slice_data(t), &mut m_acc);
            }
            self.cq_valid = true;
            let l_gamma = m_acc.frob_norm();
            used.l_gamma = l_gamma;
            if l_gamma >= floor {
                self.ensure_s_psi(s, w.psi());
                let fib = fiber_l1(w.coef());
                let step = S::one() / l_gamma;
                let mut grad = w.gamma().matmul(&m_acc); // G x r1
                for t in 0..t_count {
                    acc_a_bt_neg(&self.s_psi[t], w.coef().slice_data(t), r1, &mut grad);
                }
                for i in 0..r1 {
                    let xi = lambda * (0..r2).map(|j| fib.at(i, j) * pnorm[j]).sum::<S>() / l_gamma;
                    let gi = grad.col(i);
                    let col = w.gamma_mut().col_mut(i);
                    for (c, &g) in col.iter_mut().zip(gi) {
                        *c = *c - step * g;
                    }
                    prox_l2_inplace(col, xi);
                }
                self.gsp_valid = false;
            }
        }

        // coefficient block with the fresh Gamma
        let p = w.gamma().tr_matmul(w.gamma()); // r1 x r1
        let gnorm: Vec<S> = (0..r1).map(|i| p.at(i, i).sqrt()).collect();
        let l_c = p.frob_norm() * q.frob_norm();
        used.l_c = l_c;
        if l_c >= floor {
            self.ensure_gsp(s, w.gamma(), w.psi());
            let step = S::one() / l_c;
            let mut pcq = Matrix::zeros(r1, r2);
            let mut cqt = Matrix::zeros(r1, r2);
            for t in 0..t_count {
                // grad = P C_t Q - Gamma^T S_t Psi
                if self.cq_valid {
                    p.matmul_into(&self.cq[t], &mut pcq);
                } else {
                    mat_times_cslice(&p, w.coef().slice_data(t), r2, &mut cqt);
                    cqt.matmul_into(&q, &mut pcq);
                }
                let gsp = self.gsp[t].data();
                let ct = w.coef_mut().slice_data_mut(t);
                for j in 0..r2 {
                    for i in 0..r1 {
                        let idx = i + r1 * j;
                        let grad = pcq.data()[idx] - gsp[idx];
                        let kappa = lambda * gnorm[i] * pnorm[j] / l_c;
                        ct[idx] = soft_threshold(ct[idx] - step * grad, kappa);
                    }
                }
            }
            self.cq_valid = false;
        }

        let f = if update_psi {
            // shared contractions: E_t = Gamma C_t gives both
            // L_Psi = ||sum_t E_t^T E_t|| and D = sum_t S_t^T E_t
            let (g, v, _) = s.dims();
            let mut e = Matrix::zeros(g, r2);
            let mut n_acc = Matrix::zeros(r2, r2);
            let mut d = Matrix::zeros(v, r2);
            for t in 0..t_count {
                mat_times_cslice(w.gamma(), w.coef().slice_data(t), r2, &mut e);
                acc_gram(&e, &mut n_acc);
                acc_slice_tr_mul(s.slice_data(t), g, v, &e, &mut d);
            }
            let l_psi = n_acc.frob_norm();
            used.l_psi = l_psi;
            let fib = fiber_l1(w.coef());
            if l_psi >= floor {
                let step = S::one() / l_psi;
                let mut grad = w.psi().matmul(&n_acc); // V x r2
                for (o, &x) in grad.data_mut().iter_mut().zip(d.data()) {
                    *o -= x;
                }
                for j in 0..r2 {
                    let pi = lambda * (0..r1).map(|i| fib.at(i, j) * gnorm[i]).sum::<S>() / l_psi;
                    let gj = grad.col(j);
                    let col = w.psi_mut().col_mut(j);
                    for (c, &g) in col.iter_mut().zip(gj) {
                        *c = *c - step * g;
                    }
                    prox_l2_inplace(col, pi);
                }
                self.s_psi_valid = false;
                self.gsp_valid = false;
            }
            // objective from the block byproducts: D and N are independent
            // of Psi, so they stay exact for the updated iterate
            let q_new = w.psi().tr_matmul(w.psi());
            let cross = d.frob_inner(w.psi());
            let rec2 = q_new.frob_inner(&n_acc);
            let half = cast::<S>(0.5);
            let loss = half * (self.s_norm2 - (cross + cross) + rec2);
            let mut reg = S::zero();
            for j in 0..r2 {
                let pn = q_new.at(j, j).sqrt();
                for i in 0..r1 {
                    reg += gnorm[i] * pn * fib.at(i, j);
                }
            }
            loss + lambda * reg
        } else {
            self.objective_with_grams(s, w, lambda, &p, &q)
        };

        (used, f)
    }

    /// Objective through the Gram expansion:
    /// `1/2 (||S||^2 - 2 sum_t <C_t, Gamma^T S_t Psi> + <Q, sum_t C_t^T P C_t>)`
    /// plus the regularizer.
    fn objective(&mut self, s: &Tensor3<S>, w: &Model<S>, lambda: S) -> S {
        let p = w.gamma().tr_matmul(w.gamma());
        let q = w.psi().tr_matmul(w.psi());
        self.objective_with_grams(s, w, lambda, &p, &q)
    }

    fn objective_with_grams(&mut self, s: &Tensor3<S>, w: &Model<S>, lambda: S, p: &Matrix<S>, q: &Matrix<S>) -> S {
        let (r1, r2, t_count) = w.coef().dims();
        let g = s.dims().0;
        self.ensure_gsp(s, w.gamma(), w.psi());
        let mut cross = S::zero();
        let mut e = Matrix::zeros(g, r2);
        let mut n_acc = Matrix::zeros(r2, r2);
        for t in 0..t_count {
            let ct = w.coef().slice_data(t);
            for (&c, &x) in ct.iter().zip(self.gsp[t].data()) {
                cross += c * x;
            }
            mat_times_cslice(w.gamma(), ct, r2, &mut e);
            acc_gram(&e, &mut n_acc);
        }
        let rec2 = q.frob_inner(&n_acc);
        let half = cast::<S>(0.5);
        let loss = half * (self.s_norm2 - (cross + cross) + rec2);
        let fib = fiber_l1(w.coef());
        let mut reg = S::zero();
        for j in 0..r2 {
            let pn = q.at(j, j).sqrt();
            for i in 0..r1 {
                reg += p.at(i, i).sqrt() * pn * fib.at(i, j);
            }
        }
        loss + lambda * reg
    }
}

/// l1 norms of the coefficient fibers as an `r1 x r2` matrix.
fn fiber_l1<S: Scalar>(coef: &Tensor3<S>) -> Matrix<S> {
    let (r1, r2, t_count) = coef.dims();
    let mut out = Matrix::zeros(r1, r2);
    for t in 0..t_count {
        let slice = coef.slice_data(t);
        for (o, &x) in out.data_mut().iter_mut().zip(slice) {
            *o += x.abs();
        }
    }
    out
}

/// `out = C q` for a column-major `r1 x r2` slice `c`.
fn c_times_q<S: Scalar>(c: &[S], r1: usize, r2: usize, q: &Matrix<S>, out: &mut Matrix<S>) {
    out.data_mut().fill(S::zero());
    for j in 0..r2 {
        for k in 0..r2 {
            let w = q.at(k, j);
            if w == S::zero() {
                continue;
            }
            let ck = &c[r1 * k..r1 * (k + 1)];
            let oj = out.col_mut(j);
            for (o, &x) in oj.iter_mut().zip(ck) {
                *o += x * w;
            }
        }
    }
}

/// `out = a C` for a column-major slice `c` with `a.cols()` rows.
fn mat_times_cslice<S: Scalar>(a: &Matrix<S>, c: &[S], ncols: usize, out: &mut Matrix<S>) {
    let inner = a.cols();
    out.data_mut().fill(S::zero());
    for j in 0..ncols {
        let cj = &c[inner * j..inner * (j + 1)];
        let oj = out.col_mut(j);
        for (k, &w) in cj.iter().enumerate() {
            if w == S::zero() {
                continue;
            }
            for (o, &x) in oj.iter_mut().zip(a.col(k)) {
                *o += x * w;
            }
        }
    }
}

/// `out = a^T b` reusing the output allocation.
fn tr_mat_times_mat<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>, out: &mut Matrix<S>) {
    for j in 0..b.cols() {
        let bj = b.col(j);
        let oj = out.col_mut(j);
        for (i, o) in oj.iter_mut().enumerate() {
            let ai = a.col(i);
            let mut acc = S::zero();
            for (&x, &y) in ai.iter().zip(bj) {
                acc += x * y;
            }
            *o = acc;
        }
    }
}

/// `acc += a b^T` where `b` is a column-major slice with `a.cols()` columns.
fn acc_a_bt<S: Scalar>(a: &Matrix<S>, b: &[S], acc: &mut Matrix<S>) {
    let cols = a.cols();
    let b_rows = acc.cols();
    debug_assert_eq!(b.len(), b_rows * cols);
    for k in 0..cols {
        let ak = a.col(k);
        for j in 0..b_rows {
            let w = b[j + b_rows * k];
            if w == S::zero() {
                continue;
            }
            let oj = acc.col_mut(j);
            for (o, &x) in oj.iter_mut().zip(ak) {
                *o += x * w;
            }
        }
    }
}

/// `acc -= a b^T` with `b` a column-major `b_rows x a.cols()` slice.
fn acc_a_bt_neg<S: Scalar>(a: &Matrix<S>, b: &[S], b_rows: usize, acc: &mut Matrix<S>) {
    let cols = a.cols();
    debug_assert_eq!(b.len(), b_rows * cols);
    for k in 0..cols {
        let ak = a.col(k);
        for j in 0..b_rows {
            let w = b[j + b_rows * k];
            if w == S::zero() {
                continue;
            }
            let oj = acc.col_mut(j);
            for (o, &x) in oj.iter_mut().zip(ak) {
                *o -= x * w;
            }
        }
    }
}

/// `acc += e^T e`.
fn acc_gram<S: Scalar>(e: &Matrix<S>, acc: &mut Matrix<S>) {
    let n = e.cols();
    for j in 0..n {
        let ej = e.col(j);
        for i in 0..=j {
            let ei = e.col(i);
            let mut dot = S::zero();
            for (&x, &y) in ei.iter().zip(ej) {
                dot += x * y;
            }
            acc.set(i, j, acc.at(i, j) + dot);
            if i != j {
                acc.set(j, i, acc.at(j, i) + dot);
            }
        }
    }
}

/// `acc += slice^T e` where `slice` is a column-major `g x v` block.
fn acc_slice_tr_mul<S: Scalar>(slice: &[S], g: usize, v: usize, e: &Matrix<S>, acc: &mut Matrix<S>) {
    for j in 0..e.cols() {
        let ej = e.col(j);
        let oj = acc.col_mut(j);
        for (vv, o) in oj.iter_mut().enumerate().take(v) {
            let sv = &slice[g * vv..g * (vv + 1)];
            let mut dot = S::zero();
            for (&x, &y) in sv.iter().zip(ej) {
                dot += x * y;
            }
            *o += dot;
        }
    }
}
