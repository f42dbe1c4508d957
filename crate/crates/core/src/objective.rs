//! The regularized factorization objective, its partial gradients, the two
//! proximal operators, and the Lipschitz step-size constants.
//!
//! Objective: `1/2 sum_t ||Gamma C_t Psi^T - S_t||_F^2
//!             + lambda sum_{i,j} ||Gamma_i||_2 ||Psi_j||_2 ||C_{i,j}||_1`
//! where `C_{i,j}` is the length-`T` coefficient fiber of atom pair `(i,j)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use crate::tensor::{mode_product, read_matrix_file, read_sdt1_file, write_matrix_file, write_sdt1_file, Matrix, Tensor3};

/// Computed Lipschitz constants below this floor mean the corresponding
/// gradient is identically zero; the descent step for that block is skipped.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

/// Factorization state: first-mode dictionary, second-mode dictionary and
/// coefficient tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    gamma: Matrix<S>,
    psi: Matrix<S>,
    coef: Tensor3<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new(gamma: Matrix<S>, psi: Matrix<S>, coef: Tensor3<S>) -> Result<Self> {
        let (r1, r2, _) = coef.dims();
        if gamma.cols() != r1 || psi.cols() != r2 {
            return Err(Error::Shape(format!(
                "model: coef {:?} needs Gamma with {r1} and Psi with {r2} columns, got {} and {}",
                coef.dims(),
                gamma.cols(),
                psi.cols()
            )));
        }
        Ok(Model { gamma, psi, coef })
    }

    /// All-zero model with the given sizes.
    pub fn zero(g: usize, v: usize, t: usize, r1: usize, r2: usize) -> Self {
        Model { gamma: Matrix::zeros(g, r1), psi: Matrix::zeros(v, r2), coef: Tensor3::zeros(r1, r2, t) }
    }

    pub fn gamma(&self) -> &Matrix<S> {
        &self.gamma
    }

    pub fn psi(&self) -> &Matrix<S> {
        &self.psi
    }

    pub fn coef(&self) -> &Tensor3<S> {
        &self.coef
    }

    pub fn gamma_mut(&mut self) -> &mut Matrix<S> {
        &mut self.gamma
    }

    pub fn psi_mut(&mut self) -> &mut Matrix<S> {
        &mut self.psi
    }

    pub fn coef_mut(&mut self) -> &mut Tensor3<S> {
        &mut self.coef
    }

    /// `(r1, r2)`: atoms per mode.
    pub fn atom_counts(&self) -> (usize, usize) {
        (self.gamma.cols(), self.psi.cols())
    }

    /// `(G, V, T)` of the signals this model reconstructs.
    pub fn signal_dims(&self) -> (usize, usize, usize) {
        (self.gamma.rows(), self.psi.rows(), self.coef.dims().2)
    }

    /// Reconstruction `C x1 Gamma x2 Psi`.
    pub fn reconstruct(&self) -> Tensor3<S> {
        mode_product(&self.coef, &self.gamma, &self.psi).expect("model dims validated at construction")
    }

    pub fn dims_match(&self, s: &Tensor3<S>) -> Result<()> {
        let (g, v, t) = s.dims();
        if self.signal_dims() != (g, v, t) {
            return Err(Error::Shape(format!(
                "model reconstructs {:?}, data is {:?}",
                self.signal_dims(),
                s.dims()
            )));
        }
        Ok(())
    }

    /// Persist as three SDT1 containers (`gamma.sdt1`, `psi.sdt1`, `coef.sdt1`)
    /// inside `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_matrix_file(dir.join("gamma.sdt1"), &self.gamma)?;
        write_matrix_file(dir.join("psi.sdt1"), &self.psi)?;
        write_sdt1_file(dir.join("coef.sdt1"), &self.coef)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let gamma = read_matrix_file(dir.join("gamma.sdt1"))?;
        let psi = read_matrix_file(dir.join("psi.sdt1"))?;
        let coef = read_sdt1_file(dir.join("coef.sdt1"))?;
        Model::new(gamma, psi, coef)
    }
}

/// Step-size constants of one descent sweep.
///
/// `1/l_*` are the gradient step sizes; `xi`, `kappa`, `pi` are the matching
/// proximal thresholds (the regularizer weight of each column or entry
/// divided by the block's Lipschitz constant).
#[derive(Debug, Clone)]
pub struct StepConstants<S> {
    pub l_gamma: S,
    pub l_psi: S,
    pub l_c: S,
    pub xi: Vec<S>,
    pub kappa: Matrix<S>,
    pub pi: Vec<S>,
}

impl<S: Scalar> StepConstants<S> {
    pub fn gamma_active(&self) -> bool {
        self.l_gamma >= cast(LIPSCHITZ_FLOOR)
    }

    pub fn psi_active(&self) -> bool {
        self.l_psi >= cast(LIPSCHITZ_FLOOR)
    }

    pub fn coef_active(&self) -> bool {
        self.l_c >= cast(LIPSCHITZ_FLOOR)
    }
}

/// `1/2 sum_t ||Gamma C_t Psi^T - S_t||_F^2`.
pub fn loss<S: Scalar>(s: &Tensor3<S>, m: &Model<S>) -> Result<S> {
    m.dims_match(s)?;
    let r = residual(s, m);
    Ok(cast::<S>(0.5) * r.data().iter().map(|x| *x * *x).sum::<S>())
}

/// Reconstruction minus data, shared by the loss, the partial gradients and
/// the certificate's dual slices.
pub fn residual<S: Scalar>(s: &Tensor3<S>, m: &Model<S>) -> Tensor3<S> {
    let rec = m.reconstruct();
    rec.sub(s).expect("dims checked by caller")
}

/// `sum_{i,j} ||Gamma_i||_2 ||Psi_j||_2 ||C_{i,j}||_1`.
pub fn regularizer<S: Scalar>(m: &Model<S>) -> S {
    let (r1, r2) = m.atom_counts();
    let gnorm: Vec<S> = (0..r1).map(|i| m.gamma.col_norm(i)).collect();
    let pnorm: Vec<S> = (0..r2).map(|j| m.psi.col_norm(j)).collect();
    let fib = fiber_l1(m.coef());
    let mut acc = S::zero();
    for i in 0..r1 {
        for j in 0..r2 {
            acc += gnorm[i] * pnorm[j] * fib.at(i, j);
        }
    }
    acc
}

/// l1 norm of every coefficient fiber `C_{i,j}` as an `r1 x r2` matrix.
fn fiber_l1<S: Scalar>(coef: &Tensor3<S>) -> Matrix<S> {
    let (r1, r2, t_count) = coef.dims();
    let mut out = Matrix::zeros(r1, r2);
    for t in 0..t_count {
        let slice = coef.slice_data(t);
        for j in 0..r2 {
            for i in 0..r1 {
                let x = slice[i + r1 * j];
                out.set(i, j, out.at(i, j) + x.abs());
            }
        }
    }
    out
}

/// Full objective `loss + lambda * regularizer`.
pub fn objective<S: Scalar>(s: &Tensor3<S>, m: &Model<S>, lambda: S) -> Result<S> {
    if lambda <= S::zero() {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    Ok(loss(s, m)? + lambda * regularizer(m))
}

/// `sum_t (Gamma C_t Psi^T - S_t) Psi C_t^T`, shape `G x r1`.
pub fn grad_gamma<S: Scalar>(s: &Tensor3<S>, m: &Model<S>) -> Result<Matrix<S>> {
    m.dims_match(s)?;
    let res = residual(s, m);
    Ok(grad_gamma_from_residual(&res, m))
}

pub(crate) fn grad_gamma_from_residual<S: Scalar>(res: &Tensor3<S>, m: &Model<S>) -> Matrix<S> {
    let (g, _, t_count) = res.dims();
    let (r1, r2, _) = m.coef.dims();
    let mut out = Matrix::zeros(g, r1);
    for t in 0..t_count {
        let rt = res.slice(t).expect("in range");
        let ct = Matrix::from_vec(r1, r2, m.coef.slice_data(t).to_vec()).expect("finite");
        let pc = m.psi.matmul_tr(&ct); // V x r1
        let term = rt.matmul(&pc); // G x r1
        for (o, &x) in out.data_mut().iter_mut().zip(term.data()) {
            *o += x;
        }
    }
    out
}

/// `sum_t (Psi C_t^T G^T - S_t^T) Gamma C_t`, shape `V x r2`.
pub fn grad_psi<S: Scalar>(s: &Tensor3<S>, m: &Model<S>) -> Result<Matrix<S>> {
    m.dims_match(s)?;
    let res = residual(s, m);
    Ok(grad_psi_from_residual(&res, m))
}

pub(crate) fn grad_psi_from_residual<S: Scalar>(res: &Tensor3<S>, m: &Model<S>) -> Matrix<S> {
    let (_, v, t_count) = res.dims();
    let (r1, r2, _) = m.coef.dims();
    let mut out = Matrix::zeros(v, r2);
    for t in 0..t_count {
        let rt = res.slice(t).expect("in range");
        let ct = Matrix::from_vec(r1, r2, m.coef.slice_data(t).to_vec()).expect("finite");
        let gc = m.gamma.matmul(&ct); // G x r2
        let term = rt.tr_matmul(&gc); // V x r2
        for (o, &x) in out.data_mut().iter_mut().zip(term.data()) {
            *o += x;
        }
    }
    out
}

/// Per-slice `Gamma^T (Gamma C_t Psi^T - S_t) Psi`, stacked as `r1 x r2 x T`.
pub fn grad_coef<S: Scalar>(s: &Tensor3<S>, m: &Model<S>) -> Result<Tensor3<S>> {
    m.dims_match(s)?;
    let res = residual(s, m);
    Ok(grad_coef_from_residual(&res, m))
}

pub(crate) fn grad_coef_from_residual<S: Scalar>(res: &Tensor3<S>, m: &Model<S>) -> Tensor3<S> {
    let (_, _, t_count) = res.dims();
    let (r1, r2, _) = m.coef.dims();
    let mut out = Tensor3::zeros(r1, r2, t_count);
    for t in 0..t_count {
        let rt = res.slice(t).expect("in range");
        let gr = m.gamma.tr_matmul(&rt); // r1 x V
        let term = gr.matmul(&m.psi); // r1 x r2
        out.slice_data_mut(t).copy_from_slice(term.data());
    }
    out
}

/// All three partial gradients from one shared residual evaluation.
pub fn gradients<S: Scalar>(s: &Tensor3<S>, m: &Model<S>) -> Result<(Matrix<S>, Matrix<S>, Tensor3<S>)> {
    m.dims_match(s)?;
    let res = residual(s, m);
    Ok((
        grad_gamma_from_residual(&res, m),
        grad_psi_from_residual(&res, m),
        grad_coef_from_residual(&res, m),
    ))
}

/// Block soft threshold: `(1 - tau/||x||_2) x` when `||x||_2 >= tau`, zero
/// otherwise.
pub fn prox_l2<S: Scalar>(x: &[S], tau: S) -> Result<Vec<S>> {
    if tau < S::zero() {
        return Err(Error::Parameter(format!("prox_l2 threshold must be >= 0, got {tau}")));
    }
    let mut out = x.to_vec();
    prox_l2_inplace(&mut out, tau);
    Ok(out)
}

pub(crate) fn prox_l2_inplace<S: Scalar>(x: &mut [S], tau: S) {
    let norm = crate::linalg::vec_norm(x);
    if norm < tau || norm == S::zero() {
        for v in x {
            *v = S::zero();
        }
    } else {
        let scale = S::one() - tau / norm;
        for v in x {
            *v = *v * scale;
        }
    }
}

/// Scalar soft threshold `max(0, a - tau) - max(0, -a - tau)`.
pub fn prox_abs<S: Scalar>(a: S, tau: S) -> Result<S> {
    if tau < S::zero() {
        return Err(Error::Parameter(format!("prox_abs threshold must be >= 0, got {tau}")));
    }
    Ok(soft_threshold(a, tau))
}

#[inline]
pub(crate) fn soft_threshold<S: Scalar>(a: S, tau: S) -> S {
    (a - tau).max(S::zero()) - (-a - tau).max(S::zero())
}

/// Lipschitz constants and proximal thresholds for one sweep at the current
/// model. Degenerate (below-floor) constants leave the matching threshold
/// vectors zeroed; the sweep skips those blocks.
pub fn step_constants<S: Scalar>(m: &Model<S>, lambda: S) -> Result<StepConstants<S>> {
    if lambda <= S::zero() {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let (r1, r2) = m.atom_counts();
    let (_, _, t_count) = m.coef.dims();
    let floor = cast::<S>(LIPSCHITZ_FLOOR);

    let gram_psi = m.psi.tr_matmul(&m.psi); // r2 x r2
    let gram_gamma = m.gamma.tr_matmul(&m.gamma); // r1 x r1

    // L_Gamma = || sum_t C_t (Psi^T Psi) C_t^T ||_F
    let mut acc_g = Matrix::zeros(r1, r1);
    // L_Psi = || sum_t C_t^T (Gamma^T Gamma) C_t ||_F
    let mut acc_p = Matrix::zeros(r2, r2);
    for t in 0..t_count {
        let ct = Matrix::from_vec(r1, r2, m.coef.slice_data(t).to_vec()).expect("finite");
        let cq = ct.matmul(&gram_psi); // r1 x r2
        let term_g = cq.matmul_tr(&ct); // r1 x r1
        for (o, &x) in acc_g.data_mut().iter_mut().zip(term_g.data()) {
            *o += x;
        }
        let qc = gram_gamma.matmul(&ct); // r1 x r2
        let term_p = ct.tr_matmul(&qc); // r2 x r2
        for (o, &x) in acc_p.data_mut().iter_mut().zip(term_p.data()) {
            *o += x;
        }
    }
    let l_gamma = acc_g.frob_norm();
    let l_psi = acc_p.frob_norm();
    let l_c = gram_gamma.frob_norm() * gram_psi.frob_norm();

    let gnorm: Vec<S> = (0..r1).map(|i| m.gamma.col_norm(i)).collect();
    let pnorm: Vec<S> = (0..r2).map(|j| m.psi.col_norm(j)).collect();
    let fib = fiber_l1(m.coef());

    let xi = if l_gamma >= floor {
        (0..r1)
            .map(|i| lambda * (0..r2).map(|j| fib.at(i, j) * pnorm[j]).sum::<S>() / l_gamma)
            .collect()
    } else {
        vec![S::zero(); r1]
    };
    let pi = if l_psi >= floor {
        (0..r2)
            .map(|j| lambda * (0..r1).map(|i| fib.at(i, j) * gnorm[i]).sum::<S>() / l_psi)
            .collect()
    } else {
        vec![S::zero(); r2]
    };
    let kappa = if l_c >= floor {
        Matrix::from_fn(r1, r2, |i, j| lambda * gnorm[i] * pnorm[j] / l_c)
    } else {
        Matrix::zeros(r1, r2)
    };

    Ok(StepConstants { l_gamma, l_psi, l_c, xi, kappa, pi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_model(g: usize, v: usize, t: usize, r1: usize, r2: usize, seed: u64) -> Model<f64> {
        let mut r = rng(seed);
        Model::new(
            Matrix::from_fn(g, r1, |_, _| r.gen_range(-1.0..1.0)),
            Matrix::from_fn(v, r2, |_, _| r.gen_range(-1.0..1.0)),
            Tensor3::from_fn(r1, r2, t, |_, _, _| r.gen_range(-1.0..1.0)),
        )
        .unwrap()
    }

    fn random_tensor(g: usize, v: usize, t: usize, seed: u64) -> Tensor3<f64> {
        let mut r = rng(seed);
        Tensor3::from_fn(g, v, t, |_, _, _| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn loss_zero_on_exact_fit() {
        let m = random_model(3, 4, 2, 2, 2, 5);
        let s = m.reconstruct();
        assert!(loss(&s, &m).unwrap().abs() < 1e-20);
    }

    #[test]
    fn loss_of_zero_model_is_half_signal_energy() {
        let s = random_tensor(3, 4, 2, 6);
        let m = Model::zero(3, 4, 2, 2, 2);
        let want = 0.5 * s.data().iter().map(|x| x * x).sum::<f64>();
        assert!((loss(&s, &m).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn loss_matches_elementwise_sum() {
        let m = random_model(3, 4, 2, 2, 3, 7);
        let s = random_tensor(3, 4, 2, 8);
        let rec = m.reconstruct();
        let mut acc = 0.0;
        for (a, b) in rec.data().iter().zip(s.data()) {
            acc += (a - b) * (a - b);
        }
        assert!((loss(&s, &m).unwrap() - 0.5 * acc).abs() < 1e-13);
    }

    #[test]
    fn regularizer_cases() {
        // C = 0 -> 0
        let m: Model<f64> = Model::new(
            Matrix::from_fn(2, 1, |r, _| [3.0, 4.0][r]),
            Matrix::from_fn(1, 1, |_, _| 1.0),
            Tensor3::zeros(1, 1, 1),
        )
        .unwrap();
        assert_eq!(regularizer(&m), 0.0);
        // hand case: ||(3,4)|| * ||(1)|| * |2| = 10
        let m: Model<f64> = Model::new(
            Matrix::from_fn(2, 1, |r, _| [3.0, 4.0][r]),
            Matrix::from_fn(1, 1, |_, _| 1.0),
            Tensor3::from_fn(1, 1, 1, |_, _, _| 2.0),
        )
        .unwrap();
        assert!((regularizer(&m) - 10.0).abs() < 1e-14);
    }

    #[test]
    fn grad_coef_vanishes_with_zero_gamma() {
        let mut m = random_model(3, 4, 2, 2, 2, 30);
        *m.gamma_mut() = Matrix::zeros(3, 2);
        let s = random_tensor(3, 4, 2, 31);
        assert_eq!(grad_coef(&s, &m).unwrap().frob_norm(), 0.0);
    }

    #[test]
    fn regularizer_matches_triple_loop() {
        let m = random_model(3, 4, 3, 2, 3, 9);
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                let gn: f64 = (0..3).map(|g| m.gamma().at(g, i).powi(2)).sum::<f64>().sqrt();
                let pn: f64 = (0..4).map(|v| m.psi().at(v, j).powi(2)).sum::<f64>().sqrt();
                let l1: f64 = (0..3).map(|t| m.coef().at(i, j, t).abs()).sum();
                acc += gn * pn * l1;
            }
        }
        assert!((regularizer(&m) - acc).abs() < 1e-12);
        assert!(regularizer(&m) > 0.0);
    }

    #[test]
    fn regularizer_is_degree_three_homogeneous() {
        let m = random_model(3, 4, 2, 2, 2, 10);
        let alpha = 1.7;
        let scaled = Model::new(m.gamma().scale(alpha), m.psi().scale(alpha), m.coef().scale(alpha)).unwrap();
        let lhs = regularizer(&scaled);
        let rhs = alpha.powi(3) * regularizer(&m);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn objective_rejects_bad_lambda() {
        let m = random_model(2, 2, 1, 1, 1, 11);
        let s = random_tensor(2, 2, 1, 12);
        assert!(matches!(objective(&s, &m, 0.0), Err(Error::Parameter(_))));
        assert!(objective(&s, &m, 1.0).is_ok());
    }

    #[test]
    fn gradients_vanish_on_exact_fit() {
        let m = random_model(3, 4, 2, 2, 2, 13);
        let s = m.reconstruct();
        assert!(grad_gamma(&s, &m).unwrap().frob_norm() < 1e-12);
        assert!(grad_psi(&s, &m).unwrap().frob_norm() < 1e-12);
        assert!(grad_coef(&s, &m).unwrap().frob_norm() < 1e-12);
    }

    #[test]
    fn gradients_vanish_with_zero_coefficients() {
        let mut m = random_model(3, 4, 2, 2, 2, 14);
        *m.coef_mut() = Tensor3::zeros(2, 2, 2);
        let s = random_tensor(3, 4, 2, 15);
        assert!(grad_gamma(&s, &m).unwrap().frob_norm() == 0.0);
        assert!(grad_psi(&s, &m).unwrap().frob_norm() == 0.0);
    }

    fn finite_diff_check(m: &Model<f64>, s: &Tensor3<f64>) {
        let h = 1e-6;
        let tol = 1e-5;
        let (gg, gp, gc) = gradients(s, m).unwrap();
        // Gamma entries
        for r in 0..m.gamma().rows() {
            for c in 0..m.gamma().cols() {
                let mut plus = m.clone();
                plus.gamma_mut().set(r, c, m.gamma().at(r, c) + h);
                let mut minus = m.clone();
                minus.gamma_mut().set(r, c, m.gamma().at(r, c) - h);
                let fd = (loss(s, &plus).unwrap() - loss(s, &minus).unwrap()) / (2.0 * h);
                let an = gg.at(r, c);
                assert!((fd - an).abs() <= tol * an.abs().max(1.0), "Gamma ({r},{c}): {fd} vs {an}");
            }
        }
        for r in 0..m.psi().rows() {
            for c in 0..m.psi().cols() {
                let mut plus = m.clone();
                plus.psi_mut().set(r, c, m.psi().at(r, c) + h);
                let mut minus = m.clone();
                minus.psi_mut().set(r, c, m.psi().at(r, c) - h);
                let fd = (loss(s, &plus).unwrap() - loss(s, &minus).unwrap()) / (2.0 * h);
                let an = gp.at(r, c);
                assert!((fd - an).abs() <= tol * an.abs().max(1.0), "Psi ({r},{c}): {fd} vs {an}");
            }
        }
        let (r1, r2, tt) = m.coef().dims();
        for i in 0..r1 {
            for j in 0..r2 {
                for t in 0..tt {
                    let mut plus = m.clone();
                    plus.coef_mut().set(i, j, t, m.coef().at(i, j, t) + h);
                    let mut minus = m.clone();
                    minus.coef_mut().set(i, j, t, m.coef().at(i, j, t) - h);
                    let fd = (loss(s, &plus).unwrap() - loss(s, &minus).unwrap()) / (2.0 * h);
                    let an = gc.at(i, j, t);
                    assert!((fd - an).abs() <= tol * an.abs().max(1.0), "C ({i},{j},{t}): {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = random_model(3, 4, 2, 2, 2, 16);
        let s = random_tensor(3, 4, 2, 17);
        finite_diff_check(&m, &s);
    }

    #[test]
    fn prox_l2_cases() {
        assert_eq!(prox_l2(&[3.0, 4.0], 5.0).unwrap(), vec![0.0, 0.0]);
        let r = prox_l2(&[3.0f64, 4.0], 2.5).unwrap();
        assert!((r[0] - 1.5).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);
        assert_eq!(prox_l2(&[1.0, 0.0], 2.0).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(prox_l2(&[1.0], -0.1), Err(Error::Parameter(_))));
    }

    #[test]
    fn prox_abs_cases() {
        assert_eq!(prox_abs(3.0, 1.0).unwrap(), 2.0);
        assert_eq!(prox_abs(-0.5, 1.0).unwrap(), 0.0);
        assert_eq!(prox_abs(-3.0, 1.0).unwrap(), -2.0);
        assert!(matches!(prox_abs(1.0, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn step_constants_identity_case() {
        // Gamma = Psi = I (2x2), C = 0
        let m: Model<f64> = Model::new(
            Matrix::from_fn(2, 2, |r, c| if r == c { 1.0 } else { 0.0 }),
            Matrix::from_fn(2, 2, |r, c| if r == c { 1.0 } else { 0.0 }),
            Tensor3::zeros(2, 2, 1),
        )
        .unwrap();
        let sc = step_constants(&m, 1.0).unwrap();
        assert!((sc.l_c - 2.0).abs() < 1e-14); // sqrt(2)*sqrt(2)
        assert_eq!(sc.l_gamma, 0.0);
        assert_eq!(sc.l_psi, 0.0);
        assert!(!sc.gamma_active() && !sc.psi_active() && sc.coef_active());
        assert!(sc.xi.iter().all(|&x| x == 0.0));
        assert!(sc.pi.iter().all(|&x| x == 0.0));
        // kappa = lambda * 1 * 1 / L_C
        assert!((sc.kappa.at(0, 0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn step_constants_hand_case() {
        // r1=r2=T=1, Gamma=(1,0)^T, Psi=(0,1)^T, c=2, lambda=1
        let m: Model<f64> = Model::new(
            Matrix::from_fn(2, 1, |r, _| if r == 0 { 1.0 } else { 0.0 }),
            Matrix::from_fn(2, 1, |r, _| if r == 1 { 1.0 } else { 0.0 }),
            Tensor3::from_fn(1, 1, 1, |_, _, _| 2.0),
        )
        .unwrap();
        let sc = step_constants(&m, 1.0).unwrap();
        assert!((sc.l_gamma - 4.0).abs() < 1e-14);
        assert!((sc.l_psi - 4.0).abs() < 1e-14);
        assert!((sc.l_c - 1.0).abs() < 1e-14);
        assert!((sc.xi[0] - 0.5).abs() < 1e-14);
        assert!((sc.kappa.at(0, 0) - 1.0).abs() < 1e-14);
        assert!((sc.pi[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn step_constants_match_straight_line_reimplementation() {
        let m = random_model(3, 4, 3, 2, 3, 18);
        let lambda = 0.7;
        let sc = step_constants(&m, lambda).unwrap();
        // straight-line re-derivation with explicit loops
        let (r1, r2, tt) = m.coef().dims();
        let mut acc_g = vec![0.0; r1 * r1];
        let mut acc_p = vec![0.0; r2 * r2];
        for t in 0..tt {
            for a in 0..r1 {
                for b in 0..r1 {
                    let mut x = 0.0;
                    for j1 in 0..r2 {
                        for j2 in 0..r2 {
                            let q: f64 = (0..4).map(|v| m.psi().at(v, j1) * m.psi().at(v, j2)).sum();
                            x += m.coef().at(a, j1, t) * q * m.coef().at(b, j2, t);
                        }
                    }
                    acc_g[a * r1 + b] += x;
                }
            }
            for a in 0..r2 {
                for b in 0..r2 {
                    let mut x = 0.0;
                    for i1 in 0..r1 {
                        for i2 in 0..r1 {
                            let q: f64 = (0..3).map(|g| m.gamma().at(g, i1) * m.gamma().at(g, i2)).sum();
                            x += m.coef().at(i1, a, t) * q * m.coef().at(i2, b, t);
                        }
                    }
                    acc_p[a * r2 + b] += x;
                }
            }
        }
        let lg = acc_g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let lp = acc_p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((sc.l_gamma - lg).abs() <= 1e-10 * lg.max(1.0));
        assert!((sc.l_psi - lp).abs() <= 1e-10 * lp.max(1.0));
        for i in 0..r1 {
            let num: f64 = (0..r2)
                .map(|j| {
                    let pn: f64 = (0..4).map(|v| m.psi().at(v, j).powi(2)).sum::<f64>().sqrt();
                    let l1: f64 = (0..tt).map(|t| m.coef().at(i, j, t).abs()).sum();
                    l1 * pn
                })
                .sum();
            let want = lambda * num / lg;
            assert!((sc.xi[i] - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn lipschitz_constant_bounds_observed_ratio() {
        let s = random_tensor(3, 4, 3, 19);
        let base = random_model(3, 4, 3, 2, 3, 20);
        let sc = step_constants(&base, 1.0).unwrap();
        let mut r = rng(21);
        for _ in 0..20 {
            let mut m1 = base.clone();
            let mut m2 = base.clone();
            for c in 0..2 {
                for g in 0..3 {
                    m1.gamma_mut().set(g, c, r.gen_range(-1.0..1.0));
                    m2.gamma_mut().set(g, c, r.gen_range(-1.0..1.0));
                }
            }
            let g1 = grad_gamma(&s, &m1).unwrap();
            let g2 = grad_gamma(&s, &m2).unwrap();
            let num = g1.sub(&g2).frob_norm();
            let den = m1.gamma().sub(m2.gamma()).frob_norm();
            if den > 1e-12 {
                assert!(num / den <= sc.l_gamma * (1.0 + 1e-9), "ratio {} > L {}", num / den, sc.l_gamma);
            }
        }
    }

    #[test]
    fn model_save_load_round_trip() {
        let m = random_model(3, 4, 2, 2, 3, 22);
        let dir = tempfile::tempdir().unwrap();
        m.save_dir(dir.path()).unwrap();
        let back: Model<f64> = Model::load_dir(dir.path()).unwrap();
        assert_eq!(back, m);
    }
}
