//! Synthetic training data: random combinations of procedurally defined
//! ground-truth separable atoms plus additive Gaussian noise.
//!
//! Each signal draws one or two angular atoms and up to three spatial atoms
//! (uniformly, with replacement), combines every pair with positive random
//! coefficients rescaled to sum to one, and adds i.i.d. Gaussian noise.
//! All randomness flows from a single ChaCha8 stream seeded by `seed`, drawn
//! in a fixed order (per signal: atom counts, atom indices, coefficients,
//! then the noise entries of that slice), so outputs are reproducible across
//! platforms.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{cast, fmt17, Scalar};
use crate::tensor::{Matrix, Tensor3};

/// Generation parameters.
#[derive(Debug, Clone)]
pub struct SyntheticSpec<S> {
    /// Angular samples per signal.
    pub g: usize,
    /// Spatial samples per signal (a square number is laid out as a grid).
    pub v: usize,
    /// Number of signals.
    pub t: usize,
    pub n_gamma_atoms: usize,
    pub n_psi_atoms: usize,
    pub noise_var: S,
    pub seed: u64,
}

impl<S: Scalar> SyntheticSpec<S> {
    /// Paper-protocol sizes scaled by the caller: 3 angular and 6 spatial
    /// atoms, noise variance 0.003.
    pub fn new(g: usize, v: usize, t: usize, seed: u64) -> Self {
        SyntheticSpec { g, v, t, n_gamma_atoms: 3, n_psi_atoms: 6, noise_var: cast(0.003), seed }
    }

    fn validate(&self) -> Result<()> {
        if self.g == 0 || self.v == 0 || self.t == 0 || self.n_gamma_atoms == 0 || self.n_psi_atoms == 0 {
            return Err(Error::Parameter("synthetic spec counts must be positive".into()));
        }
        if self.noise_var < S::zero() {
            return Err(Error::Parameter(format!("noise variance must be >= 0, got {}", self.noise_var)));
        }
        Ok(())
    }
}

/// Generated dataset with everything needed to verify it.
#[derive(Debug, Clone)]
pub struct SyntheticData<S> {
    pub tensor: Tensor3<S>,
    pub noiseless: Tensor3<S>,
    pub gamma_atoms: Matrix<S>,
    pub psi_atoms: Matrix<S>,
    /// Per signal: the drawn `(angular atom, spatial atom, coefficient)`
    /// triples; coefficients sum to one.
    pub coefficients: Vec<Vec<(usize, usize, S)>>,
}

/// Deterministic unit-norm ground-truth atoms.
///
/// Spatial atoms are binary geometric masks (bars, diagonal, centered
/// square, corner block, ring) on the square pixel grid, falling back to
/// interval masks when `v` is not a perfect square; angular atoms are a
/// constant profile and discretized Gaussian bumps.
pub fn default_atoms<S: Scalar>(spec: &SyntheticSpec<S>) -> Result<(Matrix<S>, Matrix<S>)> {
    spec.validate()?;
    let mut gamma = Matrix::zeros(spec.g, spec.n_gamma_atoms);
    for a in 0..spec.n_gamma_atoms {
        let col = gamma.col_mut(a);
        angular_atom(col, a, spec.g);
        normalize(col);
    }
    let mut psi = Matrix::zeros(spec.v, spec.n_psi_atoms);
    let side = (spec.v as f64).sqrt().round() as usize;
    let square = side * side == spec.v;
    for a in 0..spec.n_psi_atoms {
        let col = psi.col_mut(a);
        if square {
            spatial_atom_2d(col, a, side);
        } else {
            spatial_atom_1d(col, a, spec.v);
        }
        normalize(col);
    }
    Ok((gamma, psi))
}

fn normalize<S: Scalar>(col: &mut [S]) {
    let norm = crate::linalg::vec_norm(col);
    if norm > S::zero() {
        for x in col.iter_mut() {
            *x = *x / norm;
        }
    }
}

fn angular_atom<S: Scalar>(col: &mut [S], index: usize, g: usize) {
    let gf = g as f64;
    match index {
        0 => col.fill(S::one()),
        _ => {
            // one or more Gaussian bumps; centers spread over the domain
            let bumps = if index == 1 { 1 } else { 2 };
            let width = gf / 8.0;
            for (i, x) in col.iter_mut().enumerate() {
                let mut acc = 0.0;
                for b in 0..bumps {
                    let center = gf * (index as f64 + b as f64 * 2.0 + 1.0) / (index as f64 + bumps as f64 * 2.0);
                    let d = (i as f64 - center) / width.max(0.5);
                    acc += (-0.5 * d * d).exp();
                }
                *x = cast(acc);
            }
        }
    }
}

fn spatial_atom_2d<S: Scalar>(col: &mut [S], index: usize, side: usize) {
    let on = |x: usize, y: usize, kind: usize| -> bool {
        let third = (side / 3).max(1);
        match kind {
            // horizontal bar
            0 => y >= third && y < 2 * third,
            // vertical bar
            1 => x >= third && x < 2 * third,
            // diagonal
            2 => x == y || (x > 0 && x - 1 == y),
            // centered square
            3 => {
                let lo = side / 4;
                let hi = side - side / 4;
                x >= lo && x < hi && y >= lo && y < hi
            }
            // corner block
            4 => x < (side + 1) / 2 && y < (side + 1) / 2,
            // ring
            5 => {
                let c = (side as f64 - 1.0) / 2.0;
                let r = (x as f64 - c).hypot(y as f64 - c);
                r >= c / 2.0 && r <= c
            }
            // shifted bars for any further atoms
            k => y == (k - 6) % side,
        }
    };
    for y in 0..side {
        for x in 0..side {
            // column-major within the grid, matching patch vectorization
            col[x + side * y] = if on(x, y, index) { S::one() } else { S::zero() };
        }
    }
}

fn spatial_atom_1d<S: Scalar>(col: &mut [S], index: usize, v: usize) {
    let seg = (v / 6).max(1);
    for (i, x) in col.iter_mut().enumerate() {
        let lo = (index * seg) % v;
        let hi = lo + seg;
        *x = if i >= lo && i < hi { S::one() } else { S::zero() };
    }
}

/// Generate the dataset.
pub fn generate<S: Scalar>(spec: &SyntheticSpec<S>) -> Result<SyntheticData<S>> {
    spec.validate()?;
    let (gamma_atoms, psi_atoms) = default_atoms(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noiseless = Tensor3::zeros(spec.g, spec.v, spec.t);
    let mut tensor = Tensor3::zeros(spec.g, spec.v, spec.t);
    let mut coefficients = Vec::with_capacity(spec.t);
    let noise_sd = spec.noise_var.sqrt();

    for t in 0..spec.t {
        let m_t = rng.gen_range(1..=2usize);
        let n_t = rng.gen_range(1..=3usize);
        let ang: Vec<usize> = (0..m_t).map(|_| rng.gen_range(0..spec.n_gamma_atoms)).collect();
        let spa: Vec<usize> = (0..n_t).map(|_| rng.gen_range(0..spec.n_psi_atoms)).collect();
        let mut weights: Vec<S> = (0..m_t * n_t).map(|_| cast(rng.gen_range(0.0..1.0f64))).collect();
        let total: S = weights.iter().copied().sum();
        if total > S::zero() {
            for w in &mut weights {
                *w = *w / total;
            }
        } else {
            weights[0] = S::one();
        }
        let mut triples = Vec::with_capacity(m_t * n_t);
        let mut k = 0;
        for &ia in &ang {
            for &js in &spa {
                let w = weights[k];
                k += 1;
                triples.push((ia, js, w));
                let ga = gamma_atoms.col(ia);
                let pa = psi_atoms.col(js);
                for v in 0..spec.v {
                    let pv = pa[v] * w;
                    if pv == S::zero() {
                        continue;
                    }
                    for g in 0..spec.g {
                        let cur = noiseless.at(g, v, t);
                        noiseless.set(g, v, t, cur + ga[g] * pv);
                    }
                }
            }
        }
        coefficients.push(triples);
        if spec.noise_var > S::zero() {
            for v in 0..spec.v {
                for g in 0..spec.g {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    tensor.set(g, v, t, noiseless.at(g, v, t) + noise_sd * cast(n));
                }
            }
        } else {
            tensor.slice_data_mut(t).copy_from_slice(noiseless.slice_data(t));
        }
    }

    Ok(SyntheticData { tensor, noiseless, gamma_atoms, psi_atoms, coefficients })
}

/// Sidecar CSV with the ground-truth atoms: `mode,atom,index,value` rows.
pub fn write_atoms_csv<S: Scalar, W: Write>(w: &mut W, gamma: &Matrix<S>, psi: &Matrix<S>) -> Result<()> {
    writeln!(w, "mode,atom,index,value")?;
    for a in 0..gamma.cols() {
        for (i, &x) in gamma.col(a).iter().enumerate() {
            writeln!(w, "gamma,{a},{i},{}", fmt17(x))?;
        }
    }
    for a in 0..psi.cols() {
        for (i, &x) in psi.col(a).iter().enumerate() {
            writeln!(w, "psi,{a},{i},{}", fmt17(x))?;
        }
    }
    Ok(())
}
