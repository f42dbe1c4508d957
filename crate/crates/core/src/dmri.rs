//! Patch-based training-set assembly and sparse-coding denoising with fixed
//! learned dictionaries, plus PSNR scoring.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descent::{descend_blocks, DescentConfig};
use crate::error::{Error, Result};
use crate::objective::Model;
use crate::scalar::{cast, Scalar};
use crate::tensor::{Matrix, Tensor3};

/// A 2-D image slice with `g` measurements per pixel; entry `(gg, x, y)`
/// lives at `gg + g*x + g*width*y`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSlice2D<S> {
    g: usize,
    width: usize,
    height: usize,
    data: Vec<S>,
}

impl<S: Scalar> VolumeSlice2D<S> {
    pub fn zeros(g: usize, width: usize, height: usize) -> Self {
        assert!(g >= 1 && width >= 1 && height >= 1, "volume dimensions must be positive");
        VolumeSlice2D { g, width, height, data: vec![S::zero(); g * width * height] }
    }

    pub fn from_fn(g: usize, width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> S) -> Self {
        let mut v = VolumeSlice2D::zeros(g, width, height);
        for y in 0..height {
            for x in 0..width {
                for gg in 0..g {
                    v.data[gg + g * x + g * width * y] = f(gg, x, y);
                }
            }
        }
        v
    }

    pub fn from_vec(g: usize, width: usize, height: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != g * width * height {
            return Err(Error::Shape(format!(
                "volume {g}x{width}x{height} needs {} values, got {}",
                g * width * height,
                data.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("volume entry {x}")));
        }
        Ok(VolumeSlice2D { g, width, height, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.g, self.width, self.height)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, gg: usize, x: usize, y: usize) -> S {
        self.data[gg + self.g * x + self.g * self.width * y]
    }

    #[inline]
    pub fn set(&mut self, gg: usize, x: usize, y: usize, v: S) {
        self.data[gg + self.g * x + self.g * self.width * y] = v;
    }

    /// Reinterpret as a tensor with dims `(g, width, height)`; the layouts
    /// coincide.
    pub fn to_tensor(&self) -> Tensor3<S> {
        Tensor3::from_vec(self.g, self.width, self.height, self.data.clone()).expect("finite by invariant")
    }

    pub fn from_tensor(t: &Tensor3<S>) -> Self {
        let (g, w, h) = t.dims();
        VolumeSlice2D { g, width: w, height: h, data: t.data().to_vec() }
    }
}

/// Patches cut from a volume: tensor of shape `(g, p*p, n)` plus the
/// top-left origin of every patch.
#[derive(Debug, Clone)]
pub struct PatchSet<S> {
    pub p: usize,
    pub patches: Tensor3<S>,
    pub origins: Vec<(usize, usize)>,
    /// Set when more patches were requested than distinct origins exist and
    /// sampling fell back to replacement.
    pub with_replacement: bool,
}

/// Cut `n` random in-bounds `p x p` patches (seeded, without replacement
/// while possible). Patch pixels are vectorized column-major in `(x, y)`.
pub fn extract_patches<S: Scalar>(img: &VolumeSlice2D<S>, p: usize, n: usize, seed: u64) -> Result<PatchSet<S>> {
    let (g, width, height) = img.dims();
    if p == 0 || p > width.min(height) {
        return Err(Error::Parameter(format!("patch size {p} out of range for {width}x{height} image")));
    }
    if n == 0 {
        return Err(Error::Parameter("patch count must be >= 1".into()));
    }
    let nx = width - p + 1;
    let ny = height - p + 1;
    let total = nx * ny;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (origins, with_replacement) = if n <= total {
        // partial Fisher-Yates over the origin grid
        let mut all: Vec<usize> = (0..total).collect();
        for i in 0..n {
            let j = rng.gen_range(i..total);
            all.swap(i, j);
        }
        (all[..n].iter().map(|&k| (k % nx, k / nx)).collect::<Vec<_>>(), false)
    } else {
        ((0..n).map(|_| { let k = rng.gen_range(0..total); (k % nx, k / nx) }).collect(), true)
    };

    let mut patches = Tensor3::zeros(g, p * p, origins.len());
    for (k, &(ox, oy)) in origins.iter().enumerate() {
        for y in 0..p {
            for x in 0..p {
                for gg in 0..g {
                    patches.set(gg, x + p * y, k, img.at(gg, ox + x, oy + y));
                }
            }
        }
    }
    Ok(PatchSet { p, patches, origins, with_replacement })
}

/// Write patch `k` of a patch tensor back at `origin`, accumulating values
/// and coverage counts.
fn accumulate_patch<S: Scalar>(
    sum: &mut VolumeSlice2D<S>,
    weight: &mut Vec<S>,
    patch: &Matrix<S>,
    p: usize,
    origin: (usize, usize),
) {
    let (g, width, _) = sum.dims();
    let (ox, oy) = origin;
    for y in 0..p {
        for x in 0..p {
            for gg in 0..g {
                let v = patch.at(gg, x + p * y);
                let cur = sum.at(gg, ox + x, oy + y);
                sum.set(gg, ox + x, oy + y, cur + v);
            }
            weight[(ox + x) + width * (oy + y)] += S::one();
        }
    }
}

/// Sparse code a signal tensor against fixed dictionaries: minimize the
/// factorization objective over the coefficients only.
pub fn sparse_code<S: Scalar>(
    s: &Tensor3<S>,
    gamma: &Matrix<S>,
    psi: &Matrix<S>,
    lambda: S,
    cfg: &DescentConfig<S>,
) -> Result<Tensor3<S>> {
    if gamma.is_zero() || psi.is_zero() {
        return Err(Error::Parameter("sparse coding needs nonzero dictionaries".into()));
    }
    let (_, _, t_count) = s.dims();
    let m0 = Model::new(gamma.clone(), psi.clone(), Tensor3::zeros(gamma.cols(), psi.cols(), t_count))?;
    let (m, _) = descend_blocks(s, &m0, lambda, cfg, false, false)?;
    Ok(m.coef().clone())
}

fn grid_positions(dim: usize, p: usize, stride: usize) -> Vec<usize> {
    let mut xs: Vec<usize> = (0..=dim - p).step_by(stride).collect();
    // edge-flush patch so every pixel is covered
    if *xs.last().expect("nonempty") != dim - p {
        xs.push(dim - p);
    }
    xs
}

/// Denoise by sparse coding every patch on the stride grid (plus edge-flush
/// patches) and averaging the reconstructions over all covering patches.
pub fn denoise<S: Scalar>(
    img: &VolumeSlice2D<S>,
    gamma: &Matrix<S>,
    psi: &Matrix<S>,
    lambda: S,
    p: usize,
    stride: usize,
) -> Result<VolumeSlice2D<S>> {
    let (g, width, height) = img.dims();
    if stride == 0 {
        return Err(Error::Parameter("stride must be >= 1".into()));
    }
    if p == 0 || p > width.min(height) {
        return Err(Error::Parameter(format!("patch size {p} out of range for {width}x{height} image")));
    }
    if psi.rows() != p * p {
        return Err(Error::Shape(format!("spatial dictionary has {} rows, patches have {}", psi.rows(), p * p)));
    }
    if gamma.rows() != g {
        return Err(Error::Shape(format!("angular dictionary has {} rows, volume has {g}", gamma.rows())));
    }
    let cfg = DescentConfig::accelerated(5000, cast(1e-12));
    let mut sum = VolumeSlice2D::zeros(g, width, height);
    let mut weight = vec![S::zero(); width * height];
    for &oy in &grid_positions(height, p, stride) {
        for &ox in &grid_positions(width, p, stride) {
            let mut patch = Tensor3::zeros(g, p * p, 1);
            for y in 0..p {
                for x in 0..p {
                    for gg in 0..g {
                        patch.set(gg, x + p * y, 0, img.at(gg, ox + x, oy + y));
                    }
                }
            }
            let coef = sparse_code(&patch, gamma, psi, lambda, &cfg)?;
            let ct = Matrix::from_vec(gamma.cols(), psi.cols(), coef.slice_data(0).to_vec())?;
            let rec = gamma.matmul(&ct).matmul_tr(psi); // g x p^2
            accumulate_patch(&mut sum, &mut weight, &rec, p, (ox, oy));
        }
    }
    let mut out = VolumeSlice2D::zeros(g, width, height);
    for y in 0..height {
        for x in 0..width {
            let w = weight[x + width * y];
            debug_assert!(w > S::zero(), "pixel ({x},{y}) uncovered");
            for gg in 0..g {
                out.set(gg, x, y, sum.at(gg, x, y) / w);
            }
        }
    }
    Ok(out)
}

/// Peak signal-to-noise ratio in decibels; identical inputs give positive
/// infinity.
pub fn psnr<S: Scalar>(reference: &VolumeSlice2D<S>, test: &VolumeSlice2D<S>) -> Result<S> {
    if reference.dims() != test.dims() {
        return Err(Error::Shape(format!("psnr dims {:?} vs {:?}", reference.dims(), test.dims())));
    }
    let max_i = reference.data().iter().copied().fold(S::zero(), S::max);
    if reference.data().iter().all(|&x| x == S::zero()) {
        return Err(Error::Parameter("psnr reference is identically zero".into()));
    }
    let n = cast::<S>(reference.data().len() as f64);
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<S>()
        / n;
    if mse == S::zero() {
        return Ok(S::infinity());
    }
    Ok(cast::<S>(10.0) * (max_i * max_i / mse).log10())
}

/// Denoise at each candidate `lambda` and report `(lambda, psnr)` pairs
/// against the reference; an experiment-harness helper for picking the
/// regularization strength.
pub fn sweep_lambda<S: Scalar>(
    noisy: &VolumeSlice2D<S>,
    reference: &VolumeSlice2D<S>,
    gamma: &Matrix<S>,
    psi: &Matrix<S>,
    lambdas: &[S],
    p: usize,
    stride: usize,
) -> Result<Vec<(S, S)>> {
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let den = denoise(noisy, gamma, psi, lambda, p, stride)?;
        out.push((lambda, psnr(reference, &den)?));
    }
    Ok(out)
}

pub fn write_psnr_csv<S: Scalar, W: Write>(w: &mut W, rows: &[(S, S)]) -> Result<()> {
    writeln!(w, "lambda,psnr")?;
    for &(l, v) in rows {
        writeln!(w, "{},{}", crate::scalar::fmt17(l), crate::scalar::fmt17(v))?;
    }
    Ok(())
}

/// Raw volume reader: little-endian f64 in the volume layout, dimensions
/// supplied by the caller.
pub fn read_raw_volume<S: Scalar>(path: impl AsRef<Path>, g: usize, width: usize, height: usize) -> Result<VolumeSlice2D<S>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let n = g * width * height;
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        f.read_exact(&mut buf)?;
        let x = f64::from_le_bytes(buf);
        data.push(S::from(x).ok_or_else(|| Error::Parse(format!("value {x} not representable")))?);
    }
    VolumeSlice2D::from_vec(g, width, height, data)
}

pub fn write_raw_volume<S: Scalar>(path: impl AsRef<Path>, v: &VolumeSlice2D<S>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for &x in v.data() {
        let x = x.to_f64().ok_or_else(|| Error::NonFinite("value not representable as f64".into()))?;
        f.write_all(&x.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}
