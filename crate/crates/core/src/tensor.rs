//! Dense 3-tensor and matrix containers plus the slice/mode-product
//! operations the rest of the crate is built on.
//!
//! Layout: entry `(g, v, t)` of a `G x V x T` tensor lives at flat offset
//! `g + G*v + G*V*t`, i.e. slices are contiguous blocks and each slice is
//! column-major. Matrices use the same column-major convention so a slice
//! extraction is a single memcpy.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{fmt17, Scalar};

/// Magic bytes of the binary tensor container.
pub const SDT1_MAGIC: [u8; 4] = *b"SDT1";

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Matrix { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m.data[r + rows * c] = f(r, c);
            }
        }
        m
    }

    /// Build from column-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix dims {rows}x{cols} must be positive")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {x}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Column vector from a slice.
    pub fn column_vector(v: &[S]) -> Self {
        Matrix { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    /// Rank-1 outer product `u v^T`.
    pub fn from_outer(u: &[S], v: &[S]) -> Self {
        Matrix::from_fn(u.len(), v.len(), |r, c| u[r] * v[c])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + self.rows * c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, x: S) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + self.rows * c] = x;
    }

    #[inline]
    pub fn col(&self, c: usize) -> &[S] {
        &self.data[self.rows * c..self.rows * (c + 1)]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [S] {
        &mut self.data[self.rows * c..self.rows * (c + 1)]
    }

    pub fn col_norm(&self, c: usize) -> S {
        self.col(c).iter().map(|x| *x * *x).sum::<S>().sqrt()
    }

    pub fn transpose(&self) -> Matrix<S> {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.at(c, r))
    }

    /// `self * b`
    pub fn matmul(&self, b: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, b.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, b.cols);
        for j in 0..b.cols {
            let bj = b.col(j);
            let oj = out.col_mut(j);
            for (k, &bkj) in bj.iter().enumerate() {
                if bkj == S::zero() {
                    continue;
                }
                let ak = self.col(k);
                for (o, &a) in oj.iter_mut().zip(ak) {
                    *o += a * bkj;
                }
            }
        }
        out
    }

    /// `self^T * b`
    pub fn tr_matmul(&self, b: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.rows, b.rows, "tr_matmul inner dimension");
        let mut out = Matrix::zeros(self.cols, b.cols);
        for j in 0..b.cols {
            let bj = b.col(j);
            for i in 0..self.cols {
                let ai = self.col(i);
                let mut acc = S::zero();
                for (&a, &bb) in ai.iter().zip(bj) {
                    acc += a * bb;
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// `self * b^T`
    pub fn matmul_tr(&self, b: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, b.cols, "matmul_tr inner dimension");
        let mut out = Matrix::zeros(self.rows, b.rows);
        for k in 0..self.cols {
            let ak = self.col(k);
            for j in 0..b.rows {
                let bjk = b.at(j, k);
                if bjk == S::zero() {
                    continue;
                }
                let oj = out.col_mut(j);
                for (o, &a) in oj.iter_mut().zip(ak) {
                    *o += a * bjk;
                }
            }
        }
        out
    }

    /// `out = self * b`, reusing the output allocation.
    pub fn matmul_into(&self, b: &Matrix<S>, out: &mut Matrix<S>) {
        assert_eq!(self.cols, b.rows, "matmul inner dimension");
        assert_eq!((out.rows, out.cols), (self.rows, b.cols), "matmul output shape");
        out.data.fill(S::zero());
        for j in 0..b.cols {
            let bj = b.col(j);
            let oj = out.col_mut(j);
            for (k, &bkj) in bj.iter().enumerate() {
                if bkj == S::zero() {
                    continue;
                }
                let ak = self.col(k);
                for (o, &a) in oj.iter_mut().zip(ak) {
                    *o += a * bkj;
                }
            }
        }
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(self.cols, x.len(), "matvec inner dimension");
        let mut out = vec![S::zero(); self.rows];
        for (k, &xk) in x.iter().enumerate() {
            if xk == S::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.col(k)) {
                *o += a * xk;
            }
        }
        out
    }

    /// `self^T * x`.
    pub fn tr_matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(self.rows, x.len(), "tr_matvec inner dimension");
        (0..self.cols)
            .map(|c| self.col(c).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn frob_norm(&self) -> S {
        self.data.iter().map(|x| *x * *x).sum::<S>().sqrt()
    }

    pub fn frob_inner(&self, b: &Matrix<S>) -> S {
        assert_eq!((self.rows, self.cols), (b.rows, b.cols), "frob_inner shape");
        self.data.iter().zip(&b.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn sub(&self, b: &Matrix<S>) -> Matrix<S> {
        assert_eq!((self.rows, self.cols), (b.rows, b.cols), "sub shape");
        let data = self.data.iter().zip(&b.data).map(|(&a, &b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: S) -> Matrix<S> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    /// Append `col` as a new last column.
    pub fn with_appended_col(&self, col: &[S]) -> Matrix<S> {
        assert_eq!(col.len(), self.rows, "appended column length");
        let mut data = self.data.clone();
        data.extend_from_slice(col);
        Matrix { rows: self.rows, cols: self.cols + 1, data }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| *x == S::zero())
    }
}

/// Dense 3-tensor, the training-data and reconstruction container.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<S> {
    dim0: usize,
    dim1: usize,
    dim2: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor3<S> {
    pub fn zeros(dim0: usize, dim1: usize, dim2: usize) -> Self {
        assert!(dim0 >= 1 && dim1 >= 1 && dim2 >= 1, "tensor dimensions must be positive");
        Tensor3 { dim0, dim1, dim2, data: vec![S::zero(); dim0 * dim1 * dim2] }
    }

    pub fn from_fn(dim0: usize, dim1: usize, dim2: usize, mut f: impl FnMut(usize, usize, usize) -> S) -> Self {
        let mut t = Tensor3::zeros(dim0, dim1, dim2);
        for k in 0..dim2 {
            for j in 0..dim1 {
                for i in 0..dim0 {
                    t.data[i + dim0 * j + dim0 * dim1 * k] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Build from flat data in the documented layout, validating length and
    /// finiteness.
    pub fn from_vec(dim0: usize, dim1: usize, dim2: usize, data: Vec<S>) -> Result<Self> {
        if dim0 == 0 || dim1 == 0 || dim2 == 0 {
            return Err(Error::Shape(format!("tensor dims {dim0}x{dim1}x{dim2} must be positive")));
        }
        if data.len() != dim0 * dim1 * dim2 {
            return Err(Error::Shape(format!(
                "tensor {dim0}x{dim1}x{dim2} needs {} values, got {}",
                dim0 * dim1 * dim2,
                data.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {x}")));
        }
        Ok(Tensor3 { dim0, dim1, dim2, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dim0, self.dim1, self.dim2)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> S {
        debug_assert!(i < self.dim0 && j < self.dim1 && k < self.dim2);
        self.data[i + self.dim0 * j + self.dim0 * self.dim1 * k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, x: S) {
        debug_assert!(i < self.dim0 && j < self.dim1 && k < self.dim2);
        self.data[i + self.dim0 * j + self.dim0 * self.dim1 * k] = x;
    }

    /// Contiguous view of slice `t`.
    pub fn slice_data(&self, t: usize) -> &[S] {
        let n = self.dim0 * self.dim1;
        &self.data[n * t..n * (t + 1)]
    }

    pub fn slice_data_mut(&mut self, t: usize) -> &mut [S] {
        let n = self.dim0 * self.dim1;
        &mut self.data[n * t..n * (t + 1)]
    }

    /// Extract slice `t` as a matrix copy. Errors when `t` is out of range.
    pub fn slice(&self, t: usize) -> Result<Matrix<S>> {
        if t >= self.dim2 {
            return Err(Error::Range(format!("slice index {t} >= T = {}", self.dim2)));
        }
        Ok(Matrix { rows: self.dim0, cols: self.dim1, data: self.slice_data(t).to_vec() })
    }

    /// Overwrite slice `t` with the given matrix.
    pub fn set_slice(&mut self, t: usize, m: &Matrix<S>) -> Result<()> {
        if t >= self.dim2 {
            return Err(Error::Range(format!("slice index {t} >= T = {}", self.dim2)));
        }
        if m.rows() != self.dim0 || m.cols() != self.dim1 {
            return Err(Error::Shape(format!(
                "slice assignment {}x{} into {}x{}",
                m.rows(),
                m.cols(),
                self.dim0,
                self.dim1
            )));
        }
        self.slice_data_mut(t).copy_from_slice(m.data());
        Ok(())
    }

    pub fn scale(&self, s: S) -> Tensor3<S> {
        Tensor3 {
            dim0: self.dim0,
            dim1: self.dim1,
            dim2: self.dim2,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn sub(&self, b: &Tensor3<S>) -> Result<Tensor3<S>> {
        if self.dims() != b.dims() {
            return Err(Error::Shape(format!("tensor sub {:?} vs {:?}", self.dims(), b.dims())));
        }
        let data = self.data.iter().zip(&b.data).map(|(&a, &b)| a - b).collect();
        Ok(Tensor3 { dim0: self.dim0, dim1: self.dim1, dim2: self.dim2, data })
    }

    pub fn frob_norm(&self) -> S {
        self.data.iter().map(|x| *x * *x).sum::<S>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| *x == S::zero())
    }
}

/// Mode product `C x1 Gamma x2 Psi`: slice `t` of the result is
/// `Gamma * C_t * Psi^T`.
pub fn mode_product<S: Scalar>(c: &Tensor3<S>, gamma: &Matrix<S>, psi: &Matrix<S>) -> Result<Tensor3<S>> {
    let (r1, r2, t_count) = c.dims();
    if gamma.cols() != r1 || psi.cols() != r2 {
        return Err(Error::Shape(format!(
            "mode_product: core {r1}x{r2}x{t_count} vs factors {}x{} and {}x{}",
            gamma.rows(),
            gamma.cols(),
            psi.rows(),
            psi.cols()
        )));
    }
    let g = gamma.rows();
    let v = psi.rows();
    let mut out = Tensor3::zeros(g, v, t_count);
    for t in 0..t_count {
        let ct = Matrix { rows: r1, cols: r2, data: c.slice_data(t).to_vec() };
        let gc = gamma.matmul(&ct); // G x r2
        let slice = gc.matmul_tr(psi); // G x V
        out.slice_data_mut(t).copy_from_slice(slice.data());
    }
    Ok(out)
}

/// Frobenius inner product of two tensors of equal dimensions.
pub fn frobenius_inner<S: Scalar>(a: &Tensor3<S>, b: &Tensor3<S>) -> Result<S> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("frobenius_inner {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum())
}

// ---------------------------------------------------------------------------
// SDT1 binary container and CSV debug format
// ---------------------------------------------------------------------------

/// Write the binary container: magic `SDT1`, three little-endian u32 dims,
/// then the values as little-endian f64 in the flat layout.
pub fn write_sdt1<S: Scalar, W: Write>(w: &mut W, t: &Tensor3<S>) -> Result<()> {
    let (d0, d1, d2) = t.dims();
    w.write_all(&SDT1_MAGIC)?;
    for d in [d0, d1, d2] {
        let d = u32::try_from(d).map_err(|_| Error::Parameter(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for &x in t.data() {
        let x = x.to_f64().ok_or_else(|| Error::NonFinite("value not representable as f64".into()))?;
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_sdt1<S: Scalar, R: Read>(r: &mut R) -> Result<Tensor3<S>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != SDT1_MAGIC {
        return Err(Error::Parse(format!("bad magic {magic:?}, expected SDT1")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|x| x.checked_mul(dims[2]))
        .ok_or_else(|| Error::Parse("dimension overflow".into()))?;
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        let x = f64::from_le_bytes(buf);
        data.push(S::from(x).ok_or_else(|| Error::Parse(format!("value {x} not representable")))?);
    }
    Tensor3::from_vec(dims[0], dims[1], dims[2], data)
}

pub fn write_sdt1_file<S: Scalar>(path: impl AsRef<Path>, t: &Tensor3<S>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_sdt1(&mut f, t)?;
    f.flush()?;
    Ok(())
}

pub fn read_sdt1_file<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor3<S>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_sdt1(&mut f)
}

/// Store a matrix as an SDT1 container with T = 1.
pub fn write_matrix_file<S: Scalar>(path: impl AsRef<Path>, m: &Matrix<S>) -> Result<()> {
    let t = Tensor3::from_vec(m.rows(), m.cols(), 1, m.data().to_vec())?;
    write_sdt1_file(path, &t)
}

pub fn read_matrix_file<S: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<S>> {
    let t: Tensor3<S> = read_sdt1_file(path)?;
    let (rows, cols, depth) = t.dims();
    if depth != 1 {
        return Err(Error::Parse(format!("expected T=1 matrix container, got T={depth}")));
    }
    Matrix::from_vec(rows, cols, t.data().to_vec())
}

/// CSV debug dump: header then one `g,v,t,value` line per entry.
pub fn write_tensor_csv<S: Scalar, W: Write>(w: &mut W, t: &Tensor3<S>) -> Result<()> {
    let (d0, d1, d2) = t.dims();
    writeln!(w, "g,v,t,value")?;
    for k in 0..d2 {
        for j in 0..d1 {
            for i in 0..d0 {
                writeln!(w, "{i},{j},{k},{}", fmt17(t.at(i, j, k)))?;
            }
        }
    }
    Ok(())
}

/// Parse the CSV debug format back into a tensor. Dimensions are inferred
/// from the maximum indices present; absent entries stay zero.
pub fn read_tensor_csv<S: Scalar, R: Read>(r: &mut R) -> Result<Tensor3<S>> {
    let mut text = String::new();
    let mut rd = std::io::BufReader::new(r);
    rd.read_to_string(&mut text)?;
    let mut entries = Vec::new();
    let mut dims = (0usize, 0usize, 0usize);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with('g')) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("line {}: expected 4 fields", lineno + 1)));
        }
        let i: usize = fields[0].parse().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let j: usize = fields[1].parse().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let k: usize = fields[2].parse().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let x: f64 = fields[3].parse().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        dims = (dims.0.max(i + 1), dims.1.max(j + 1), dims.2.max(k + 1));
        entries.push((i, j, k, x));
    }
    if entries.is_empty() {
        return Err(Error::Parse("empty tensor csv".into()));
    }
    let mut t = Tensor3::zeros(dims.0, dims.1, dims.2);
    for (i, j, k, x) in entries {
        t.set(i, j, k, S::from(x).ok_or_else(|| Error::Parse(format!("value {x} not representable")))?);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(d0: usize, d1: usize, d2: usize, seed: u64) -> Tensor3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_fn(d0, d1, d2, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    fn random_matrix(r: usize, c: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn slice_of_zero_tensor_is_zero() {
        let t: Tensor3<f64> = Tensor3::zeros(3, 4, 2);
        let s = t.slice(1).unwrap();
        assert!(s.is_zero());
        assert_eq!((s.rows(), s.cols()), (3, 4));
    }

    #[test]
    fn slice_of_constant_slices() {
        let t = Tensor3::from_fn(2, 3, 4, |_, _, k| k as f64);
        let s = t.slice(2).unwrap();
        assert!(s.data().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn slice_matches_entrywise_readback() {
        let t = random_tensor(3, 4, 2, 7);
        for k in 0..2 {
            let s = t.slice(k).unwrap();
            for i in 0..3 {
                for j in 0..4 {
                    assert_eq!(s.at(i, j), t.at(i, j, k));
                }
            }
        }
    }

    #[test]
    fn slice_out_of_range_errors() {
        let t: Tensor3<f64> = Tensor3::zeros(2, 2, 2);
        assert!(matches!(t.slice(2), Err(Error::Range(_))));
    }

    #[test]
    fn mode_product_identity_factors() {
        let c = random_tensor(3, 4, 2, 11);
        let eye3 = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let eye4 = Matrix::from_fn(4, 4, |r, c| if r == c { 1.0 } else { 0.0 });
        let out = mode_product(&c, &eye3, &eye4).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn mode_product_zero_core() {
        let c: Tensor3<f64> = Tensor3::zeros(2, 3, 2);
        let out = mode_product(&c, &random_matrix(4, 2, 1), &random_matrix(5, 3, 2)).unwrap();
        assert!(out.is_zero());
    }

    #[test]
    fn mode_product_matches_triple_loop() {
        let c = random_tensor(2, 3, 2, 21);
        let gamma = random_matrix(4, 2, 22);
        let psi = random_matrix(5, 3, 23);
        let out = mode_product(&c, &gamma, &psi).unwrap();
        // brute force: sum over (i,j) of c[i,j,t] * Gamma_i * Psi_j^T
        for t in 0..2 {
            for g in 0..4 {
                for v in 0..5 {
                    let mut acc = 0.0;
                    for i in 0..2 {
                        for j in 0..3 {
                            acc += c.at(i, j, t) * gamma.at(g, i) * psi.at(v, j);
                        }
                    }
                    let got = out.at(g, v, t);
                    assert!((got - acc).abs() <= 1e-12 * acc.abs().max(1.0), "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn mode_product_shape_error() {
        let c: Tensor3<f64> = Tensor3::zeros(2, 3, 2);
        let bad = random_matrix(4, 3, 3); // wants 2 columns
        assert!(matches!(mode_product(&c, &bad, &random_matrix(5, 3, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn frobenius_inner_unit_and_orthogonal() {
        let mut a: Tensor3<f64> = Tensor3::zeros(2, 2, 2);
        a.set(0, 1, 1, 1.0);
        assert_eq!(frobenius_inner(&a, &a).unwrap(), 1.0);
        let mut b: Tensor3<f64> = Tensor3::zeros(2, 2, 2);
        b.set(1, 0, 0, 3.0);
        assert_eq!(frobenius_inner(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_inner_matches_flat_dot() {
        let a = random_tensor(3, 4, 2, 31);
        let b = random_tensor(3, 4, 2, 32);
        let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        assert_eq!(frobenius_inner(&a, &b).unwrap(), dot);
        let c = random_tensor(3, 4, 3, 33);
        assert!(matches!(frobenius_inner(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn mode_product_is_bilinear() {
        let c = random_tensor(2, 2, 2, 41);
        let g1 = random_matrix(3, 2, 42);
        let g2 = random_matrix(3, 2, 43);
        let psi = random_matrix(4, 2, 44);
        let sum = Matrix::from_fn(3, 2, |r, c| g1.at(r, c) + 2.0 * g2.at(r, c));
        let lhs = mode_product(&c, &sum, &psi).unwrap();
        let a = mode_product(&c, &g1, &psi).unwrap();
        let b = mode_product(&c, &g2, &psi).unwrap();
        for (l, (x, y)) in lhs.data().iter().zip(a.data().iter().zip(b.data())) {
            assert!((l - (x + 2.0 * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn sdt1_round_trip() {
        let t = random_tensor(3, 2, 4, 51);
        let mut buf = Vec::new();
        write_sdt1(&mut buf, &t).unwrap();
        assert_eq!(&buf[0..4], b"SDT1");
        assert_eq!(buf.len(), 4 + 12 + 8 * 24);
        let back: Tensor3<f64> = read_sdt1(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn sdt1_bad_magic_rejected() {
        let buf = b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00".to_vec();
        let r: Result<Tensor3<f64>> = read_sdt1(&mut buf.as_slice());
        assert!(matches!(r, Err(Error::Parse(_))));
    }

    #[test]
    fn csv_debug_round_trip() {
        let t = random_tensor(2, 3, 2, 61);
        let mut buf = Vec::new();
        write_tensor_csv(&mut buf, &t).unwrap();
        let back: Tensor3<f64> = read_tensor_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        let r = Tensor3::from_vec(1, 1, 2, vec![1.0, f64::NAN]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn matrix_ops_agree_with_transpose_forms() {
        let a = random_matrix(4, 3, 71);
        let b = random_matrix(4, 5, 72);
        let lhs = a.tr_matmul(&b);
        let rhs = a.transpose().matmul(&b);
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-13);
        }
        let c = random_matrix(6, 3, 73);
        let lhs = a.matmul_tr(&c);
        let rhs = a.matmul(&c.transpose());
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}
