//! Dense complex linear algebra for small composite Hilbert spaces.
//!
//! Basis ordering is qubit-major: the first factor of a layout is the most
//! significant index of the flattened basis.

use ndarray::{s, Array1, Array2, ArrayView2, ShapeBuilder};
use ndarray_linalg::{EigValsh, Eigh, UPLO};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat = Array2<C64>;

pub const DIM_CAP: usize = 4096;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertLayout {
    factors: Vec<usize>,
}

impl HilbertLayout {
    pub fn new(factors: Vec<usize>) -> Result<Self> {
        Self::with_cap(factors, DIM_CAP)
    }

    pub fn with_cap(factors: Vec<usize>, cap: usize) -> Result<Self> {
        if factors.is_empty() || factors.iter().any(|&d| d == 0) {
            return Err(Error::Layout(format!("invalid factor list {factors:?}")));
        }
        let dim: usize = factors.iter().product();
        if dim > cap {
            return Err(Error::DimensionCap { dim, cap });
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().product()
    }

    pub fn concat(&self, other: &HilbertLayout) -> Result<Self> {
        let mut f = self.factors.clone();
        f.extend_from_slice(&other.factors);
        Self::new(f)
    }
}

#[derive(Clone, Debug)]
pub struct Operator {
    pub layout: HilbertLayout,
    pub data: Mat,
}

impl Operator {
    pub fn new(layout: HilbertLayout, data: Mat) -> Result<Self> {
        let d = layout.dim();
        if data.dim() != (d, d) {
            return Err(Error::Layout(format!("matrix shape {:?} does not match layout dimension {d}", data.dim())));
        }
        Ok(Self { layout, data })
    }

    /// Single-factor operator.
    pub fn local(data: Mat) -> Result<Self> {
        let d = data.nrows();
        Self::new(HilbertLayout::new(vec![d])?, data)
    }

    pub fn identity(layout: HilbertLayout) -> Self {
        let d = layout.dim();
        Self { layout, data: identity(d) }
    }

    pub fn dagger(&self) -> Self {
        Self { layout: self.layout.clone(), data: dagger(&self.data) }
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.data)
    }

    pub fn expect(&self, rho: &DensityMatrix) -> Result<C64> {
        same_layout(&self.layout, &rho.layout)?;
        Ok(trace_product(&self.data, &rho.data))
    }
}

#[derive(Clone, Debug)]
pub struct DensityMatrix {
    pub layout: HilbertLayout,
    pub data: Mat,
}

impl DensityMatrix {
    /// Checked constructor: Hermitian, unit trace, positive within slack.
    pub fn new(layout: HilbertLayout, data: Mat) -> Result<Self> {
        let rho = Self::new_unchecked(layout, data)?;
        rho.validate()?;
        Ok(rho)
    }

    /// Shape-checked only; used inside propagators where validation happens
    /// at coarser intervals.
    pub fn new_unchecked(layout: HilbertLayout, data: Mat) -> Result<Self> {
        let d = layout.dim();
        if data.dim() != (d, d) {
            return Err(Error::Layout(format!("matrix shape {:?} does not match layout dimension {d}", data.dim())));
        }
        Ok(Self { layout, data })
    }

    pub fn pure(layout: HilbertLayout, ket: &Array1<C64>) -> Result<Self> {
        let n = ket.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::InvalidState("zero ket".into()));
        }
        let k = ket.mapv(|z| z / n);
        Self::new(layout, outer(&k, &k))
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn trace(&self) -> C64 {
        self.data.diag().sum()
    }

    pub fn purity(&self) -> f64 {
        trace_product(&self.data, &self.data).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eigvalsh(&hermitian_part(&self.data)).iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(POSITIVITY_TOL)
    }

    pub fn validate_with(&self, positivity_tol: f64) -> Result<()> {
        let h = hermiticity_error(&self.data);
        if h > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("Hermiticity violated by {h:.3e}")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let lmin = self.min_eigenvalue();
        if lmin < -positivity_tol {
            return Err(Error::InvalidState(format!("negative eigenvalue {lmin:.3e}")));
        }
        Ok(())
    }
}

fn same_layout(a: &HilbertLayout, b: &HilbertLayout) -> Result<()> {
    if a != b {
        return Err(Error::Layout(format!("{:?} vs {:?}", a.factors(), b.factors())));
    }
    Ok(())
}

#[inline]
fn debug_check(rho: &DensityMatrix) {
    if cfg!(debug_assertions) && rho.dim() <= 256 {
        if let Err(e) = rho.validate() {
            panic!("state invariant violated: {e}");
        }
    }
}

pub fn identity(d: usize) -> Mat {
    Mat::eye(d)
}

pub fn dagger(a: &Mat) -> Mat {
    a.t().mapv(|z| z.conj())
}

pub fn hermitian_part(a: &Mat) -> Mat {
    (a + &dagger(a)).mapv(|z| z * 0.5)
}

pub fn hermiticity_error(a: &Mat) -> f64 {
    let (n, _) = a.dim();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in i..n {
            m = m.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    m
}

pub fn outer(a: &Array1<C64>, b: &Array1<C64>) -> Mat {
    Mat::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j].conj())
}

/// Tr{A B} without forming the product.
pub fn trace_product(a: &Mat, b: &Mat) -> C64 {
    trace_product_view(a.view(), b.view())
}

pub fn trace_product_view(a: ArrayView2<C64>, b: ArrayView2<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        let ar = a.row(i);
        let bc = b.column(i);
        for j in 0..n {
            acc += ar[j] * bc[j];
        }
    }
    acc
}

/// Kronecker product of plain matrices, first argument most significant.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Mat::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            let mut blk = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            blk.zip_mut_with(b, |o, &x| *o = aij * x);
        }
    }
    out
}

pub fn tensor(a: &Operator, b: &Operator) -> Result<Operator> {
    let layout = a.layout.concat(&b.layout)?;
    Operator::new(layout, kron(&a.data, &b.data))
}

pub fn tensor_states(a: &DensityMatrix, b: &DensityMatrix) -> Result<DensityMatrix> {
    let layout = a.layout.concat(&b.layout)?;
    let out = DensityMatrix::new_unchecked(layout, kron(&a.data, &b.data))?;
    debug_check(&out);
    Ok(out)
}

pub fn pauli_x() -> Mat {
    ndarray::array![[ZERO, ONE], [ONE, ZERO]]
}

pub fn pauli_y() -> Mat {
    ndarray::array![[ZERO, -I], [I, ZERO]]
}

pub fn pauli_z() -> Mat {
    ndarray::array![[ONE, ZERO], [ZERO, -ONE]]
}

/// Truncated bosonic annihilation operator on n_max + 1 levels.
pub fn annihilation(n_max: usize) -> Mat {
    let d = n_max + 1;
    let mut b = Mat::zeros((d, d));
    for n in 1..d {
        b[[n - 1, n]] = C64::from((n as f64).sqrt());
    }
    b
}

pub fn number(n_max: usize) -> Mat {
    Mat::from_diag(&Array1::from_shape_fn(n_max + 1, |n| C64::from(n as f64)))
}

/// Fock amplitudes of the coherent state |alpha> on n_max + 1 levels,
/// renormalised after truncation, together with the untruncated population
/// of the top retained level.
pub fn coherent_amplitudes(alpha: C64, n_max: usize) -> (Array1<C64>, f64) {
    let d = n_max + 1;
    let mut c = Array1::<C64>::zeros(d);
    let pref = (-0.5 * alpha.norm_sqr()).exp();
    let mut term = C64::from(pref);
    c[0] = term;
    for n in 1..d {
        term = term * alpha / (n as f64).sqrt();
        c[n] = term;
    }
    let top = c[n_max].norm_sqr();
    let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    c.mapv_inplace(|z| z / norm);
    (c, top)
}

/// Threshold on the top-level population of a truncated coherent state.
pub const COHERENT_TOP_TOL: f64 = 1e-6;

pub fn coherent_ket(alpha: C64, n_max: usize) -> Result<Array1<C64>> {
    let (c, top) = coherent_amplitudes(alpha, n_max);
    if top > COHERENT_TOP_TOL {
        return Err(Error::Cutoff { n_max, pop: top });
    }
    Ok(c)
}

pub fn coherent_state(alpha: C64, n_max: usize) -> Result<DensityMatrix> {
    let c = coherent_ket(alpha, n_max)?;
    let rho = DensityMatrix::new_unchecked(HilbertLayout::new(vec![n_max + 1])?, outer(&c, &c))?;
    debug_check(&rho);
    Ok(rho)
}

/// <psi| rho |psi> for a normalised ket.
pub fn overlap(ket: &Array1<C64>, rho: &Mat) -> f64 {
    let v = rho.dot(ket);
    ket.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum::<C64>().re
}

pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let factors = rho.layout.factors();
    let nf = factors.len();
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.is_empty() || keep_sorted.iter().any(|&k| k >= nf) {
        return Err(Error::Layout(format!("invalid keep indices {keep:?} for {nf} factors")));
    }
    let traced: Vec<usize> = (0..nf).filter(|i| !keep_sorted.contains(i)).collect();

    let mut strides = vec![1usize; nf];
    for i in (0..nf - 1).rev() {
        strides[i] = strides[i + 1] * factors[i + 1];
    }
    let expand = |sel: &[usize], mut idx: usize| -> usize {
        // mixed-radix decomposition over the selected factors, most significant first
        let mut full = 0;
        for &f in sel.iter().rev() {
            let d = factors[f];
            full += (idx % d) * strides[f];
            idx /= d;
        }
        full
    };
    let dk: usize = keep_sorted.iter().map(|&i| factors[i]).product();
    let dt: usize = traced.iter().map(|&i| factors[i]).product();
    let kmap: Vec<usize> = (0..dk).map(|i| expand(&keep_sorted, i)).collect();
    let tmap: Vec<usize> = (0..dt).map(|i| expand(&traced, i)).collect();

    let mut out = Mat::zeros((dk, dk));
    for &t in &tmap {
        for (i, &ki) in kmap.iter().enumerate() {
            for (j, &kj) in kmap.iter().enumerate() {
                out[[i, j]] += rho.data[[ki + t, kj + t]];
            }
        }
    }
    let layout = HilbertLayout::new(keep_sorted.iter().map(|&i| factors[i]).collect())?;
    let res = DensityMatrix::new_unchecked(layout, out)?;
    debug_check(&res);
    Ok(res)
}

pub fn eigh(a: &Mat) -> (Array1<f64>, Mat) {
    // The LAPACK wrapper reads a row-major buffer as its transpose, which for
    // a complex Hermitian matrix is the conjugate and yields conjugated
    // eigenvectors. A column-major copy sidesteps that.
    let mut f = Mat::zeros(a.raw_dim().f());
    f.assign(a);
    let (w, v) = f.eigh(UPLO::Lower).expect("Hermitian eigendecomposition failed");
    (w, v.as_standard_layout().into_owned())
}

pub fn eigvalsh(a: &Mat) -> Array1<f64> {
    a.eigvalsh(UPLO::Lower).expect("Hermitian eigenvalue solve failed")
}

/// exp(-i H t) from a precomputed eigendecomposition H = V diag(w) V^dag.
pub fn unitary_from_eigh(w: &Array1<f64>, v: &Mat, t: f64) -> Mat {
    let mut vp = v.clone();
    for (j, mut col) in vp.columns_mut().into_iter().enumerate() {
        let ph = C64::from_polar(1.0, -w[j] * t);
        col.mapv_inplace(|z| z * ph);
    }
    vp.dot(&dagger(v))
}

pub fn herm_expm_action(h: &Operator, dt: f64, rho: &DensityMatrix) -> Result<DensityMatrix> {
    same_layout(&h.layout, &rho.layout)?;
    let herr = h.hermiticity_error();
    if herr > 1e-9 {
        return Err(Error::NonHermitian(herr));
    }
    let (w, v) = eigh(&hermitian_part(&h.data));
    let u = unitary_from_eigh(&w, &v, dt);
    let out = u.dot(&rho.data).dot(&dagger(&u));
    let res = DensityMatrix::new_unchecked(rho.layout.clone(), out)?;
    debug_check(&res);
    Ok(res)
}

/// General matrix exponential (Pade with scaling and squaring).
pub fn expm(a: &Mat) -> Mat {
    let n = a.nrows();
    let m = nalgebra::DMatrix::<C64>::from_fn(n, n, |i, j| a[[i, j]]);
    let e = m.exp();
    Mat::from_shape_fn((n, n), |(i, j)| e[(i, j)])
}

pub fn trace_distance_mat(a: &Mat, b: &Mat) -> f64 {
    let d = hermitian_part(&(a - b));
    0.5 * eigvalsh(&d).iter().map(|x| x.abs()).sum::<f64>()
}

pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    same_layout(&a.layout, &b.layout)?;
    Ok(trace_distance_mat(&a.data, &b.data))
}
