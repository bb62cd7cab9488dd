//! Dense complex linear algebra for small multi-party systems.
//!
//! Operators carry the list of subsystem dimensions they act on; the matrix
//! side always equals the product of those dimensions. Tensor factors are
//! ordered most-significant first, so `tensor([A, B])` is the usual
//! Kronecker product `A ⊗ B`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest total Hilbert-space dimension accepted by [`tensor`].
pub const DEFAULT_MAX_DIMENSION: usize = 1 << 14;
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-12;
pub const PPT_TOL: f64 = 1e-9;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::DimensionMismatch("empty dimension list".into()));
    }
    if let Some(d) = dims.iter().find(|&&d| d < 2) {
        return Err(Error::DimensionMismatch(format!(
            "subsystem dimension {d} < 2"
        )));
    }
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d).ok_or(Error::Capacity {
            requested: usize::MAX,
            limit: DEFAULT_MAX_DIMENSION,
        })
    })
}

fn all_finite<'a>(it: impl IntoIterator<Item = &'a C64>) -> bool {
    it.into_iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Decompose a flat index into per-subsystem digits (most significant first).
pub(crate) fn digits(mut index: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = index % dims[k];
        index /= dims[k];
    }
}

pub(crate) fn compose(digits: &[usize], dims: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (&x, &d)| acc * d + x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Operator {
    dims: Vec<usize>,
    mat: DMatrix<C64>,
}

/// Language-neutral file layout: `{ "dims": [...], "entries": [[re, im], ...] }`,
/// row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixRepr {
    pub dims: Vec<usize>,
    pub entries: Vec<[f64; 2]>,
}

impl TryFrom<MatrixRepr> for Operator {
    type Error = Error;

    fn try_from(repr: MatrixRepr) -> Result<Self> {
        let n = check_dims(&repr.dims)?;
        if repr.entries.len() != n * n {
            return Err(Error::Format(format!(
                "expected {} entries for dims {:?}, found {}",
                n * n,
                repr.dims,
                repr.entries.len()
            )));
        }
        let mat = DMatrix::from_row_iterator(
            n,
            n,
            repr.entries.iter().map(|[re, im]| C64::new(*re, *im)),
        );
        Operator::new(repr.dims, mat)
    }
}

impl From<Operator> for MatrixRepr {
    fn from(op: Operator) -> Self {
        let n = op.dim();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = op.mat[(i, j)];
                entries.push([z.re, z.im]);
            }
        }
        MatrixRepr {
            dims: op.dims,
            entries,
        }
    }
}

impl Operator {
    pub fn new(dims: Vec<usize>, mat: DMatrix<C64>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if mat.nrows() != n || mat.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{}, dims {:?} require {n}x{n}",
                mat.nrows(),
                mat.ncols(),
                dims
            )));
        }
        if !all_finite(mat.iter()) {
            return Err(Error::NonFinite("operator"));
        }
        Ok(Self { dims, mat })
    }

    pub fn from_real_rows(dims: Vec<usize>, rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j], 0.0));
        Self::new(dims, mat)
    }

    pub fn identity(dims: &[usize]) -> Result<Self> {
        let n = check_dims(dims)?;
        Self::new(dims.to_vec(), DMatrix::identity(n, n))
    }

    pub fn diagonal(dims: &[usize], diag: &[f64]) -> Result<Self> {
        let n = check_dims(dims)?;
        if diag.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} diagonal entries for dimension {n}",
                diag.len()
            )));
        }
        let mut mat = DMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            mat[(i, i)] = C64::new(d, 0.0);
        }
        Self::new(dims.to_vec(), mat)
    }

    /// Rank-one operator `|v⟩⟨v|` (no normalization).
    pub fn outer(dims: &[usize], v: &DVector<C64>) -> Result<Self> {
        Self::new(dims.to_vec(), v * v.adjoint())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn dagger(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            mat: self.mat.adjoint(),
        }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            mat: self.mat.map(|z| z * s),
        }
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            mat: &self.mat + &other.mat,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            mat: &self.mat - &other.mat,
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            mat: &self.mat * &other.mat,
        })
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Reorder tensor factors: position `k` of the result holds old factor `perm[k]`.
    pub fn permute_subsystems(&self, perm: &[usize]) -> Result<Self> {
        let map = permutation_map(&self.dims, perm)?;
        let n = self.dim();
        let new_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let mut mat = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                mat[(map[i], map[j])] = self.mat[(i, j)];
            }
        }
        Ok(Self {
            dims: new_dims,
            mat,
        })
    }
}

/// For every old flat index, the flat index it moves to under `perm`.
fn permutation_map(dims: &[usize], perm: &[usize]) -> Result<Vec<usize>> {
    let k = dims.len();
    let mut seen = vec![false; k];
    if perm.len() != k {
        return Err(Error::InvalidIndex(format!(
            "permutation of length {} for {k} subsystems",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= k || seen[p] {
            return Err(Error::InvalidIndex(format!(
                "{perm:?} is not a permutation"
            )));
        }
        seen[p] = true;
    }
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let n: usize = dims.iter().product();
    let mut old = vec![0; k];
    let mut new = vec![0; k];
    Ok((0..n)
        .map(|i| {
            digits(i, dims, &mut old);
            for (slot, &p) in new.iter_mut().zip(perm) {
                *slot = old[p];
            }
            compose(&new, &new_dims)
        })
        .collect())
}

/// Kronecker product in list order with the default capacity limit.
pub fn tensor(ops: &[&Operator]) -> Result<Operator> {
    tensor_with_capacity(ops, DEFAULT_MAX_DIMENSION)
}

pub fn tensor_with_capacity(ops: &[&Operator], max_dim: usize) -> Result<Operator> {
    let (first, rest) = ops
        .split_first()
        .ok_or_else(|| Error::DimensionMismatch("tensor of an empty list".into()))?;
    let total = ops
        .iter()
        .try_fold(1usize, |acc, op| acc.checked_mul(op.dim()))
        .unwrap_or(usize::MAX);
    if total > max_dim {
        return Err(Error::Capacity {
            requested: total,
            limit: max_dim,
        });
    }
    let mut dims = first.dims.clone();
    let mut mat = first.mat.clone();
    for op in rest {
        dims.extend_from_slice(&op.dims);
        mat = mat.kronecker(&op.mat);
    }
    Operator::new(dims, mat)
}

/// An [`Operator`] with `‖A − A†‖_max ≤ 1e-12`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Operator", into = "Operator")]
pub struct HermitianOperator(Operator);

impl TryFrom<Operator> for HermitianOperator {
    type Error = Error;
    fn try_from(op: Operator) -> Result<Self> {
        HermitianOperator::new(op)
    }
}

impl From<HermitianOperator> for Operator {
    fn from(h: HermitianOperator) -> Self {
        h.0
    }
}

impl HermitianOperator {
    pub fn new(op: Operator) -> Result<Self> {
        let defect = op.hermiticity_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self(op))
    }

    pub fn identity(dims: &[usize]) -> Result<Self> {
        Ok(Self(Operator::identity(dims)?))
    }

    pub fn diagonal(dims: &[usize], diag: &[f64]) -> Result<Self> {
        Ok(Self(Operator::diagonal(dims, diag)?))
    }

    pub fn projector(dims: &[usize], v: &DVector<C64>) -> Result<Self> {
        Ok(Self(Operator::outer(dims, v)?))
    }

    pub fn operator(&self) -> &Operator {
        &self.0
    }

    pub fn dims(&self) -> &[usize] {
        self.0.dims()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        self.0.matrix()
    }

    /// Real linear combination `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        Ok(Self(self.0.scale(a).add(&other.0.scale(b))?))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.0.mat.clone());
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        vals
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().expect("nonempty spectrum")
    }

    pub fn permute_subsystems(&self, perm: &[usize]) -> Result<Self> {
        Ok(Self(self.0.permute_subsystems(perm)?))
    }
}

pub fn min_eigenvalue(h: &HermitianOperator) -> f64 {
    h.min_eigenvalue()
}

/// Unit-trace positive semidefinite Hermitian operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Operator", into = "Operator")]
pub struct DensityMatrix(HermitianOperator);

impl TryFrom<Operator> for DensityMatrix {
    type Error = Error;
    fn try_from(op: Operator) -> Result<Self> {
        DensityMatrix::new(HermitianOperator::new(op)?)
    }
}

impl From<DensityMatrix> for Operator {
    fn from(d: DensityMatrix) -> Self {
        d.0 .0
    }
}

impl DensityMatrix {
    pub fn new(h: HermitianOperator) -> Result<Self> {
        let tr = h.0.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::NotDensity(format!("trace {tr}")));
        }
        let min = h.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::NotDensity(format!("minimum eigenvalue {min:e}")));
        }
        Ok(Self(h))
    }

    pub fn maximally_mixed(dims: &[usize]) -> Result<Self> {
        let n = check_dims(dims)?;
        Self::new(HermitianOperator::identity(dims)?.scale(1.0 / n as f64))
    }

    /// Convex mixture `Σ wᵢ ρᵢ`; weights must be non-negative and sum to one.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let (first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::InvalidParameter("empty mixture".into()))?;
        if parts.iter().any(|(w, _)| *w < 0.0) {
            return Err(Error::InvalidParameter("negative mixture weight".into()));
        }
        let mut acc = first.1 .0 .0.scale(first.0);
        for (w, rho) in rest {
            acc = acc.add(&rho.0 .0.scale(*w))?;
        }
        Self::new(HermitianOperator::new(acc)?)
    }

    pub fn hermitian(&self) -> &HermitianOperator {
        &self.0
    }

    pub fn dims(&self) -> &[usize] {
        self.0.dims()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        self.0.matrix()
    }

    pub fn permute_subsystems(&self, perm: &[usize]) -> Result<Self> {
        Ok(Self(self.0.permute_subsystems(perm)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VectorRepr", into = "VectorRepr")]
pub struct PureState {
    dims: Vec<usize>,
    amps: DVector<C64>,
}

/// `{ "dims": [...], "entries": [[re, im], ...] }` with one entry per amplitude.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorRepr {
    pub dims: Vec<usize>,
    pub entries: Vec<[f64; 2]>,
}

impl TryFrom<VectorRepr> for PureState {
    type Error = Error;
    fn try_from(repr: VectorRepr) -> Result<Self> {
        let n = check_dims(&repr.dims)?;
        if repr.entries.len() != n {
            return Err(Error::Format(format!(
                "expected {n} amplitudes for dims {:?}, found {}",
                repr.dims,
                repr.entries.len()
            )));
        }
        let amps = DVector::from_iterator(n, repr.entries.iter().map(|[r, i]| C64::new(*r, *i)));
        PureState::new(repr.dims, amps)
    }
}

impl From<PureState> for VectorRepr {
    fn from(s: PureState) -> Self {
        VectorRepr {
            dims: s.dims,
            entries: s.amps.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl PureState {
    pub fn new(dims: Vec<usize>, amps: DVector<C64>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if amps.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for dims {dims:?}",
                amps.len()
            )));
        }
        if !all_finite(amps.iter()) {
            return Err(Error::NonFinite("state amplitudes"));
        }
        let norm = amps.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { dims, amps })
    }

    /// Normalize `amps` first; fails only for the zero vector.
    pub fn normalized(dims: Vec<usize>, amps: DVector<C64>) -> Result<Self> {
        let norm = amps.norm();
        if norm.is_nan() || norm <= 0.0 || !norm.is_finite() {
            return Err(Error::NotNormalized(norm));
        }
        Self::new(dims, amps.unscale(norm))
    }

    pub fn basis(dims: &[usize], index: usize) -> Result<Self> {
        let n = check_dims(dims)?;
        if index >= n {
            return Err(Error::InvalidIndex(format!("basis index {index} >= {n}")));
        }
        let mut amps = DVector::from_element(n, ZERO);
        amps[index] = ONE;
        Self::new(dims.to_vec(), amps)
    }

    /// `(|00⟩ + |11⟩)/√2` on two qubits.
    pub fn bell() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = DVector::from_element(4, C64::new(0.0, 0.0));
        amps[0] = C64::new(s, 0.0);
        amps[3] = C64::new(s, 0.0);
        Self {
            dims: vec![2, 2],
            amps,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self.amps.dotc(&other.amps))
    }

    pub fn to_density(&self) -> DensityMatrix {
        let op = Operator {
            dims: self.dims.clone(),
            mat: &self.amps * self.amps.adjoint(),
        };
        // |ψ⟩⟨ψ| of a normalized vector is Hermitian, PSD and unit trace up to rounding.
        DensityMatrix(HermitianOperator(op))
    }

    pub fn permute_subsystems(&self, perm: &[usize]) -> Result<Self> {
        let map = permutation_map(&self.dims, perm)?;
        let mut amps = DVector::from_element(self.amps.len(), ZERO);
        for (i, &j) in map.iter().enumerate() {
            amps[j] = self.amps[i];
        }
        Ok(Self {
            dims: perm.iter().map(|&p| self.dims[p]).collect(),
            amps,
        })
    }
}

/// Tensor product of normalized factors; a factor may span several subsystems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductState {
    factors: Vec<PureState>,
}

impl ProductState {
    pub fn new(factors: Vec<PureState>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::DimensionMismatch("product of zero factors".into()));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[PureState] {
        &self.factors
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors
            .iter()
            .flat_map(|f| f.dims.iter().copied())
            .collect()
    }

    pub fn to_pure(&self) -> PureState {
        let mut amps = self.factors[0].amps.clone();
        for f in &self.factors[1..] {
            amps = amps.kronecker(&f.amps);
        }
        PureState {
            dims: self.dims(),
            amps,
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        self.to_pure().to_density()
    }
}

/// Anything an observable can be evaluated on.
pub trait QuantumState {
    fn state_dims(&self) -> Vec<usize>;
    /// `Tr(Mρ)` or `⟨ψ|M|ψ⟩` for a matrix of matching side.
    fn expect_matrix(&self, m: &DMatrix<C64>) -> C64;
}

impl QuantumState for DensityMatrix {
    fn state_dims(&self) -> Vec<usize> {
        self.dims().to_vec()
    }
    fn expect_matrix(&self, m: &DMatrix<C64>) -> C64 {
        let rho = self.matrix();
        let n = rho.nrows();
        let mut acc = ZERO;
        for i in 0..n {
            for j in 0..n {
                acc += m[(i, j)] * rho[(j, i)];
            }
        }
        acc
    }
}

impl QuantumState for PureState {
    fn state_dims(&self) -> Vec<usize> {
        self.dims.clone()
    }
    fn expect_matrix(&self, m: &DMatrix<C64>) -> C64 {
        self.amps.dotc(&(m * &self.amps))
    }
}

impl QuantumState for ProductState {
    fn state_dims(&self) -> Vec<usize> {
        self.dims()
    }
    fn expect_matrix(&self, m: &DMatrix<C64>) -> C64 {
        self.to_pure().expect_matrix(m)
    }
}

const IMAG_TOL: f64 = 1e-10;

/// Real expectation value of a Hermitian observable.
pub fn expectation<S: QuantumState + ?Sized>(op: &HermitianOperator, state: &S) -> Result<f64> {
    let sdims = state.state_dims();
    if sdims != op.dims() {
        return Err(Error::DimensionMismatch(format!(
            "operator dims {:?}, state dims {:?}",
            op.dims(),
            sdims
        )));
    }
    let z = state.expect_matrix(op.matrix());
    if z.im.abs() > IMAG_TOL * (1.0 + z.re.abs()) {
        return Err(Error::Domain(format!(
            "expectation has imaginary residual {:e}",
            z.im
        )));
    }
    Ok(z.re)
}

/// Max-entry norm of `AB − BA`.
pub fn commutator_norm(a: &HermitianOperator, b: &HermitianOperator) -> Result<f64> {
    let ab = a.0.mul(&b.0)?;
    let ba = b.0.mul(&a.0)?;
    ab.max_abs_diff(&ba)
}

/// Transpose the tensor factor `party` of an arbitrary operator.
pub fn partial_transpose_operator(op: &Operator, party: usize) -> Result<Operator> {
    let dims = op.dims();
    if party >= dims.len() {
        return Err(Error::InvalidIndex(format!(
            "party {party} for {} subsystems",
            dims.len()
        )));
    }
    let n = op.dim();
    let k = dims.len();
    let mut row = vec![0; k];
    let mut col = vec![0; k];
    let mut mat = DMatrix::zeros(n, n);
    for i in 0..n {
        digits(i, dims, &mut row);
        for j in 0..n {
            digits(j, dims, &mut col);
            std::mem::swap(&mut row[party], &mut col[party]);
            mat[(compose(&row, dims), compose(&col, dims))] = op.matrix()[(i, j)];
            std::mem::swap(&mut row[party], &mut col[party]);
        }
    }
    Operator::new(dims.to_vec(), mat)
}

pub fn partial_transpose(rho: &DensityMatrix, party: usize) -> Result<HermitianOperator> {
    HermitianOperator::new(partial_transpose_operator(
        rho.hermitian().operator(),
        party,
    )?)
}

/// Peres–Horodecki test across the cut separating `party` from the rest.
pub fn is_ppt(rho: &DensityMatrix, party: usize) -> Result<bool> {
    Ok(partial_transpose(rho, party)?.min_eigenvalue() >= -PPT_TOL)
}
