//! Preconditioner spaces and their compact elements.
//!
//! Each space is a linear subspace of self-adjoint operators on the ambient
//! space of iterates. Elements are stored by their parameters only:
//!
//! | kind             | ambient      | element            | `R(x)`               |
//! |------------------|--------------|--------------------|----------------------|
//! | `ScalarIdentity` | `R^d`        | `c I`              | `‖x‖ / √d`           |
//! | `Diagonal`       | `R^d`        | `diag(v)`          | `‖x‖_∞`              |
//! | `LeftMatrix`     | `R^{m×n}`    | `G ↦ B G`, `B ∈ S^m` | `σ_max(X) / √n`    |
//! | `RowDiagonal`    | `R^{m×n}`    | `G ↦ diag(b) G`    | `‖X‖_{2→∞} / √n`     |
//!
//! The dense `dim X × dim X` operator is never formed here; traces and inner
//! products carry the factor `n` of the Kronecker structure `B ⊗ I_n`.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A point of the ambient space. Vector spaces use `d × 1` matrices.
pub type Point = DMatrix<f64>;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    /// AdaGrad-Norm: multiples of the identity.
    ScalarIdentity,
    /// AdaGrad: diagonal operators on `R^d`.
    Diagonal,
    /// ASGO / one-sided Shampoo: left multiplication by a symmetric matrix.
    LeftMatrix,
    /// DASGO: left multiplication by a diagonal matrix.
    RowDiagonal,
}

impl SpaceKind {
    pub fn is_matrix(self) -> bool {
        matches!(self, SpaceKind::LeftMatrix | SpaceKind::RowDiagonal)
    }

    /// True when every element of the space is diagonal in the standard basis.
    pub fn is_diagonal_type(self) -> bool {
        !matches!(self, SpaceKind::LeftMatrix)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpaceKind::ScalarIdentity => "scalar",
            SpaceKind::Diagonal => "diagonal",
            SpaceKind::LeftMatrix => "left",
            SpaceKind::RowDiagonal => "rows",
        }
    }
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which preconditioner space is in play, together with the ambient shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Space {
    kind: SpaceKind,
    rows: usize,
    cols: usize,
}

impl Space {
    pub fn scalar_identity(d: usize) -> Result<Self> {
        Self::vector(SpaceKind::ScalarIdentity, d)
    }

    pub fn diagonal(d: usize) -> Result<Self> {
        Self::vector(SpaceKind::Diagonal, d)
    }

    pub fn left_matrix(m: usize, n: usize) -> Result<Self> {
        Self::matrix(SpaceKind::LeftMatrix, m, n)
    }

    pub fn row_diagonal(m: usize, n: usize) -> Result<Self> {
        Self::matrix(SpaceKind::RowDiagonal, m, n)
    }

    /// Builds a space of the given kind. Vector kinds require `cols == 1`.
    pub fn new(kind: SpaceKind, rows: usize, cols: usize) -> Result<Self> {
        if kind.is_matrix() {
            Self::matrix(kind, rows, cols)
        } else if cols != 1 {
            Err(Error::InvalidParameter(format!(
                "{kind} space acts on vectors, got {rows}x{cols}"
            )))
        } else {
            Self::vector(kind, rows)
        }
    }

    fn vector(kind: SpaceKind, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Space {
            kind,
            rows: d,
            cols: 1,
        })
    }

    fn matrix(kind: SpaceKind, m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "matrix shape must be positive, got {m}x{n}"
            )));
        }
        Ok(Space {
            kind,
            rows: m,
            cols: n,
        })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `dim X`.
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn zeros(&self) -> Point {
        Point::zeros(self.rows, self.cols)
    }

    pub fn check_point(&self, x: &Point) -> Result<()> {
        if x.nrows() == self.rows && x.ncols() == self.cols {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{}x{} point for {} space", self.rows, self.cols, self.kind),
                found: format!("{}x{}", x.nrows(), x.ncols()),
            })
        }
    }

    /// Number of scalar parameters of an element.
    pub fn param_len(&self) -> usize {
        match self.kind {
            SpaceKind::ScalarIdentity => 1,
            SpaceKind::Diagonal | SpaceKind::RowDiagonal => self.rows,
            SpaceKind::LeftMatrix => self.rows * (self.rows + 1) / 2,
        }
    }

    pub fn identity(&self) -> SpaceElement {
        self.constant(1.0)
    }

    pub fn zero_element(&self) -> SpaceElement {
        self.constant(0.0)
    }

    /// The element `t I`.
    pub fn constant(&self, t: f64) -> SpaceElement {
        let payload = match self.kind {
            SpaceKind::ScalarIdentity => Payload::Scalar(t),
            SpaceKind::Diagonal => Payload::Diagonal(DVector::from_element(self.rows, t)),
            SpaceKind::LeftMatrix => {
                Payload::LeftMatrix(DMatrix::identity(self.rows, self.rows) * t)
            }
            SpaceKind::RowDiagonal => Payload::RowDiagonal(DVector::from_element(self.rows, t)),
        };
        SpaceElement {
            space: *self,
            payload,
        }
    }

    /// Orthogonal projection of the rank-one operator `x ↦ ⟨x, g⟩ g` onto the space.
    pub fn project_rank_one(&self, g: &Point) -> Result<SpaceElement> {
        self.check_point(g)?;
        let n = self.cols as f64;
        let payload = match self.kind {
            SpaceKind::ScalarIdentity => Payload::Scalar(g.norm_squared() / self.rows as f64),
            SpaceKind::Diagonal => Payload::Diagonal(DVector::from_iterator(
                self.rows,
                g.iter().map(|v| v * v),
            )),
            SpaceKind::LeftMatrix => {
                let m = self.rows;
                let mut b = DMatrix::zeros(m, m);
                for i in 0..m {
                    for j in i..m {
                        let v = g.row(i).dot(&g.row(j)) / n;
                        b[(i, j)] = v;
                        b[(j, i)] = v;
                    }
                }
                Payload::LeftMatrix(b)
            }
            SpaceKind::RowDiagonal => Payload::RowDiagonal(DVector::from_iterator(
                self.rows,
                g.row_iter().map(|r| r.norm_squared() / n),
            )),
        };
        Ok(SpaceElement {
            space: *self,
            payload,
        })
    }

    /// The space-induced norm `R(x) = ‖Π(x⟨x,·⟩)‖_op^{1/2}`, in closed form.
    pub fn norm(&self, x: &Point) -> Result<f64> {
        self.check_point(x)?;
        let sqrt_n = (self.cols as f64).sqrt();
        Ok(match self.kind {
            SpaceKind::ScalarIdentity => x.norm() / (self.rows as f64).sqrt(),
            SpaceKind::Diagonal => x.amax(),
            SpaceKind::LeftMatrix => {
                let sv = x.singular_values();
                sv.iter().cloned().fold(0.0, f64::max) / sqrt_n
            }
            SpaceKind::RowDiagonal => {
                x.row_iter().map(|r| r.norm()).fold(0.0, f64::max) / sqrt_n
            }
        })
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind.is_matrix() {
            write!(f, "{}({}x{})", self.kind, self.rows, self.cols)
        } else {
            write!(f, "{}({})", self.kind, self.rows)
        }
    }
}

/// Parameters of an element, one variant per space kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Scalar(f64),
    Diagonal(DVector<f64>),
    /// Symmetric `m × m` matrix, stored with exactly mirrored entries.
    LeftMatrix(DMatrix<f64>),
    RowDiagonal(DVector<f64>),
}

/// One member of a preconditioner space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceElement {
    space: Space,
    payload: Payload,
}

impl SpaceElement {
    pub fn new(space: Space, payload: Payload) -> Result<Self> {
        let ok = match (&payload, space.kind) {
            (Payload::Scalar(_), SpaceKind::ScalarIdentity) => true,
            (Payload::Diagonal(v), SpaceKind::Diagonal) => v.len() == space.rows,
            (Payload::RowDiagonal(b), SpaceKind::RowDiagonal) => b.len() == space.rows,
            (Payload::LeftMatrix(b), SpaceKind::LeftMatrix) => {
                if b.nrows() != space.rows || b.ncols() != space.rows {
                    false
                } else {
                    if !is_exactly_symmetric(b) {
                        return Err(Error::InvalidParameter(
                            "left-matrix payload must be exactly symmetric".into(),
                        ));
                    }
                    true
                }
            }
            _ => false,
        };
        if !ok {
            return Err(Error::SpaceMismatch(format!(
                "payload does not describe an element of {space}"
            )));
        }
        Ok(SpaceElement { space, payload })
    }

    /// Convenience constructor from a flat parameter list: one value for
    /// `ScalarIdentity`, `rows` values for the diagonal kinds.
    pub fn from_diagonal(space: Space, values: &[f64]) -> Result<Self> {
        let payload = match space.kind {
            SpaceKind::ScalarIdentity if values.len() == 1 => Payload::Scalar(values[0]),
            SpaceKind::Diagonal if values.len() == space.rows => {
                Payload::Diagonal(DVector::from_column_slice(values))
            }
            SpaceKind::RowDiagonal if values.len() == space.rows => {
                Payload::RowDiagonal(DVector::from_column_slice(values))
            }
            SpaceKind::LeftMatrix if values.len() == space.rows => {
                Payload::LeftMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    expected: format!("parameters for {space}"),
                    found: format!("{} values", values.len()),
                })
            }
        };
        SpaceElement::new(space, payload)
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    fn check_same_space(&self, other: &SpaceElement) -> Result<()> {
        if self.space == other.space {
            Ok(())
        } else {
            Err(Error::SpaceMismatch(format!(
                "{} vs {}",
                self.space, other.space
            )))
        }
    }

    fn zip_with(&self, other: &SpaceElement, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_space(other)?;
        let payload = match (&self.payload, &other.payload) {
            (Payload::Scalar(a), Payload::Scalar(b)) => Payload::Scalar(f(*a, *b)),
            (Payload::Diagonal(a), Payload::Diagonal(b)) => Payload::Diagonal(a.zip_map(b, &f)),
            (Payload::RowDiagonal(a), Payload::RowDiagonal(b)) => {
                Payload::RowDiagonal(a.zip_map(b, &f))
            }
            (Payload::LeftMatrix(a), Payload::LeftMatrix(b)) => {
                Payload::LeftMatrix(a.zip_map(b, &f))
            }
            _ => unreachable!("payload kind is fixed by the space"),
        };
        Ok(SpaceElement {
            space: self.space,
            payload,
        })
    }

    /// Payload-wise sum; used to maintain the projected moment incrementally.
    pub fn accumulate(&self, delta: &SpaceElement) -> Result<Self> {
        self.zip_with(delta, |a, b| a + b)
    }

    pub fn difference(&self, other: &SpaceElement) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, t: f64) -> Self {
        let payload = match &self.payload {
            Payload::Scalar(c) => Payload::Scalar(c * t),
            Payload::Diagonal(v) => Payload::Diagonal(v * t),
            Payload::RowDiagonal(b) => Payload::RowDiagonal(b * t),
            Payload::LeftMatrix(b) => Payload::LeftMatrix(b * t),
        };
        SpaceElement {
            space: self.space,
            payload,
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.payload {
            Payload::Scalar(c) => c.is_finite(),
            Payload::Diagonal(v) | Payload::RowDiagonal(v) => v.iter().all(|x| x.is_finite()),
            Payload::LeftMatrix(b) => b.iter().all(|x| x.is_finite()),
        }
    }

    /// Distinct eigenvalues of the payload, ascending. The operator has the
    /// same spectrum (with multiplicities scaled by `d` or `n`).
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut ev = match &self.payload {
            Payload::Scalar(c) => vec![*c],
            Payload::Diagonal(v) | Payload::RowDiagonal(v) => v.iter().cloned().collect(),
            Payload::LeftMatrix(b) => symmetric_eigen(b)?.eigenvalues.iter().cloned().collect(),
        };
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    pub fn lambda_max(&self) -> Result<f64> {
        Ok(*self.eigenvalues()?.last().expect("nonempty spectrum"))
    }

    pub fn lambda_min(&self) -> Result<f64> {
        Ok(self.eigenvalues()?[0])
    }

    /// The operator function `ψ(H)`, applied through the eigendecomposition.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let payload = match &self.payload {
            Payload::Scalar(c) => Payload::Scalar(f(*c)),
            Payload::Diagonal(v) => Payload::Diagonal(v.map(&f)),
            Payload::RowDiagonal(b) => Payload::RowDiagonal(b.map(&f)),
            Payload::LeftMatrix(b) => {
                let eig = symmetric_eigen(b)?;
                let mapped = eig.eigenvalues.map(&f);
                let v = &eig.eigenvectors;
                let mut out = v * DMatrix::from_diagonal(&mapped) * v.transpose();
                mirror_upper(&mut out);
                Payload::LeftMatrix(out)
            }
        };
        let out = SpaceElement {
            space: self.space,
            payload,
        };
        if !out.is_finite() {
            return Err(Error::numeric("operator function produced non-finite values"));
        }
        Ok(out)
    }

    /// `η (δ I + self)^{-1/2}`. Eigenvalues of `self` are clamped at zero first.
    pub fn inv_sqrt_shifted(&self, delta: f64, eta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {eta}"
            )));
        }
        self.map_spectrum(|t| eta / (delta + t.max(0.0)).sqrt())
    }

    /// `η self^{-1/2}` with no shift. Only valid when `self` is already
    /// positive definite; used by hand-checked audits with `δ = 0`.
    pub fn inv_sqrt_unshifted(&self, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {eta}"
            )));
        }
        if self.lambda_min()? <= 0.0 {
            return Err(Error::numeric(
                "unshifted inverse square root of a singular element",
            ));
        }
        self.map_spectrum(|t| eta / t.sqrt())
    }

    /// `H g`.
    pub fn apply(&self, g: &Point) -> Result<Point> {
        self.space.check_point(g)?;
        Ok(match &self.payload {
            Payload::Scalar(c) => g * *c,
            Payload::Diagonal(v) => {
                let mut out = g.clone();
                out.column_mut(0).component_mul_assign(v);
                out
            }
            Payload::LeftMatrix(b) => b * g,
            Payload::RowDiagonal(b) => {
                let mut out = g.clone();
                for (mut row, s) in out.row_iter_mut().zip(b.iter()) {
                    row *= *s;
                }
                out
            }
        })
    }

    /// Operator inner product `⟨A, S⟩ = tr(A S*)`.
    pub fn inner(&self, other: &SpaceElement) -> Result<f64> {
        self.check_same_space(other)?;
        let n = self.space.cols as f64;
        Ok(match (&self.payload, &other.payload) {
            (Payload::Scalar(a), Payload::Scalar(s)) => a * s * self.space.rows as f64,
            (Payload::Diagonal(a), Payload::Diagonal(s)) => a.dot(s),
            (Payload::RowDiagonal(a), Payload::RowDiagonal(s)) => n * a.dot(s),
            (Payload::LeftMatrix(a), Payload::LeftMatrix(s)) => n * a.dot(s),
            _ => unreachable!("payload kind is fixed by the space"),
        })
    }

    /// Operator trace.
    pub fn trace(&self) -> f64 {
        let n = self.space.cols as f64;
        match &self.payload {
            Payload::Scalar(c) => c * self.space.rows as f64,
            Payload::Diagonal(v) => v.sum(),
            Payload::RowDiagonal(b) => n * b.sum(),
            Payload::LeftMatrix(b) => n * b.trace(),
        }
    }

    /// `‖g‖²_H = ⟨g, H g⟩`.
    pub fn quad_form(&self, g: &Point) -> Result<f64> {
        Ok(g.dot(&self.apply(g)?))
    }

    /// Whether the element is `t I` for some real `t`.
    pub fn is_multiple_of_identity(&self) -> bool {
        match &self.payload {
            Payload::Scalar(_) => true,
            Payload::Diagonal(v) | Payload::RowDiagonal(v) => v.iter().all(|x| *x == v[0]),
            Payload::LeftMatrix(b) => {
                let t = b[(0, 0)];
                b.iter().enumerate().all(|(idx, x)| {
                    let (i, j) = (idx % b.nrows(), idx / b.nrows());
                    if i == j {
                        *x == t
                    } else {
                        *x == 0.0
                    }
                })
            }
        }
    }
}

fn is_exactly_symmetric(b: &DMatrix<f64>) -> bool {
    let m = b.nrows();
    (0..m).all(|i| (i + 1..m).all(|j| b[(i, j)] == b[(j, i)]))
}

fn mirror_upper(b: &mut DMatrix<f64>) {
    let m = b.nrows();
    for i in 0..m {
        for j in i + 1..m {
            b[(j, i)] = b[(i, j)];
        }
    }
}

pub(crate) fn symmetric_eigen(b: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(b.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::numeric("symmetric eigendecomposition did not converge"))
}
