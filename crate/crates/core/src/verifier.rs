//! Independent oracles and statistical checks.
//!
//! Nothing here reuses the closed forms of [`crate::space`]: projections are
//! recomputed by least squares over an explicit dense basis, operator
//! functions by a dense eigensolver on the full `dim X × dim X` matrix.
//! Points are flattened column-major, so left multiplication `G ↦ B G`
//! becomes `I_n ⊗ B`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::optimizer::{accel_gradient, Algorithm, RunTrace};
use crate::rng::fill_standard_normal;
use crate::space::{symmetric_eigen, Payload, Point, Space, SpaceElement, SpaceKind};
use crate::testbed::ProblemSpec;

/// Largest `dim X` for which dense operators are materialized.
pub const MAX_DENSE_DIM: usize = 64;

/// A linear operator on `X`, acting on flattened points.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    space: Space,
    matrix: DMatrix<f64>,
}

fn check_dense_dim(space: &Space) -> Result<()> {
    if space.dim() > MAX_DENSE_DIM {
        Err(Error::Oversize {
            dim: space.dim(),
            max: MAX_DENSE_DIM,
        })
    } else {
        Ok(())
    }
}

impl DenseOperator {
    pub fn new(space: Space, matrix: DMatrix<f64>) -> Result<Self> {
        check_dense_dim(&space)?;
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::ShapeMismatch {
                expected: format!("{d}x{d} operator"),
                found: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        Ok(DenseOperator { space, matrix })
    }

    /// `x ↦ ⟨x, g⟩ g`.
    pub fn rank_one(space: Space, g: &Point) -> Result<Self> {
        space.check_point(g)?;
        let v = DVector::from_column_slice(g.as_slice());
        Self::new(space, &v * v.transpose())
    }

    /// Materializes a compact element.
    pub fn from_element(e: &SpaceElement) -> Result<Self> {
        let space = *e.space();
        check_dense_dim(&space)?;
        let (m, n, d) = (space.rows(), space.cols(), space.dim());
        let mut a = DMatrix::zeros(d, d);
        match e.payload() {
            Payload::Scalar(c) => a.fill_diagonal(*c),
            Payload::Diagonal(v) => a.set_diagonal(v),
            Payload::RowDiagonal(b) => {
                for j in 0..n {
                    for i in 0..m {
                        a[(j * m + i, j * m + i)] = b[i];
                    }
                }
            }
            Payload::LeftMatrix(b) => {
                for j in 0..n {
                    a.view_mut((j * m, j * m), (m, m)).copy_from(b);
                }
            }
        }
        Self::new(space, a)
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, x: &Point) -> Result<Point> {
        self.space.check_point(x)?;
        let v = &self.matrix * DVector::from_column_slice(x.as_slice());
        Ok(Point::from_column_slice(self.space.rows(), self.space.cols(), v.as_slice()))
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// `ψ(A)` through a dense symmetric eigendecomposition.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let eig = symmetric_eigen(&self.matrix)?;
        let v = &eig.eigenvectors;
        let out = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f)) * v.transpose();
        Self::new(self.space, out)
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut ev: Vec<f64> = symmetric_eigen(&self.matrix)?.eigenvalues.iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }
}

/// Sparse `(row, col, value)` entries of one basis operator of the space.
fn basis(space: &Space) -> Vec<Vec<(usize, usize, f64)>> {
    let (m, n, d) = (space.rows(), space.cols(), space.dim());
    match space.kind() {
        SpaceKind::ScalarIdentity => vec![(0..d).map(|i| (i, i, 1.0)).collect()],
        SpaceKind::Diagonal => (0..d).map(|i| vec![(i, i, 1.0)]).collect(),
        SpaceKind::RowDiagonal => (0..m)
            .map(|i| (0..n).map(|j| (j * m + i, j * m + i, 1.0)).collect())
            .collect(),
        SpaceKind::LeftMatrix => {
            let mut out = Vec::new();
            for a in 0..m {
                for b in a..m {
                    let mut entries = Vec::new();
                    for j in 0..n {
                        entries.push((j * m + a, j * m + b, 1.0));
                        if a != b {
                            entries.push((j * m + b, j * m + a, 1.0));
                        }
                    }
                    out.push(entries);
                }
            }
            out
        }
    }
}

/// Frobenius-orthogonal projection of `dense` onto the space, by solving the
/// normal equations of the least-squares fit over the space's basis.
pub fn brute_projection(space: Space, dense: &DenseOperator) -> Result<SpaceElement> {
    check_dense_dim(&space)?;
    if dense.space.dim() != space.dim() {
        return Err(Error::SpaceMismatch(format!(
            "operator on {} projected onto {space}",
            dense.space
        )));
    }
    let basis = basis(&space);
    let materialized: Vec<DMatrix<f64>> = basis
        .iter()
        .map(|entries| {
            let mut a = DMatrix::zeros(space.dim(), space.dim());
            for &(r, c, v) in entries {
                a[(r, c)] += v;
            }
            a
        })
        .collect();
    let p = basis.len();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (i, entries) in basis.iter().enumerate() {
        for (j, other) in materialized.iter().enumerate() {
            gram[(i, j)] = entries.iter().map(|&(r, c, v)| v * other[(r, c)]).sum::<f64>();
        }
        rhs[i] = entries.iter().map(|&(r, c, v)| v * dense.matrix[(r, c)]).sum::<f64>();
    }
    let theta = gram
        .cholesky()
        .ok_or_else(|| Error::numeric("basis Gram matrix is not positive definite"))?
        .solve(&rhs);

    let m = space.rows();
    let payload = match space.kind() {
        SpaceKind::ScalarIdentity => Payload::Scalar(theta[0]),
        SpaceKind::Diagonal => Payload::Diagonal(theta),
        SpaceKind::RowDiagonal => Payload::RowDiagonal(theta),
        SpaceKind::LeftMatrix => {
            let mut b = DMatrix::zeros(m, m);
            let mut idx = 0;
            for a in 0..m {
                for c in a..m {
                    b[(a, c)] = theta[idx];
                    b[(c, a)] = theta[idx];
                    idx += 1;
                }
            }
            Payload::LeftMatrix(b)
        }
    };
    SpaceElement::new(space, payload)
}

/// Dense reference for `η (δ I + A)^{-1/2}`.
pub fn dense_inv_sqrt_shifted(dense: &DenseOperator, delta: f64, eta: f64) -> Result<DenseOperator> {
    dense.map_spectrum(|t| eta / (delta + t.max(0.0)).sqrt())
}

/// Which theorem display to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundVariant {
    /// Plain / plain-clipped: output `x̄_K`.
    Plain,
    /// Accelerated / accel-clipped: output `x̄_{K+1}`.
    Accelerated,
}

impl From<Algorithm> for BoundVariant {
    fn from(a: Algorithm) -> Self {
        if a.is_accelerated() {
            BoundVariant::Accelerated
        } else {
            BoundVariant::Plain
        }
    }
}

/// Right-hand sides of the convergence theorems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalBound {
    pub tr_l: f64,
    pub tr_sigma: f64,
    pub radius: f64,
    pub nu: f64,
    pub delta: f64,
    pub dim_x: f64,
    /// Leading constant used by the accelerated display in place of the
    /// logarithmic `C_K`, whose absolute constants are unspecified.
    pub accel_constant: f64,
}

impl TheoreticalBound {
    pub fn for_problem(problem: &ProblemSpec, radius: f64, delta: f64) -> Self {
        TheoreticalBound {
            tr_l: problem.smoothness().trace(),
            tr_sigma: problem.trace_sigma(),
            radius,
            nu: problem.nu(),
            delta,
            dim_x: problem.space().dim() as f64,
            accel_constant: 1.0,
        }
    }

    pub fn evaluate(&self, k: usize, variant: BoundVariant) -> f64 {
        let (r, nu) = (self.radius, self.nu);
        let sd = self.delta.sqrt();
        match variant {
            BoundVariant::Plain => {
                let t = k as f64 + 1.0;
                3.0 * self.tr_l * r.powf(1.0 + nu) / t.powf((1.0 + nu) / 2.0)
                    + 3.0 * self.tr_sigma * r / t.sqrt()
                    + 3.0 * sd * r * self.dim_x / t
            }
            BoundVariant::Accelerated => {
                let t = k as f64 + 2.0;
                let c = self.accel_constant;
                c * self.tr_l * r.powf(1.0 + nu) / t.powf((1.0 + 3.0 * nu) / 2.0)
                    + c * self.tr_sigma * r / t.sqrt()
                    + 4.0 * sd * r * self.dim_x / (t * t)
            }
        }
    }

    /// The proof's explicit form `C_K = 32 ln max{c_K(L, (1+ν)/2), c_K(Σ, 1/2)}`
    /// with `c_k(B, γ) = max{e, 2^{3+γ} γ^γ (Σ_{i≤k} α_i^{-2})^{1−γ} tr(B) η^{2γ−1} / √δ}`
    /// and `η = 2R`. Logged for inspection only.
    pub fn log_constant(&self, k: usize) -> f64 {
        let eta = 2.0 * self.radius;
        let inv_alpha_sq: f64 = (0..=k).map(|i| ((i as f64 + 2.0) / 2.0).powi(2)).sum();
        let c = |tr: f64, gamma: f64| {
            let v = 2f64.powf(3.0 + gamma)
                * gamma.powf(gamma)
                * inv_alpha_sq.powf(1.0 - gamma)
                * tr
                * eta.powf(2.0 * gamma - 1.0)
                / self.delta.sqrt();
            v.max(std::f64::consts::E)
        };
        32.0 * c(self.tr_l, (1.0 + self.nu) / 2.0)
            .max(c(self.tr_sigma, 0.5))
            .ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln err` on `ln K`.
pub fn fit_rate_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "slope fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if let Some(&(k, e)) = points.iter().find(|(k, e)| !(*k > 0.0 && *e > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "slope fit needs positive K and error, got ({k}, {e})"
        )));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("slope fit needs distinct K values".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// `min_k bound(k) − (f(x̄_k) − f*)` over a deterministic plain-type trace.
///
/// Clipped runs satisfy the distance condition by construction; unclipped
/// runs are accepted only if every recorded `R(x_k − x*)` stayed within the
/// bound's radius.
pub fn check_theorem_bound(trace: &RunTrace, bound: &TheoreticalBound) -> Result<f64> {
    if !trace.deterministic {
        return Err(Error::Contract(
            "pathwise bound checks are only valid for noiseless problems".into(),
        ));
    }
    if trace.algorithm.is_accelerated() {
        return Err(Error::Contract(
            "the accelerated bound hides absolute constants and is not checked pathwise".into(),
        ));
    }
    if !trace.algorithm.is_clipped() && trace.max_dist_to_opt() > bound.radius {
        return Err(Error::Contract(format!(
            "unclipped run left the radius-{} ball around x*",
            bound.radius
        )));
    }
    Ok(trace
        .records
        .iter()
        .map(|r| bound.evaluate(r.k, BoundVariant::Plain) - r.suboptimality)
        .fold(f64::INFINITY, f64::min))
}

/// Options for [`finite_diff_check`].
#[derive(Debug, Clone, Copy)]
pub struct FiniteDiffOptions {
    pub samples: usize,
    pub step: f64,
    /// Rejects samples whose evaluation point `y` has a row within this
    /// distance of the row's kink at `x*`. Zero keeps everything.
    pub kink_margin: f64,
}

impl Default for FiniteDiffOptions {
    fn default() -> Self {
        FiniteDiffOptions {
            samples: 100,
            step: 1e-5,
            kink_margin: 0.0,
        }
    }
}

/// Compares `accel_gradient` with central differences of
/// `x ↦ α^{-2} f(α x + (1−α) x̄)` at random `(x, x̄, α)`; returns the largest
/// relative error `‖g − g_fd‖_∞ / max(‖g‖_∞, 1e-8)`.
pub fn finite_diff_check<R: Rng + ?Sized>(
    problem: &ProblemSpec,
    options: FiniteDiffOptions,
    rng: &mut R,
) -> Result<f64> {
    if !problem.is_deterministic() {
        return Err(Error::Contract("finite differences need a noiseless problem".into()));
    }
    let space = *problem.space();
    let h = options.step;
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < options.samples {
        attempts += 1;
        if attempts > 1000 * options.samples {
            return Err(Error::numeric("finite-difference sampling rejected too many points"));
        }
        let random_point = |rng: &mut R| {
            let mut z = space.zeros();
            fill_standard_normal(rng, z.as_mut_slice());
            problem.x_star() + z
        };
        let x = random_point(rng);
        let x_bar = random_point(rng);
        let alpha = rng.random_range(0.05..=1.0);
        let y = &x * alpha + &x_bar * (1.0 - alpha);
        if options.kink_margin > 0.0 {
            let d = &y - problem.x_star();
            if d.row_iter().any(|r| r.norm() < options.kink_margin) {
                continue;
            }
        }
        accepted += 1;

        let composed = |p: &Point| -> Result<f64> {
            Ok(problem.value(&(p * alpha + &x_bar * (1.0 - alpha)))? / (alpha * alpha))
        };
        let g = accel_gradient(problem, &x, &x_bar, alpha, rng)?;
        let mut fd = space.zeros();
        for i in 0..space.dim() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.as_mut_slice()[i] += h;
            minus.as_mut_slice()[i] -= h;
            fd.as_mut_slice()[i] = (composed(&plus)? - composed(&minus)?) / (2.0 * h);
        }
        let err = (&g - &fd).amax() / g.amax().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
