//! Synthetic convex problems with known constants.
//!
//! Every family is row separable: for vector spaces a "row" is a single
//! coordinate, for matrix spaces it is a row of the `m × n` argument. With
//! `Δ = x − x*` and row weights `l`:
//!
//! * quadratic: `f = ½ Σ_j l_j ‖Δ_j‖²`, `ν = 1`;
//! * Hölder: `f = Σ_j l_j ‖Δ_j‖^{1+ν} / (1+ν)`, `ν ∈ [0, 1)`.
//!
//! Constructors validate the declared smoothness operator `L` with a pairwise
//! Bregman-gap checker before handing the problem out.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, seeded, ChaCha8Rng};
use crate::space::{Payload, Point, Space, SpaceElement, SpaceKind};

/// Pairs sampled by the construction-time smoothness checker.
pub const CONSTRUCTION_PAIRS: usize = 10_000;
/// Draws used by the construction-time noise moment check.
pub const CONSTRUCTION_NOISE_DRAWS: usize = 100_000;

const CHECK_SEED: u64 = 0x5eed_cafe;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Quadratic,
    Holder { nu: f64 },
}

/// Additive gradient noise with independent Gaussian entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    std: Option<Point>,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel { std: None }
    }

    pub fn is_zero(&self) -> bool {
        self.std.is_none()
    }

    /// Per-entry standard deviations, `None` for the zero model.
    pub fn std(&self) -> Option<&Point> {
        self.std.as_ref()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Point> {
        let std = self.std.as_ref()?;
        let mut z = Point::zeros(std.nrows(), std.ncols());
        fill_standard_normal(rng, z.as_mut_slice());
        z.component_mul_assign(std);
        Some(z)
    }
}

/// Gaussian noise meeting `E‖n‖²_{Σ^{-1}} = tr(Σ)` with equality: entry `i`
/// has standard deviation `σ_i` (for row spaces, every entry of row `j` has
/// standard deviation `b_j`). The zero element gives the zero model.
pub fn make_noise(sigma: &SpaceElement) -> Result<NoiseModel> {
    let space = *sigma.space();
    let mut std = space.zeros();
    match sigma.payload() {
        Payload::Scalar(c) => std.fill(*c),
        Payload::Diagonal(v) => std.column_mut(0).copy_from(v),
        Payload::RowDiagonal(b) => {
            for (mut row, s) in std.row_iter_mut().zip(b.iter()) {
                row.fill(*s);
            }
        }
        Payload::LeftMatrix(_) => {
            return Err(Error::Unsupported(
                "noise covariance must be diagonal-type, not a left-matrix element".into(),
            ))
        }
    }
    if std.iter().all(|s| *s == 0.0) {
        return Ok(NoiseModel::none());
    }
    if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(
            "noise operator must be positive definite (or exactly zero)".into(),
        ));
    }
    Ok(NoiseModel { std: Some(std) })
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    space: Space,
    objective: Objective,
    weights: Vec<f64>,
    smoothness: SpaceElement,
    sigma: Option<SpaceElement>,
    noise: NoiseModel,
    x_star: Point,
    f_star: f64,
}

fn check_weights(space: &Space, weights: &[f64]) -> Result<()> {
    if weights.len() != space.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} row weights for {space}", space.rows()),
            found: format!("{} weights", weights.len()),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "weights must be strictly positive, got {w}"
        )));
    }
    Ok(())
}

/// The smoothness element `scale · diag(l)` expressed in `space`. The scalar
/// space cannot hold a diagonal, so it takes `scale · max(l) · I`.
fn weights_element(space: &Space, weights: &[f64], scale: f64) -> Result<SpaceElement> {
    let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
    match space.kind() {
        SpaceKind::ScalarIdentity => {
            let top = scaled.iter().cloned().fold(0.0, f64::max);
            Ok(space.constant(top))
        }
        _ => SpaceElement::from_diagonal(*space, &scaled),
    }
}

/// `f(x) = ½ Σ_j l_j ‖x_j − x*_j‖²` with `ν = 1`.
pub fn make_quadratic(space: Space, weights: &[f64], x_star: Point) -> Result<ProblemSpec> {
    check_weights(&space, weights)?;
    space.check_point(&x_star)?;
    let smoothness = weights_element(&space, weights, 1.0)?;
    let problem = ProblemSpec {
        space,
        objective: Objective::Quadratic,
        weights: weights.to_vec(),
        smoothness,
        sigma: None,
        noise: NoiseModel::none(),
        x_star,
        f_star: 0.0,
    };
    problem.validate_construction()?;
    Ok(problem)
}

/// `f(x) = Σ_j l_j ‖x_j − x*_j‖^{1+ν} / (1+ν)` with `ν ∈ [0, 1)`.
///
/// The declared operator is `2^{2−ν} · n^{(ν−1)/2} · diag(l)`: the row map
/// `z ↦ ‖z‖^{ν−1} z` is `ν`-Hölder with constant `2^{1−ν}` and the weighted
/// power-mean inequality absorbs the trace factor; one extra factor of two is
/// kept as margin. The `n^{(ν−1)/2}` factor is exactly cancelled by the trace
/// in the Hölder display.
pub fn make_holder(space: Space, weights: &[f64], nu: f64, x_star: Point) -> Result<ProblemSpec> {
    if !(0.0..1.0).contains(&nu) {
        return Err(Error::InvalidParameter(format!(
            "Hölder exponent must lie in [0, 1), got {nu}; use make_quadratic for ν = 1"
        )));
    }
    check_weights(&space, weights)?;
    space.check_point(&x_star)?;
    let n = space.cols() as f64;
    let scale = 2f64.powf(2.0 - nu) * n.powf((nu - 1.0) / 2.0);
    let smoothness = weights_element(&space, weights, scale)?;
    let problem = ProblemSpec {
        space,
        objective: Objective::Holder { nu },
        weights: weights.to_vec(),
        smoothness,
        sigma: None,
        noise: NoiseModel::none(),
        x_star,
        f_star: 0.0,
    };
    problem.validate_construction()?;
    Ok(problem)
}

/// Worst-case slacks from a pairwise Bregman-gap sweep. Both are `≥ 0` when
/// the declared constants are valid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderCheck {
    pub pairs: usize,
    /// `min (gap + tol)`: convexity side.
    pub lower_slack: f64,
    /// `min (bound − gap + tol)`: smoothness side.
    pub upper_slack: f64,
}

impl HolderCheck {
    pub fn passed(&self) -> bool {
        self.lower_slack >= 0.0 && self.upper_slack >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCheck {
    pub draws: usize,
    pub mean_norm: f64,
    /// Five standard errors of the empirical mean.
    pub mean_bound: f64,
    /// Empirical `E‖n‖²_{Σ^{-1}}`.
    pub second_moment: f64,
    pub trace_sigma: f64,
}

impl NoiseCheck {
    pub fn relative_deviation(&self) -> f64 {
        (self.second_moment - self.trace_sigma).abs() / self.trace_sigma
    }

    pub fn passed(&self) -> bool {
        self.mean_norm <= self.mean_bound && self.relative_deviation() <= 0.02
    }
}

impl ProblemSpec {
    /// Attaches equality-case Gaussian noise with covariance operator `sigma`.
    pub fn with_noise(mut self, sigma: SpaceElement) -> Result<Self> {
        if *sigma.space() != self.space {
            return Err(Error::SpaceMismatch(format!(
                "noise lives in {}, problem in {}",
                sigma.space(),
                self.space
            )));
        }
        let noise = make_noise(&sigma)?;
        if noise.is_zero() {
            self.sigma = None;
            self.noise = noise;
            return Ok(self);
        }
        self.sigma = Some(sigma);
        self.noise = noise;
        let mut rng = seeded(CHECK_SEED, 1);
        let check = self.check_noise(CONSTRUCTION_NOISE_DRAWS, &mut rng)?;
        if !check.passed() {
            return Err(Error::Contract(format!(
                "noise moment check failed: |mean| {:.3e} (bound {:.3e}), E‖n‖²_Σ⁻¹ {:.6} vs tr Σ {:.6}",
                check.mean_norm, check.mean_bound, check.second_moment, check.trace_sigma
            )));
        }
        Ok(self)
    }

    fn validate_construction(&self) -> Result<()> {
        if self.value(&self.x_star)? != self.f_star {
            return Err(Error::Contract("f(x*) differs from f*".into()));
        }
        if self.subgradient(&self.x_star)?.iter().any(|v| *v != 0.0) {
            return Err(Error::Contract("selected subgradient at x* is not zero".into()));
        }
        let mut rng = seeded(CHECK_SEED, 0);
        let check = self.check_holder(CONSTRUCTION_PAIRS, &mut rng)?;
        if !check.passed() {
            return Err(Error::Contract(format!(
                "declared smoothness operator is invalid: slacks {:.3e} / {:.3e}",
                check.lower_slack, check.upper_slack
            )));
        }
        Ok(())
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn nu(&self) -> f64 {
        match self.objective {
            Objective::Quadratic => 1.0,
            Objective::Holder { nu } => nu,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The operator `L` of the smoothness assumption.
    pub fn smoothness(&self) -> &SpaceElement {
        &self.smoothness
    }

    /// The noise operator `Σ`, `None` for deterministic problems.
    pub fn sigma(&self) -> Option<&SpaceElement> {
        self.sigma.as_ref()
    }

    pub fn trace_sigma(&self) -> f64 {
        self.sigma.as_ref().map_or(0.0, |s| s.trace())
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn is_deterministic(&self) -> bool {
        self.noise.is_zero()
    }

    pub fn x_star(&self) -> &Point {
        &self.x_star
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn value(&self, x: &Point) -> Result<f64> {
        self.space.check_point(x)?;
        let delta = x - &self.x_star;
        let rows = delta.row_iter().zip(&self.weights);
        Ok(match self.objective {
            Objective::Quadratic => 0.5 * rows.map(|(r, l)| l * r.norm_squared()).sum::<f64>(),
            Objective::Holder { nu } => {
                let p = 1.0 + nu;
                rows.map(|(r, l)| l * r.norm().powf(p)).sum::<f64>() / p
            }
        })
    }

    /// A deterministic element of `∂f(x)`; zero on the kink of each row.
    pub fn subgradient(&self, x: &Point) -> Result<Point> {
        self.space.check_point(x)?;
        let mut g = x - &self.x_star;
        match self.objective {
            Objective::Quadratic => {
                for (mut row, l) in g.row_iter_mut().zip(&self.weights) {
                    row *= *l;
                }
            }
            Objective::Holder { nu } => {
                for (mut row, l) in g.row_iter_mut().zip(&self.weights) {
                    let r = row.norm();
                    if r == 0.0 {
                        row.fill(0.0);
                    } else {
                        row *= l * r.powf(nu - 1.0);
                    }
                }
            }
        }
        Ok(g)
    }

    /// `∇f(x) + n(x; ξ)`.
    pub fn stochastic_gradient<R: Rng + ?Sized>(&self, x: &Point, rng: &mut R) -> Result<Point> {
        let mut g = self.subgradient(x)?;
        if let Some(n) = self.noise.sample(rng) {
            g += n;
        }
        Ok(g)
    }

    /// `(gap, bound)` of the Hölder display for the pair `(x1, x2)`.
    pub fn bregman_terms(&self, x1: &Point, x2: &Point) -> Result<(f64, f64)> {
        let nu = self.nu();
        let g = self.subgradient(x1)?;
        let d = x2 - x1;
        let gap = self.value(x2)? - self.value(x1)? - g.dot(&d);
        let norm_l = self.smoothness.quad_form(&d)?.sqrt();
        let bound = self.smoothness.trace().powf((1.0 - nu) / 2.0) * norm_l.powf(1.0 + nu)
            / (1.0 + nu);
        Ok((gap, bound))
    }

    fn random_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut z = self.space.zeros();
        fill_standard_normal(rng, z.as_mut_slice());
        let scale = 10f64.powf(rng.random_range(-3.0..1.0));
        z * scale
    }

    /// Samples pairs at mixed scales around `x*`, including pairs mirrored
    /// through `x*`, and reports the worst slack of both Bregman bounds.
    pub fn check_holder<R: Rng + ?Sized>(&self, pairs: usize, rng: &mut R) -> Result<HolderCheck> {
        let mut lower = f64::INFINITY;
        let mut upper = f64::INFINITY;
        for i in 0..pairs {
            let x1 = &self.x_star + self.random_offset(rng);
            let x2 = if i % 4 == 3 {
                &self.x_star * 2.0 - &x1
            } else {
                &x1 + self.random_offset(rng)
            };
            let (gap, bound) = self.bregman_terms(&x1, &x2)?;
            let tol = 1e-10 + 1e-12 * (self.value(&x1)?.abs() + self.value(&x2)?.abs());
            lower = lower.min(gap + tol);
            upper = upper.min(bound - gap + tol);
        }
        Ok(HolderCheck {
            pairs,
            lower_slack: lower,
            upper_slack: upper,
        })
    }

    /// `min ½f(x1) + ½f(x2) − f(½x1 + ½x2) + 1e-12` over random pairs.
    pub fn check_convexity<R: Rng + ?Sized>(&self, pairs: usize, rng: &mut R) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for _ in 0..pairs {
            let x1 = &self.x_star + self.random_offset(rng);
            let x2 = &self.x_star + self.random_offset(rng);
            let mid = (&x1 + &x2) * 0.5;
            let slack = 0.5 * self.value(&x1)? + 0.5 * self.value(&x2)? - self.value(&mid)? + 1e-12;
            worst = worst.min(slack);
        }
        Ok(worst)
    }

    /// Both sides of the gradient-norm bound
    /// `‖∇f‖²_{L^{-1}} ≤ ((1+ν)/ν)^{2ν/(1+ν)} tr(L)^{(1−ν)/(1+ν)} (f − f*)^{2ν/(1+ν)}`,
    /// with `0⁰ = 1` at `ν = 0`.
    pub fn gradient_bound_terms(&self, x: &Point) -> Result<(f64, f64)> {
        let nu = self.nu();
        let g = self.subgradient(x)?;
        let l_inv = self.smoothness.map_spectrum(|t| 1.0 / t)?;
        let lhs = l_inv.quad_form(&g)?;
        let tr = self.smoothness.trace();
        let rhs = if nu == 0.0 {
            tr
        } else {
            let q = 2.0 * nu / (1.0 + nu);
            ((1.0 + nu) / nu).powf(q)
                * tr.powf((1.0 - nu) / (1.0 + nu))
                * (self.value(x)? - self.f_star).powf(q)
        };
        Ok((lhs, rhs))
    }

    /// Sample moments of the noise: mean norm and `E‖n‖²_{Σ^{-1}}`.
    pub fn check_noise<R: Rng + ?Sized>(&self, draws: usize, rng: &mut R) -> Result<NoiseCheck> {
        let (Some(sigma), Some(std)) = (self.sigma.as_ref(), self.noise.std()) else {
            return Err(Error::Contract("problem has no noise to check".into()));
        };
        let sigma_inv = sigma.map_spectrum(|t| 1.0 / t)?;
        let mut sum = self.space.zeros();
        let mut second = 0.0;
        for _ in 0..draws {
            let n = self.noise.sample(rng).expect("noise present");
            second += sigma_inv.quad_form(&n)?;
            sum += n;
        }
        let count = draws as f64;
        let se = (std.iter().map(|s| s * s).sum::<f64>() / count).sqrt();
        Ok(NoiseCheck {
            draws,
            mean_norm: (sum / count).norm(),
            mean_bound: 5.0 * se,
            second_moment: second / count,
            trace_sigma: sigma.trace(),
        })
    }
}

/// Column vector point from a slice.
pub fn vector_point(values: &[f64]) -> Point {
    DMatrix::from_column_slice(values.len(), 1, values)
}

/// `m × n` point from row-major values.
pub fn matrix_point(rows: usize, cols: usize, row_major: &[f64]) -> Result<Point> {
    if row_major.len() != rows * cols {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values for a {rows}x{cols} point", rows * cols),
            found: format!("{} values", row_major.len()),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, row_major))
}

/// Fresh checker stream, handy for callers that want their own sweep.
pub fn checker_rng(stream: u64) -> ChaCha8Rng {
    seeded(CHECK_SEED, stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_one_dimensional() {
        let p = make_quadratic(Space::diagonal(1).unwrap(), &[2.0], vector_point(&[0.0])).unwrap();
        let x = vector_point(&[1.0]);
        assert_eq!(p.value(&x).unwrap(), 1.0);
        assert_eq!(p.subgradient(&x).unwrap(), vector_point(&[2.0]));
        assert_eq!(p.smoothness().trace(), 2.0);
        assert!(p.is_deterministic());
    }

    #[test]
    fn quadratic_gradient_bound_is_tight() {
        let p = make_quadratic(Space::diagonal(2).unwrap(), &[2.0, 3.0], vector_point(&[0.0, 0.0]))
            .unwrap();
        let (lhs, rhs) = p.gradient_bound_terms(&vector_point(&[1.0, 1.0])).unwrap();
        assert!((lhs - 5.0).abs() < 1e-14);
        assert!((rhs - 5.0).abs() < 1e-14);
    }

    #[test]
    fn quadratic_rows_value() {
        let space = Space::row_diagonal(2, 3).unwrap();
        let p = make_quadratic(space, &[1.0, 4.0], space.zeros()).unwrap();
        let x = DMatrix::from_element(2, 3, 1.0);
        assert_eq!(p.value(&x).unwrap(), 7.5);
    }

    #[test]
    fn scalar_space_takes_largest_weight() {
        let p = make_quadratic(Space::scalar_identity(3).unwrap(), &[1.0, 5.0, 2.0], vector_point(&[0.0; 3]))
            .unwrap();
        assert_eq!(p.smoothness().payload(), &Payload::Scalar(5.0));
    }

    #[test]
    fn rejects_bad_weights_and_shapes() {
        let s = Space::diagonal(2).unwrap();
        assert!(matches!(
            make_quadratic(s, &[1.0, 0.0], s.zeros()),
            Err(Error::InvalidParameter(_))
        ));
        assert!(make_quadratic(s, &[1.0], s.zeros()).is_err());
        assert!(make_quadratic(s, &[1.0, 1.0], vector_point(&[0.0; 3])).is_err());
        assert!(make_holder(s, &[1.0, 1.0], 1.0, s.zeros()).is_err());
        assert!(make_holder(s, &[1.0, 1.0], -0.1, s.zeros()).is_err());
    }

    #[test]
    fn holder_nu_zero_values_and_kink() {
        let p = make_holder(Space::diagonal(1).unwrap(), &[1.0], 0.0, vector_point(&[0.0])).unwrap();
        assert_eq!(p.value(&vector_point(&[2.0])).unwrap(), 2.0);
        assert_eq!(p.subgradient(&vector_point(&[0.0])).unwrap(), vector_point(&[0.0]));
        assert_eq!(p.smoothness().payload(), &Payload::Diagonal(nalgebra::DVector::from_vec(vec![4.0])));
        let (gap, bound) = p.bregman_terms(&vector_point(&[0.0]), &vector_point(&[1.0])).unwrap();
        assert_eq!(gap, 1.0);
        assert_eq!(bound, 4.0);
    }

    #[test]
    fn holder_half_passes_checker_on_wide_box() {
        let p = make_holder(Space::diagonal(1).unwrap(), &[1.0], 0.5, vector_point(&[0.0])).unwrap();
        let mut rng = seeded(3, 0);
        let mut worst = f64::INFINITY;
        for _ in 0..10_000 {
            let a = vector_point(&[rng.random_range(-10.0..10.0)]);
            let b = vector_point(&[rng.random_range(-10.0..10.0)]);
            let (gap, bound) = p.bregman_terms(&a, &b).unwrap();
            assert!(gap >= -1e-12);
            worst = worst.min(bound - gap + 1e-10);
        }
        assert!(worst >= 0.0, "worst slack {worst}");
    }

    #[test]
    fn noise_examples() {
        let s = Space::diagonal(1).unwrap();
        assert!(make_noise(&s.zero_element()).unwrap().is_zero());

        let sigma = SpaceElement::from_diagonal(s, &[4.0]).unwrap();
        let noise = make_noise(&sigma).unwrap();
        assert_eq!(noise.std().unwrap(), &vector_point(&[4.0]));
        // E n² = 16 and E‖n‖²_{Σ⁻¹} = 16 / 4 = tr Σ
        assert_eq!(16.0 / 4.0, sigma.trace());

        let l = Space::left_matrix(2, 2).unwrap();
        assert!(matches!(make_noise(&l.identity()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn noise_second_moment_monte_carlo() {
        let s = Space::diagonal(2).unwrap();
        let p = make_quadratic(s, &[1.0, 1.0], s.zeros())
            .unwrap()
            .with_noise(SpaceElement::from_diagonal(s, &[1.0, 9.0]).unwrap())
            .unwrap();
        let check = p.check_noise(100_000, &mut seeded(11, 0)).unwrap();
        assert!((9.8..=10.2).contains(&check.second_moment), "{check:?}");
        assert!(check.passed());
    }

    #[test]
    fn with_noise_rejects_foreign_space() {
        let s = Space::diagonal(2).unwrap();
        let p = make_quadratic(s, &[1.0, 1.0], s.zeros()).unwrap();
        assert!(p.with_noise(Space::diagonal(3).unwrap().identity()).is_err());
    }
}
