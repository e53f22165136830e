//! Adaptive preconditioner state.
//!
//! The state keeps the projected second moment `Π(S_k)` (never `S_k`
//! itself) and produces `H_k = η (δ I + Π(S_k))^{-1/2}` after each gradient.
//! It also tracks `Σ_i ‖g_i‖²_{H_i}` so the follow-the-leader /
//! be-the-leader inequality can be audited at any step.

use crate::error::{Error, Result};
use crate::space::{Point, Space, SpaceElement};

pub const DEFAULT_DELTA: f64 = 1e-12;

/// Running audit quantities.
#[derive(Debug, Clone)]
pub struct AuditLedger {
    sum_quad: f64,
    last_h: Option<SpaceElement>,
    enabled: bool,
}

impl AuditLedger {
    /// `Σ_{i≤k} ‖g_i‖²_{H_i}`.
    pub fn sum_quad(&self) -> f64 {
        self.sum_quad
    }

    pub fn last_h(&self) -> Option<&SpaceElement> {
        self.last_h.as_ref()
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }
}

#[derive(Debug, Clone)]
pub struct PrecondState {
    space: Space,
    moment: SpaceElement,
    eta: f64,
    delta: f64,
    accumulate_history: bool,
    steps: usize,
    audit: AuditLedger,
}

impl PrecondState {
    /// Cumulative (AdaGrad-style) state with `η > 0`, `δ > 0`.
    pub fn new(space: Space, eta: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {delta}"
            )));
        }
        Self::build(space, eta, delta)
    }

    /// A state with `δ = 0`. Updates fail unless the moment is already
    /// positive definite; meant for hand-checked audits only.
    pub fn unshifted(space: Space, eta: f64) -> Result<Self> {
        Self::build(space, eta, 0.0)
    }

    fn build(space: Space, eta: f64, delta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {eta}"
            )));
        }
        Ok(PrecondState {
            space,
            moment: space.zero_element(),
            eta,
            delta,
            accumulate_history: true,
            steps: 0,
            audit: AuditLedger {
                sum_quad: 0.0,
                last_h: None,
                enabled: true,
            },
        })
    }

    /// `false` switches to the memoryless mode where only the current
    /// gradient enters the moment.
    pub fn with_accumulation(mut self, accumulate_history: bool) -> Self {
        self.accumulate_history = accumulate_history;
        self
    }

    pub fn with_audit(mut self, enabled: bool) -> Self {
        self.audit.enabled = enabled;
        self
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn moment(&self) -> &SpaceElement {
        &self.moment
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn accumulates(&self) -> bool {
        self.accumulate_history
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn ledger(&self) -> &AuditLedger {
        &self.audit
    }

    /// The most recent preconditioner, if any gradient has been seen.
    pub fn current(&self) -> Option<&SpaceElement> {
        self.audit.last_h.as_ref()
    }

    /// Feeds one gradient and returns the new preconditioner `H_k`.
    pub fn update(&mut self, g: &Point) -> Result<SpaceElement> {
        let k = self.steps;
        self.space.check_point(g)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                iteration: Some(k),
                what: "non-finite gradient entry".into(),
            });
        }
        let projected = self.space.project_rank_one(g)?;
        let moment = if self.accumulate_history {
            self.moment.accumulate(&projected)?
        } else {
            projected
        };
        if !moment.is_finite() {
            return Err(Error::Numeric {
                iteration: Some(k),
                what: "moment overflowed".into(),
            });
        }
        let h = if self.delta > 0.0 {
            moment.inv_sqrt_shifted(self.delta, self.eta)
        } else {
            moment.inv_sqrt_unshifted(self.eta)
        }
        .map_err(|e| e.at_iteration(k))?;

        let q = h.quad_form(g)?;
        let sum_quad = self.audit.sum_quad + q;
        if !sum_quad.is_finite() {
            return Err(Error::Numeric {
                iteration: Some(k),
                what: "accumulated preconditioned gradient energy overflowed".into(),
            });
        }
        self.moment = moment;
        self.audit.sum_quad = sum_quad;
        self.audit.last_h = Some(h.clone());
        self.steps += 1;
        Ok(h)
    }

    fn ftl_btl_terms(&self) -> Result<(f64, f64, f64)> {
        if !self.accumulate_history {
            return Err(Error::Contract(
                "FTL-BTL gap requires cumulative gradient history".into(),
            ));
        }
        let h = self.audit.last_h.as_ref().ok_or_else(|| {
            Error::Contract("FTL-BTL gap requested before any update".into())
        })?;
        let linear = h.inner(&self.moment)?;
        let h_inv = h.map_spectrum(|t| 1.0 / t)?;
        let potential = self.delta * h.trace() + self.eta * self.eta * h_inv.trace();
        Ok((linear, potential, self.audit.sum_quad))
    }

    /// `⟨H_k, Π(S_k)⟩ + ⟨I, φ(H_k)⟩ − Σ ‖g_i‖²_{H_i}` with
    /// `φ(h) = δ h + η² / h`. Nonnegative in exact arithmetic.
    pub fn ftl_btl_gap(&self) -> Result<f64> {
        let (linear, potential, sum_quad) = self.ftl_btl_terms()?;
        Ok(linear + potential - sum_quad)
    }

    /// Round-off allowance for [`Self::ftl_btl_gap`]: `1e-8 · (1 + magnitudes)`.
    pub fn ftl_btl_tolerance(&self) -> Result<f64> {
        let (linear, potential, sum_quad) = self.ftl_btl_terms()?;
        Ok(1e-8 * (1.0 + linear.abs() + potential.abs() + sum_quad.abs()))
    }

    /// `tr(H_k^{-1})`, the quantity the accelerated analysis tracks.
    pub fn trace_inverse(&self) -> Result<Option<f64>> {
        match &self.audit.last_h {
            Some(h) => Ok(Some(h.map_spectrum(|t| 1.0 / t)?.trace())),
            None => Ok(None),
        }
    }
}

/// `λ_max(next − prev)`; nonpositive when `next ⪯ prev`.
pub fn loewner_excess(prev: &SpaceElement, next: &SpaceElement) -> Result<f64> {
    next.difference(prev)?.lambda_max()
}
