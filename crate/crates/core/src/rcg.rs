//! Riemannian nonlinear conjugate gradient with Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{Geometry, SpectralPenalty};

/// A smooth cost on a manifold together with its Riemannian gradient.
pub trait Objective<G: Geometry> {
    fn cost(&self, x: &G::Point) -> f64;
    fn gradient(&self, x: &G::Point) -> G::Tangent;
}

/// How the conjugate-direction coefficient is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaRule {
    /// `β = max(0, ⟨P_k − T(P_{k−1}), P_k⟩ / ⟨P_{k−1}, P_{k−1}⟩)`.
    #[default]
    PolakRibierePlus,
    /// Transports the current gradient and normalizes by `⟨P_k, P_k⟩`, as the
    /// algorithm listing prints it. Kept for comparison runs only.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcgConfig {
    pub max_iters: usize,
    /// Stop once the gradient norm is at most this fraction of the initial one.
    pub grad_tol: f64,
    pub armijo_sufficient_decrease: f64,
    pub armijo_contraction: f64,
    pub armijo_max_backtracks: usize,
    /// Weight of the spectral regularizer; 0 disables it. Callers apply it via
    /// [`regularized_objective`].
    pub regularizer_mu: f64,
    pub beta_rule: BetaRule,
}

impl Default for RcgConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            grad_tol: 1e-6,
            armijo_sufficient_decrease: 1e-4,
            armijo_contraction: 0.5,
            armijo_max_backtracks: 25,
            regularizer_mu: 0.0,
            beta_rule: BetaRule::PolakRibierePlus,
        }
    }
}

impl RcgConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.armijo_contraction;
        let s = self.armijo_sufficient_decrease;
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::invalid(format!("armijo contraction {c} must lie in (0, 1)")));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::invalid(format!(
                "armijo sufficient decrease {s} must lie in (0, 1)"
            )));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::invalid("gradient tolerance must be nonnegative"));
        }
        let mu = self.regularizer_mu;
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::invalid(format!("regularizer weight {mu} must lie in [0, 1)")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradTol,
    MaxIters,
    LineSearchFail,
    /// Relative objective change fell below tolerance (used by the SVP baseline).
    ObjectiveTol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    /// Objective after the step.
    pub objective: f64,
    /// Gradient norm at the point the step started from.
    pub grad_norm: f64,
    pub step: f64,
    pub backtracks: usize,
    pub beta: f64,
    /// The search direction was reset to the negative gradient.
    pub reset: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcgTrace {
    pub initial_objective: f64,
    pub initial_grad_norm: f64,
    pub records: Vec<IterRecord>,
    pub termination: Termination,
}

impl RcgTrace {
    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.objective)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Objective values never increase across accepted steps.
    pub fn is_monotone(&self) -> bool {
        let mut prev = self.initial_objective;
        self.records.iter().all(|r| {
            let ok = r.objective < prev || (r.objective == prev && prev == 0.0);
            prev = r.objective;
            ok
        })
    }
}

#[derive(Clone, Debug)]
pub struct LineSearchOutcome<P> {
    pub step: f64,
    pub point: P,
    pub value: f64,
    pub backtracks: usize,
}

/// Backtracks from `t0` until `f(R(x, t·dir)) ≤ f_k + c·t·⟨grad, dir⟩` holds
/// with strict decrease. Rank drops during retraction count as a backtrack.
#[allow(clippy::too_many_arguments)]
pub fn line_search_armijo<G, O>(
    geom: &G,
    obj: &O,
    x: &G::Point,
    dir: &G::Tangent,
    f_k: f64,
    g_dot_d: f64,
    t0: f64,
    cfg: &RcgConfig,
) -> Result<LineSearchOutcome<G::Point>>
where
    G: Geometry,
    O: Objective<G> + ?Sized,
{
    if !(g_dot_d < 0.0) {
        return Err(Error::invalid(format!(
            "line search needs a descent direction, got slope {g_dot_d:e}"
        )));
    }
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::invalid(format!("initial step {t0} must be positive and finite")));
    }
    let mut t = t0;
    for backtracks in 0..=cfg.armijo_max_backtracks {
        match geom.retract(x, dir, t) {
            Ok(point) => {
                let value = obj.cost(&point);
                if value <= f_k + cfg.armijo_sufficient_decrease * t * g_dot_d && value < f_k {
                    return Ok(LineSearchOutcome {
                        step: t,
                        point,
                        value,
                        backtracks,
                    });
                }
                t *= cfg.armijo_contraction;
            }
            Err(Error::RankDrop { .. }) => t *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::LineSearchFail {
        backtracks: cfg.armijo_max_backtracks,
    })
}

/// Minimizes `obj` from `x0`. Never fails on line-search breakdown: the best
/// iterate is returned with [`Termination::LineSearchFail`].
pub fn rcg_minimize<G, O>(geom: &G, obj: &O, x0: G::Point, cfg: &RcgConfig) -> Result<(G::Point, RcgTrace)>
where
    G: Geometry,
    O: Objective<G> + ?Sized,
{
    cfg.validate()?;
    let mut x = x0;
    let mut f = obj.cost(&x);
    let mut trace = RcgTrace {
        initial_objective: f,
        initial_grad_norm: f64::NAN,
        records: Vec::new(),
        termination: Termination::MaxIters,
    };
    if cfg.max_iters == 0 {
        return Ok((x, trace));
    }

    let mut g = obj.gradient(&x);
    let mut gnorm = geom.norm(&x, &g);
    trace.initial_grad_norm = gnorm;
    let tol = cfg.grad_tol * gnorm;

    struct Previous<P, T> {
        x: P,
        g: T,
        d: T,
        gg: f64,
    }
    let mut prev: Option<Previous<G::Point, G::Tangent>> = None;
    // Decrease achieved by the previous step.
    let mut last_decrease: Option<f64> = None;

    for _ in 0..cfg.max_iters {
        if gnorm <= tol || gnorm == 0.0 {
            trace.termination = Termination::GradTol;
            break;
        }
        let gg = gnorm * gnorm;
        let steepest = geom.scale(&x, -1.0, &g);
        let (mut d, mut beta, mut reset) = match &prev {
            None => (steepest.clone(), 0.0, true),
            Some(p) => {
                let (diff, denom) = match cfg.beta_rule {
                    BetaRule::PolakRibierePlus => {
                        let g_prev = geom.transport(&p.x, &x, &p.g);
                        (geom.lincomb(&x, 1.0, &g, -1.0, &g_prev), p.gg)
                    }
                    BetaRule::Literal => {
                        let g_moved = geom.transport(&p.x, &x, &g);
                        (geom.lincomb(&x, 1.0, &g, -1.0, &g_moved), gg)
                    }
                };
                let beta = (geom.inner(&x, &diff, &g) / denom).max(0.0);
                let d_prev = geom.transport(&p.x, &x, &p.d);
                (geom.lincomb(&x, -1.0, &g, beta, &d_prev), beta, false)
            }
        };
        let mut slope = geom.inner(&x, &g, &d);
        if !(slope < 0.0) {
            d = steepest.clone();
            slope = -gg;
            beta = 0.0;
            reset = true;
        }
        debug_assert!(beta >= 0.0);

        // Minimizer of the quadratic matching the current slope and the last
        // decrease; a doubled previous step overshoots stiff directions.
        let t0 = match last_decrease {
            Some(df) if df > 0.0 && (2.0 * df / -slope).is_finite() => 2.0 * df / -slope,
            _ => 1.0 / geom.norm(&x, &d),
        };
        let outcome = match line_search_armijo(geom, obj, &x, &d, f, slope, t0, cfg) {
            Ok(o) => o,
            Err(Error::LineSearchFail { .. }) if !reset => {
                d = steepest;
                slope = -gg;
                beta = 0.0;
                reset = true;
                match line_search_armijo(geom, obj, &x, &d, f, slope, t0, cfg) {
                    Ok(o) => o,
                    Err(Error::LineSearchFail { .. }) => {
                        trace.termination = Termination::LineSearchFail;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::LineSearchFail { .. }) => {
                trace.termination = Termination::LineSearchFail;
                break;
            }
            Err(e) => return Err(e),
        };
        debug_assert!(slope < 0.0);

        trace.records.push(IterRecord {
            objective: outcome.value,
            grad_norm: gnorm,
            step: outcome.step,
            backtracks: outcome.backtracks,
            beta,
            reset,
        });
        let x_old = std::mem::replace(&mut x, outcome.point);
        last_decrease = Some(f - outcome.value);
        f = outcome.value;
        let g_old = std::mem::replace(&mut g, obj.gradient(&x));
        gnorm = geom.norm(&x, &g);
        prev = Some(Previous {
            x: x_old,
            g: g_old,
            d,
            gg,
        });
    }
    if trace.termination == Termination::MaxIters && (gnorm <= tol || gnorm == 0.0) {
        trace.termination = Termination::GradTol;
    }
    Ok((x, trace))
}

/// `g(X) = f(X) + μ²·(‖X†‖²_F + ‖X‖²_F)`.
pub struct Regularized<'a, G, O: ?Sized> {
    geom: &'a G,
    inner: &'a O,
    mu: f64,
}

pub fn regularized_objective<'a, G, O>(geom: &'a G, inner: &'a O, mu: f64) -> Regularized<'a, G, O>
where
    G: SpectralPenalty,
    O: Objective<G> + ?Sized,
{
    Regularized { geom, inner, mu }
}

impl<G, O> Objective<G> for Regularized<'_, G, O>
where
    G: SpectralPenalty,
    O: Objective<G> + ?Sized,
{
    fn cost(&self, x: &G::Point) -> f64 {
        let f = self.inner.cost(x);
        if self.mu == 0.0 {
            return f;
        }
        match self.geom.penalty(x) {
            Ok(p) => f + self.mu * self.mu * p,
            Err(_) => f64::INFINITY,
        }
    }

    fn gradient(&self, x: &G::Point) -> G::Tangent {
        let g = self.inner.gradient(x);
        if self.mu == 0.0 {
            return g;
        }
        match self.geom.penalty_gradient(x) {
            Ok(pg) => self.geom.lincomb(x, 1.0, &g, self.mu * self.mu, &pg),
            Err(_) => g,
        }
    }
}
