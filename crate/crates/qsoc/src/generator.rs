//! Extended generator of the controlled filtering process acting on
//! polynomials in (t, x).
//!
//! For a test polynomial `w`, the generator is
//!
//! ```text
//! 𝒜w = ∂w/∂t + ⟨b(x,u), ∇w⟩ + ½ Σ_l ⟨g_l(x), ∇²w g_l(x)⟩
//!      + Σ_l λ_l(x) (w(t, h_l(x)) − w(t, x))
//! ```
//!
//! with the effective drift `b`, one diffusion field `g_l` per homodyne
//! channel, and rate/jump pairs `(λ_l, h_l)` per counting channel. All pieces
//! are polynomial, so `𝒜w` is again a polynomial, of degree at most
//! `deg w + 2`. The coefficients of `w` may be affine expressions in decision
//! variables; the generator is linear, so it passes through them unchanged.

use crate::error::{Error, Result};
use crate::model::{
    jump_substitution, symbolic_dynamics, ControlProblem, ModelVars, QuantumModel, StateChart,
    SymbolicDynamics,
};
use crate::poly::{Coeff, Poly, Polynomial};

/// Precompiled generator data for one model.
#[derive(Debug, Clone)]
pub struct GeneratorContext {
    vars: ModelVars,
    dynamics: SymbolicDynamics,
    /// Per homodyne channel: products g_j·g_k for j ≤ k, row-major upper
    /// triangle, cached because they appear in every application.
    diffusion_products: Vec<Vec<Poly>>,
    /// Per counting channel: substitution vector x_k → h_l components.
    jump_subs: Vec<Vec<Option<Poly>>>,
}

impl GeneratorContext {
    pub fn new(model: &QuantumModel, chart: &StateChart, vars: &ModelVars) -> Result<Self> {
        let dynamics = symbolic_dynamics(model, chart, vars)?;
        Self::from_dynamics(vars.clone(), dynamics)
    }

    pub fn from_problem(problem: &ControlProblem) -> Result<Self> {
        Self::new(&problem.model, &problem.chart, &problem.vars)
    }

    pub fn from_dynamics(vars: ModelVars, dynamics: SymbolicDynamics) -> Result<Self> {
        let n = vars.n_chart;
        let mut diffusion_products = Vec::with_capacity(dynamics.diffusion.len());
        for g in &dynamics.diffusion {
            if g.len() != n {
                return Err(Error::InvalidModel(
                    "diffusion field has wrong arity".into(),
                ));
            }
            let mut prods = Vec::with_capacity(n * (n + 1) / 2);
            for j in 0..n {
                for k in j..n {
                    prods.push(g[j].mul(&g[k])?);
                }
            }
            diffusion_products.push(prods);
        }
        let jump_subs = dynamics
            .jumps
            .iter()
            .map(|h| jump_substitution(&vars, h))
            .collect();
        Ok(Self {
            vars,
            dynamics,
            diffusion_products,
            jump_subs,
        })
    }

    pub fn vars(&self) -> &ModelVars {
        &self.vars
    }

    pub fn dynamics(&self) -> &SymbolicDynamics {
        &self.dynamics
    }

    fn upper_index(&self, j: usize, k: usize) -> usize {
        // j ≤ k; offset of row j in the packed upper triangle.
        let n = self.vars.n_chart;
        j * n - j * (j + 1) / 2 + k
    }

    /// Apply the generator. `w` must not depend on the control variables
    /// (controls enter only through the drift).
    pub fn apply<C: Coeff>(&self, w: &Polynomial<C>) -> Result<Polynomial<C>> {
        for k in 0..self.vars.n_controls {
            if w.degree_in(self.vars.u_index(k)) > 0 {
                return Err(Error::InvalidInput(
                    "generator argument must not depend on the controls".into(),
                ));
            }
        }
        // ∂w/∂t.
        let mut out = w.diff(self.vars.t_index())?;

        // ⟨b, ∇w⟩.
        let grad: Vec<Polynomial<C>> = (0..self.vars.n_chart)
            .map(|k| w.diff(self.vars.x_index(k)))
            .collect::<Result<_>>()?;
        for (k, b) in self.dynamics.drift.iter().enumerate() {
            out = out.add(&grad[k].mul_plain(b)?)?;
        }

        // ½ Σ_l ⟨g_l, ∇²w g_l⟩, using symmetry of the Hessian.
        for prods in &self.diffusion_products {
            for j in 0..self.vars.n_chart {
                let dj = &grad[j];
                for k in j..self.vars.n_chart {
                    let hess = dj.diff(self.vars.x_index(k))?;
                    if hess.is_zero() {
                        continue;
                    }
                    let weight = if j == k { 0.5 } else { 1.0 };
                    out = out.add(
                        &hess
                            .mul_plain(&prods[self.upper_index(j, k)])?
                            .scale(weight),
                    )?;
                }
            }
        }

        // Σ_l λ_l (w∘h_l − w).
        for (l, subs) in self.jump_subs.iter().enumerate() {
            let jumped = w.compose(subs)?;
            let diff = jumped.sub(w)?;
            if diff.is_zero() {
                continue;
            }
            out = out.add(&diff.mul_plain(&self.dynamics.rates[l])?)?;
        }
        Ok(out)
    }

    /// `𝒜w − γw` for discounted problems.
    pub fn apply_discounted<C: Coeff>(
        &self,
        w: &Polynomial<C>,
        gamma: f64,
    ) -> Result<Polynomial<C>> {
        if gamma <= 0.0 {
            return Err(Error::InvalidInput("discount rate must be positive".into()));
        }
        self.apply(w)?.sub(&w.scale(gamma))
    }
}
