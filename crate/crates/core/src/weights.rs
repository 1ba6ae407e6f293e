//! Pre-averaging weight functions on [0, 1] and their moments.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUAD_TOL: f64 = 1e-10;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Integral over [0, 1] split at the midpoint, where the built-in weights
/// have their kink.
fn integrate_unit<F: Fn(f64) -> f64>(f: &F) -> f64 {
    integrate(f, 0.0, 0.5, QUAD_TOL / 2.0) + integrate(f, 0.5, 1.0, QUAD_TOL / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// `s (1 - s)`
    Parabola,
    /// `min(s, 1 - s)`
    Triangle,
}

impl WeightKind {
    pub fn name(self) -> &'static str {
        match self {
            WeightKind::Parabola => "parabola",
            WeightKind::Triangle => "triangle",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "parabola" => Some(WeightKind::Parabola),
            "triangle" => Some(WeightKind::Triangle),
            _ => None,
        }
    }

    /// `int |g|^p` in closed form (Beta integrals).
    pub fn exact_moment(self, p: u32) -> f64 {
        let p = p as f64;
        match self {
            // B(p+1, p+1) = Gamma(p+1)^2 / Gamma(2p+2)
            WeightKind::Parabola => {
                (2.0 * statrs::function::gamma::ln_gamma(p + 1.0) - statrs::function::gamma::ln_gamma(2.0 * p + 2.0))
                    .exp()
            }
            WeightKind::Triangle => 2.0 * 0.5f64.powf(p + 1.0) / (p + 1.0),
        }
    }
}

type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct WeightFunction {
    name: String,
    eval: Eval,
    g2: f64,
    g4: f64,
    gprime2: f64,
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightFunction")
            .field("name", &self.name)
            .field("g2", &self.g2)
            .field("g4", &self.g4)
            .finish()
    }
}

impl WeightFunction {
    pub fn builtin(kind: WeightKind) -> Self {
        let eval: Eval = match kind {
            WeightKind::Parabola => Arc::new(|s: f64| s * (1.0 - s)),
            WeightKind::Triangle => Arc::new(|s: f64| s.min(1.0 - s)),
        };
        Self::custom(kind.name(), move |s| eval(s)).expect("built-in weights are valid")
    }

    pub fn parabola() -> Self {
        Self::builtin(WeightKind::Parabola)
    }

    pub fn triangle() -> Self {
        Self::builtin(WeightKind::Triangle)
    }

    /// Wraps an arbitrary weight. It is evaluated as zero outside (0, 1).
    pub fn custom(name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let eval: Eval = Arc::new(move |s: f64| if s > 0.0 && s < 1.0 { f(s) } else { 0.0 });
        let g2 = integrate_unit(&|s| eval(s).powi(2));
        if !(g2 > 0.0) {
            return Err(Error::Config(format!("weight function {name} has zero L2 norm")));
        }
        let g4 = integrate_unit(&|s| eval(s).powi(4));
        let h = 1e-6;
        let deriv = |s: f64| (eval((s + h).min(1.0)) - eval((s - h).max(0.0))) / ((s + h).min(1.0) - (s - h).max(0.0));
        let gprime2 = integrate(&|s| deriv(s).powi(2), 0.0, 0.5, 1e-8) + integrate(&|s| deriv(s).powi(2), 0.5, 1.0, 1e-8);
        Ok(Self {
            name: name.to_string(),
            eval,
            g2,
            g4,
            gprime2,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.eval)(s)
    }

    /// `int |g(s)|^p ds`.
    pub fn moment(&self, p: u32) -> f64 {
        match p {
            2 => self.g2,
            4 => self.g4,
            _ => integrate_unit(&|s| self.eval(s).abs().powi(p as i32)),
        }
    }

    /// `int g'(s)^2 ds` (numerical derivative).
    pub fn derivative_moment2(&self) -> f64 {
        self.gprime2
    }

    /// Discrete weights `g_j = g(j / k_n)` for `j = 0..=k_n`.
    pub fn discretize(&self, k_n: usize) -> Vec<f64> {
        (0..=k_n).map(|j| self.eval(j as f64 / k_n as f64)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_on_polynomials_and_smooth_functions() {
        assert_relative_eq!(integrate(&|x: f64| x.powi(3), 0.0, 2.0, 1e-12), 4.0, max_relative = 1e-12);
        assert_relative_eq!(integrate(&f64::sin, 0.0, std::f64::consts::PI, 1e-12), 2.0, max_relative = 1e-10);
        assert_relative_eq!(integrate(&f64::exp, 0.0, 1.0, 1e-12), 1f64.exp() - 1.0, max_relative = 1e-10);
    }

    #[test]
    fn closed_form_moments() {
        assert_relative_eq!(WeightKind::Parabola.exact_moment(2), 1.0 / 30.0, max_relative = 1e-12);
        assert_relative_eq!(WeightKind::Parabola.exact_moment(4), 1.0 / 630.0, max_relative = 1e-12);
        assert_relative_eq!(WeightKind::Triangle.exact_moment(2), 1.0 / 12.0, max_relative = 1e-12);
        assert_relative_eq!(WeightKind::Triangle.exact_moment(4), 1.0 / 80.0, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        for kind in [WeightKind::Parabola, WeightKind::Triangle] {
            let w = WeightFunction::builtin(kind);
            for p in [2, 4, 6, 8] {
                assert!((w.moment(p) - kind.exact_moment(p)).abs() < 1e-10, "{kind:?} p={p}");
            }
        }
        // g' = 1 - 2s and +-1
        assert_relative_eq!(WeightFunction::parabola().derivative_moment2(), 1.0 / 3.0, max_relative = 1e-5);
        assert_relative_eq!(WeightFunction::triangle().derivative_moment2(), 1.0, max_relative = 1e-5);
    }

    #[test]
    fn vanishes_outside_unit_interval() {
        let w = WeightFunction::custom("bump", |_| 1.0).unwrap();
        assert_eq!(w.eval(0.0), 0.0);
        assert_eq!(w.eval(1.0), 0.0);
        assert_eq!(w.eval(0.5), 1.0);
        let d = WeightFunction::parabola().discretize(4);
        assert_eq!(d.len(), 5);
        assert_eq!((d[0], d[4]), (0.0, 0.0));
        assert_relative_eq!(d[2], 0.25);
    }

    #[test]
    fn zero_weight_rejected() {
        assert!(WeightFunction::custom("zero", |_| 0.0).is_err());
    }
}
