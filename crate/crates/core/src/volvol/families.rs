//! Concrete volvol families with the separable form
//! `u⁽ⁱ⁾[x] = φ⁽ⁱ⁾(·) · (ψ⁽ⁱ⁾/ln)(K/S) · η⁽ⁱ⁾(|X[0]|)`.

use std::fmt;
use std::sync::Arc;

use super::{check_spot, EtaChoice, StateView, VolVol};
use crate::curve::{h1_norm_raw, sup_norm_raw};
use crate::error::Result;

/// Shared scalar function `ℝ → ℝ`.
#[derive(Clone)]
pub struct ScalarFn(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl ScalarFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    #[inline]
    pub fn call(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarFn")
    }
}

/// `φ(σ) = 1 / (1 + σ²)`.
pub fn phi_default(s: f64) -> f64 {
    1.0 / (1.0 + s * s)
}

/// `φ′(σ) = −2σ / (1 + σ²)²`.
pub fn phi_default_prime(s: f64) -> f64 {
    let d = 1.0 + s * s;
    -2.0 * s / (d * d)
}

/// The ratio `ψ(σ)/ln σ` for `ψ(σ) = ln σ / (1 + ln²σ)`, written without the
/// division so that it is continuous (value 1) at `σ = 1`.
pub fn psi_over_log_default(s: f64) -> f64 {
    let l = s.ln();
    1.0 / (1.0 + l * l)
}

/// `β σ / (1 + σ)^{3/2}` for `σ ≥ 0`.
pub fn eta_rational(beta: f64, s: f64) -> f64 {
    let s = s.abs();
    beta * s / ((1.0 + s) * (1.0 + s).sqrt())
}

/// `2√σ`.
pub fn eta_two_sqrt(s: f64) -> f64 {
    2.0 * s.abs().sqrt()
}

/// `γ_N`: 1 on `[−N, N]`, 0 outside `(−2N, 2N)`, quintic smoothstep between
/// (twice continuously differentiable).
pub fn cutoff(z: f64, n: f64) -> f64 {
    let a = z.abs();
    if a <= n {
        1.0
    } else if a >= 2.0 * n {
        0.0
    } else {
        let s = (a - n) / n;
        1.0 - s * s * s * (s * (6.0 * s - 15.0) + 10.0)
    }
}

/// Scalar ingredients of one loading `u⁽ⁱ⁾`. `dphi` must be the derivative of
/// `phi`; it is only read by [`Family2`].
#[derive(Debug, Clone)]
pub struct Component {
    pub phi: ScalarFn,
    pub dphi: ScalarFn,
    pub psi_over_log: ScalarFn,
    pub eta: ScalarFn,
}

impl Component {
    pub fn standard(eta: ScalarFn) -> Self {
        Self {
            phi: ScalarFn::new(phi_default),
            dphi: ScalarFn::new(phi_default_prime),
            psi_over_log: ScalarFn::new(psi_over_log_default),
            eta,
        }
    }

    fn standard_set(m: usize, beta: f64, eta2: EtaChoice) -> Vec<Self> {
        (0..m)
            .map(|i| {
                let eta = if i == 0 || eta2 == EtaChoice::Rational {
                    ScalarFn::new(move |s| eta_rational(beta, s))
                } else {
                    ScalarFn::new(eta_two_sqrt)
                };
                Component::standard(eta)
            })
            .collect()
    }

    /// The `x`-independent factor `(ψ/ln)(K/S) · η(|X[0]|)`.
    #[inline]
    fn scale(&self, state: &StateView<'_>) -> f64 {
        self.psi_over_log.call(state.strike / state.spot) * self.eta.call(state.x[0].abs())
    }
}

/// `u ≡ 0` in `m` dimensions.
#[derive(Debug, Clone, Copy)]
pub struct ZeroVolVol {
    m: usize,
}

impl ZeroVolVol {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "volvol dimension must be at least 1");
        Self { m }
    }
}

impl VolVol for ZeroVolVol {
    fn dim(&self) -> usize {
        self.m
    }

    fn fill(&self, state: &StateView<'_>, u: &mut [f64], du: &mut [f64]) -> Result<()> {
        check_spot(state.spot)?;
        u.fill(0.0);
        du.fill(0.0);
        Ok(())
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Loadings constant in `x`: `u⁽ⁱ⁾[x] = φ⁽ⁱ⁾(sup|X|) (ψ⁽ⁱ⁾/ln)(K/S) η⁽ⁱ⁾(|X[0]|)`.
#[derive(Debug, Clone)]
pub struct Family1 {
    components: Vec<Component>,
}

impl Family1 {
    pub fn new(components: Vec<Component>) -> Self {
        assert!(!components.is_empty(), "volvol dimension must be at least 1");
        Self { components }
    }

    /// Default scalar functions with `η⁽¹⁾` rational and `η⁽ʲ⁾, j ≥ 2` per `eta2`.
    pub fn standard(m: usize, beta: f64, eta2: EtaChoice) -> Self {
        Self::new(Component::standard_set(m, beta, eta2))
    }
}

impl VolVol for Family1 {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn fill(&self, state: &StateView<'_>, u: &mut [f64], du: &mut [f64]) -> Result<()> {
        check_spot(state.spot)?;
        let n = state.n_nodes();
        let sup = sup_norm_raw(state.x);
        for (i, c) in self.components.iter().enumerate() {
            let value = c.phi.call(sup) * c.scale(state);
            u[i * n..(i + 1) * n].fill(value);
        }
        du.fill(0.0);
        Ok(())
    }
}

/// Loadings depending on `x` through `ξ = ∫₀ˣ X`:
/// `u⁽ⁱ⁾[x] = φ⁽ⁱ⁾(I(X)[x]) (ψ⁽ⁱ⁾/ln)(K/S) η⁽ⁱ⁾(|X[0]|) γ_N(|X|_{H¹})`, and
/// `∂ₓu⁽ⁱ⁾[x] = φ⁽ⁱ⁾′(I(X)[x]) X[x] · (same factors)`.
#[derive(Debug, Clone)]
pub struct Family2 {
    components: Vec<Component>,
    cutoff: f64,
}

impl Family2 {
    pub fn new(components: Vec<Component>, cutoff: f64) -> Self {
        assert!(!components.is_empty(), "volvol dimension must be at least 1");
        Self { components, cutoff }
    }

    pub fn standard(m: usize, beta: f64, cutoff: f64, eta2: EtaChoice) -> Self {
        Self::new(Component::standard_set(m, beta, eta2), cutoff)
    }

    pub fn cutoff_level(&self) -> f64 {
        self.cutoff
    }
}

impl VolVol for Family2 {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn fill(&self, state: &StateView<'_>, u: &mut [f64], du: &mut [f64]) -> Result<()> {
        check_spot(state.spot)?;
        let n = state.n_nodes();
        let gamma = cutoff(h1_norm_raw(state.x, state.dx), self.cutoff);
        for (i, c) in self.components.iter().enumerate() {
            let scale = c.scale(state) * gamma;
            let (ui, dui) = (&mut u[i * n..(i + 1) * n], &mut du[i * n..(i + 1) * n]);
            if scale == 0.0 {
                ui.fill(0.0);
                dui.fill(0.0);
                continue;
            }
            for k in 0..n {
                let j = state.prefix[k];
                ui[k] = c.phi.call(j) * scale;
                dui[k] = c.dphi.call(j) * state.x[k] * scale;
            }
        }
        Ok(())
    }
}
