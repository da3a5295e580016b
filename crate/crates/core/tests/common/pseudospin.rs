//! Closed-form mean-field pairing dynamics of a single BCS site.
//!
//! With `ψ = cos θ |0⟩ + sin θ |↑↓⟩` and the self-consistent one-site
//! Hamiltonian `−μ n − γ(Δ a†↑a†↓ + Δ̄ a↓a↑)`, the pair amplitude
//! `Δ = ⟨a↓a↑⟩` obeys `Δ' = i(2μ + γ(|α|² − |β|²))Δ`, and `|α|² − |β|²`
//! is conserved. Hence `Δ(t) = sin θ cos θ · e^{iωt}` with
//! `ω = 2μ + γ cos 2θ`.

use num_complex::Complex64 as C64;

pub fn frequency(theta: f64, mu: f64, gamma: f64) -> f64 {
    2.0 * mu + gamma * (2.0 * theta).cos()
}

pub fn pair_amplitude(theta: f64, mu: f64, gamma: f64, t: f64) -> C64 {
    let d0 = theta.sin() * theta.cos();
    C64::from_polar(d0, frequency(theta, mu, gamma) * t)
}

/// Direct RK4 integration of the nonlinear two-level equations, used to
/// cross-check the closed form.
pub fn integrate_two_level(theta: f64, mu: f64, gamma: f64, t: f64, steps: usize) -> C64 {
    let i = C64::new(0.0, 1.0);
    let rhs = |a: C64, b: C64| {
        let delta = a.conj() * b;
        let da = i * gamma * delta.conj() * b;
        let db = i * (2.0 * mu * b + gamma * delta * a);
        (da, db)
    };
    let (mut a, mut b) = (C64::new(theta.cos(), 0.0), C64::new(theta.sin(), 0.0));
    let h = t / steps as f64;
    for _ in 0..steps {
        let (k1a, k1b) = rhs(a, b);
        let (k2a, k2b) = rhs(a + k1a * (h / 2.0), b + k1b * (h / 2.0));
        let (k3a, k3b) = rhs(a + k2a * (h / 2.0), b + k2b * (h / 2.0));
        let (k4a, k4b) = rhs(a + k3a * h, b + k3b * h);
        a += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (h / 6.0);
        b += (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * (h / 6.0);
    }
    a.conj() * b
}
