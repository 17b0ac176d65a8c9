//! Roots and residues of the modal relaxation symbols.
//!
//! Per eigenvalue λ the damped modal transfer function is ŵ(s) = 1/ω(λ,s)
//! with
//!
//!   ω(λ,s) = s² + b λ^β s^α + c²λ                       (CWCH)
//!   ω(λ,s) = b₂ s^{2+α₂} + s² + b₁ λ s^{α₁} + c²λ      (FZ)
//!
//! on the principal branch of s^α (arg s ∈ (-π, π]). Poles are located by
//! lifting s = z^q for a rational approximation α ≈ p/q (q ≤ 64), taking the
//! companion-matrix eigenvalues of the lifted polynomial as seeds, filtering
//! to the principal sheet |arg z| ≤ π/q, and polishing with Newton at the
//! true exponent. The count is certified by the argument principle: the
//! winding of ω along rectangles covering the left half plane, split above
//! and below the branch cut on the negative real axis whenever an exponent
//! is fractional.

use crate::error::{Error, Result};
use crate::forward::DampingModel;
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

/// ω(λ,·) together with the data needed to evaluate it.
#[derive(Debug, Clone, Copy)]
pub struct RelaxationSymbol {
    pub model: DampingModel,
    pub c: f64,
    pub lambda: f64,
}

impl RelaxationSymbol {
    pub fn new(model: DampingModel, c: f64, lambda: f64) -> Result<Self> {
        model.validate(c)?;
        if !(lambda > 0.0) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { model, c, lambda })
    }

    /// Skips the δ ≥ 0 constraint; pole tracking for δ < 0 is outside the
    /// regime covered by the left-half-plane results.
    pub fn new_unphysical(model: DampingModel, c: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(c > 0.0) {
            return Err(Error::Domain("lambda and c must be positive".into()));
        }
        Ok(Self { model, c, lambda })
    }

    /// Principal-branch evaluation; s = 0 returns c²λ by continuity.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        let stiff = Complex64::new(self.c * self.c * self.lambda, 0.0);
        if s == Complex64::ZERO {
            return stiff;
        }
        match self.model {
            DampingModel::Cwch { b, beta, alpha } => {
                s * s + b * self.lambda.powf(beta) * s.powf(alpha) + stiff
            }
            DampingModel::FractionalZener { b1, b2, alpha1, alpha2 } => {
                b2 * s.powf(2.0 + alpha2) + s * s + b1 * self.lambda * s.powf(alpha1) + stiff
            }
        }
    }

    /// dω/ds on the principal branch.
    pub fn eval_derivative(&self, s: Complex64) -> Complex64 {
        match self.model {
            DampingModel::Cwch { b, beta, alpha } => {
                2.0 * s + alpha * b * self.lambda.powf(beta) * s.powf(alpha - 1.0)
            }
            DampingModel::FractionalZener { b1, b2, alpha1, alpha2 } => {
                (2.0 + alpha2) * b2 * s.powf(1.0 + alpha2)
                    + 2.0 * s
                    + alpha1 * b1 * self.lambda * s.powf(alpha1 - 1.0)
            }
        }
    }

    /// Characteristic magnitude used for residual and dedup thresholds.
    pub fn scale(&self, s: Complex64) -> f64 {
        (s.norm_sqr()).max(self.c * self.c * self.lambda)
    }

    fn fractional_orders(&self) -> Vec<f64> {
        match self.model {
            DampingModel::Cwch { alpha, .. } => vec![alpha],
            DampingModel::FractionalZener { alpha1, alpha2, .. } => vec![alpha1, alpha2],
        }
    }

    /// True when every exponent is an integer, i.e. ω is a polynomial with
    /// no branch cut.
    pub fn is_polynomial(&self) -> bool {
        self.fractional_orders().iter().all(|a| (*a - 1.0).abs() < 1e-14)
    }
}

/// A refined root of ω with its transfer-function residue.
#[derive(Debug, Clone, Copy)]
pub struct Pole {
    pub s: Complex64,
    /// Res(ŵ; s) = 1/ω'(s).
    pub residue_w: Complex64,
    pub multiplicity: usize,
    /// |ω(s)| after Newton refinement.
    pub newton_residual: f64,
}

/// A companion seed that Newton failed to polish, kept for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct UnconvergedSeed {
    pub seed: Complex64,
    pub last: Complex64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct PoleSet {
    pub lambda: f64,
    pub poles: Vec<Pole>,
    /// Argument-principle count over the certification region(s).
    pub branch_count_certificate: i64,
    /// True when the certificate matches the number of refined poles.
    pub certified: bool,
    pub unconverged: Vec<UnconvergedSeed>,
}

impl PoleSet {
    /// Max distance from a pole to the conjugate of its best partner.
    pub fn conjugate_defect(&self) -> f64 {
        self.poles
            .iter()
            .map(|p| {
                self.poles
                    .iter()
                    .map(|q| (p.s.conj() - q.s).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    pub fn max_re(&self) -> f64 {
        self.poles.iter().map(|p| p.s.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub const RATIONAL_TOL_DEFAULT: f64 = 1e-3;
pub const NEWTON_RESIDUAL_FACTOR: f64 = 1e-11;
const NEWTON_MAX_ITER: usize = 50;
const DEDUP_FACTOR: f64 = 1e-8;
const CONTOUR_INDENT: f64 = 1e-6;

/// Best rational approximation p/q with a common denominator q ≤ `max_q` for
/// all orders. Returns (numerators, q). Prefers the smallest q meeting `tol`.
fn common_rational(orders: &[f64], tol: f64, max_q: usize) -> (Vec<usize>, usize) {
    let mut best: Option<(Vec<usize>, usize, f64)> = None;
    for q in 1..=max_q {
        let mut ps = Vec::with_capacity(orders.len());
        let mut err = 0.0f64;
        for &a in orders {
            let p = (a * q as f64).round().max(1.0) as usize;
            let p = p.min(q);
            err = err.max((a - p as f64 / q as f64).abs());
            ps.push(p);
        }
        if err <= tol {
            return (ps, q);
        }
        if best.as_ref().map(|(_, _, e)| err < *e).unwrap_or(true) {
            best = Some((ps, q, err));
        }
    }
    let (ps, q, _) = best.expect("max_q >= 1");
    (ps, q)
}

/// Eigenvalues of the companion matrix of the monic polynomial
/// c₀ + c₁ z + … + c_{n-1} z^{n-1} + z^n.
///
/// Sparse lifts like z^{2q} + C produce cyclic companion matrices on which
/// shifted QR stalls (all eigenvalues share one modulus), so the polynomial
/// is Taylor-shifted by a real μ first and the roots shifted back.
fn companion_roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let n = coeffs.len();
    debug_assert!(n >= 1);
    for &mu in &[0.0, 0.5, 0.9382, -0.7071] {
        // d(y) = p(y + mu) by repeated synthetic division; d stays monic.
        let mut d = coeffs.to_vec();
        d.push(1.0);
        if mu != 0.0 {
            for k in 0..n {
                for j in (k..n).rev() {
                    d[j] += mu * d[j + 1];
                }
            }
        }
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            m[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            m[(i, n - 1)] = -d[i];
        }
        if let Some(schur) = nalgebra::linalg::Schur::try_new(m, 1e-14, 20_000) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|y| y + Complex64::new(mu, 0.0))
                .collect());
        }
    }
    Err(Error::Numerical(
        "companion eigenvalue iteration failed for every shift".into(),
    ))
}

// Lifted polynomial in z (s = z^q), monic, with the variable rescaled by
// gamma = C^{1/deg} so the companion matrix stays balanced for large c²λ.
fn lifted_roots(sym: &RelaxationSymbol, ps: &[usize], q: usize) -> Result<Vec<Complex64>> {
    let stiff = sym.c * sym.c * sym.lambda;
    let (degree, raw): (usize, Vec<(usize, f64)>) = match sym.model {
        DampingModel::Cwch { b, beta, .. } => {
            let p = ps[0];
            (2 * q, vec![(0, stiff), (p, b * sym.lambda.powf(beta)), (2 * q, 1.0)])
        }
        DampingModel::FractionalZener { b1, b2, .. } => {
            let (p1, p2) = (ps[0], ps[1]);
            (
                2 * q + p2,
                vec![(0, stiff), (p1, b1 * sym.lambda), (2 * q, 1.0), (2 * q + p2, b2)],
            )
        }
    };
    let lead = raw.iter().find(|(d, _)| *d == degree).map(|(_, c)| *c).unwrap_or(1.0);
    let mut coeffs = vec![0.0; degree + 1];
    for (d, c) in raw {
        coeffs[d] += c / lead;
    }
    let gamma = coeffs[0].abs().powf(1.0 / degree as f64).max(f64::MIN_POSITIVE);
    let mut scaled = vec![0.0; degree];
    for (d, item) in scaled.iter_mut().enumerate() {
        *item = coeffs[d] * gamma.powi(d as i32 - degree as i32);
    }
    Ok(companion_roots(&scaled)?.into_iter().map(|y| y * gamma).collect())
}

fn newton_refine(sym: &RelaxationSymbol, seed: Complex64) -> (Complex64, f64, bool) {
    let mut s = seed;
    for _ in 0..NEWTON_MAX_ITER {
        let f = sym.eval(s);
        let tol = NEWTON_RESIDUAL_FACTOR * sym.scale(s);
        if f.norm() <= tol {
            return (s, f.norm(), true);
        }
        let df = sym.eval_derivative(s);
        if df.norm() < 1e-300 {
            break;
        }
        let step = f / df;
        s -= step;
        if !s.re.is_finite() || !s.im.is_finite() {
            return (seed, f64::INFINITY, false);
        }
    }
    let r = sym.eval(s).norm();
    (s, r, r <= NEWTON_RESIDUAL_FACTOR * sym.scale(s))
}

/// Locate, refine, deduplicate, and certify the poles of ŵ(λ,·).
pub fn find_poles(sym: &RelaxationSymbol, rational_tol: f64) -> Result<PoleSet> {
    let orders = sym.fractional_orders();
    let (ps, q) = common_rational(&orders, rational_tol, 64);

    let sheet = PI / q as f64 + 1e-12;
    let mut refined: Vec<(Complex64, f64)> = Vec::new();
    let mut unconverged = Vec::new();
    for z in lifted_roots(sym, &ps, q)? {
        if z.arg().abs() > sheet {
            continue;
        }
        let seed = z.powu(q as u32);
        let (s, residual, ok) = newton_refine(sym, seed);
        if ok {
            refined.push((s, residual));
        } else {
            unconverged.push(UnconvergedSeed { seed, last: s, residual });
        }
    }

    let mut unique: Vec<(Complex64, f64)> = Vec::new();
    for (s, r) in refined {
        let dup = unique
            .iter()
            .any(|(t, _)| (s - t).norm() <= DEDUP_FACTOR * sym.scale(s));
        if !dup {
            unique.push((s, r));
        }
    }
    unique.sort_by(|a, b| {
        b.0.im
            .partial_cmp(&a.0.im)
            .unwrap()
            .then(a.0.re.partial_cmp(&b.0.re).unwrap())
    });

    let poles: Vec<Pole> = unique
        .into_iter()
        .map(|(s, r)| Pole {
            s,
            residue_w: {
                let d = sym.eval_derivative(s);
                if d.norm() > 0.0 { d.inv() } else { Complex64::new(f64::NAN, f64::NAN) }
            },
            multiplicity: 1,
            newton_residual: r,
        })
        .collect();

    let (certificate, certified) = certify(sym, &poles)?;
    Ok(PoleSet {
        lambda: sym.lambda,
        poles,
        branch_count_certificate: certificate,
        certified,
        unconverged,
    })
}

/// As [`find_poles`] but treats a certificate mismatch as an error.
pub fn find_poles_certified(sym: &RelaxationSymbol, rational_tol: f64) -> Result<PoleSet> {
    let set = find_poles(sym, rational_tol)?;
    if !set.certified {
        return Err(Error::Certification(format!(
            "argument principle counts {} roots, refinement found {} (lambda = {})",
            set.branch_count_certificate,
            set.poles.len(),
            set.lambda
        )));
    }
    Ok(set)
}

// Counts zeros inside the certification region(s) by tracking the winding of
// ω along each boundary. For fractional exponents the rectangle is split
// into an upper and a lower part indented off the branch cut.
fn certify(sym: &RelaxationSymbol, poles: &[Pole]) -> Result<(i64, bool)> {
    let l = 10.0 * sym.c * sym.lambda.sqrt() + 10.0;
    let eps = CONTOUR_INDENT;
    let c = |re: f64, im: f64| Complex64::new(re, im);

    type Region = (Vec<Complex64>, Box<dyn Fn(Complex64) -> bool>);
    let regions: Vec<Region> = if sym.is_polynomial() {
        vec![(
            vec![c(eps, -l), c(eps, l), c(-l, l), c(-l, -l), c(eps, -l)],
            Box::new(move |s: Complex64| s.re < eps && s.re > -l && s.im.abs() < l),
        )]
    } else {
        vec![
            (
                vec![c(eps, eps), c(eps, l), c(-l, l), c(-l, eps), c(eps, eps)],
                Box::new(move |s: Complex64| s.re < eps && s.re > -l && s.im > eps && s.im < l),
            ),
            (
                vec![c(eps, -l), c(eps, -eps), c(-l, -eps), c(-l, -l), c(eps, -l)],
                Box::new(move |s: Complex64| s.re < eps && s.re > -l && s.im < -eps && s.im > -l),
            ),
        ]
    };

    let mut total = 0i64;
    let mut matches = true;
    for (contour, inside) in regions {
        let count = winding_count(sym, &contour)?;
        let found = poles.iter().filter(|p| inside(p.s)).count() as i64;
        total += count;
        if count != found {
            matches = false;
        }
    }
    // A pole hiding inside the indent strip would evade both half-regions.
    if !sym.is_polynomial() {
        let stray = poles.iter().any(|p| p.s.im.abs() <= eps && p.s.re < eps);
        if stray {
            matches = false;
        }
    }
    Ok((total, matches))
}

// Winding number of ω along a closed polyline, by adaptive phase tracking:
// each segment is bisected until the phase increment is below π/2 and a
// midpoint probe confirms it.
fn winding_count(sym: &RelaxationSymbol, contour: &[Complex64]) -> Result<i64> {
    let mut total = 0.0;
    for seg in contour.windows(2) {
        total += segment_phase(sym, seg[0], seg[1], 0)?;
    }
    let turns = total / (2.0 * PI);
    let rounded = turns.round();
    if (turns - rounded).abs() > 1e-3 {
        return Err(Error::Certification(format!(
            "winding number {turns} is not close to an integer"
        )));
    }
    Ok(rounded as i64)
}

fn segment_phase(sym: &RelaxationSymbol, a: Complex64, b: Complex64, depth: usize) -> Result<f64> {
    let fa = sym.eval(a);
    let fb = sym.eval(b);
    if fa.norm() == 0.0 || fb.norm() == 0.0 {
        return Err(Error::Certification("symbol vanishes on the contour".into()));
    }
    let dphi = (fb / fa).arg();
    if dphi.abs() <= PI / 2.0 {
        let mid = 0.5 * (a + b);
        let fm = sym.eval(mid);
        let d1 = (fm / fa).arg();
        let d2 = (fb / fm).arg();
        if d1.abs() <= PI / 2.0 && d2.abs() <= PI / 2.0 && (d1 + d2 - dphi).abs() < 1e-9 {
            return Ok(dphi);
        }
    }
    if depth > 60 {
        return Err(Error::Certification(
            "phase tracking failed to resolve the contour".into(),
        ));
    }
    let mid = 0.5 * (a + b);
    Ok(segment_phase(sym, a, mid, depth + 1)? + segment_phase(sym, mid, b, depth + 1)?)
}

/// Closed-form residue Res(ŵ; p) = 1/ω'(p) for a certified simple pole.
pub fn residue(sym: &RelaxationSymbol, p: &Pole) -> Result<Complex64> {
    if p.multiplicity != 1 {
        return Err(Error::MultipleRoot(format!(
            "residue requires a simple pole, multiplicity = {}",
            p.multiplicity
        )));
    }
    let d = sym.eval_derivative(p.s);
    if d.norm() <= 1e-12 * sym.scale(p.s) {
        return Err(Error::MultipleRoot(format!(
            "|omega'({})| = {:.3e} is below the simplicity threshold",
            p.s,
            d.norm()
        )));
    }
    Ok(d.inv())
}

/// Residue by trapezoid quadrature of 1/ω over a small circle around `p`
/// (64 nodes, radius 1e-3·|p|). Independent cross-check of [`residue`].
pub fn residue_by_contour(sym: &RelaxationSymbol, p: Complex64) -> Complex64 {
    let radius = 1e-3 * p.norm();
    let n = 64;
    let mut acc = Complex64::ZERO;
    for k in 0..n {
        let theta = 2.0 * PI * k as f64 / n as f64;
        let z = p + radius * Complex64::new(theta.cos(), theta.sin());
        // (1/2πi) ∮ 1/ω ds reduces to the circle mean of (z - p)/ω(z).
        acc += (z - p) / sym.eval(z);
    }
    acc / n as f64
}

/// Sensitivity of a Zener pole to the diffusivity of sound at δ = 0.
#[derive(Debug, Clone, Copy)]
pub struct DeltaSensitivity {
    pub dr_ddelta: f64,
    pub dtheta_ddelta: f64,
}

/// Closed-form ∂r/∂δ and ∂θ/∂δ at the known root r = c√λ, θ = ±π/2 of the
/// factorized Zener symbol (α₁ = α₂ = α, δ = 0), via Cramer's rule on the
/// polar root system. Both are positive at θ = +π/2: increasing δ pushes the
/// pole deeper into the left half plane.
pub fn delta_sensitivity(
    b2: f64,
    alpha: f64,
    c: f64,
    lambda: f64,
    theta: f64,
) -> Result<DeltaSensitivity> {
    if b2 <= 0.0 || !(alpha > 0.0 && alpha <= 1.0) || c <= 0.0 || lambda <= 0.0 {
        return Err(Error::Domain(
            "delta sensitivity needs b2, c, lambda > 0 and alpha in (0,1]".into(),
        ));
    }
    let b1 = b2 * c * c; // delta = 0
    let r = c * lambda.sqrt();
    let stiff = c * c * lambda;
    let ra = r.powf(alpha);

    let a1 = -(alpha * r * r * (2.0 * theta).cos()
        + 2.0 * b1 * lambda * ra * (alpha * theta).cos()
        + (2.0 + alpha) * stiff)
        / r;
    let a2 =
        -(alpha * r * r * (2.0 * theta).sin() + 2.0 * b1 * lambda * ra * (alpha * theta).sin()) / r;
    let den = r * (a1 * a1 + a2 * a2);
    if den == 0.0 {
        return Err(Error::Degenerate("Jacobian of the root system vanishes".into()));
    }
    let num_r = lambda
        * ra
        * (alpha * r * r * ((2.0 - alpha) * theta).cos()
            + 2.0 * b1 * lambda * ra
            + (2.0 + alpha) * stiff * (alpha * theta).cos());
    let num_theta = lambda * ra / r
        * (-alpha * r * r * ((2.0 - alpha) * theta).sin()
            + (2.0 + alpha) * stiff * (alpha * theta).sin());
    Ok(DeltaSensitivity { dr_ddelta: num_r / den, dtheta_ddelta: num_theta / den })
}
