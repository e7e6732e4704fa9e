//! Additive free convolution via the subordination system.
//!
//! The subordination triple (m, S_μ, S_ν) solves
//!
//! ```text
//! m(z) = m_μ(z + S_ν(z)) = m_ν(z + S_μ(z)),   -(z + 1/m(z)) = S_μ(z) + S_ν(z)
//! ```
//!
//! and is computed by iterating the composed reciprocal-Cauchy maps with
//! damping, then polishing with a Newton step on the two-variable system,
//! guarded by a Kantorovich certificate.

use num_complex::Complex64;
use thiserror::Error;

use crate::measures::{Measure, MeasureError, UpperHalfPoint};

/// Default residual tolerance for the subordination system.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Fixed-point residual below which the Newton polish is attempted.
pub const NEWTON_SWITCH: f64 = 1e-4;

/// Iteration cap for the damped fixed point.
pub const MAX_ITERATIONS: usize = 10_000;

/// Norm-equivalence safety factor applied to the sampled Lipschitz bound
/// before the certificate guard is checked.
pub const LIPSCHITZ_FUDGE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum FreeConvError {
    #[error("inputs must be probability measures with compact support")]
    NotProbability,
    #[error("fixed point did not reach tolerance in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("encountered the pole s1 + s2 = -z")]
    Pole,
    #[error("kappa vanishes at this point (degenerate, alpha undefined)")]
    DegeneratePoint,
    #[error("Jacobian at the initial point is singular")]
    SingularJacobian,
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum SolveMethod {
    FixedPoint,
    NewtonPolished,
}

/// Kantorovich data for a certified Newton run: guard 2bL < 1 with
/// b = ‖F'(x₀)⁻¹F(x₀)‖.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KantorovichCertificate {
    pub b: f64,
    pub lipschitz: f64,
    pub r_star: f64,
    pub r_star_star: f64,
    /// Frobenius-based condition estimate of F'(x₀).
    pub condition: f64,
}

/// Outcome of [`newton_kantorovich`].
#[derive(Debug, Clone)]
pub enum KantorovichOutcome {
    Certified {
        root: [f64; 4],
        certificate: KantorovichCertificate,
        iterations: usize,
    },
    /// Guard 2bL ≥ 1; the caller falls back to the damped fixed point.
    NoCertificate { b: f64, lipschitz: f64, two_b_l: f64 },
}

/// Solution of the subordination system at one point z.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SubordinationResult {
    pub s_mu: Complex64,
    pub s_nu: Complex64,
    pub m: Complex64,
    /// Residuals of the three equations of the system.
    pub residuals: [f64; 3],
    pub iterations: usize,
    pub method: SolveMethod,
    /// Present when the Newton polish was certified, together with the
    /// point the polish started from.
    pub certificate: Option<KantorovichCertificate>,
    #[serde(skip)]
    pub newton_start: Option<[Complex64; 2]>,
}

impl SubordinationResult {
    pub fn validate(&self, tol: f64) -> Result<(), FreeConvError> {
        let ok = self.s_mu.im >= -1e-10
            && self.s_nu.im >= -1e-10
            && self.residuals.iter().all(|&r| r <= tol);
        if ok {
            Ok(())
        } else {
            Err(FreeConvError::NonConvergence {
                iterations: self.iterations,
                residual: self.residuals[1].max(self.residuals[0]).max(self.residuals[2]),
            })
        }
    }
}

/// Diagnostics of Kargin's well-behavedness at a point: the Jacobian
/// determinant κ and the derived α, β quantities.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct WellBehavedDiagnostics {
    pub kappa: Complex64,
    pub alpha: f64,
    pub beta: f64,
}

fn eval_m(measure: &Measure, w: Complex64, order: u8) -> Complex64 {
    // Iterates can graze the real axis by rounding only; clamp keeps the
    // evaluation legal without moving the point measurably.
    let eta = w.im.max(f64::MIN_POSITIVE);
    let p = UpperHalfPoint { e: w.re, eta };
    measure.stieltjes(p, order).expect("order <= 2 and eta > 0")
}

/// Reciprocal Cauchy shift H_ρ(w) = -1/m_ρ(w) - w.
fn h_shift(measure: &Measure, w: Complex64) -> Complex64 {
    -1.0 / eval_m(measure, w, 0) - w
}

/// Solve the subordination system at z, starting the fixed point at ω₀ = z.
pub fn solve_subordination(
    mu: &Measure,
    nu: &Measure,
    z: UpperHalfPoint,
    tol: f64,
) -> Result<SubordinationResult, FreeConvError> {
    solve_subordination_from(mu, nu, z, tol, z.as_complex())
}

/// As [`solve_subordination`] but with an explicit fixed-point start ω₀
/// (the warm-start hook used by grid sweeps).
pub fn solve_subordination_from(
    mu: &Measure,
    nu: &Measure,
    z: UpperHalfPoint,
    tol: f64,
    omega0: Complex64,
) -> Result<SubordinationResult, FreeConvError> {
    if !mu.is_probability() || !nu.is_probability() {
        return Err(FreeConvError::NotProbability);
    }
    let zc = z.as_complex();
    let eta = z.eta;

    let mut omega = if omega0.im >= eta { omega0 } else { zc };
    let mut damping = 1.0;
    let mut iterations = 0usize;
    let mut newton_start = None;
    let mut certificate = None;
    let mut method = SolveMethod::FixedPoint;

    // residual of the second equation at the current ω₁ = ω
    let system_residual = |omega1: Complex64| -> (f64, Complex64) {
        let omega2 = zc + h_shift(mu, omega1);
        let r = (eval_m(nu, omega2, 0) - eval_m(mu, omega1, 0)).norm();
        (r, omega2)
    };

    let mut residual;
    loop {
        let (r, _omega2) = system_residual(omega);
        residual = r;
        if residual <= NEWTON_SWITCH || iterations >= MAX_ITERATIONS {
            break;
        }
        let target = zc + h_shift(nu, zc + h_shift(mu, omega));
        let mut next = (1.0 - damping) * omega + damping * target;
        while next.im < eta && damping > 1.0 / 64.0 {
            damping *= 0.5;
            next = (1.0 - damping) * omega + damping * target;
        }
        omega = next;
        iterations += 1;
    }

    // Newton polish on F(s₁, s₂) = (m_μ(z+s₂) + (z+s₁+s₂)⁻¹,
    //                               m_ν(z+s₁) + (z+s₁+s₂)⁻¹)
    if residual <= NEWTON_SWITCH {
        let omega1 = omega;
        let omega2 = zc + h_shift(mu, omega1);
        let s = [omega2 - zc, omega1 - zc];

        let f = |x: &[Complex64; 2]| -> Result<[Complex64; 2], FreeConvError> {
            let w = zc + x[0] + x[1];
            if w.norm() < 1e-14 {
                return Err(FreeConvError::Pole);
            }
            let inv = 1.0 / w;
            Ok([eval_m(mu, zc + x[1], 0) + inv, eval_m(nu, zc + x[0], 0) + inv])
        };
        let jac = |x: &[Complex64; 2]| -> [[Complex64; 2]; 2] {
            let w = zc + x[0] + x[1];
            let iw2 = -1.0 / (w * w);
            [
                [iw2, iw2 + eval_m(mu, zc + x[1], 1)],
                [iw2 + eval_m(nu, zc + x[0], 1), iw2],
            ]
        };

        if let (Ok(f0), j0) = (f(&s), jac(&s)) {
            if let Some(step) = solve2(&j0, &f0) {
                let b = norm2(&step);
                // Lipschitz bound for the guard, sampled on a stencil of
                // radius 2b around the start.
                let radius = (2.0 * b).max(1e-9);
                let mut lip: f64 = 0.0;
                for k in 0..8 {
                    let (d1, d2) = stencil_offset(k, radius);
                    let xs = [s[0] + d1, s[1] + d2];
                    if zc.im + xs[0].im <= 0.0 || zc.im + xs[1].im <= 0.0 {
                        continue;
                    }
                    let jk = jac(&xs);
                    let mut diff = [[Complex64::new(0.0, 0.0); 2]; 2];
                    for r in 0..2 {
                        for c in 0..2 {
                            diff[r][c] = jk[r][c] - j0[r][c];
                        }
                    }
                    if let Some(scaled) = premultiply_inverse(&j0, &diff) {
                        let dist = (d1.norm_sqr() + d2.norm_sqr()).sqrt();
                        lip = lip.max(frobenius(&scaled) / dist);
                    }
                }
                let guarded_lip = LIPSCHITZ_FUDGE * lip;

                let fr = embed_fn(&f);
                let jr = embed_jac(&jac);
                let x0 = [s[0].re, s[0].im, s[1].re, s[1].im];
                match newton_kantorovich(&fr, &jr, x0, guarded_lip) {
                    Ok(KantorovichOutcome::Certified { root, certificate: cert, iterations: it }) => {
                        omega = zc + Complex64::new(root[2], root[3]);
                        iterations += it;
                        method = SolveMethod::NewtonPolished;
                        newton_start = Some([s[0], s[1]]);
                        certificate = Some(cert);
                    }
                    _ => {
                        // fall back to the damped fixed point
                    }
                }
            }
        }
    }

    // continue the fixed point if the polish did not finish the job
    loop {
        let (r, _o2) = system_residual(omega);
        residual = r;
        if residual <= tol || iterations >= MAX_ITERATIONS {
            break;
        }
        let target = zc + h_shift(nu, zc + h_shift(mu, omega));
        let mut next = (1.0 - damping) * omega + damping * target;
        while next.im < eta && damping > 1.0 / 64.0 {
            damping *= 0.5;
            next = (1.0 - damping) * omega + damping * target;
        }
        omega = next;
        iterations += 1;
    }

    if residual > tol {
        return Err(FreeConvError::NonConvergence { iterations, residual });
    }

    let omega1 = omega;
    let omega2 = zc + h_shift(mu, omega1);
    let s_mu = omega2 - zc;
    let s_nu = omega1 - zc;
    let w = zc + s_mu + s_nu;
    if w.norm() < 1e-14 {
        return Err(FreeConvError::Pole);
    }
    let m = -1.0 / w;
    let residuals = [
        (eval_m(mu, omega1, 0) - m).norm(),
        (eval_m(nu, omega2, 0) - m).norm(),
        (zc + 1.0 / m + s_mu + s_nu).norm(),
    ];
    let result = SubordinationResult {
        s_mu,
        s_nu,
        m,
        residuals,
        iterations,
        method,
        certificate,
        newton_start,
    };
    result.validate(tol)?;
    Ok(result)
}

/// m_{μ⊞ν}(z).
pub fn free_convolve_m(
    mu: &Measure,
    nu: &Measure,
    z: UpperHalfPoint,
) -> Result<Complex64, FreeConvError> {
    Ok(solve_subordination(mu, nu, z, DEFAULT_TOL)?.m)
}

/// κ, α, β at z for the pair (μ, ν).
pub fn diagnostics(
    mu: &Measure,
    nu: &Measure,
    z: UpperHalfPoint,
) -> Result<WellBehavedDiagnostics, FreeConvError> {
    let sol = solve_subordination(mu, nu, z, DEFAULT_TOL)?;
    let zc = z.as_complex();
    let w1 = zc + sol.s_nu;
    let w2 = zc + sol.s_mu;
    let dmu = eval_m(mu, w1, 1);
    let dnu = eval_m(nu, w2, 1);
    let w = zc + sol.s_mu + sol.s_nu;
    let kappa = (dmu + dnu) / (w * w) - dmu * dnu;
    if kappa.norm() < 1e-14 {
        return Err(FreeConvError::DegeneratePoint);
    }
    let alpha = (1.0 / w.norm_sqr() + dmu.norm() + dnu.norm()) / kappa.norm();
    let beta = 1.0 / w.norm().powi(3) + eval_m(mu, w1, 2).norm() + eval_m(nu, w2, 2).norm();
    Ok(WellBehavedDiagnostics { kappa, alpha, beta })
}

// ---- Newton-Kantorovich on R⁴ ------------------------------------------

/// Newton's method with the Kantorovich guard 2bL < 1.
///
/// When the guard holds the root is found with ‖x₊ − x₀‖ ≤ r_* and a
/// certificate is returned; otherwise a no-certificate flag comes back and
/// the caller is expected to fall back to its fixed-point path.
pub fn newton_kantorovich(
    f: &dyn Fn(&[f64; 4]) -> Option<[f64; 4]>,
    fprime: &dyn Fn(&[f64; 4]) -> [[f64; 4]; 4],
    x0: [f64; 4],
    lipschitz_bound: f64,
) -> Result<KantorovichOutcome, FreeConvError> {
    let f0 = f(&x0).ok_or(FreeConvError::Pole)?;
    let j0 = fprime(&x0);
    let inv0 = invert4(&j0).ok_or(FreeConvError::SingularJacobian)?;
    let step0 = matvec4(&inv0, &f0);
    let b = norm4(&step0);
    let condition = frobenius4(&j0) * frobenius4(&inv0);
    let two_b_l = 2.0 * b * lipschitz_bound;
    if two_b_l >= 1.0 {
        return Ok(KantorovichOutcome::NoCertificate { b, lipschitz: lipschitz_bound, two_b_l });
    }
    let r_star = 2.0 * b / (1.0 + (1.0 - two_b_l).sqrt());
    let r_star_star = if lipschitz_bound > 0.0 {
        (1.0 + (1.0 - two_b_l).sqrt()) / lipschitz_bound
    } else {
        f64::INFINITY
    };

    let mut x = x0;
    let mut iterations = 0usize;
    for _ in 0..100 {
        let fx = f(&x).ok_or(FreeConvError::Pole)?;
        let jx = fprime(&x);
        let inv = invert4(&jx).ok_or(FreeConvError::SingularJacobian)?;
        let step = matvec4(&inv, &fx);
        for i in 0..4 {
            x[i] -= step[i];
        }
        iterations += 1;
        if norm4(&step) <= 1e-15 * (1.0 + norm4(&x)) {
            break;
        }
    }
    let certificate =
        KantorovichCertificate { b, lipschitz: lipschitz_bound, r_star, r_star_star, condition };
    Ok(KantorovichOutcome::Certified { root: x, certificate, iterations })
}

fn stencil_offset(k: usize, radius: f64) -> (Complex64, Complex64) {
    let dirs = [
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)),
        (Complex64::new(-1.0, 0.0), Complex64::new(0.0, 0.0)),
        (Complex64::new(0.0, 1.0), Complex64::new(0.0, 0.0)),
        (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
        (Complex64::new(0.0, 0.0), Complex64::new(-1.0, 0.0)),
        (Complex64::new(0.0, 0.0), Complex64::new(0.0, 1.0)),
        (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)),
        (Complex64::new(0.0, 1.0), Complex64::new(0.0, 1.0)),
    ];
    let (a, b) = dirs[k % dirs.len()];
    (a * radius, b * radius)
}

fn norm2(v: &[Complex64; 2]) -> f64 {
    (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()
}

fn frobenius(m: &[[Complex64; 2]; 2]) -> f64 {
    m.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// x with J x = rhs for a complex 2×2 system.
fn solve2(j: &[[Complex64; 2]; 2], rhs: &[Complex64; 2]) -> Option<[Complex64; 2]> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det.norm() < 1e-300 {
        return None;
    }
    Some([
        (rhs[0] * j[1][1] - rhs[1] * j[0][1]) / det,
        (j[0][0] * rhs[1] - j[1][0] * rhs[0]) / det,
    ])
}

/// J⁻¹ · M for complex 2×2 matrices.
fn premultiply_inverse(
    j: &[[Complex64; 2]; 2],
    m: &[[Complex64; 2]; 2],
) -> Option<[[Complex64; 2]; 2]> {
    let c0 = solve2(j, &[m[0][0], m[1][0]])?;
    let c1 = solve2(j, &[m[0][1], m[1][1]])?;
    Some([[c0[0], c1[0]], [c0[1], c1[1]]])
}

fn embed_fn<'a, F>(f: &'a F) -> impl Fn(&[f64; 4]) -> Option<[f64; 4]> + 'a
where
    F: Fn(&[Complex64; 2]) -> Result<[Complex64; 2], FreeConvError>,
{
    move |x: &[f64; 4]| {
        let s = [Complex64::new(x[0], x[1]), Complex64::new(x[2], x[3])];
        f(&s).ok().map(|v| [v[0].re, v[0].im, v[1].re, v[1].im])
    }
}

fn embed_jac<'a, J>(jac: &'a J) -> impl Fn(&[f64; 4]) -> [[f64; 4]; 4] + 'a
where
    J: Fn(&[Complex64; 2]) -> [[Complex64; 2]; 2],
{
    move |x: &[f64; 4]| {
        let s = [Complex64::new(x[0], x[1]), Complex64::new(x[2], x[3])];
        let j = jac(&s);
        let mut out = [[0.0; 4]; 4];
        for r in 0..2 {
            for c in 0..2 {
                let e = j[r][c];
                out[2 * r][2 * c] = e.re;
                out[2 * r][2 * c + 1] = -e.im;
                out[2 * r + 1][2 * c] = e.im;
                out[2 * r + 1][2 * c + 1] = e.re;
            }
        }
        out
    }
}

// ---- small real 4×4 kernel ----------------------------------------------

fn invert4(m: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let mut pivot = col;
        for row in col + 1..4 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..4 {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for row in 0..4 {
            if row != col {
                let factor = a[row][col];
                for j in 0..4 {
                    a[row][j] -= factor * a[col][j];
                    inv[row][j] -= factor * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

fn matvec4(m: &[[f64; 4]; 4], v: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

fn norm4(v: &[f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn frobenius4(m: &[[f64; 4]; 4]) -> f64 {
    m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests;
