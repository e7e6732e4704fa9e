use super::*;
use crate::measures::{EtaSchedule, Measure};
use approx::assert_abs_diff_eq;
use num_complex::Complex64;

fn z(e: f64, eta: f64) -> UpperHalfPoint {
    UpperHalfPoint::new(e, eta).unwrap()
}

/// Branch of √(z²-r²) with √ ~ z at infinity.
fn sqrt_branch(zc: Complex64, r: f64) -> Complex64 {
    (zc - r).sqrt() * (zc + r).sqrt()
}

fn arcsine_m(zc: Complex64) -> Complex64 {
    -1.0 / sqrt_branch(zc, 2.0)
}

#[test]
fn convolving_with_a_point_mass_translates() {
    let mu = Measure::semicircle(2.0);
    let delta = Measure::dirac(0.7);
    for i in 0..20 {
        let e = -3.0 + 6.0 * i as f64 / 19.0;
        let p = z(e, 0.4);
        let sol = solve_subordination(&mu, &delta, p, DEFAULT_TOL).unwrap();
        assert!((sol.s_nu - Complex64::new(-0.7, 0.0)).norm() < 1e-10);
        let shifted = mu.stieltjes(z(e - 0.7, 0.4), 0).unwrap();
        assert!(
            (sol.m - shifted).norm() < 1e-10,
            "at E={e}: {} vs {}",
            sol.m,
            shifted
        );
    }
}

#[test]
fn bernoulli_square_is_arcsine() {
    let b = Measure::symmetric_bernoulli(1.0);
    let sol = solve_subordination(&b, &b, z(0.0, 2.0), DEFAULT_TOL).unwrap();
    // arcsine on [-2,2]: m(2i) = -1/√(-8) = i/(2√2)
    assert_abs_diff_eq!(sol.m.re, 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(sol.m.im, 1.0 / (2.0 * 2.0f64.sqrt()), epsilon = 1e-10);
}

#[test]
fn semicircle_variances_add() {
    let s = Measure::semicircle(2.0);
    let sol = solve_subordination(&s, &s, z(0.0, 2.0), DEFAULT_TOL).unwrap();
    // semicircle of variance 2: m(z) = (-z + √(z²-8))/4 → at 2i: i(√3-1)/2
    assert_abs_diff_eq!(sol.m.re, 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(sol.m.im, (3.0f64.sqrt() - 1.0) / 2.0, epsilon = 1e-10);
}

#[test]
fn free_convolve_m_examples() {
    let da = Measure::dirac(1.3);
    let db = Measure::dirac(-0.4);
    let p = z(0.5, 0.8);
    let m = free_convolve_m(&da, &db, p).unwrap();
    let direct = 1.0 / (Complex64::new(1.3 - 0.4, 0.0) - p.as_complex());
    assert!((m - direct).norm() < 1e-12);

    let b = Measure::symmetric_bernoulli(1.0);
    let m = free_convolve_m(&b, &b, z(0.0, 1.0)).unwrap();
    // i/√5
    assert_abs_diff_eq!(m.re, 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(m.im, 1.0 / 5.0f64.sqrt(), epsilon = 1e-10);

    let s = Measure::semicircle(2.0);
    let m = free_convolve_m(&s, &Measure::dirac(0.0), z(0.3, 0.6)).unwrap();
    let direct = s.stieltjes(z(0.3, 0.6), 0).unwrap();
    assert!((m - direct).norm() < 1e-10);
}

#[test]
fn arcsine_closed_form_on_a_grid() {
    let b = Measure::symmetric_bernoulli(1.0);
    for i in 0..13 {
        let e = -3.0 + 0.5 * i as f64;
        for &eta in &[0.1, 0.5, 1.0] {
            let p = z(e, eta);
            let m = free_convolve_m(&b, &b, p).unwrap();
            let exact = arcsine_m(p.as_complex());
            assert!(
                (m - exact).norm() <= 1e-8,
                "at ({e},{eta}): {m} vs {exact}"
            );
        }
    }
}

#[test]
fn convolution_commutes() {
    let pairs = [
        (Measure::semicircle(2.0), Measure::uniform(0.5, 4.0).symmetrize()),
        (Measure::symmetric_bernoulli(1.0), Measure::semicircle(1.0)),
        (Measure::uniform(-1.0, 1.0), Measure::symmetric_bernoulli(0.5)),
    ];
    for (mu, nu) in &pairs {
        for i in 0..8 {
            let e = -2.5 + 5.0 * i as f64 / 7.0;
            for &eta in &[0.1, 0.7] {
                let p = z(e, eta);
                let ab = free_convolve_m(mu, nu, p).unwrap();
                let ba = free_convolve_m(nu, mu, p).unwrap();
                assert!((ab - ba).norm() < 1e-9, "commutativity at ({e},{eta})");
            }
        }
    }
}

/// Least-squares fit of m(z) ≈ Σ_{k=1..5} c_k z^{-k} on the imaginary axis;
/// the second moment is -c₃.
fn second_moment_from_expansion(m_fn: impl Fn(UpperHalfPoint) -> Complex64) -> f64 {
    let heights = [40.0, 55.0, 75.0, 100.0, 140.0, 200.0];
    let scale = 50.0;
    let n = 5;
    // normal equations over the scaled basis u^k, u = scale/z
    let mut a = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    for &h in &heights {
        let zc = Complex64::new(0.0, h);
        let u = scale / zc;
        let m = m_fn(z(0.0, h));
        let basis: Vec<Complex64> = (1..=n as i32).map(|k| u.powi(k)).collect();
        for r in 0..n {
            for c in 0..n {
                a[r][c] += basis[r].conj() * basis[c];
            }
            rhs[r] += basis[r].conj() * m;
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].norm() > a[pivot][col].norm() {
                pivot = row;
            }
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        let d = a[col][col];
        for j in col..n {
            a[col][j] /= d;
        }
        rhs[col] /= d;
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                for j in col..n {
                    a[row][j] = a[row][j] - f * a[col][j];
                }
                let pivot_rhs = rhs[col];
                rhs[row] -= f * pivot_rhs;
            }
        }
    }
    // m(z) = -Σ m_k z^{-(k+1)}; the basis is u^k = scale^k z^{-k}, so the
    // z^{-3} coefficient is c₃·scale³ = -m₂.
    -(rhs[2] * scale.powi(3)).re
}

#[test]
fn variance_is_additive() {
    let cases: [(Measure, Measure, f64); 2] = [
        (Measure::semicircle(2.0), Measure::symmetric_bernoulli(1.0), 1.0 + 1.0),
        (Measure::uniform(-1.0, 1.0), Measure::semicircle(1.4), 1.0 / 3.0 + 0.49),
    ];
    for (mu, nu, want) in &cases {
        let got = second_moment_from_expansion(|p| free_convolve_m(mu, nu, p).unwrap());
        assert!(
            (got - want).abs() < 1e-4,
            "variance of convolution: {got} vs {want}"
        );
    }
}

#[test]
fn density_bound_is_preserved() {
    // uniform(-1,1) has density ½, so any free convolution with it keeps
    // Im m ≤ π/2.
    let mu = Measure::uniform(-1.0, 1.0);
    let others = [
        Measure::symmetric_bernoulli(1.0),
        Measure::semicircle(2.0),
        Measure::uniform(0.5, 4.0),
    ];
    let cap = std::f64::consts::FRAC_PI_2 + 1e-6;
    for nu in &others {
        for i in 0..15 {
            let e = -4.0 + 8.0 * i as f64 / 14.0;
            for &eta in &[1e-3, 1e-2, 0.1, 1.0] {
                let m = free_convolve_m(&mu, nu, z(e, eta)).unwrap();
                assert!(m.im <= cap, "Im m = {} at ({e},{eta})", m.im);
            }
        }
    }
}

#[test]
fn residuals_hold_over_corpus() {
    let corpus = [
        Measure::semicircle(2.0),
        Measure::symmetric_bernoulli(1.0),
        Measure::uniform(0.5, 4.0).symmetrize(),
        Measure::empirical(&[0.3, 0.9, 1.7, 2.2]).unwrap().symmetrize(),
    ];
    for mu in &corpus {
        for nu in &corpus {
            for &(e, eta) in &[(0.0, 1.0), (1.2, 0.3), (-2.0, 0.05), (0.4, 0.01)] {
                let sol = solve_subordination(mu, nu, z(e, eta), DEFAULT_TOL).unwrap();
                sol.validate(DEFAULT_TOL).unwrap();
                assert!(sol.s_mu.im >= -1e-10);
                assert!(sol.s_nu.im >= -1e-10);
            }
        }
    }
}

#[test]
fn diagnostics_reduces_for_point_mass() {
    // with ν = δ₀: S_ν = 0, z+S_μ = -1/m_μ(z), and κ collapses to m_μ(z)⁴
    let mu = Measure::semicircle(2.0);
    let p = z(0.0, 2.0);
    let d = diagnostics(&mu, &Measure::dirac(0.0), p).unwrap();
    let m = mu.stieltjes(p, 0).unwrap();
    let expect = m.powi(4);
    assert!(
        (d.kappa - expect).norm() < 1e-10,
        "kappa {} vs m⁴ {}",
        d.kappa,
        expect
    );
    assert!(d.alpha >= 0.0 && d.beta >= 0.0);
}

#[test]
fn kappa_matches_finite_difference_jacobian_determinant() {
    // independent derivative route: finite differences of F around the root
    let mu = Measure::symmetric_bernoulli(1.0);
    let nu = Measure::symmetric_bernoulli(1.0);
    let p = z(0.0, 2.0);
    let sol = solve_subordination(&mu, &nu, p, DEFAULT_TOL).unwrap();
    let d = diagnostics(&mu, &nu, p).unwrap();
    let zc = p.as_complex();
    let f = |s1: Complex64, s2: Complex64| -> [Complex64; 2] {
        let inv = 1.0 / (zc + s1 + s2);
        [
            mu.stieltjes(UpperHalfPoint::from_complex(zc + s2).unwrap(), 0).unwrap() + inv,
            nu.stieltjes(UpperHalfPoint::from_complex(zc + s1).unwrap(), 0).unwrap() + inv,
        ]
    };
    let h = 1e-6;
    let base = (sol.s_mu, sol.s_nu);
    let f0 = f(base.0, base.1);
    let d1 = f(base.0 + h, base.1);
    let d2 = f(base.0, base.1 + h);
    let j = [
        [(d1[0] - f0[0]) / h, (d2[0] - f0[0]) / h],
        [(d1[1] - f0[1]) / h, (d2[1] - f0[1]) / h],
    ];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    assert!(
        (det - d.kappa).norm() < 1e-4,
        "fd det {det} vs kappa {}",
        d.kappa
    );
    assert!(d.kappa.norm() > 1e-3);
}

#[test]
fn kappa_is_uniformly_bounded_below_at_large_z() {
    // brute-force scan produces the uniform constant of the large-|z| bound
    let p = z(0.0, 100.0);
    let scan: Vec<Measure> = (1..=6)
        .map(|k| Measure::symmetric_bernoulli(0.3 * k as f64))
        .chain((1..=4).map(|k| Measure::semicircle(0.5 * k as f64)))
        .collect();
    let mut m2: f64 = 0.0;
    for mu in &scan {
        for nu in &scan {
            let d = diagnostics(mu, nu, p).unwrap();
            m2 = m2.max(1.0 / d.kappa.norm());
        }
    }
    // corpus pairs with supports in [-2,2], outside the scan family
    let corpus = [
        Measure::uniform(-2.0, 2.0),
        Measure::arcsine(2.0),
        Measure::empirical(&[-1.8, -0.2, 0.7, 1.9]).unwrap().symmetrize(),
    ];
    for mu in &corpus {
        for nu in &corpus {
            let d = diagnostics(mu, nu, p).unwrap();
            assert!(
                d.kappa.norm() >= 1.0 / (m2 * 1.1),
                "kappa {} below scan bound 1/{m2}",
                d.kappa.norm()
            );
        }
    }
}

#[test]
fn newton_kantorovich_certifies_the_scalar_example() {
    // F(x) = x² - 1 embedded diagonally, x₀ = 2
    let f = |x: &[f64; 4]| Some([x[0] * x[0] - 1.0, x[1], x[2], x[3]]);
    let fp = |x: &[f64; 4]| {
        let mut j = [[0.0; 4]; 4];
        j[0][0] = 2.0 * x[0];
        j[1][1] = 1.0;
        j[2][2] = 1.0;
        j[3][3] = 1.0;
        j
    };
    // b = |F/F'| = 3/4, L = sup |F'(x0)^{-1}(F'(x)-F'(y))/(x-y)| = 2/4
    match newton_kantorovich(&f, &fp, [2.0, 0.0, 0.0, 0.0], 0.5).unwrap() {
        KantorovichOutcome::Certified { root, certificate, .. } => {
            assert_abs_diff_eq!(certificate.b, 0.75, epsilon = 1e-12);
            assert_abs_diff_eq!(certificate.r_star, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(root[0], 1.0, epsilon = 1e-10);
            assert!((root[0] - 2.0f64).abs() <= certificate.r_star + 1e-12);
        }
        other => panic!("expected certificate, got {other:?}"),
    }
}

#[test]
fn newton_kantorovich_trivial_root() {
    let f = |x: &[f64; 4]| Some(*x);
    let fp = |_: &[f64; 4]| {
        let mut j = [[0.0; 4]; 4];
        for (i, row) in j.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        j
    };
    match newton_kantorovich(&f, &fp, [0.0; 4], 1.0).unwrap() {
        KantorovichOutcome::Certified { root, certificate, .. } => {
            assert_eq!(certificate.b, 0.0);
            assert_eq!(certificate.r_star, 0.0);
            assert!(norm4(&root) < 1e-14);
        }
        other => panic!("expected certificate, got {other:?}"),
    }
}

#[test]
fn newton_kantorovich_guard_violation() {
    // near-singular F'(x₀): 2bL ≥ 1 → no certificate
    let f = |x: &[f64; 4]| Some([x[0] * x[0] - 1.0, x[1], x[2], x[3]]);
    let fp = |x: &[f64; 4]| {
        let mut j = [[0.0; 4]; 4];
        j[0][0] = 2.0 * x[0];
        j[1][1] = 1.0;
        j[2][2] = 1.0;
        j[3][3] = 1.0;
        j
    };
    let l = 2.0 / 0.02;
    match newton_kantorovich(&f, &fp, [0.01, 0.0, 0.0, 0.0], l).unwrap() {
        KantorovichOutcome::NoCertificate { two_b_l, .. } => assert!(two_b_l >= 1.0),
        other => panic!("expected guard violation, got {other:?}"),
    }
}

#[test]
fn certificates_are_sound() {
    // whenever the polish certifies, a long plain fixed-point run from the
    // same start must land within r_* of the start
    let pairs = [
        (Measure::semicircle(2.0), Measure::semicircle(2.0)),
        (Measure::symmetric_bernoulli(1.0), Measure::uniform(-1.0, 1.0)),
        (Measure::uniform(0.5, 4.0).symmetrize(), Measure::symmetric_bernoulli(1.5)),
    ];
    let mut certified = 0;
    for (mu, nu) in &pairs {
        for &(e, eta) in &[(0.0, 1.0), (0.8, 0.4), (1.5, 0.15)] {
            let p = z(e, eta);
            let sol = solve_subordination(mu, nu, p, DEFAULT_TOL).unwrap();
            let (Some(cert), Some(start)) = (sol.certificate, sol.newton_start) else {
                continue;
            };
            certified += 1;
            // plain fixed point, no damping games, many iterations
            let zc = p.as_complex();
            let h_mu = |w: Complex64| {
                -1.0 / mu.stieltjes(UpperHalfPoint::from_complex(w).unwrap(), 0).unwrap() - w
            };
            let h_nu = |w: Complex64| {
                -1.0 / nu.stieltjes(UpperHalfPoint::from_complex(w).unwrap(), 0).unwrap() - w
            };
            let mut omega = zc + start[1];
            for _ in 0..200_000 {
                let next = zc + h_nu(zc + h_mu(omega));
                if (next - omega).norm() < 1e-15 {
                    omega = next;
                    break;
                }
                omega = next;
            }
            let inner = zc + h_mu(omega);
            let s1 = inner - zc;
            let s2 = omega - zc;
            let dist = ((s1 - start[0]).norm_sqr() + (s2 - start[1]).norm_sqr()).sqrt();
            assert!(
                dist <= cert.r_star * (1.0 + 1e-9) + 1e-12,
                "fixed point moved {dist} > r_* = {}",
                cert.r_star
            );
        }
    }
    assert!(certified >= 5, "only {certified} certified solves in the corpus");
}

#[test]
fn solver_reports_nonconvergence_data() {
    // a tolerance below machine resolution cannot be met
    let mu = Measure::semicircle(2.0);
    let nu = Measure::symmetric_bernoulli(1.0);
    let err = solve_subordination(&mu, &nu, z(0.2, 0.5), 1e-18);
    match err {
        Err(FreeConvError::NonConvergence { residual, .. }) => assert!(residual > 0.0),
        Ok(sol) => {
            // Newton can occasionally land exactly; residuals must then be 0
            assert!(sol.residuals.iter().all(|&r| r <= 1e-18));
        }
        Err(other) => panic!("unexpected error {other}"),
    }
}

#[test]
fn nu_infinity_density_recovery_composes_with_solver() {
    // arcsine density at 0 recovered through the solver-backed transform
    let b = Measure::symmetric_bernoulli(1.0);
    let (rho, _) = crate::measures::density_at(
        |p| free_convolve_m(&b, &b, p).unwrap(),
        0.0,
        &EtaSchedule::default(),
    )
    .unwrap();
    assert_abs_diff_eq!(rho, 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-3);
}
