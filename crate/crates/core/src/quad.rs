//! Gauss–Legendre quadrature rules and composite panel integration.

/// A Gauss–Legendre rule on the reference interval [-1, 1].
///
/// Nodes are generated by Newton iteration on the Legendre recurrence and
/// stored symmetrically, so mirrored nodes and weights are bitwise equal.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x.abs();
            weights[i] = w;
            nodes[n - 1 - i] = x.abs();
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (mid + half * x, half * w))
            .collect()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

/// Value and derivative of the Legendre polynomial P_n at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `n` equal panels over [a, b].
pub fn uniform_panels(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let step = (b - a) / n as f64;
    (0..n)
        .map(|i| (a + step * i as f64, a + step * (i + 1) as f64))
        .collect()
}

/// `n` geometrically graded panels over [a, b] with 0 < a < b, finest at a.
pub fn geometric_panels(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    assert!(a > 0.0 && b > a);
    let ratio = (b / a).powf(1.0 / n as f64);
    let mut edges = Vec::with_capacity(n + 1);
    let mut x = a;
    for _ in 0..n {
        edges.push(x);
        x *= ratio;
    }
    edges.push(b);
    edges.windows(2).map(|e| (e[0], e[1])).collect()
}

/// Composite integration of `f` over the given panels with one shared rule.
pub fn integrate_panels<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    panels: &[(f64, f64)],
    mut f: F,
) -> f64 {
    panels.iter().map(|&(a, b)| rule.integrate(a, b, &mut f)).sum()
}
