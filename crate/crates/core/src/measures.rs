//! Compactly supported real measures (possibly signed), their Stieltjes
//! transforms and derivatives, symmetrization, moments, and density recovery
//! by Stieltjes inversion.
//!
//! A [`Measure`] is a sum of atoms and of discretized continuous segments.
//! Named laws carry closed-form transforms which the generic discretized
//! path must reproduce; the closed forms double as the library's self-check
//! oracles.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::GaussLegendre;

/// Default node count for Gauss–Legendre discretization of a segment.
pub const DEFAULT_NODES: usize = 512;

/// Relative tolerance for the mass bookkeeping invariant.
pub const MASS_REL_TOL: f64 = 1e-12;

/// Absolute tolerance on moments 0..4 between a named law and its
/// discretization.
pub const NAMED_LAW_MOMENT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("point must lie in the open upper half-plane (eta = {0})")]
    NonPositiveEta(f64),
    #[error("derivative order {0} unsupported (orders 0, 1, 2 only)")]
    UnsupportedOrder(u8),
    #[error("negative moment needs support bounded away from 0 (min |support| = {0:e})")]
    SingularMoment(f64),
    #[error("empirical measure needs a nonempty sample")]
    EmptySample,
    #[error("eta schedule must be positive and strictly decreasing")]
    BadEtaSchedule,
    #[error("mass bookkeeping off by relative {0:e}")]
    MassMismatch(f64),
    #[error("negative weight {0:e} in a measure flagged positive")]
    NegativeWeight(f64),
    #[error("named law and discretization disagree at moment {k}: defect {defect:e}")]
    NamedLawMismatch { k: i32, defect: f64 },
    #[error("record parse: {0}")]
    BadRecord(String),
}

/// A point z = E + iη of the open upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperHalfPoint {
    pub e: f64,
    pub eta: f64,
}

impl UpperHalfPoint {
    pub fn new(e: f64, eta: f64) -> Result<Self, MeasureError> {
        if !(eta > 0.0) || !eta.is_finite() || !e.is_finite() {
            return Err(MeasureError::NonPositiveEta(eta));
        }
        Ok(Self { e, eta })
    }

    pub fn as_complex(self) -> Complex64 {
        Complex64::new(self.e, self.eta)
    }

    pub fn from_complex(z: Complex64) -> Result<Self, MeasureError> {
        Self::new(z.re, z.im)
    }
}

/// Closed-form law tags. All are probability laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum NamedLaw {
    /// Semicircle on [-radius, radius], variance radius²/4.
    Semicircle { radius: f64 },
    /// Arcsine on [-half_width, half_width] (density 1/(π√(w²-x²))).
    Arcsine { half_width: f64 },
    /// Uniform on [lo, hi].
    Uniform { lo: f64, hi: f64 },
    /// (δ_{-c} + δ_c)/2.
    SymmetricBernoulli { c: f64 },
}

/// Branch of √(z² - r²) analytic off [-r, r] with √ ~ z at infinity.
pub(crate) fn sqrt_sym_branch(z: Complex64, r: f64) -> Complex64 {
    (z - r).sqrt() * (z + r).sqrt()
}

impl NamedLaw {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            NamedLaw::Semicircle { radius } => (-radius, radius),
            NamedLaw::Arcsine { half_width } => (-half_width, half_width),
            NamedLaw::Uniform { lo, hi } => (lo, hi),
            NamedLaw::SymmetricBernoulli { c } => (-c, c),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match *self {
            NamedLaw::Uniform { lo, hi } => lo == -hi,
            _ => true,
        }
    }

    /// Lebesgue density, zero outside the support (atoms excluded).
    pub fn density(&self, x: f64) -> f64 {
        match *self {
            NamedLaw::Semicircle { radius } => {
                let d = radius * radius - x * x;
                if d > 0.0 {
                    2.0 * d.sqrt() / (std::f64::consts::PI * radius * radius)
                } else {
                    0.0
                }
            }
            NamedLaw::Arcsine { half_width } => {
                let d = half_width * half_width - x * x;
                if d > 0.0 {
                    1.0 / (std::f64::consts::PI * d.sqrt())
                } else {
                    0.0
                }
            }
            NamedLaw::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            NamedLaw::SymmetricBernoulli { .. } => 0.0,
        }
    }

    /// m, m' or m'' in closed form.
    pub fn stieltjes(&self, z: Complex64, order: u8) -> Complex64 {
        match *self {
            NamedLaw::Semicircle { radius } => {
                let s = sqrt_sym_branch(z, radius);
                let c = 2.0 / (radius * radius);
                match order {
                    0 => c * (s - z),
                    1 => c * (z / s - 1.0),
                    _ => -2.0 / (s * s * s),
                }
            }
            NamedLaw::Arcsine { half_width } => {
                let s = sqrt_sym_branch(z, half_width);
                match order {
                    0 => -1.0 / s,
                    1 => z / (s * s * s),
                    _ => (s * s - 3.0 * z * z) / (s * s * s * s * s),
                }
            }
            NamedLaw::Uniform { lo, hi } => {
                let rho = 1.0 / (hi - lo);
                let wa = lo - z;
                let wb = hi - z;
                match order {
                    0 => rho * (wb.ln() - wa.ln()),
                    1 => rho * (1.0 / wa - 1.0 / wb),
                    _ => rho * (1.0 / (wa * wa) - 1.0 / (wb * wb)),
                }
            }
            NamedLaw::SymmetricBernoulli { c } => {
                let half = Complex64::new(0.5, 0.0);
                let a = Complex64::new(-c, 0.0) - z;
                let b = Complex64::new(c, 0.0) - z;
                match order {
                    0 => half * (1.0 / a + 1.0 / b),
                    1 => half * (1.0 / (a * a) + 1.0 / (b * b)),
                    _ => half * (2.0 / (a * a * a) + 2.0 / (b * b * b)),
                }
            }
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        match *self {
            NamedLaw::Semicircle { radius } => {
                let pi = std::f64::consts::PI;
                0.5 + (x * (radius * radius - x * x).sqrt()
                    + radius * radius * (x / radius).asin())
                    / (pi * radius * radius)
            }
            NamedLaw::Arcsine { half_width } => {
                0.5 + (x / half_width).asin() / std::f64::consts::PI
            }
            NamedLaw::Uniform { lo, hi } => (x - lo) / (hi - lo),
            NamedLaw::SymmetricBernoulli { c } => {
                if x < -c {
                    0.0
                } else if x < c {
                    0.5
                } else {
                    1.0
                }
            }
        }
    }

    /// Quantile x with CDF(x) = q, by bisection on the continuous laws.
    pub fn quantile(&self, q: f64) -> f64 {
        assert!((0.0..=1.0).contains(&q));
        match *self {
            NamedLaw::Uniform { lo, hi } => lo + (hi - lo) * q,
            NamedLaw::Arcsine { half_width } => {
                half_width * (std::f64::consts::PI * (q - 0.5)).sin()
            }
            NamedLaw::SymmetricBernoulli { c } => {
                if q <= 0.5 {
                    -c
                } else {
                    c
                }
            }
            NamedLaw::Semicircle { .. } => {
                let (mut lo, mut hi) = self.support();
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// n midpoint quantiles, q_i = (i + ½)/n.
    pub fn quantile_points(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.quantile((i as f64 + 0.5) / n as f64)).collect()
    }

    /// k-th moment in closed form. `None` when the moment diverges.
    pub fn moment(&self, k: i32) -> Option<f64> {
        match *self {
            NamedLaw::Semicircle { radius } => {
                if k < 0 {
                    return None;
                }
                if k % 2 == 1 {
                    return Some(0.0);
                }
                let half = k as u32 / 2;
                Some(catalan(half) * (radius / 2.0).powi(k))
            }
            NamedLaw::Arcsine { half_width } => {
                if k < 0 {
                    return None;
                }
                if k % 2 == 1 {
                    return Some(0.0);
                }
                // E[cos^k] = C(k, k/2) / 2^k
                Some(half_binomial(k as u32) * half_width.powi(k))
            }
            NamedLaw::Uniform { lo, hi } => {
                if k < 0 && lo <= 0.0 && hi >= 0.0 {
                    return None;
                }
                if k == -1 {
                    Some((hi / lo).ln() / (hi - lo))
                } else {
                    let p = k + 1;
                    Some((hi.powi(p) - lo.powi(p)) / (p as f64 * (hi - lo)))
                }
            }
            NamedLaw::SymmetricBernoulli { c } => {
                if k < 0 && c == 0.0 {
                    return None;
                }
                Some(0.5 * (c.powi(k) + (-c).powi(k)))
            }
        }
    }
}

fn catalan(n: u32) -> f64 {
    let mut c = 1.0;
    for i in 0..n {
        c = c * (2 * (2 * i + 1)) as f64 / (i + 2) as f64;
    }
    c
}

fn half_binomial(k: u32) -> f64 {
    // C(k, k/2) / 2^k for even k
    let mut v = 1.0;
    let h = k / 2;
    for i in 0..h {
        v *= (k - i) as f64 / ((i + 1) as f64 * 4.0);
    }
    // remaining factor 1/2^(k - 2h) = 1 since k even
    v
}

/// How a segment's density behaves, enabling exact transforms where known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SegmentProfile {
    /// Evaluated through the stored quadrature nodes.
    Generic,
    /// Constant density; transforms evaluate in closed form.
    Constant { density: f64 },
}

/// One discretized continuous piece supported on [lo, hi].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub densities: Vec<f64>,
    pub profile: SegmentProfile,
}

impl Segment {
    /// Mass carried by the segment: Σ wᵢ ρᵢ.
    pub fn mass(&self) -> f64 {
        self.weights.iter().zip(&self.densities).map(|(w, d)| w * d).sum()
    }

    fn mirrored(&self) -> Segment {
        let mut nodes: Vec<f64> = self.nodes.iter().rev().map(|&t| -t).collect();
        // -0.0 would break exact multiset comparison
        for t in &mut nodes {
            if *t == 0.0 {
                *t = 0.0;
            }
        }
        Segment {
            lo: -self.hi,
            hi: -self.lo,
            nodes,
            weights: self.weights.iter().rev().copied().collect(),
            densities: self.densities.iter().rev().copied().collect(),
            profile: self.profile,
        }
    }

    fn scaled_density(&self, factor: f64) -> Segment {
        Segment {
            lo: self.lo,
            hi: self.hi,
            nodes: self.nodes.clone(),
            weights: self.weights.clone(),
            densities: self.densities.iter().map(|d| d * factor).collect(),
            profile: match self.profile {
                SegmentProfile::Generic => SegmentProfile::Generic,
                SegmentProfile::Constant { density } => {
                    SegmentProfile::Constant { density: density * factor }
                }
            },
        }
    }

    fn stieltjes(&self, z: Complex64, order: u8) -> Complex64 {
        match self.profile {
            SegmentProfile::Constant { density } => {
                let wa = self.lo - z;
                let wb = self.hi - z;
                density
                    * match order {
                        0 => wb.ln() - wa.ln(),
                        1 => 1.0 / wa - 1.0 / wb,
                        _ => 1.0 / (wa * wa) - 1.0 / (wb * wb),
                    }
            }
            SegmentProfile::Generic => self.stieltjes_nodes(z, order),
        }
    }

    fn stieltjes_nodes(&self, z: Complex64, order: u8) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for ((&t, &w), &d) in self.nodes.iter().zip(&self.weights).zip(&self.densities) {
            acc += (w * d) * atom_kernel(t, z, order);
        }
        acc
    }

    fn moment(&self, k: i32) -> f64 {
        match self.profile {
            SegmentProfile::Constant { density } => {
                if k == -1 {
                    density * (self.hi / self.lo).ln()
                } else {
                    let p = k + 1;
                    density * (self.hi.powi(p) - self.lo.powi(p)) / p as f64
                }
            }
            SegmentProfile::Generic => self
                .nodes
                .iter()
                .zip(&self.weights)
                .zip(&self.densities)
                .map(|((&t, &w), &d)| w * d * t.powi(k))
                .sum(),
        }
    }
}

fn atom_kernel(t: f64, z: Complex64, order: u8) -> Complex64 {
    let d = t - z;
    match order {
        0 => 1.0 / d,
        1 => 1.0 / (d * d),
        _ => 2.0 / (d * d * d),
    }
}

/// A compactly supported real measure: atoms plus discretized segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    /// (location, weight) pairs.
    pub atoms: Vec<(f64, f64)>,
    pub segments: Vec<Segment>,
    pub named_law: Option<NamedLaw>,
    pub total_mass: f64,
    /// When set, all atom weights and density values must be ≥ 0.
    pub positive: bool,
}

impl Measure {
    // ---- constructors -------------------------------------------------

    pub fn dirac(location: f64) -> Self {
        Self {
            atoms: vec![(location, 1.0)],
            segments: Vec::new(),
            named_law: None,
            total_mass: 1.0,
            positive: true,
        }
        .canonical()
    }

    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Self {
        let mass = atoms.iter().map(|&(_, w)| w).sum();
        let positive = atoms.iter().all(|&(_, w)| w >= 0.0);
        Self { atoms, segments: Vec::new(), named_law: None, total_mass: mass, positive }
            .canonical()
    }

    /// Uniform atoms of weight 1/N at the sample points.
    pub fn empirical(values: &[f64]) -> Result<Self, MeasureError> {
        if values.is_empty() {
            return Err(MeasureError::EmptySample);
        }
        let w = 1.0 / values.len() as f64;
        Ok(Self::from_atoms(values.iter().map(|&t| (t, w)).collect()))
    }

    pub fn symmetric_bernoulli(c: f64) -> Self {
        let atoms = if c == 0.0 { vec![(0.0, 1.0)] } else { vec![(-c, 0.5), (c, 0.5)] };
        Self {
            atoms,
            segments: Vec::new(),
            named_law: Some(NamedLaw::SymmetricBernoulli { c }),
            total_mass: 1.0,
            positive: true,
        }
        .canonical()
    }

    pub fn semicircle(radius: f64) -> Self {
        Self::semicircle_with(radius, DEFAULT_NODES)
    }

    /// Semicircle discretized by Gauss–Legendre in the angle variable
    /// x = R cos θ, which is spectrally accurate despite the edge roots.
    pub fn semicircle_with(radius: f64, n: usize) -> Self {
        let law = NamedLaw::Semicircle { radius };
        let segment = angular_segment(
            radius,
            n,
            |theta| 2.0 * theta.sin().powi(2) / std::f64::consts::PI,
            |theta| 2.0 * theta.sin() / (std::f64::consts::PI * radius),
        );
        Self {
            atoms: Vec::new(),
            segments: vec![segment],
            named_law: Some(law),
            total_mass: 1.0,
            positive: true,
        }
        .canonical()
    }

    pub fn arcsine(half_width: f64) -> Self {
        Self::arcsine_with(half_width, DEFAULT_NODES)
    }

    pub fn arcsine_with(half_width: f64, n: usize) -> Self {
        let law = NamedLaw::Arcsine { half_width };
        let segment = angular_segment(
            half_width,
            n,
            |_| 1.0 / std::f64::consts::PI,
            |theta| 1.0 / (std::f64::consts::PI * half_width * theta.sin()),
        );
        Self {
            atoms: Vec::new(),
            segments: vec![segment],
            named_law: Some(law),
            total_mass: 1.0,
            positive: true,
        }
        .canonical()
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self::uniform_with(lo, hi, DEFAULT_NODES)
    }

    pub fn uniform_with(lo: f64, hi: f64, n: usize) -> Self {
        assert!(hi > lo, "uniform law needs lo < hi");
        let rho = 1.0 / (hi - lo);
        let segment = constant_segment(lo, hi, rho, n);
        Self {
            atoms: Vec::new(),
            segments: vec![segment],
            named_law: Some(NamedLaw::Uniform { lo, hi }),
            total_mass: 1.0,
            positive: true,
        }
        .canonical()
    }

    pub fn named(law: NamedLaw) -> Self {
        match law {
            NamedLaw::Semicircle { radius } => Self::semicircle(radius),
            NamedLaw::Arcsine { half_width } => Self::arcsine(half_width),
            NamedLaw::Uniform { lo, hi } => Self::uniform(lo, hi),
            NamedLaw::SymmetricBernoulli { c } => Self::symmetric_bernoulli(c),
        }
    }

    /// Signed difference a - b, positivity flag off.
    pub fn signed_difference(a: &Measure, b: &Measure) -> Self {
        let mut atoms = a.atoms.clone();
        atoms.extend(b.atoms.iter().map(|&(t, w)| (t, -w)));
        let mut segments = a.segments.clone();
        segments.extend(b.segments.iter().map(|s| s.scaled_density(-1.0)));
        Self {
            atoms,
            segments,
            named_law: None,
            total_mass: a.total_mass - b.total_mass,
            positive: false,
        }
        .canonical()
    }

    /// Pushforward under x ↦ λx, λ > 0.
    pub fn scaled(&self, lambda: f64) -> Self {
        assert!(lambda > 0.0);
        let atoms = self.atoms.iter().map(|&(t, w)| (t * lambda, w)).collect();
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                lo: s.lo * lambda,
                hi: s.hi * lambda,
                nodes: s.nodes.iter().map(|t| t * lambda).collect(),
                weights: s.weights.iter().map(|w| w * lambda).collect(),
                densities: s.densities.iter().map(|d| d / lambda).collect(),
                profile: match s.profile {
                    SegmentProfile::Generic => SegmentProfile::Generic,
                    SegmentProfile::Constant { density } => {
                        SegmentProfile::Constant { density: density / lambda }
                    }
                },
            })
            .collect();
        let named_law = self.named_law.map(|law| match law {
            NamedLaw::Semicircle { radius } => NamedLaw::Semicircle { radius: radius * lambda },
            NamedLaw::Arcsine { half_width } => {
                NamedLaw::Arcsine { half_width: half_width * lambda }
            }
            NamedLaw::Uniform { lo, hi } => NamedLaw::Uniform { lo: lo * lambda, hi: hi * lambda },
            NamedLaw::SymmetricBernoulli { c } => NamedLaw::SymmetricBernoulli { c: c * lambda },
        });
        Self {
            atoms,
            segments,
            named_law,
            total_mass: self.total_mass,
            positive: self.positive,
        }
        .canonical()
    }

    // ---- bookkeeping ---------------------------------------------------

    fn canonical(mut self) -> Self {
        for (t, _) in &mut self.atoms {
            if *t == 0.0 {
                *t = 0.0; // normalize -0.0
            }
        }
        self.atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(self.atoms.len());
        for &(t, w) in &self.atoms {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 += w,
                _ => merged.push((t, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        self.atoms = merged;
        self.segments.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        self
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        let acc: f64 = self.atoms.iter().map(|&(_, w)| w).sum::<f64>()
            + self.segments.iter().map(|s| s.mass()).sum::<f64>();
        let scale = self.total_mass.abs().max(1.0);
        let defect = (acc - self.total_mass).abs() / scale;
        if defect > MASS_REL_TOL {
            return Err(MeasureError::MassMismatch(defect));
        }
        if self.positive {
            for &(_, w) in &self.atoms {
                if w < 0.0 {
                    return Err(MeasureError::NegativeWeight(w));
                }
            }
            for s in &self.segments {
                for &d in &s.densities {
                    if d < 0.0 {
                        return Err(MeasureError::NegativeWeight(d));
                    }
                }
            }
        }
        if !self.support_radius().is_finite() {
            return Err(MeasureError::BadRecord("infinite support radius".into()));
        }
        if let Some(law) = &self.named_law {
            for k in 0..=4 {
                let closed = law.moment(k).expect("nonnegative moments exist");
                let discrete = self.moment_discretized(k);
                let defect = (closed - discrete).abs();
                if defect > NAMED_LAW_MOMENT_TOL {
                    return Err(MeasureError::NamedLawMismatch { k, defect });
                }
            }
        }
        Ok(())
    }

    /// Support radius R = max over atoms and segment endpoints of |x|.
    pub fn support_radius(&self) -> f64 {
        let a = self.atoms.iter().map(|&(t, _)| t.abs()).fold(0.0, f64::max);
        let s = self
            .segments
            .iter()
            .map(|s| s.lo.abs().max(s.hi.abs()))
            .fold(0.0, f64::max);
        a.max(s)
    }

    /// Distance from the support to 0 (0 when some mass touches the origin).
    pub fn min_support_abs(&self) -> f64 {
        let mut best = f64::INFINITY;
        for &(t, _) in &self.atoms {
            best = best.min(t.abs());
        }
        for s in &self.segments {
            if s.lo <= 0.0 && s.hi >= 0.0 {
                return 0.0;
            }
            best = best.min(s.lo.abs().min(s.hi.abs()));
        }
        if best.is_finite() {
            best
        } else {
            0.0
        }
    }

    /// Σ|weights|, the discretized total variation.
    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|&(_, w)| w.abs()).sum::<f64>()
            + self
                .segments
                .iter()
                .map(|s| {
                    s.weights
                        .iter()
                        .zip(&s.densities)
                        .map(|(w, d)| (w * d).abs())
                        .sum::<f64>()
                })
                .sum::<f64>()
    }

    pub fn is_probability(&self) -> bool {
        self.positive && (self.total_mass - 1.0).abs() <= 1e-9
    }

    // ---- transforms ----------------------------------------------------

    /// m_μ(z), m_μ'(z) or m_μ''(z).
    ///
    /// With a named law present the closed form is used; otherwise atoms are
    /// summed exactly and segments go through their profile (closed form for
    /// constant densities, quadrature nodes otherwise).
    pub fn stieltjes(&self, z: UpperHalfPoint, order: u8) -> Result<Complex64, MeasureError> {
        if order > 2 {
            return Err(MeasureError::UnsupportedOrder(order));
        }
        let zc = z.as_complex();
        if let Some(law) = &self.named_law {
            return Ok(law.stieltjes(zc, order));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for &(t, w) in &self.atoms {
            acc += w * atom_kernel(t, zc, order);
        }
        for s in &self.segments {
            acc += s.stieltjes(zc, order);
        }
        Ok(acc)
    }

    /// The generic node-sum path, ignoring closed forms. This is the
    /// self-check partner of [`Measure::stieltjes`].
    pub fn stieltjes_discretized(
        &self,
        z: UpperHalfPoint,
        order: u8,
    ) -> Result<Complex64, MeasureError> {
        if order > 2 {
            return Err(MeasureError::UnsupportedOrder(order));
        }
        let zc = z.as_complex();
        let mut acc = Complex64::new(0.0, 0.0);
        for &(t, w) in &self.atoms {
            acc += w * atom_kernel(t, zc, order);
        }
        for s in &self.segments {
            acc += s.stieltjes_nodes(zc, order);
        }
        Ok(acc)
    }

    /// ∫ t^k dμ. Negative k requires the support to stay away from 0.
    pub fn moment(&self, k: i32) -> Result<f64, MeasureError> {
        if k < 0 {
            let gap = self.min_support_abs();
            if gap <= 0.0 {
                return Err(MeasureError::SingularMoment(gap));
            }
        }
        if let Some(law) = &self.named_law {
            if let Some(m) = law.moment(k) {
                return Ok(m);
            }
            return Err(MeasureError::SingularMoment(0.0));
        }
        Ok(self.moment_discretized(k))
    }

    fn moment_discretized(&self, k: i32) -> f64 {
        self.atoms.iter().map(|&(t, w)| w * t.powi(k)).sum::<f64>()
            + self.segments.iter().map(|s| s.moment(k)).sum::<f64>()
    }

    // ---- symmetrization -------------------------------------------------

    pub fn is_symmetric(&self) -> bool {
        if let Some(law) = &self.named_law {
            if law.is_symmetric() {
                return true;
            }
        }
        let m = self.clone().canonical();
        let mut mirrored_atoms: Vec<(f64, f64)> =
            m.atoms.iter().map(|&(t, w)| (if t == 0.0 { 0.0 } else { -t }, w)).collect();
        mirrored_atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        if mirrored_atoms != m.atoms {
            return false;
        }
        let mut mirrored_segments: Vec<Segment> = m.segments.iter().map(|s| s.mirrored()).collect();
        mirrored_segments.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        mirrored_segments == m.segments
    }

    /// μ^s(X) = ½(μ(X) + μ(-X)). Idempotent and mass-preserving.
    pub fn symmetrize(&self) -> Measure {
        if self.is_symmetric() {
            return self.clone().canonical();
        }
        let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(2 * self.atoms.len());
        for &(t, w) in &self.atoms {
            if t == 0.0 {
                atoms.push((0.0, w));
            } else {
                atoms.push((t, 0.5 * w));
                atoms.push((-t, 0.5 * w));
            }
        }
        let mut segments: Vec<Segment> = Vec::with_capacity(2 * self.segments.len());
        for s in &self.segments {
            let half = s.scaled_density(0.5);
            segments.push(half.mirrored());
            segments.push(half);
        }
        Measure {
            atoms,
            segments,
            named_law: self.named_law.filter(|l| l.is_symmetric()),
            total_mass: self.total_mass,
            positive: self.positive,
        }
        .canonical()
    }

    // ---- serialization ---------------------------------------------------

    /// Structured text record; round-trips bit-exactly through
    /// [`Measure::from_record`].
    pub fn to_record(&self) -> String {
        serde_json::to_string(&RecordView::from(self)).expect("measure serialization")
    }

    pub fn from_record(text: &str) -> Result<Self, MeasureError> {
        let view: RecordView =
            serde_json::from_str(text).map_err(|e| MeasureError::BadRecord(e.to_string()))?;
        let m = Measure {
            atoms: view.atoms,
            segments: view.segments,
            named_law: view.named_law,
            total_mass: view.mass,
            positive: view.positive,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordView {
    atoms: Vec<(f64, f64)>,
    segments: Vec<Segment>,
    named_law: Option<NamedLaw>,
    mass: f64,
    positive: bool,
}

impl From<&Measure> for RecordView {
    fn from(m: &Measure) -> Self {
        RecordView {
            atoms: m.atoms.clone(),
            segments: m.segments.clone(),
            named_law: m.named_law,
            mass: m.total_mass,
            positive: m.positive,
        }
    }
}

/// Segment discretized through the angle substitution x = r·cos θ.
///
/// `mass_element` gives the measure of dθ at θ (substitution jacobian folded
/// in) and `density_theta` the Lebesgue density at x(θ), parameterized by θ
/// so edge values never cancel to zero. Weights are chosen so that
/// weight × density reproduces the mass element, and nodes are exactly
/// mirror-symmetric.
fn angular_segment(
    r: f64,
    n: usize,
    mass_element: impl Fn(f64) -> f64,
    density_theta: impl Fn(f64) -> f64,
) -> Segment {
    let rule = GaussLegendre::new(n);
    let pts = rule.mapped(0.0, std::f64::consts::PI);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut densities = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // θ runs over [0, π] with GL symmetry about π/2; take the ascending-x
        // half and mirror it so the segment is bitwise symmetric.
        let (theta, w) = pts[n - 1 - i];
        let x = r * theta.cos();
        let d = density_theta(theta);
        nodes[i] = -x.abs();
        densities[i] = d;
        weights[i] = w * mass_element(theta) / d;
        nodes[n - 1 - i] = x.abs();
        densities[n - 1 - i] = d;
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Segment { lo: -r, hi: r, nodes, weights, densities, profile: SegmentProfile::Generic }
}

fn constant_segment(lo: f64, hi: f64, rho: f64, n: usize) -> Segment {
    let rule = GaussLegendre::new(n);
    let pts = rule.mapped(lo, hi);
    Segment {
        lo,
        hi,
        nodes: pts.iter().map(|&(x, _)| x).collect(),
        weights: pts.iter().map(|&(_, w)| w).collect(),
        densities: vec![rho; n],
        profile: SegmentProfile::Constant { density: rho },
    }
}

/// Geometric η schedule for Stieltjes inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSchedule(Vec<f64>);

impl EtaSchedule {
    pub fn new(levels: Vec<f64>) -> Result<Self, MeasureError> {
        if levels.len() < 2 || levels.iter().any(|&e| !(e > 0.0)) {
            return Err(MeasureError::BadEtaSchedule);
        }
        if levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(MeasureError::BadEtaSchedule);
        }
        Ok(Self(levels))
    }

    pub fn geometric(eta0: f64, levels: usize) -> Result<Self, MeasureError> {
        let v: Vec<f64> = (0..levels).map(|k| eta0 * 0.5f64.powi(k as i32)).collect();
        Self::new(v)
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }
}

impl Default for EtaSchedule {
    /// η_k = 0.1 · 2^{-k}, 6 levels.
    fn default() -> Self {
        Self::geometric(0.1, 6).expect("default schedule is valid")
    }
}

/// Density at E by Richardson extrapolation of Im m(E + iη)/π over the
/// schedule. Returns (density, error estimate from the last increment).
pub fn density_at<F>(
    m_fn: F,
    e: f64,
    schedule: &EtaSchedule,
) -> Result<(f64, f64), MeasureError>
where
    F: Fn(UpperHalfPoint) -> Complex64,
{
    let etas = schedule.levels();
    let mut table: Vec<f64> = etas
        .iter()
        .map(|&eta| m_fn(UpperHalfPoint { e, eta }).im / std::f64::consts::PI)
        .collect();
    // Neville extrapolation to η = 0
    let n = table.len();
    let mut prev_diag = table[0];
    let mut last_increment = f64::INFINITY;
    for j in 1..n {
        for i in (j..n).rev() {
            let num = etas[i] * table[i - 1] - etas[i - j] * table[i];
            table[i] = num / (etas[i] - etas[i - j]);
        }
        last_increment = (table[n - 1] - prev_diag).abs();
        prev_diag = table[n - 1];
    }
    Ok((table[n - 1], last_increment))
}
