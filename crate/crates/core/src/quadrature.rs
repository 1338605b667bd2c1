//! Closed-form integrals of exponentials over segments and polygons, and
//! Gauss–Legendre rules for everything else.

use std::sync::OnceLock;

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{self, cdot, cdot_real, Point2};

type C64 = Complex64;

pub const MAX_GAUSS_NODES: usize = 128;

/// Nodes of the tensor rule used when the edge reduction degenerates.
const FALLBACK_NODES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("Gauss-Legendre rule with {0} nodes not available (1..=128)")]
    NodeCount(usize),
    #[error("degenerate polygon (area {0})")]
    DegeneratePolygon(f64),
}

/// Nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// A quadrature rule on a physical segment; weights sum to its length.
#[derive(Clone, Debug)]
pub struct SegmentRule {
    pub points: Vec<Point2>,
    /// Parameters in `[0, 1]` of the points along the segment.
    pub params: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `(e^z - 1) / z`, continuous at 0.
pub fn psi(z: C64) -> C64 {
    if z.norm() < 1e-2 {
        // sum_{j=0}^{7} z^j / (j+1)!
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        for j in 1..8 {
            term = term * z / (j as f64 + 1.0);
            sum += term;
        }
        sum
    } else {
        z.exp_m1() / z
    }
}

trait ExpM1 {
    fn exp_m1(self) -> Self;
}

impl ExpM1 for C64 {
    fn exp_m1(self) -> C64 {
        // exp(a+ib) - 1 = (e^a - 1) cos b - 2 sin^2(b/2) + i e^a sin b
        let (a, b) = (self.re, self.im);
        let s = (0.5 * b).sin();
        C64::new(a.exp_m1() * b.cos() - 2.0 * s * s, a.exp() * b.sin())
    }
}

/// Exact `int_[a,b] e^{w.x} ds`.
pub fn segment_integral_exp(w: [C64; 2], a: Point2, b: Point2) -> C64 {
    let len = a.dist(b);
    let z = cdot_real(w, b - a);
    let za = cdot_real(w, a);
    if z.re > 0.0 && z.norm() >= 1e-2 {
        // e^{za} (e^z - 1)/z written without forming e^z alone
        let zb = cdot_real(w, b);
        return len * (zb.exp() - za.exp()) / z;
    }
    za.exp() * len * psi(z)
}

/// Exact `int_P e^{w.x} dA` for a simple counter-clockwise polygon.
pub fn polygon_integral_exp(w: [C64; 2], polygon: &[Point2]) -> Result<C64, QuadratureError> {
    let area = geometry::signed_area(polygon);
    if polygon.len() < 3 || area.abs() <= 0.0 || !area.is_finite() {
        return Err(QuadratureError::DegeneratePolygon(area));
    }
    let ww = cdot(w, w);
    let wn2 = w[0].norm_sqr() + w[1].norm_sqr();
    if ww.norm() <= 1e-10 * wn2.max(1.0) {
        return Ok(polygon_quadrature(polygon, |x| cdot_real(w, x).exp()));
    }
    let n = polygon.len();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        let t = b - a;
        let len = t.norm();
        let normal = Point2::new(t.y / len, -t.x / len);
        acc += cdot_real(w, normal) * segment_integral_exp(w, a, b);
    }
    Ok(acc / ww)
}

/// Fan triangulation from vertex 0 with a collapsed-square (Duffy) tensor rule.
///
/// Signed triangle areas make the fan valid for non-convex simple polygons too.
pub fn polygon_quadrature<F: Fn(Point2) -> C64>(polygon: &[Point2], f: F) -> C64 {
    let g = gauss_legendre(FALLBACK_NODES).expect("static rule");
    let v0 = polygon[0];
    let mut acc = C64::new(0.0, 0.0);
    for i in 1..polygon.len() - 1 {
        let (v1, v2) = (polygon[i], polygon[i + 1]);
        let twice_area = (v1 - v0).cross(v2 - v0);
        for (&su, &wu) in g.nodes.iter().zip(&g.weights) {
            let u = 0.5 * (su + 1.0);
            for (&sv, &wv) in g.nodes.iter().zip(&g.weights) {
                let v = 0.5 * (sv + 1.0);
                let x = v0 + (v1 - v0) * u + (v2 - v1) * (u * v);
                acc += f(x) * (0.25 * wu * wv * twice_area * u);
            }
        }
    }
    acc
}

fn legendre_rule(n: usize) -> GaussRule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // P_n(x) and P_n'(x) by the three-term recurrence
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussRule { nodes, weights }
}

static RULES: [OnceLock<GaussRule>; MAX_GAUSS_NODES + 1] = [const { OnceLock::new() }; MAX_GAUSS_NODES + 1];

/// Cached `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<&'static GaussRule, QuadratureError> {
    if n == 0 || n > MAX_GAUSS_NODES {
        return Err(QuadratureError::NodeCount(n));
    }
    Ok(RULES[n].get_or_init(|| legendre_rule(n)))
}

/// Node count resolving oscillations of total phase `scale` (e.g. `k * length`).
pub fn nodes_for_scale(scale: f64) -> usize {
    let n = (1.5 * scale.max(0.0) / std::f64::consts::PI).ceil() as usize + 6;
    n.clamp(8, MAX_GAUSS_NODES)
}

/// `n`-point Gauss rule mapped to the segment `[a, b]`.
pub fn segment_rule(a: Point2, b: Point2, n: usize) -> Result<SegmentRule, QuadratureError> {
    let g = gauss_legendre(n)?;
    let half = 0.5 * a.dist(b);
    let params: Vec<f64> = g.nodes.iter().map(|&s| 0.5 * (s + 1.0)).collect();
    Ok(SegmentRule {
        points: params.iter().map(|&t| a + (b - a) * t).collect(),
        params,
        weights: g.weights.iter().map(|&w| w * half).collect(),
    })
}

/// `int_[a,b] f ds` with the oscillation-aware node count for `oscillation_scale`.
///
/// The integrand receives the point and its parameter in `[0, 1]`.
pub fn facet_integral<F, E>(f: F, a: Point2, b: Point2, oscillation_scale: f64) -> Result<C64, E>
where
    F: Fn(Point2, f64) -> Result<C64, E>,
{
    let rule = segment_rule(a, b, nodes_for_scale(oscillation_scale)).expect("node count is clamped");
    let mut acc = C64::new(0.0, 0.0);
    for ((&p, &t), &w) in rule.points.iter().zip(&rule.params).zip(&rule.weights) {
        acc += f(p, t)? * w;
    }
    Ok(acc)
}
