//! Norms, errors and diagnostics: skeleton norms, domain L^2 errors,
//! empirical convergence orders, the L^2/skeleton ratio diagnostic, best
//! approximation in a skeleton norm, and plane-wave conditioning sweeps.
//!
//! Skeleton norms are evaluated by direct facet quadrature of the squared
//! trace terms and do not share any integration code with `forms`.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::basis::{equispaced_directions, BasisError, Direction, LocalSpace};
use crate::forms::{
    fundamental_solution, product_nodes, trace_oscillation, BoundaryData, DofMap, FacetFlux, FluxParameters, FormsError,
    GradJumpMode, LsWeights, Weight,
};
use crate::geometry::{cdot_real, point_in_polygon, Point2};
use crate::linalg::{self, CMatrix, LinalgError, COND_SATURATION};
use crate::mesh::{BoundaryTag, FacetKind, Mesh};
use crate::quadrature::{gauss_legendre, nodes_for_scale, polygon_integral_exp, segment_rule, QuadratureError};
use crate::specialfn::{bessel_j_int, SpecialFnError};

type C64 = Complex64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("exact solution has zero L2 norm")]
    ZeroExactNorm,
    #[error("mesh sizes must strictly decrease (violated at record {0})")]
    NonMonotoneH(usize),
    #[error("errors must be positive (record {0})")]
    NonPositiveError(usize),
    #[error("skeleton norm vanished for a nonzero Trefftz function (trial {0})")]
    ZeroSkeletonNorm(usize),
    #[error("pole {0:?} of the fundamental solution lies in the closed domain")]
    PoleInsideDomain(Point2),
    #[error("point {0:?} is outside the mesh")]
    OutsideMesh(Point2),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Forms(#[from] FormsError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    SpecialFn(#[from] SpecialFnError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// A function with traces on every element: `eval_on(e, x)` is the value and
/// gradient of the restriction to element `e`.
pub trait PiecewiseField: Sync {
    fn eval_on(&self, element: usize, x: Point2) -> Result<(C64, [C64; 2]), AnalysisError>;

    /// Variation budget along `[a, b]` beyond `k |b - a|`, for node counts.
    fn oscillation(&self, _element: usize, _a: Point2, _b: Point2) -> f64 {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Exact solutions

/// Manufactured Helmholtz solutions.
#[derive(Clone, Debug, PartialEq)]
pub enum ExactSolution {
    /// `e^{i k d . x}`.
    PlaneWave { k: f64, direction: Direction },
    /// `J_l(k r) e^{i l theta}` about `center`.
    FourierBessel { k: f64, center: Point2, order: i64 },
    /// `H_0^(1)(k |x - pole|)`.
    Fundamental { k: f64, pole: Point2 },
}

impl ExactSolution {
    pub fn k(&self) -> f64 {
        match *self {
            ExactSolution::PlaneWave { k, .. }
            | ExactSolution::FourierBessel { k, .. }
            | ExactSolution::Fundamental { k, .. } => k,
        }
    }

    pub fn eval(&self, x: Point2) -> Result<(C64, [C64; 2]), AnalysisError> {
        match self {
            ExactSolution::PlaneWave { k, direction } => {
                let d = direction.components();
                let ikd = [I * *k * d[0], I * *k * d[1]];
                let u = cdot_real(ikd, x).exp();
                Ok((u, [ikd[0] * u, ikd[1] * u]))
            }
            &ExactSolution::FourierBessel { k, center, order } => {
                let r = x - center;
                let rho = r.norm();
                let theta = r.y.atan2(r.x);
                let wave = |l: i64| -> Result<C64, AnalysisError> {
                    Ok(bessel_j_int(l, k * rho)? * C64::from_polar(1.0, l as f64 * theta))
                };
                let u = wave(order)?;
                // (dx + i dy) W_l = -k W_{l+1},  (dx - i dy) W_l = k W_{l-1}
                let plus = -k * wave(order + 1)?;
                let minus = k * wave(order - 1)?;
                Ok((u, [(plus + minus) * 0.5, (plus - minus) / (2.0 * I)]))
            }
            &ExactSolution::Fundamental { k, pole } => {
                if x.dist(pole) == 0.0 {
                    return Err(AnalysisError::PoleInsideDomain(pole));
                }
                Ok(fundamental_solution(k, x, pole)?)
            }
        }
    }

    /// Rejects fundamental solutions whose pole lies in the closed mesh domain.
    pub fn validate(&self, mesh: &Mesh) -> Result<(), AnalysisError> {
        if let ExactSolution::Fundamental { pole, .. } = *self {
            let tol = 1e-12 * mesh.h();
            let on_boundary = mesh
                .facets()
                .iter()
                .any(|f| crate::geometry::point_segment_distance(pole, f.a, f.b) <= tol);
            if mesh.locate(pole).is_some() || on_boundary {
                return Err(AnalysisError::PoleInsideDomain(pole));
            }
        }
        Ok(())
    }

    /// `g_D = u`, `g_R = d_n u + i k theta u`.
    pub fn boundary_data(&self, theta: f64) -> Result<BoundaryData, AnalysisError> {
        let me = self.clone();
        let k = self.k();
        Ok(BoundaryData::from_field(move |x| me.eval(x).unwrap_or((C64::new(f64::NAN, 0.0), [ZERO; 2])), k, theta)?)
    }

    /// `g_D = u`, `g_N = d_n u` for the single-element schemes.
    pub fn neumann_data(&self) -> BoundaryData {
        let me = self.clone();
        BoundaryData::neumann_from_field(move |x| me.eval(x).unwrap_or((C64::new(f64::NAN, 0.0), [ZERO; 2])))
    }
}

impl PiecewiseField for ExactSolution {
    fn eval_on(&self, _element: usize, x: Point2) -> Result<(C64, [C64; 2]), AnalysisError> {
        self.eval(x)
    }

    fn oscillation(&self, _element: usize, a: Point2, b: Point2) -> f64 {
        let len = a.dist(b);
        match self {
            ExactSolution::PlaneWave { k, direction } => {
                let d = direction.components();
                k * len * (d[0].norm_sqr() + d[1].norm_sqr()).sqrt()
            }
            ExactSolution::FourierBessel { order, .. } => std::f64::consts::PI * order.unsigned_abs() as f64,
            ExactSolution::Fundamental { pole, .. } => {
                len / crate::geometry::point_segment_distance(*pole, a, b).max(1e-300)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Discrete solutions

/// Coefficients over the global Trefftz space.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSolution {
    pub spaces: Vec<LocalSpace>,
    pub coeffs: Vec<C64>,
    pub dof_map: DofMap,
}

impl DiscreteSolution {
    pub fn new(spaces: Vec<LocalSpace>, coeffs: Vec<C64>) -> Result<Self, AnalysisError> {
        let dof_map = DofMap::new(&spaces);
        if dof_map.total() != coeffs.len() {
            return Err(AnalysisError::Parameter(format!(
                "{} coefficients for {} degrees of freedom",
                coeffs.len(),
                dof_map.total()
            )));
        }
        Ok(Self { spaces, coeffs, dof_map })
    }

    pub fn zero(spaces: Vec<LocalSpace>) -> Self {
        let n = DofMap::new(&spaces).total();
        Self::new(spaces, vec![ZERO; n]).expect("sizes agree")
    }

    pub fn local_coeffs(&self, e: usize) -> &[C64] {
        &self.coeffs[self.dof_map.range(e)]
    }

    /// Value and gradient at `x`, or `None` outside the mesh.
    pub fn eval(&self, mesh: &Mesh, x: Point2) -> Result<Option<(C64, [C64; 2])>, AnalysisError> {
        match mesh.locate(x) {
            Some(e) => Ok(Some(self.eval_on(e, x)?)),
            None => Ok(None),
        }
    }
}

impl PiecewiseField for DiscreteSolution {
    fn eval_on(&self, element: usize, x: Point2) -> Result<(C64, [C64; 2]), AnalysisError> {
        let ev = self.spaces[element].eval(x)?;
        Ok(ev.combine(self.local_coeffs(element)))
    }

    fn oscillation(&self, element: usize, a: Point2, b: Point2) -> f64 {
        trace_oscillation(&self.spaces[element], a, b)
    }
}

/// `a - b`.
pub struct Difference<'a> {
    pub a: &'a dyn PiecewiseField,
    pub b: &'a dyn PiecewiseField,
}

impl PiecewiseField for Difference<'_> {
    fn eval_on(&self, element: usize, x: Point2) -> Result<(C64, [C64; 2]), AnalysisError> {
        let (u, gu) = self.a.eval_on(element, x)?;
        let (v, gv) = self.b.eval_on(element, x)?;
        Ok((u - v, [gu[0] - gv[0], gu[1] - gv[1]]))
    }

    fn oscillation(&self, element: usize, a: Point2, b: Point2) -> f64 {
        self.a.oscillation(element, a, b).max(self.b.oscillation(element, a, b))
    }
}

/// `c * f`.
pub struct Scaled<'a> {
    pub c: C64,
    pub f: &'a dyn PiecewiseField,
}

impl PiecewiseField for Scaled<'_> {
    fn eval_on(&self, element: usize, x: Point2) -> Result<(C64, [C64; 2]), AnalysisError> {
        let (u, g) = self.f.eval_on(element, x)?;
        Ok((self.c * u, [self.c * g[0], self.c * g[1]]))
    }

    fn oscillation(&self, element: usize, a: Point2, b: Point2) -> f64 {
        self.f.oscillation(element, a, b)
    }
}

/// MFS approximation `sum_l c_l H_0^(1)(k |x - y_l|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MfsSolution {
    pub k: f64,
    pub poles: Vec<Point2>,
    pub coeffs: Vec<C64>,
}

impl MfsSolution {
    pub fn eval(&self, x: Point2) -> Result<(C64, [C64; 2]), AnalysisError> {
        let mut v = ZERO;
        let mut g = [ZERO; 2];
        for (&y, &c) in self.poles.iter().zip(&self.coeffs) {
            let (h, dh) = fundamental_solution(self.k, x, y)?;
            v += c * h;
            g[0] += c * dh[0];
            g[1] += c * dh[1];
        }
        Ok((v, g))
    }
}

impl PiecewiseField for MfsSolution {
    fn eval_on(&self, _element: usize, x: Point2) -> Result<(C64, [C64; 2]), AnalysisError> {
        self.eval(x)
    }
}

// ---------------------------------------------------------------------------
// Skeleton norms

/// Which norm to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub enum NormSpec {
    /// `sigma^2 |[d_n v]|^2 + lambda^2 |[v]_N|^2` inside, impedance and value traces on the boundary.
    LambdaSigma { lambda: Weight, sigma: Weight },
    Tdg(FluxParameters),
    TdgPlus(FluxParameters),
    /// `J(v; 0, 0)` of the least-squares functional.
    Ls(LsWeights),
    L2Domain,
}

/// Trace functionals entering the skeleton norms. On interior facets side 1
/// is the lower-numbered element and `n` its outward normal.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Trace {
    JumpValue,
    JumpNormalGrad,
    JumpGradX,
    JumpGradY,
    AvgValue,
    AvgGradX,
    AvgGradY,
    Value,
    NormalGrad,
    /// `d_n v + i k theta v`.
    Impedance,
}

/// Weighted trace terms `(weight, functional)` of `spec` on facet `fi`.
fn norm_terms(spec: &NormSpec, mesh: &Mesh, fi: usize, k: f64, theta: f64) -> Result<Vec<(f64, Trace)>, AnalysisError> {
    let f = &mesh.facets()[fi];
    let interior = f.is_interior();
    let tag = f.tag();
    use Trace::*;
    Ok(match spec {
        NormSpec::LambdaSigma { lambda, sigma } => {
            let (l, s) = (lambda.value(k, f.length), sigma.value(k, f.length));
            if !(l > 0.0 && s > 0.0) {
                return Err(AnalysisError::Parameter(format!("weights must be positive on facet {fi}")));
            }
            match tag {
                None => vec![(s * s, JumpNormalGrad), (l * l, JumpValue)],
                Some(BoundaryTag::Robin) => vec![(s * s, Impedance)],
                Some(BoundaryTag::Dirichlet) => vec![(l * l, Value)],
            }
        }
        NormSpec::Ls(w) => {
            let (l, s) = w.at(mesh, k, fi)?;
            match tag {
                None => match w.mode {
                    GradJumpMode::Full => vec![(l * l, JumpValue), (s * s, JumpGradX), (s * s, JumpGradY)],
                    GradJumpMode::NormalOnly => vec![(l * l, JumpValue), (s * s, JumpNormalGrad)],
                },
                Some(BoundaryTag::Robin) => vec![(s * s, Impedance)],
                Some(BoundaryTag::Dirichlet) => vec![(l * l, Value)],
            }
        }
        NormSpec::Tdg(flux) | NormSpec::TdgPlus(flux) => {
            let plus = matches!(spec, NormSpec::TdgPlus(_));
            let FacetFlux { alpha, beta, delta } = flux.at(mesh, k, fi)?;
            let mut t = match tag {
                None => vec![(beta / k, JumpNormalGrad), (k * alpha, JumpValue)],
                Some(BoundaryTag::Robin) => vec![(delta / (k * theta), NormalGrad), (k * (1.0 - delta) * theta, Value)],
                Some(BoundaryTag::Dirichlet) => vec![(k * alpha, Value)],
            };
            if plus {
                match tag {
                    None => t.extend([(k / beta, AvgValue), (1.0 / (k * alpha), AvgGradX), (1.0 / (k * alpha), AvgGradY)]),
                    Some(BoundaryTag::Robin) => t.push((k * theta / delta, Value)),
                    Some(BoundaryTag::Dirichlet) => t.push((1.0 / (k * alpha), NormalGrad)),
                }
            }
            debug_assert!(interior == tag.is_none());
            t
        }
        NormSpec::L2Domain => Vec::new(),
    })
}

/// Value of a trace functional from the side traces `(v1, g1)` and optional `(v2, g2)`.
fn apply_trace(t: Trace, n: Point2, k: f64, theta: f64, s1: (C64, [C64; 2]), s2: Option<(C64, [C64; 2])>) -> C64 {
    let (v1, g1) = s1;
    let (v2, g2) = s2.unwrap_or((ZERO, [ZERO; 2]));
    let dn1 = cdot_real(g1, n);
    let dn2 = cdot_real(g2, n);
    match t {
        Trace::JumpValue => v1 - v2,
        Trace::JumpNormalGrad => dn1 - dn2,
        Trace::JumpGradX => g1[0] - g2[0],
        Trace::JumpGradY => g1[1] - g2[1],
        Trace::AvgValue => (v1 + v2) * 0.5,
        Trace::AvgGradX => (g1[0] + g2[0]) * 0.5,
        Trace::AvgGradY => (g1[1] + g2[1]) * 0.5,
        Trace::Value => v1,
        Trace::NormalGrad => dn1,
        Trace::Impedance => dn1 + I * k * theta * v1,
    }
}

/// Facet quadrature rule resolving the field traces on facet `fi`.
fn facet_rule(mesh: &Mesh, fi: usize, k: f64, field: &dyn PiecewiseField) -> crate::quadrature::SegmentRule {
    let f = &mesh.facets()[fi];
    let osc = match f.kind {
        FacetKind::Interior { k1, k2 } => field.oscillation(k1, f.a, f.b).max(field.oscillation(k2, f.a, f.b)),
        FacetKind::Boundary { element, .. } => field.oscillation(element, f.a, f.b),
    };
    segment_rule(f.a, f.b, product_nodes(2.0 * (k * f.length + osc))).expect("node count is clamped")
}

/// Squared skeleton norm split per facet.
pub fn skeleton_norm_sq_per_facet(
    field: &dyn PiecewiseField,
    spec: &NormSpec,
    mesh: &Mesh,
    k: f64,
    theta: f64,
) -> Result<Vec<f64>, AnalysisError> {
    (0..mesh.facets().len())
        .map(|fi| {
            let f = &mesh.facets()[fi];
            let terms = norm_terms(spec, mesh, fi, k, theta)?;
            if terms.is_empty() {
                return Ok(0.0);
            }
            let rule = facet_rule(mesh, fi, k, field);
            let mut acc = 0.0;
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                let (s1, s2) = match f.kind {
                    FacetKind::Interior { k1, k2 } => (field.eval_on(k1, x)?, Some(field.eval_on(k2, x)?)),
                    FacetKind::Boundary { element, .. } => (field.eval_on(element, x)?, None),
                };
                for &(wt, t) in &terms {
                    acc += w * wt * apply_trace(t, f.normal, k, theta, s1, s2).norm_sqr();
                }
            }
            Ok(acc)
        })
        .collect()
}

/// Skeleton norm (or the domain L^2 norm for `NormSpec::L2Domain`).
pub fn skeleton_norm(
    field: &dyn PiecewiseField,
    spec: &NormSpec,
    mesh: &Mesh,
    k: f64,
    theta: f64,
) -> Result<f64, AnalysisError> {
    if *spec == NormSpec::L2Domain {
        return Ok(l2_norm_sq(field, mesh, k, 1)?.sqrt());
    }
    Ok(skeleton_norm_sq_per_facet(field, spec, mesh, k, theta)?.iter().sum::<f64>().sqrt())
}

/// Least-squares functional `J(v; g_R, g_D)` by direct quadrature.
pub fn ls_functional(
    field: &dyn PiecewiseField,
    mesh: &Mesh,
    weights: &LsWeights,
    data: &BoundaryData,
    k: f64,
) -> Result<f64, AnalysisError> {
    let theta = data.theta;
    let mut acc = 0.0;
    for (fi, f) in mesh.facets().iter().enumerate() {
        let terms = norm_terms(&NormSpec::Ls(*weights), mesh, fi, k, theta)?;
        let rule = facet_rule(mesh, fi, k, field);
        for (&x, &w) in rule.points.iter().zip(&rule.weights) {
            let (s1, s2) = match f.kind {
                FacetKind::Interior { k1, k2 } => (field.eval_on(k1, x)?, Some(field.eval_on(k2, x)?)),
                FacetKind::Boundary { element, .. } => (field.eval_on(element, x)?, None),
            };
            for &(wt, t) in &terms {
                let datum = match (f.tag(), t) {
                    (Some(BoundaryTag::Robin), Trace::Impedance) => (data.g_r)(x, f.normal),
                    (Some(BoundaryTag::Dirichlet), Trace::Value) => (data.g_d)(x, f.normal),
                    _ => ZERO,
                };
                acc += w * wt * (apply_trace(t, f.normal, k, theta, s1, s2) - datum).norm_sqr();
            }
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Domain integrals

/// Tensor Gauss rule on each fan triangle of the polygon (collapsed square),
/// `n` points per direction. Signed weights keep non-convex fans exact.
fn polygon_rule(poly: &[Point2], n: usize) -> Vec<(Point2, f64)> {
    let g = gauss_legendre(n).expect("node count is clamped");
    let mut out = Vec::with_capacity((poly.len() - 2) * n * n);
    let v0 = poly[0];
    for i in 1..poly.len() - 1 {
        let (e1, e2) = (poly[i] - v0, poly[i + 1] - poly[i]);
        let jac = e1.cross(e2);
        for (&su, &wu) in g.nodes.iter().zip(&g.weights) {
            let u = 0.5 * (su + 1.0);
            for (&st, &wt) in g.nodes.iter().zip(&g.weights) {
                let t = 0.5 * (st + 1.0);
                out.push((v0 + (e1 + e2 * t) * u, 0.25 * wu * wt * u * jac));
            }
        }
    }
    out
}

fn element_nodes(field: &dyn PiecewiseField, mesh: &Mesh, e: usize, k: f64, factor: usize) -> usize {
    let poly = mesh.polygon(e);
    let (mut lo, mut hi) = (poly[0], poly[0]);
    for p in &poly {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let diam = mesh.metrics(e).diameter;
    let n = nodes_for_scale(2.0 * (k * diam + field.oscillation(e, lo, hi))) + 8;
    (n * factor).min(crate::quadrature::MAX_GAUSS_NODES)
}

/// `||v||^2_{L^2(Omega)}` with `factor` times the default node count per direction.
pub fn l2_norm_sq(field: &dyn PiecewiseField, mesh: &Mesh, k: f64, factor: usize) -> Result<f64, AnalysisError> {
    let parts: Vec<f64> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let rule = polygon_rule(&mesh.polygon(e), element_nodes(field, mesh, e, k, factor));
            let mut acc = 0.0;
            for (x, w) in rule {
                acc += w * field.eval_on(e, x)?.0.norm_sqr();
            }
            Ok(acc)
        })
        .collect::<Result<_, AnalysisError>>()?;
    Ok(parts.iter().sum())
}

/// Relative `L^2(Omega)` error `||u - u_h|| / ||u||`.
pub fn l2_domain_error(u_h: &dyn PiecewiseField, u: &dyn PiecewiseField, mesh: &Mesh, k: f64) -> Result<f64, AnalysisError> {
    l2_domain_error_with(u_h, u, mesh, k, 1)
}

/// As [`l2_domain_error`] with `factor` times the default node count.
pub fn l2_domain_error_with(
    u_h: &dyn PiecewiseField,
    u: &dyn PiecewiseField,
    mesh: &Mesh,
    k: f64,
    factor: usize,
) -> Result<f64, AnalysisError> {
    let nu = l2_norm_sq(u, mesh, k, factor)?;
    if nu <= 0.0 {
        return Err(AnalysisError::ZeroExactNorm);
    }
    let diff = Difference { a: u, b: u_h };
    Ok((l2_norm_sq(&diff, mesh, k, factor)? / nu).sqrt())
}

/// Relative `L^2` error on the disc of radius `radius` about `center`
/// (Gauss in the radius, trapezoidal rule in the angle). Used for mesh-free
/// MFS runs.
pub fn disc_l2_error(
    u_h: &dyn PiecewiseField,
    u: &dyn PiecewiseField,
    center: Point2,
    radius: f64,
    k: f64,
) -> Result<f64, AnalysisError> {
    if !(radius > 0.0) {
        return Err(AnalysisError::Parameter("disc radius must be positive".into()));
    }
    let nr = (nodes_for_scale(2.0 * k * radius) + 24).min(crate::quadrature::MAX_GAUSS_NODES);
    let nt = 4 * (k * radius).ceil() as usize + 256;
    let g = gauss_legendre(nr)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (&s, &w) in g.nodes.iter().zip(&g.weights) {
        let r = 0.5 * radius * (s + 1.0);
        let wr = 0.5 * radius * w * r * std::f64::consts::TAU / nt as f64;
        for j in 0..nt {
            let t = std::f64::consts::TAU * j as f64 / nt as f64;
            let x = center + Point2::new(t.cos(), t.sin()) * r;
            let (a, b) = (u.eval_on(0, x)?.0, u_h.eval_on(0, x)?.0);
            num += wr * (a - b).norm_sqr();
            den += wr * a.norm_sqr();
        }
    }
    if den <= 0.0 {
        return Err(AnalysisError::ZeroExactNorm);
    }
    Ok((num / den).sqrt())
}

// ---------------------------------------------------------------------------
// Convergence orders

/// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})` for consecutive `(h, error)` records.
pub fn eoc(records: &[(f64, f64)]) -> Result<Vec<f64>, AnalysisError> {
    for (i, &(h, e)) in records.iter().enumerate() {
        if !(e > 0.0) {
            return Err(AnalysisError::NonPositiveError(i));
        }
        if i > 0 && !(h < records[i - 1].0) {
            return Err(AnalysisError::NonMonotoneH(i));
        }
    }
    Ok(records.windows(2).map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln()).collect())
}

// ---------------------------------------------------------------------------
// Random Trefftz functions and the L^2 / skeleton ratio

/// Complex standard normal vector `(N(0,1) + i N(0,1)) / sqrt 2`.
pub fn random_coefficients(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re * s, im * s)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MowReport {
    /// Largest observed `||v||_{L^2} / |||v|||_{lambda,sigma}`.
    pub supremum: f64,
    pub ratios: Vec<f64>,
}

/// Monte-Carlo lower bound for the constant in `||v||_{L^2} <= C |||v|||_{lambda,sigma}`.
#[allow(clippy::too_many_arguments)]
pub fn mow_ratio(
    mesh: &Mesh,
    spaces: &[LocalSpace],
    lambda: Weight,
    sigma: Weight,
    k: f64,
    theta: f64,
    trials: usize,
    seed: u64,
) -> Result<MowReport, AnalysisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = DofMap::new(spaces).total();
    let spec = NormSpec::LambdaSigma { lambda, sigma };
    let coeffs: Vec<Vec<C64>> = (0..trials).map(|_| random_coefficients(&mut rng, n)).collect();
    let ratios = coeffs
        .into_par_iter()
        .enumerate()
        .map(|(i, c)| {
            let v = DiscreteSolution::new(spaces.to_vec(), c)?;
            let sk = skeleton_norm(&v, &spec, mesh, k, theta)?;
            if !(sk > 0.0) {
                return Err(AnalysisError::ZeroSkeletonNorm(i));
            }
            Ok(l2_norm_sq(&v, mesh, k, 1)?.sqrt() / sk)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let supremum = ratios.iter().copied().fold(0.0, f64::max);
    Ok(MowReport { supremum, ratios })
}

// ---------------------------------------------------------------------------
// Best approximation in a skeleton norm

#[derive(Clone, Debug, PartialEq)]
pub struct BestApproximation {
    pub coeffs: Vec<C64>,
    /// `min_v |||u - v|||`.
    pub distance: f64,
}

/// Minimizes `|||u - v|||` over the discrete space by a QR least-squares solve
/// of the stacked, quadrature-weighted trace functionals.
pub fn best_approximation(
    u: &dyn PiecewiseField,
    spaces: &[LocalSpace],
    spec: &NormSpec,
    mesh: &Mesh,
    k: f64,
    theta: f64,
) -> Result<BestApproximation, AnalysisError> {
    if *spec == NormSpec::L2Domain {
        return Err(AnalysisError::Parameter("best approximation is defined for skeleton norms".into()));
    }
    let dofs = DofMap::new(spaces);
    let n = dofs.total();
    let mut rows: Vec<Vec<C64>> = Vec::new();
    let mut rhs: Vec<C64> = Vec::new();
    let zero = DiscreteSolution::zero(spaces.to_vec());
    for (fi, f) in mesh.facets().iter().enumerate() {
        let terms = norm_terms(spec, mesh, fi, k, theta)?;
        let rule = facet_rule(mesh, fi, k, &Difference { a: u, b: &zero });
        let sides: Vec<(usize, f64)> = match f.kind {
            FacetKind::Interior { k1, k2 } => vec![(k1, 1.0), (k2, -1.0)],
            FacetKind::Boundary { element, .. } => vec![(element, 1.0)],
        };
        for (&x, &w) in rule.points.iter().zip(&rule.weights) {
            let evs: Vec<_> = sides.iter().map(|&(e, _)| spaces[e].eval(x)).collect::<Result<_, _>>()?;
            let us: Vec<_> = sides.iter().map(|&(e, _)| u.eval_on(e, x)).collect::<Result<_, _>>()?;
            for &(wt, t) in &terms {
                let s = (w * wt).sqrt();
                let mut row = vec![ZERO; n];
                for (side, &(e, _)) in sides.iter().enumerate() {
                    for (l, (&v, &g)) in evs[side].values.iter().zip(&evs[side].gradients).enumerate() {
                        // contribution of a member living on one side only
                        let tr = if side == 0 {
                            apply_trace(t, f.normal, k, theta, (v, g), sides.get(1).map(|_| (ZERO, [ZERO; 2])))
                        } else {
                            apply_trace(t, f.normal, k, theta, (ZERO, [ZERO; 2]), Some((v, g)))
                        };
                        row[dofs.global(e, l)] = tr * s;
                    }
                }
                let ut = apply_trace(t, f.normal, k, theta, us[0], us.get(1).copied());
                rows.push(row);
                rhs.push(ut * s);
            }
        }
    }
    let a = CMatrix::from_rows(&rows);
    let sol = linalg::qr_least_squares(&a, &rhs)?;
    let v = DiscreteSolution::new(spaces.to_vec(), sol.solution.clone())?;
    let distance = skeleton_norm(&Difference { a: u, b: &v }, spec, mesh, k, theta)?;
    Ok(BestApproximation { coeffs: sol.solution, distance })
}

// ---------------------------------------------------------------------------
// Conditioning

/// Plane-wave mass matrix `M[l, m] = int_K e^{ik d_l.(x - x_K)} conj(e^{ik d_m.(x - x_K)})`
/// on the square of side `h` centred at `center`.
pub fn pw_mass_matrix(h: f64, center: Point2, k: f64, directions: &[Direction]) -> Result<CMatrix, AnalysisError> {
    let r = 0.5 * h;
    // integrate in coordinates relative to the centre
    let square = [Point2::new(-r, -r), Point2::new(r, -r), Point2::new(r, r), Point2::new(-r, r)];
    let _ = center;
    let p = directions.len();
    let mut m = CMatrix::zeros(p, p);
    for l in 0..p {
        for j in 0..p {
            let (dl, dj) = (directions[l].components(), directions[j].components());
            let w = [I * k * dl[0] + (I * k * dj[0]).conj(), I * k * dl[1] + (I * k * dj[1]).conj()];
            m[(l, j)] = if w[0] == ZERO && w[1] == ZERO {
                C64::from(h * h)
            } else {
                polygon_integral_exp(w, &square)?
            };
        }
    }
    Ok(m)
}

/// `L^2(K)` Gram matrix `G[l, m] = int_K phi_m conj(phi_l)` of a local space by quadrature.
pub fn element_gram(space: &LocalSpace, poly: &[Point2], n: usize) -> Result<CMatrix, AnalysisError> {
    let d = space.dim();
    let mut g = CMatrix::zeros(d, d);
    for (x, w) in polygon_rule(poly, n) {
        let ev = space.eval(x)?;
        for l in 0..d {
            let vl = ev.values[l].conj() * w;
            for (o, vm) in g.row_mut(l).iter_mut().zip(&ev.values) {
                *o += vm * vl;
            }
        }
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepFamily {
    PlaneWave,
    /// Scaled generalized harmonic polynomials; order `q` gives `2q + 1` members.
    Ghp,
}

impl SweepFamily {
    pub fn name(self) -> &'static str {
        match self {
            SweepFamily::PlaneWave => "pw",
            SweepFamily::Ghp => "ghp",
        }
    }
}

/// Condition numbers of element mass/Gram matrices on squares of side `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningSweep {
    pub family: SweepFamily,
    pub k: f64,
    /// Square side lengths.
    pub hs: Vec<f64>,
    /// `p` for plane waves, `q` for GHP.
    pub orders: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningRecord {
    pub family: SweepFamily,
    pub p_or_q: usize,
    pub k: f64,
    pub h: f64,
    pub kh: f64,
    pub cond2: f64,
    pub saturated: bool,
}

pub const CONDITIONING_CSV_HEADER: &str = "family,p_or_q,k,h,kh,cond2,saturated";

fn cond_of(family: SweepFamily, order: usize, k: f64, h: f64) -> Result<f64, AnalysisError> {
    let m = match family {
        SweepFamily::PlaneWave => pw_mass_matrix(h, Point2::default(), k, &equispaced_directions(order)?)?,
        SweepFamily::Ghp => {
            let r = 0.5 * h;
            let square = [Point2::new(-r, -r), Point2::new(r, -r), Point2::new(r, r), Point2::new(-r, r)];
            let space = LocalSpace::ghp(0, Point2::default(), h * std::f64::consts::SQRT_2, k, order, true)?;
            let n = (nodes_for_scale(2.0 * k * h + std::f64::consts::PI * order as f64) + 8).min(64);
            let g = element_gram(&space, &square, n)?;
            let gh = g.adjoint();
            CMatrix::from_fn(g.rows(), g.cols(), |i, j| (g[(i, j)] + gh[(i, j)]) * 0.5)
        }
    };
    Ok(linalg::svd_cond(&m).cond2)
}

/// Runs the sweep; for each `h`, orders stop growing after the first
/// saturated record (`cond2 > 1e15`), which is kept and flagged.
pub fn conditioning_sweep(spec: &ConditioningSweep) -> Result<Vec<ConditioningRecord>, AnalysisError> {
    if !(spec.k > 0.0) || spec.hs.iter().any(|&h| !(h > 0.0)) {
        return Err(AnalysisError::Parameter("sweep needs positive k and h".into()));
    }
    if spec.orders.iter().any(|&p| spec.family == SweepFamily::PlaneWave && p == 0) {
        return Err(AnalysisError::Parameter("plane-wave sweeps need p >= 1".into()));
    }
    let grid: Vec<(usize, f64)> = spec.orders.iter().flat_map(|&p| spec.hs.iter().map(move |&h| (p, h))).collect();
    let conds: Vec<f64> = grid
        .par_iter()
        .map(|&(p, h)| cond_of(spec.family, p, spec.k, h))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    let mut stopped = vec![false; spec.hs.len()];
    for (&(p, h), &cond2) in grid.iter().zip(&conds) {
        let hi = spec.hs.iter().position(|&x| x == h).expect("h from the list");
        if stopped[hi] {
            continue;
        }
        let saturated = !(cond2 <= COND_SATURATION);
        stopped[hi] = saturated;
        out.push(ConditioningRecord { family: spec.family, p_or_q: p, k: spec.k, h, kh: spec.k * h, cond2, saturated });
    }
    Ok(out)
}

/// Formats a float for CSV: shortest round-trip form, `inf` for infinities, empty for NaN.
pub fn csv_float(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

pub fn conditioning_csv(records: &[ConditioningRecord]) -> String {
    let mut s = String::from(CONDITIONING_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.family.name(),
            r.p_or_q,
            csv_float(r.k),
            csv_float(r.h),
            csv_float(r.kh),
            csv_float(r.cond2),
            r.saturated
        );
    }
    s
}

// ---------------------------------------------------------------------------
// Study records

pub const STUDY_CSV_HEADER: &str = "level,h,p,dofs,err_L2,err_TDG,err_LS,cond2,assemble_ms,solve_ms";

/// One row of a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyRecord {
    pub level: usize,
    pub h: f64,
    pub p: usize,
    pub dofs: usize,
    pub err_l2: f64,
    /// Relative error in the TDG norm.
    pub err_tdg: f64,
    /// Relative error in the LS norm.
    pub err_ls: f64,
    /// `NaN` when not computed (written as an empty cell).
    pub cond2: f64,
    pub assemble_ms: f64,
    pub solve_ms: f64,
}

pub fn study_csv(records: &[StudyRecord]) -> String {
    let mut s = String::from(STUDY_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.level,
            csv_float(r.h),
            r.p,
            r.dofs,
            csv_float(r.err_l2),
            csv_float(r.err_tdg),
            csv_float(r.err_ls),
            csv_float(r.cond2),
            csv_float(r.assemble_ms),
            csv_float(r.solve_ms)
        );
    }
    s
}

/// Whether `p` lies inside the polygon (closed).
pub fn polygon_contains(poly: &[Point2], p: Point2) -> bool {
    point_in_polygon(p, poly, 1e-12)
}
