//! Element-local Trefftz spaces: plane and evanescent waves, generalized
//! harmonic polynomials (circular waves), multipoles, fundamental solutions,
//! wave-based-method wave functions and corner waves.
//!
//! Every member `phi` satisfies `Δphi + k^2 phi = 0` away from its singular
//! points. Values and gradients are evaluated analytically.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{self, Point2};
use crate::mesh::Mesh;
use crate::specialfn::{self, SpecialFnError};

type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("a plane-wave space needs at least one direction")]
    NoDirections,
    #[error("direction {0} violates d.d = 1")]
    NotUnit(usize),
    #[error("directions {0} and {1} coincide")]
    DuplicateDirections(usize, usize),
    #[error("pole {0:?} lies in the closure of element {1}")]
    PoleInsideElement(Point2, usize),
    #[error("evaluation at a pole {0:?}")]
    AtPole(Point2),
    #[error("corner wave of order {0} is singular at the corner")]
    CornerSingular(f64),
    #[error("invalid basis parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    SpecialFn(#[from] SpecialFnError),
}

/// Propagation direction `d` with `d.d = 1` (bilinear product).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    d: [C64; 2],
}

impl Direction {
    /// Real unit direction at `angle`.
    pub fn from_angle(angle: f64) -> Self {
        Self { d: [C64::new(angle.cos(), 0.0), C64::new(angle.sin(), 0.0)] }
    }

    /// Evanescent direction `(cos(angle + i gamma), sin(angle + i gamma))`.
    ///
    /// The wave propagates along `angle` and decays along `angle - pi/2`
    /// at rate `k sinh(gamma)`.
    pub fn complex_angle(angle: f64, gamma: f64) -> Self {
        let z = C64::new(angle, gamma);
        Self { d: [z.cos(), z.sin()] }
    }

    /// Arbitrary complex direction, validated against `|d.d - 1| <= 1e-14`.
    pub fn new(d: [C64; 2]) -> Result<Self, BasisError> {
        if (geometry::cdot(d, d) - 1.0).norm() > 1e-14 * (d[0].norm_sqr() + d[1].norm_sqr()).max(1.0) {
            return Err(BasisError::NotUnit(0));
        }
        Ok(Self { d })
    }

    pub fn components(&self) -> [C64; 2] {
        self.d
    }

    pub fn is_real(&self) -> bool {
        self.d[0].im == 0.0 && self.d[1].im == 0.0
    }

    /// Direction `e` with `e^{ik e.x} = conj(e^{ik d.x})` for real `x`.
    pub fn conjugate(&self) -> Self {
        Self { d: [-self.d[0].conj(), -self.d[1].conj()] }
    }
}

/// `d_l = (cos(2 pi l / p), sin(2 pi l / p))`, `l = 0..p-1`.
pub fn equispaced_directions(p: usize) -> Result<Vec<Direction>, BasisError> {
    if p == 0 {
        return Err(BasisError::NoDirections);
    }
    Ok((0..p).map(|l| Direction::from_angle(TAU * l as f64 / p as f64)).collect())
}

/// Extents `(L_x, L_y)` of the axis-aligned bounding box of a polygon.
pub fn wbm_box(polygon: &[Point2]) -> (f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in polygon {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    (x1 - x0, y1 - y0)
}

/// One wave-based-method member `a(x) b(y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WbmMember {
    /// `true`: `cos(kx x) e^{i s ky y}`; `false`: `e^{i s kx x} cos(ky y)`.
    pub x_set: bool,
    /// Wavenumber inside the cosine.
    pub kc: f64,
    /// `sqrt(k^2 - kc^2)` with nonnegative imaginary part, times the sign `s`.
    pub kappa: C64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    PlaneWave { directions: Vec<Direction> },
    /// `J_l(k r) e^{i l theta}` about the centre, `|l| <= degree`.
    Ghp { degree: usize, scaled: bool },
    /// `H^(1)_l(k |x - pole|) e^{i l theta}`, `|l| <= degree`.
    Multipole { pole: Point2, degree: usize },
    /// `H^(1)_0(k |x - y_j|)` for each pole.
    Mfs { poles: Vec<Point2> },
    Wbm { truncation: f64, lx: f64, ly: f64, members: Vec<WbmMember> },
    /// `J_{l/alpha}(k r) sin(l phi / alpha)`, `l = 1..=count`, with `phi` measured
    /// from the edge leaving the corner at `start_angle`; opening angle `alpha pi`.
    Corner { corner: Point2, start_angle: f64, alpha: f64, count: usize },
}

/// `coef * e^{w . (x - center)}`: one exponential term of a plane-wave-like member.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpTerm {
    pub coef: C64,
    pub w: [C64; 2],
}

/// Values and gradients of all members at one point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BasisEval {
    pub values: Vec<C64>,
    pub gradients: Vec<[C64; 2]>,
}

impl BasisEval {
    fn reset(&mut self, n: usize) {
        self.values.clear();
        self.values.resize(n, ZERO);
        self.gradients.clear();
        self.gradients.resize(n, [ZERO; 2]);
    }

    /// `sum_m c_m phi_m` and its gradient.
    pub fn combine(&self, coeffs: &[C64]) -> (C64, [C64; 2]) {
        let mut v = ZERO;
        let mut g = [ZERO; 2];
        for ((c, val), grad) in coeffs.iter().zip(&self.values).zip(&self.gradients) {
            v += c * val;
            g[0] += c * grad[0];
            g[1] += c * grad[1];
        }
        (v, g)
    }
}

/// Trefftz space on one element.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSpace {
    pub element: usize,
    /// Expansion centre x_K.
    pub center: Point2,
    pub k: f64,
    /// Element diameter h_K (used by GHP scaling).
    pub h: f64,
    pub family: Family,
    /// Member-wise positive scale factors (only GHP scaled differs from 1).
    scales: Vec<f64>,
}

/// GHP/multipole order of member `m`: 0, 1, -1, 2, -2, ...
pub fn circular_order(m: usize) -> i64 {
    if m == 0 {
        0
    } else if m % 2 == 1 {
        (m as i64 + 1) / 2
    } else {
        -(m as i64 / 2)
    }
}

fn check_pole_outside(pole: Point2, polygon: &[Point2], element: usize) -> Result<(), BasisError> {
    let scale = polygon.iter().map(|p| p.dist(polygon[0])).fold(0.0, f64::max);
    if geometry::point_in_polygon(pole, polygon, 1e-12 * scale) {
        return Err(BasisError::PoleInsideElement(pole, element));
    }
    Ok(())
}

fn check_k(k: f64) -> Result<(), BasisError> {
    if !(k.is_finite() && k > 0.0) {
        return Err(BasisError::Parameter(format!("wavenumber must be positive, got {k}")));
    }
    Ok(())
}

impl LocalSpace {
    fn with_family(element: usize, center: Point2, k: f64, h: f64, family: Family) -> Self {
        let mut s = Self { element, center, k, h, family, scales: Vec::new() };
        s.scales = vec![1.0; s.dim()];
        s
    }

    pub fn plane_waves(
        element: usize,
        center: Point2,
        h: f64,
        k: f64,
        directions: Vec<Direction>,
    ) -> Result<Self, BasisError> {
        check_k(k)?;
        if directions.is_empty() {
            return Err(BasisError::NoDirections);
        }
        for (i, d) in directions.iter().enumerate() {
            let dd = geometry::cdot(d.d, d.d);
            if (dd - 1.0).norm() > 1e-14 * (d.d[0].norm_sqr() + d.d[1].norm_sqr()).max(1.0) {
                return Err(BasisError::NotUnit(i));
            }
            for (j, e) in directions.iter().enumerate().take(i) {
                if (d.d[0] - e.d[0]).norm().hypot((d.d[1] - e.d[1]).norm()) < 1e-10 {
                    return Err(BasisError::DuplicateDirections(j, i));
                }
            }
        }
        Ok(Self::with_family(element, center, k, h, Family::PlaneWave { directions }))
    }

    pub fn ghp(element: usize, center: Point2, h: f64, k: f64, degree: usize, scaled: bool) -> Result<Self, BasisError> {
        check_k(k)?;
        let mut s = Self::with_family(element, center, k, h, Family::Ghp { degree, scaled });
        if scaled {
            let j = specialfn::bessel_j_seq(degree + 1, k * h)?;
            s.scales = (0..s.dim())
                .map(|m| {
                    let l = circular_order(m).unsigned_abs() as usize;
                    let dj = if l == 0 { -j[1] } else { 0.5 * (j[l - 1] - j[l + 1]) };
                    1.0 / (k * dj.hypot(j[l]))
                })
                .collect();
        }
        Ok(s)
    }

    pub fn multipole(
        element: usize,
        polygon: &[Point2],
        center: Point2,
        h: f64,
        k: f64,
        pole: Point2,
        degree: usize,
    ) -> Result<Self, BasisError> {
        check_k(k)?;
        check_pole_outside(pole, polygon, element)?;
        Ok(Self::with_family(element, center, k, h, Family::Multipole { pole, degree }))
    }

    pub fn mfs(
        element: usize,
        polygon: &[Point2],
        center: Point2,
        h: f64,
        k: f64,
        poles: Vec<Point2>,
    ) -> Result<Self, BasisError> {
        check_k(k)?;
        if poles.is_empty() {
            return Err(BasisError::Parameter("MFS space needs at least one pole".into()));
        }
        for &p in &poles {
            check_pole_outside(p, polygon, element)?;
        }
        Ok(Self::with_family(element, center, k, h, Family::Mfs { poles }))
    }

    /// Wave-based-method space on the bounding box of `polygon`; coordinates
    /// are taken relative to `center`.
    pub fn wbm(
        element: usize,
        polygon: &[Point2],
        center: Point2,
        h: f64,
        k: f64,
        truncation: f64,
    ) -> Result<Self, BasisError> {
        check_k(k)?;
        if !(truncation.is_finite() && truncation > 0.0) {
            return Err(BasisError::Parameter(format!("WBM truncation must be positive, got {truncation}")));
        }
        let (lx, ly) = wbm_box(polygon);
        let mut members = Vec::new();
        for (x_set, len) in [(true, lx), (false, ly)] {
            let count = (truncation * k * len / PI).floor() as usize;
            for j in 0..=count {
                let kc = j as f64 * PI / len;
                let mut kappa = C64::new(k * k - kc * kc, 0.0).sqrt();
                if kappa.im < 0.0 {
                    kappa = -kappa;
                }
                members.push(WbmMember { x_set, kc, kappa });
                members.push(WbmMember { x_set, kc, kappa: -kappa });
            }
        }
        Ok(Self::with_family(element, center, k, h, Family::Wbm { truncation, lx, ly, members }))
    }

    pub fn corner(
        element: usize,
        center: Point2,
        h: f64,
        k: f64,
        corner: Point2,
        start_angle: f64,
        alpha: f64,
        count: usize,
    ) -> Result<Self, BasisError> {
        check_k(k)?;
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(BasisError::Parameter(format!("corner opening must lie in (0, 2), got {alpha}")));
        }
        if count == 0 {
            return Err(BasisError::Parameter("corner space needs at least one member".into()));
        }
        Ok(Self::with_family(element, center, k, h, Family::Corner { corner, start_angle, alpha, count }))
    }

    /// Number of members p_K.
    pub fn dim(&self) -> usize {
        match &self.family {
            Family::PlaneWave { directions } => directions.len(),
            Family::Ghp { degree, .. } | Family::Multipole { degree, .. } => 2 * degree + 1,
            Family::Mfs { poles } => poles.len(),
            Family::Wbm { members, .. } => members.len(),
            Family::Corner { count, .. } => *count,
        }
    }

    /// Member-wise scale factors applied on top of the raw functions.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Space whose members are the complex conjugates of this one's, in the
    /// same order. Available for plane waves only.
    pub fn conjugate(&self) -> Option<Self> {
        match &self.family {
            Family::PlaneWave { directions } => {
                let mut s = self.clone();
                s.family = Family::PlaneWave { directions: directions.iter().map(Direction::conjugate).collect() };
                Some(s)
            }
            _ => None,
        }
    }

    /// Exponential decomposition of every member, if the family is built
    /// from (possibly evanescent) plane waves.
    pub fn exp_terms(&self) -> Option<Vec<Vec<ExpTerm>>> {
        let k = self.k;
        match &self.family {
            Family::PlaneWave { directions } => Some(
                directions
                    .iter()
                    .map(|d| vec![ExpTerm { coef: C64::new(1.0, 0.0), w: [I * k * d.d[0], I * k * d.d[1]] }])
                    .collect(),
            ),
            Family::Wbm { members, .. } => Some(
                members
                    .iter()
                    .map(|m| {
                        // cos(kc t) e^{i kappa s} = 1/2 (e^{i(kc t + kappa s)} + e^{i(-kc t + kappa s)})
                        let (a, b) = (I * m.kc, I * m.kappa);
                        let (w1, w2) = if m.x_set { ([a, b], [-a, b]) } else { ([b, a], [b, -a]) };
                        vec![ExpTerm { coef: C64::new(0.5, 0.0), w: w1 }, ExpTerm { coef: C64::new(0.5, 0.0), w: w2 }]
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Largest growth rate `max |Re w|` among exponential terms (0 otherwise).
    pub fn growth_rate(&self) -> f64 {
        self.exp_terms()
            .map(|t| {
                t.iter()
                    .flatten()
                    .map(|e| e.w[0].re.hypot(e.w[1].re))
                    .fold(0.0, f64::max)
            })
            .unwrap_or(0.0)
    }

    pub fn eval(&self, x: Point2) -> Result<BasisEval, BasisError> {
        let mut out = BasisEval::default();
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, x: Point2, out: &mut BasisEval) -> Result<(), BasisError> {
        let n = self.dim();
        out.reset(n);
        let k = self.k;
        match &self.family {
            Family::PlaneWave { directions } => {
                let r = x - self.center;
                for (m, d) in directions.iter().enumerate() {
                    let ikd = [I * k * d.d[0], I * k * d.d[1]];
                    let v = geometry::cdot_real(ikd, r).exp();
                    out.values[m] = v;
                    out.gradients[m] = [ikd[0] * v, ikd[1] * v];
                }
            }
            Family::Ghp { degree, .. } => {
                circular_waves(x - self.center, k, *degree, out, |nmax, kr| {
                    Ok(specialfn::bessel_j_seq(nmax, kr)?.into_iter().map(|v| C64::new(v, 0.0)).collect())
                })?;
            }
            Family::Multipole { pole, degree } => {
                let r = x - *pole;
                if r.norm() == 0.0 {
                    return Err(BasisError::AtPole(*pole));
                }
                circular_waves(r, k, *degree, out, |nmax, kr| Ok(specialfn::hankel1_seq(nmax, kr)?))?;
            }
            Family::Mfs { poles } => {
                for (m, &y) in poles.iter().enumerate() {
                    let r = x - y;
                    let rn = r.norm();
                    if rn == 0.0 {
                        return Err(BasisError::AtPole(y));
                    }
                    let h = specialfn::hankel1_seq(1, k * rn)?;
                    out.values[m] = h[0];
                    let g = -k * h[1] / rn;
                    out.gradients[m] = [g * r.x, g * r.y];
                }
            }
            Family::Wbm { members, .. } => {
                let r = x - self.center;
                for (m, mem) in members.iter().enumerate() {
                    let (t, s) = if mem.x_set { (r.x, r.y) } else { (r.y, r.x) };
                    let (c, dc) = ((mem.kc * t).cos(), -mem.kc * (mem.kc * t).sin());
                    let e = (I * mem.kappa * s).exp();
                    let de = I * mem.kappa * e;
                    out.values[m] = c * e;
                    let (gt, gs) = (dc * e, c * de);
                    out.gradients[m] = if mem.x_set { [gt, gs] } else { [gs, gt] };
                }
            }
            Family::Corner { corner, start_angle, alpha, count } => {
                corner_waves(x - *corner, k, *start_angle, *alpha, *count, out)?;
            }
        }
        if self.scales.iter().any(|&s| s != 1.0) {
            for m in 0..n {
                let s = self.scales[m];
                out.values[m] *= s;
                out.gradients[m][0] *= s;
                out.gradients[m][1] *= s;
            }
        }
        Ok(())
    }
}

/// `Z_l(k r) e^{i l theta}` for `l = 0, 1, -1, ..`, with gradients from
/// `(d_x + i d_y) f_l = -k Z_{l+1} e^{i(l+1)theta}` and
/// `(d_x - i d_y) f_l = k Z_{l-1} e^{i(l-1)theta}`.
fn circular_waves<F>(r: Point2, k: f64, degree: usize, out: &mut BasisEval, seq: F) -> Result<(), BasisError>
where
    F: Fn(usize, f64) -> Result<Vec<C64>, SpecialFnError>,
{
    let rn = r.norm();
    let z = seq(degree + 1, k * rn)?;
    let e1 = if rn > 0.0 { C64::new(r.x / rn, r.y / rn) } else { C64::new(1.0, 0.0) };
    // Z_l e^{i l theta} for signed l, |l| <= degree + 1
    let f = |l: i64| -> C64 {
        let a = l.unsigned_abs() as usize;
        let zl = if l < 0 && a % 2 == 1 { -z[a] } else { z[a] };
        zl * e1.powi(l as i32)
    };
    for m in 0..2 * degree + 1 {
        let l = circular_order(m);
        let plus = -k * f(l + 1);
        let minus = k * f(l - 1);
        out.values[m] = f(l);
        out.gradients[m] = [0.5 * (plus + minus), (plus - minus) / (2.0 * I)];
    }
    Ok(())
}

fn corner_waves(
    r: Point2,
    k: f64,
    start_angle: f64,
    alpha: f64,
    count: usize,
    out: &mut BasisEval,
) -> Result<(), BasisError> {
    let rn = r.norm();
    // local angle in [-(2 - alpha) pi / 2, alpha pi + (2 - alpha) pi / 2): the
    // branch cut sits opposite the corner bisector
    let low = -(2.0 - alpha) * PI / 2.0;
    let mut phi = r.y.atan2(r.x) - start_angle;
    phi = low + (phi - low).rem_euclid(TAU);
    let (er, et) = {
        let a = start_angle + phi;
        (Point2::new(a.cos(), a.sin()), Point2::new(-a.sin(), a.cos()))
    };
    for m in 0..count {
        let nu = (m + 1) as f64 / alpha;
        let (s, c) = (nu * phi).sin_cos();
        if rn == 0.0 {
            if nu < 1.0 {
                return Err(BasisError::CornerSingular(nu));
            }
            out.values[m] = ZERO;
            let g = if nu == 1.0 {
                let dir = Point2::new(-start_angle.sin(), start_angle.cos());
                dir * (0.5 * k)
            } else {
                Point2::default()
            };
            out.gradients[m] = [C64::new(g.x, 0.0), C64::new(g.y, 0.0)];
            continue;
        }
        let j = specialfn::bessel_j(nu, k * rn)?;
        let dr = k * j.derivative * s;
        let dt = j.value * nu * c / rn;
        out.values[m] = C64::new(j.value * s, 0.0);
        let g = er * dr + et * dt;
        out.gradients[m] = [C64::new(g.x, 0.0), C64::new(g.y, 0.0)];
    }
    Ok(())
}

/// Uniform basis choice applied to every element of a mesh.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisSpec {
    /// `p` equispaced directions.
    PlaneWave { p: usize },
    Ghp { q: usize, scaled: bool },
    /// Pole at `x_K + offset * h_K * (1, 0)` (offset > 1 keeps it outside K).
    Multipole { q: usize, offset: f64 },
    /// Wave-based-method functions with truncation parameter `n`.
    Wbm { n: f64 },
    /// `count` fundamental solutions on the dilation of the element boundary by `radius_factor`.
    Mfs { count: usize, radius_factor: f64 },
}

impl BasisSpec {
    /// Defaults used by the configuration layer.
    pub const MULTIPOLE_OFFSET: f64 = 1.5;
    pub const MFS_RADIUS_FACTOR: f64 = 1.5;
}

/// Points spread uniformly by arclength on the dilation of `polygon` by
/// `factor` about `center`.
pub fn dilated_boundary_points(polygon: &[Point2], center: Point2, factor: f64, count: usize) -> Vec<Point2> {
    let n = polygon.len();
    let lens: Vec<f64> = (0..n).map(|i| polygon[i].dist(polygon[(i + 1) % n])).collect();
    let total: f64 = lens.iter().sum();
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let mut s = total * (j as f64 + 0.5) / count as f64;
        let mut i = 0;
        while i + 1 < n && s > lens[i] {
            s -= lens[i];
            i += 1;
        }
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        let p = a + (b - a) * (s / lens[i]);
        out.push(center + (p - center) * factor);
    }
    out
}

/// Builds the same family on every element, centred at the barycentres.
pub fn build_spaces(mesh: &Mesh, k: f64, spec: &BasisSpec) -> Result<Vec<LocalSpace>, BasisError> {
    (0..mesh.num_elements())
        .map(|e| {
            let m = mesh.metrics(e);
            let (c, h) = (m.barycentre, m.diameter);
            match *spec {
                BasisSpec::PlaneWave { p } => LocalSpace::plane_waves(e, c, h, k, equispaced_directions(p)?),
                BasisSpec::Ghp { q, scaled } => LocalSpace::ghp(e, c, h, k, q, scaled),
                BasisSpec::Multipole { q, offset } => {
                    let pole = c + Point2::new(offset * h, 0.0);
                    LocalSpace::multipole(e, &mesh.polygon(e), c, h, k, pole, q)
                }
                BasisSpec::Wbm { n } => LocalSpace::wbm(e, &mesh.polygon(e), c, h, k, n),
                BasisSpec::Mfs { count, radius_factor } => {
                    let poly = mesh.polygon(e);
                    let poles = dilated_boundary_points(&poly, c, radius_factor, count);
                    LocalSpace::mfs(e, &poly, c, h, k, poles)
                }
            }
        })
        .collect()
}
