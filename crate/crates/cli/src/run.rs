//! Study driver: mesh → spaces → assembly → solve → errors, one CSV row per
//! schedule entry.

use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;
use thiserror::Error;
use trefftz_core::analysis::{
    self, csv_float, disc_l2_error, l2_domain_error, skeleton_norm, ConditioningSweep, DiscreteSolution, ExactSolution,
    MfsSolution, NormSpec, PiecewiseField, StudyRecord,
};
use trefftz_core::basis::{build_spaces, dilated_boundary_points, BasisSpec, Direction, LocalSpace};
use trefftz_core::forms::{
    assemble_ls, assemble_mfs, assemble_single_element, assemble_tdg, assemble_vtcr, assemble_wbm, element_boundary_grams,
    FluxParameters, GlobalSystem, IntegrationPath, LsWeights, MfsDomain, MfsMode, Pairing, SingleElementMode,
};
use trefftz_core::linalg::{self, CMatrix, SolveReport};
use trefftz_core::mesh::{generate_rect_grid, load_mesh, BoundaryTag, Mesh, Rect, SideTags};
use trefftz_core::Point2;

use crate::config::{ConfigError, Domain, ExactKind, MethodKind, PairingChoice, RunConfig, Solver};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("level {level} ({method}): {msg}")]
    Numerical { level: usize, method: &'static str, msg: String },
    #[error("{0}")]
    Io(String),
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical { .. } | RunError::Io(_) => 3,
        }
    }
}

/// A solved schedule entry, kept for field sampling.
pub enum Solved {
    Mesh { mesh: Mesh, solution: DiscreteSolution },
    Mfs { domain: MfsDomain, solution: MfsSolution },
}

impl Solved {
    /// Value at `x`, or `None` outside the domain.
    pub fn eval(&self, x: Point2) -> Result<Option<Complex64>, analysis::AnalysisError> {
        match self {
            Solved::Mesh { mesh, solution } => Ok(solution.eval(mesh, x)?.map(|(v, _)| v)),
            Solved::Mfs { domain, solution } => {
                if domain.contains_closed(x) {
                    Ok(Some(solution.eval(x)?.0))
                } else {
                    Ok(None)
                }
            }
        }
    }

    pub fn bounding_box(&self) -> (Point2, Point2) {
        match self {
            Solved::Mesh { mesh, .. } => mesh.bounding_box(),
            Solved::Mfs { domain: MfsDomain::Disc { center, radius }, .. } => {
                (*center - Point2::new(*radius, *radius), *center + Point2::new(*radius, *radius))
            }
            Solved::Mfs { domain: MfsDomain::Polygon(poly), .. } => {
                let mut lo = poly[0];
                let mut hi = poly[0];
                for p in poly {
                    lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
                    hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
                }
                (lo, hi)
            }
        }
    }
}

pub struct StudyReport {
    pub records: Vec<StudyRecord>,
    /// Solution of the last schedule entry.
    pub last: Option<Solved>,
}

impl StudyReport {
    pub fn csv(&self) -> String {
        analysis::study_csv(&self.records)
    }
}

pub fn exact_solution(cfg: &RunConfig) -> ExactSolution {
    let k = cfg.problem.k;
    match cfg.problem.exact {
        ExactKind::PlaneWave { angle, gamma } => ExactSolution::PlaneWave { k, direction: Direction::complex_angle(angle, gamma) },
        ExactKind::FourierBessel { center, order } => ExactSolution::FourierBessel { k, center, order },
        ExactKind::Fundamental { pole } => ExactSolution::Fundamental { k, pole },
    }
}

/// The `[basis]` choice with its size parameter replaced by `p`.
pub fn basis_with_size(spec: &BasisSpec, p: usize) -> BasisSpec {
    match *spec {
        BasisSpec::PlaneWave { .. } => BasisSpec::PlaneWave { p },
        BasisSpec::Ghp { scaled, .. } => BasisSpec::Ghp { q: p, scaled },
        BasisSpec::Multipole { offset, .. } => BasisSpec::Multipole { q: p, offset },
        BasisSpec::Wbm { .. } => BasisSpec::Wbm { n: p as f64 },
        BasisSpec::Mfs { radius_factor, .. } => BasisSpec::Mfs { count: p, radius_factor },
    }
}

fn basis_size(spec: &BasisSpec) -> usize {
    match *spec {
        BasisSpec::PlaneWave { p } => p,
        BasisSpec::Ghp { q, .. } | BasisSpec::Multipole { q, .. } => q,
        BasisSpec::Wbm { n } => n as usize,
        BasisSpec::Mfs { count, .. } => count,
    }
}

fn build_mesh(cfg: &RunConfig, n: usize) -> Result<Mesh, RunError> {
    match &cfg.problem.domain {
        Domain::Rect { rect, tags } => generate_rect_grid(*rect, n, n, *tags).map_err(|e| ConfigError { line: None, msg: e.to_string() }.into()),
        Domain::MeshFile(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError { line: None, msg: format!("cannot read mesh {}: {e}", path.display()) })?;
            load_mesh(&text).map_err(|e| ConfigError { line: None, msg: format!("mesh {}: {e}", path.display()) }.into())
        }
        Domain::Disc { .. } => Err(ConfigError { line: None, msg: "disc domains have no mesh".into() }.into()),
    }
}

fn solve(matrix: &CMatrix, rhs: &[Complex64], solver: Solver) -> Result<SolveReport, linalg::LinalgError> {
    match solver {
        Solver::Direct if matrix.is_square() => linalg::lu_solve(matrix, rhs),
        Solver::Direct => linalg::qr_least_squares(matrix, rhs),
        Solver::Tsvd(t) => linalg::truncated_svd_solve(matrix, rhs, t),
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs every schedule entry in order.
pub fn run(cfg: &RunConfig) -> Result<StudyReport, RunError> {
    cfg.validate()?;
    let sizes = if cfg.schedule.p_values.is_empty() {
        vec![if cfg.method.kind == MethodKind::Mfs { cfg.method.mfs_poles } else { basis_size(&cfg.basis) }]
    } else {
        cfg.schedule.p_values.clone()
    };
    let mut records = Vec::new();
    let mut last = None;
    let mut level = 0;
    for &n in &cfg.schedule.levels {
        for &p in &sizes {
            let (record, solved) = if cfg.method.kind == MethodKind::Mfs {
                run_mfs(cfg, level, p)?
            } else {
                run_mesh(cfg, level, n, p)?
            };
            records.push(record);
            last = Some(solved);
            level += 1;
        }
    }
    Ok(StudyReport { records, last })
}

fn run_mesh(cfg: &RunConfig, level: usize, n: usize, p: usize) -> Result<(StudyRecord, Solved), RunError> {
    let kind = cfg.method.kind;
    let num = |msg: String| RunError::Numerical { level, method: kind.name(), msg };
    let k = cfg.problem.k;
    let theta = cfg.problem.theta;
    let mesh = build_mesh(cfg, n)?;
    let exact = exact_solution(cfg);
    exact.validate(&mesh).map_err(|e| ConfigError { line: None, msg: e.to_string() })?;
    let spaces = build_spaces(&mesh, k, &basis_with_size(&cfg.basis, p)).map_err(|e| num(e.to_string()))?;
    let m = &cfg.method;
    let tdg_flux = match kind {
        MethodKind::Tdg => FluxParameters::Preset { preset: m.flux, a: m.a, b: m.b, d: m.d },
        _ => FluxParameters::uwvf(),
    };
    let ls_weights = match kind {
        MethodKind::Ls => LsWeights { lambda: m.lambda, sigma: m.sigma, mode: m.jump },
        _ => LsWeights::default(),
    };

    let t0 = Instant::now();
    let sys: GlobalSystem = {
        let data = if kind.is_single_element() {
            exact.neumann_data()
        } else {
            exact.boundary_data(theta).map_err(|e| num(e.to_string()))?
        };
        match kind {
            MethodKind::Tdg | MethodKind::Uwvf => assemble_tdg(&mesh, &spaces, &tdg_flux, &data, k),
            MethodKind::Ls => assemble_ls(&mesh, &spaces, &ls_weights, &data, k),
            MethodKind::Vtcr => assemble_vtcr(&mesh, &spaces, m.c1, m.c2, &data, k),
            MethodKind::Wbm => assemble_wbm(&mesh, &spaces, m.z_int, &data, k),
            MethodKind::Direct | MethodKind::Indirect => {
                let mode = if kind == MethodKind::Direct { SingleElementMode::Direct } else { SingleElementMode::Indirect };
                // Green's identity is bilinear: a conjugated pairing needs the
                // conjugate test space, otherwise mixed boundaries go singular
                let (pairing, test) = match m.pairing {
                    PairingChoice::Conjugated => (Pairing::Conjugated, spaces[0].conjugate().ok_or_else(|| num("basis has no conjugate".into()))?),
                    PairingChoice::Bilinear => (Pairing::Bilinear, spaces[0].clone()),
                };
                assemble_single_element(&mesh, &spaces[0], &test, mode, pairing, &data, k)
            }
            MethodKind::Mfs => unreachable!("handled by run_mfs"),
        }
        .map_err(|e| num(e.to_string()))?
    };
    let assemble_ms = ms(t0);

    let t1 = Instant::now();
    let (coeffs, solved_matrix) = if m.orthonormalize {
        let grams = element_boundary_grams(&mesh, &spaces, IntegrationPath::Auto).map_err(|e| num(e.to_string()))?;
        let o = sys.orthonormalize(&grams).map_err(|e| num(e.to_string()))?;
        let rep = solve(&o.matrix, &o.rhs, m.solver).map_err(|e| num(e.to_string()))?;
        (o.map_back(&rep.solution), o.matrix)
    } else {
        let rep = solve(&sys.matrix, &sys.rhs, m.solver).map_err(|e| num(e.to_string()))?;
        (rep.solution, sys.matrix)
    };
    let solve_ms = ms(t1);
    let cond2 = if cfg.output.cond { linalg::svd_cond(&solved_matrix).cond2 } else { f64::NAN };

    let uh = DiscreteSolution::new(spaces, coeffs).map_err(|e| num(e.to_string()))?;
    let err_l2 = l2_domain_error(&uh, &exact, &mesh, k).map_err(|e| num(e.to_string()))?;
    let rel = |spec: NormSpec| -> Result<f64, RunError> {
        let diff = analysis::Difference { a: &exact, b: &uh };
        let e = skeleton_norm(&diff, &spec, &mesh, k, theta).map_err(|e| num(e.to_string()))?;
        let u = skeleton_norm(&exact, &spec, &mesh, k, theta).map_err(|e| num(e.to_string()))?;
        Ok(e / u)
    };
    let err_tdg = rel(NormSpec::Tdg(tdg_flux.clone()))?;
    let err_ls = rel(NormSpec::Ls(ls_weights))?;
    let record = StudyRecord {
        level,
        h: mesh.h(),
        p,
        dofs: uh.coeffs.len(),
        err_l2,
        err_tdg,
        err_ls,
        cond2,
        assemble_ms,
        solve_ms,
    };
    Ok((record, Solved::Mesh { mesh, solution: uh }))
}

/// Side of an axis-aligned rectangle a sample belongs to, from its outward normal.
fn side_tag(tags: &SideTags, normal: Point2) -> BoundaryTag {
    if normal.y < -0.5 {
        tags.bottom
    } else if normal.x > 0.5 {
        tags.right
    } else if normal.y > 0.5 {
        tags.top
    } else {
        tags.left
    }
}

fn rect_polygon(r: &Rect) -> Vec<Point2> {
    vec![Point2::new(r.x0, r.y0), Point2::new(r.x1, r.y0), Point2::new(r.x1, r.y1), Point2::new(r.x0, r.y1)]
}

fn run_mfs(cfg: &RunConfig, level: usize, n: usize) -> Result<(StudyRecord, Solved), RunError> {
    let num = |msg: String| RunError::Numerical { level, method: "mfs", msg };
    let k = cfg.problem.k;
    let m = &cfg.method;
    let exact = exact_solution(cfg);
    let samples_count = match m.mfs_mode {
        MfsMode::Collocation => n,
        MfsMode::LeastSquares => m.mfs_oversampling * n,
    };
    let (domain, poles, samples) = match &cfg.problem.domain {
        Domain::Disc { center, radius, tag } => {
            let domain = MfsDomain::Disc { center: *center, radius: *radius };
            let poles = (0..n)
                .map(|j| {
                    // radially aligned with the samples: a half-step offset
                    // annihilates the Nyquist mode for even n
                    let t = std::f64::consts::TAU * j as f64 / n as f64;
                    *center + Point2::new(t.cos(), t.sin()) * (radius * m.mfs_radius)
                })
                .collect();
            let samples = domain.boundary_samples(samples_count, *tag);
            (domain, poles, samples)
        }
        Domain::Rect { rect, tags } => {
            let poly = rect_polygon(rect);
            let center = Point2::new(0.5 * (rect.x0 + rect.x1), 0.5 * (rect.y0 + rect.y1));
            let poles = dilated_boundary_points(&poly, center, m.mfs_radius, n);
            let domain = MfsDomain::Polygon(poly);
            let mut samples = domain.boundary_samples(samples_count, BoundaryTag::Dirichlet);
            for s in &mut samples {
                s.tag = side_tag(tags, s.normal);
            }
            (domain, poles, samples)
        }
        Domain::MeshFile(_) => return Err(ConfigError { line: None, msg: "method = mfs needs a rect or disc domain".into() }.into()),
    };
    let data = exact.boundary_data(cfg.problem.theta).map_err(|e| num(e.to_string()))?;
    let t0 = Instant::now();
    let sys = assemble_mfs(&domain, &samples, &poles, &data, k, m.mfs_mode).map_err(|e| num(e.to_string()))?;
    let assemble_ms = ms(t0);
    let t1 = Instant::now();
    let rep = solve(&sys.matrix, &sys.rhs, m.solver).map_err(|e| num(e.to_string()))?;
    let solve_ms = ms(t1);
    let cond2 = if cfg.output.cond { linalg::svd_cond(&sys.matrix).cond2 } else { f64::NAN };
    let solution = MfsSolution { k, poles, coeffs: rep.solution };
    let err_l2 = match &domain {
        MfsDomain::Disc { center, radius } => disc_l2_error(&solution, &exact, *center, *radius, k),
        MfsDomain::Polygon(_) => {
            let Domain::Rect { rect, tags } = &cfg.problem.domain else { unreachable!() };
            let mesh = generate_rect_grid(*rect, 1, 1, *tags).map_err(|e| num(e.to_string()))?;
            l2_domain_error(&solution as &dyn PiecewiseField, &exact, &mesh, k)
        }
    }
    .map_err(|e| num(e.to_string()))?;
    let record = StudyRecord {
        level,
        h: f64::NAN,
        p: n,
        dofs: n,
        err_l2,
        err_tdg: f64::NAN,
        err_ls: f64::NAN,
        cond2,
        assemble_ms,
        solve_ms,
    };
    Ok((record, Solved::Mfs { domain, solution }))
}

/// Conditioning CSV for the `[sweep]` section.
pub fn run_conditioning(cfg: &RunConfig) -> Result<String, RunError> {
    let sw = cfg.sweep.as_ref().ok_or_else(|| ConfigError { line: None, msg: "missing [sweep] section".into() })?;
    let spec = ConditioningSweep { family: sw.family, k: sw.k, hs: sw.hs.clone(), orders: sw.orders.clone() };
    let records = analysis::conditioning_sweep(&spec).map_err(|e| RunError::Numerical { level: 0, method: "sweep", msg: e.to_string() })?;
    Ok(analysis::conditioning_csv(&records))
}

/// Samples the solution on an `nx x ny` grid spanning its bounding box; points
/// outside the domain get empty value cells.
pub fn sample_field(solved: &Solved, nx: usize, ny: usize) -> Result<String, RunError> {
    let (lo, hi) = solved.bounding_box();
    let coord = |a: f64, b: f64, i: usize, n: usize| if n == 1 { 0.5 * (a + b) } else { a + (b - a) * i as f64 / (n - 1) as f64 };
    let mut s = String::from("x,y,re,im,abs\n");
    for j in 0..ny {
        for i in 0..nx {
            let x = Point2::new(coord(lo.x, hi.x, i, nx), coord(lo.y, hi.y, j, ny));
            let v = solved
                .eval(x)
                .map_err(|e| RunError::Numerical { level: 0, method: "sample", msg: e.to_string() })?;
            match v {
                Some(v) => {
                    let _ = writeln!(s, "{},{},{},{},{}", csv_float(x.x), csv_float(x.y), csv_float(v.re), csv_float(v.im), csv_float(v.norm()));
                }
                None => {
                    let _ = writeln!(s, "{},{},,,", csv_float(x.x), csv_float(x.y));
                }
            }
        }
    }
    Ok(s)
}

/// Convenience: a discrete solution from explicit coefficients, for sampling.
pub fn solved_from_coeffs(mesh: Mesh, spaces: Vec<LocalSpace>, coeffs: Vec<Complex64>) -> Result<Solved, RunError> {
    let solution = DiscreteSolution::new(spaces, coeffs).map_err(|e| RunError::Numerical { level: 0, method: "sample", msg: e.to_string() })?;
    Ok(Solved::Mesh { mesh, solution })
}
