//! Run configuration: flat `[section]` headers with `key = value` lines.
//!
//! ```text
//! [problem]
//! domain = rect          # rect | mesh | disc
//! k = 4
//! tags = RRRR            # bottom right top left, D or R
//! exact = plane_wave
//! exact_angle = 0.7853981633974483
//!
//! [method]
//! name = tdg
//! flux = p-version
//!
//! [basis]
//! family = pw
//! p = 5
//!
//! [schedule]
//! levels = 2, 4, 8, 16
//! ```
//!
//! Every key has a default; [`RunConfig::to_text`] writes the effective
//! configuration, which parses back to the same value.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;
use trefftz_core::analysis::SweepFamily;
use trefftz_core::basis::BasisSpec;
use trefftz_core::forms::{FluxPreset, GradJumpMode, MfsMode, Weight};
use trefftz_core::mesh::{BoundaryTag, Rect, SideTags};
use trefftz_core::Point2;

#[derive(Debug, Error, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line in the config text, when the error is tied to one.
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

fn cfg_err(line: Option<usize>, msg: impl Into<String>) -> ConfigError {
    ConfigError { line, msg: msg.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    /// Uniform `n x n` grids of the rectangle, one per schedule level.
    Rect { rect: Rect, tags: SideTags },
    /// A fixed mesh read from a file (single level).
    MeshFile(PathBuf),
    /// Disc domain for mesh-free MFS runs, uniformly tagged.
    Disc { center: Point2, radius: f64, tag: BoundaryTag },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExactKind {
    /// `e^{ik d.x}` with `d = (cos(angle + i gamma), sin(angle + i gamma))`.
    PlaneWave { angle: f64, gamma: f64 },
    FourierBessel { center: Point2, order: i64 },
    Fundamental { pole: Point2 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub domain: Domain,
    pub k: f64,
    pub theta: f64,
    pub exact: ExactKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    Tdg,
    Uwvf,
    Ls,
    Vtcr,
    Wbm,
    Mfs,
    Direct,
    Indirect,
}

impl MethodKind {
    pub const ALL: [MethodKind; 8] = [
        MethodKind::Tdg,
        MethodKind::Uwvf,
        MethodKind::Ls,
        MethodKind::Vtcr,
        MethodKind::Wbm,
        MethodKind::Mfs,
        MethodKind::Direct,
        MethodKind::Indirect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Tdg => "tdg",
            MethodKind::Uwvf => "uwvf",
            MethodKind::Ls => "ls",
            MethodKind::Vtcr => "vtcr",
            MethodKind::Wbm => "wbm",
            MethodKind::Mfs => "mfs",
            MethodKind::Direct => "direct",
            MethodKind::Indirect => "indirect",
        }
    }

    pub fn is_single_element(self) -> bool {
        matches!(self, MethodKind::Direct | MethodKind::Indirect)
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Solver {
    /// LU for square systems, Householder QR for rectangular ones.
    Direct,
    /// Truncated SVD with the given relative threshold.
    Tsvd(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairingChoice {
    Conjugated,
    Bilinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodConfig {
    pub kind: MethodKind,
    pub flux: FluxPreset,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub lambda: Weight,
    pub sigma: Weight,
    pub jump: GradJumpMode,
    pub c1: Complex64,
    pub c2: Complex64,
    pub z_int: Complex64,
    /// Number of MFS poles when the schedule gives no `p_values`.
    pub mfs_poles: usize,
    /// Radius of the pole circle relative to the disc (disc domains) or the
    /// boundary dilation factor (rectangles).
    pub mfs_radius: f64,
    pub mfs_mode: MfsMode,
    /// Boundary samples per pole in least-squares mode.
    pub mfs_oversampling: usize,
    pub pairing: PairingChoice,
    pub solver: Solver,
    pub orthonormalize: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    /// Elements per side of the rectangle at each level.
    pub levels: Vec<usize>,
    /// Basis size parameters (or MFS pole counts); empty keeps the `[basis]` value.
    pub p_values: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub study_csv: Option<PathBuf>,
    pub field_csv: Option<PathBuf>,
    pub field_nx: usize,
    pub field_ny: usize,
    pub conditioning_csv: Option<PathBuf>,
    /// Compute the spectral condition number of every solved system.
    pub cond: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub family: SweepFamily,
    pub k: f64,
    pub hs: Vec<f64>,
    pub orders: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub method: MethodConfig,
    pub basis: BasisSpec,
    pub schedule: ScheduleConfig,
    pub output: OutputConfig,
    pub sweep: Option<SweepConfig>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemConfig {
                domain: Domain::Rect { rect: Rect::UNIT, tags: SideTags::uniform(BoundaryTag::Robin) },
                k: 4.0,
                theta: 1.0,
                exact: ExactKind::PlaneWave { angle: 0.0, gamma: 0.0 },
            },
            method: MethodConfig {
                kind: MethodKind::Tdg,
                flux: FluxPreset::PVersion,
                a: 0.5,
                b: 0.5,
                d: 0.5,
                lambda: Weight::WavenumberMultiple(1.0),
                sigma: Weight::Constant(1.0),
                jump: GradJumpMode::Full,
                c1: Complex64::new(1.0, 0.0),
                c2: Complex64::new(1.0, 0.0),
                z_int: Complex64::new(1.0, 0.0),
                mfs_poles: 20,
                mfs_radius: 2.0,
                mfs_mode: MfsMode::Collocation,
                mfs_oversampling: 2,
                pairing: PairingChoice::Conjugated,
                solver: Solver::Direct,
                orthonormalize: false,
            },
            basis: BasisSpec::PlaneWave { p: 7 },
            schedule: ScheduleConfig { levels: vec![1], p_values: Vec::new() },
            output: OutputConfig {
                study_csv: None,
                field_csv: None,
                field_nx: 50,
                field_ny: 50,
                conditioning_csv: None,
                cond: true,
            },
            sweep: None,
            seed: 42,
        }
    }
}

// ---------------------------------------------------------------------------
// Value parsers

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got '{s}'"))?;
    if !v.is_finite() {
        return Err(format!("expected a finite number, got '{s}'"));
    }
    Ok(v)
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got '{s}'"))
    }
}

fn parse_count(s: &str) -> Result<usize, String> {
    match parse_usize(s)? {
        0 => Err("must be at least 1".into()),
        n => Ok(n),
    }
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse().map_err(|_| format!("expected a non-negative integer, got '{s}'"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true/false, got '{s}'")),
    }
}

/// `a`, `bi`, `a+bi`, `a-bi` (exponents allowed).
pub fn parse_complex(s: &str) -> Result<Complex64, String> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || format!("expected a complex number like 1.5-2i, got '{s}'");
    let Some(body) = s.strip_suffix('i') else {
        return Ok(Complex64::new(parse_f64(&s)?, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&j| (bytes[j] == b'+' || bytes[j] == b'-') && !matches!(bytes[j - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(j) => (parse_f64(&body[..j]).map_err(|_| bad())?, &body[j..]),
        None => (0.0, body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        t => parse_f64(t).map_err(|_| bad())?,
    };
    Ok(Complex64::new(re, im))
}

pub fn format_complex(z: Complex64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else if z.im < 0.0 || z.im.is_sign_negative() {
        format!("{}{}i", z.re, z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

/// `3` (constant), `k` / `2*k` (multiple of k), `1/len`, `2*len`.
pub fn parse_weight(s: &str) -> Result<Weight, String> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let coef = |t: &str| if t.is_empty() { Ok(1.0) } else { parse_f64(t) };
    let w = if let Some(c) = s.strip_suffix("/len") {
        Weight::InverseLength(coef(c)?)
    } else if let Some(c) = s.strip_suffix("len") {
        Weight::Length(coef(c.trim_end_matches('*'))?)
    } else if let Some(c) = s.strip_suffix('k') {
        Weight::WavenumberMultiple(coef(c.trim_end_matches('*'))?)
    } else {
        Weight::Constant(parse_f64(&s)?)
    };
    let c = match w {
        Weight::Constant(c) | Weight::WavenumberMultiple(c) | Weight::InverseLength(c) | Weight::Length(c) => c,
    };
    if !(c > 0.0) {
        return Err(format!("weights must be positive, got '{s}'"));
    }
    Ok(w)
}

pub fn format_weight(w: Weight) -> String {
    match w {
        Weight::Constant(c) => format!("{c}"),
        Weight::WavenumberMultiple(c) => format!("{c}*k"),
        Weight::InverseLength(c) => format!("{c}/len"),
        Weight::Length(c) => format!("{c}*len"),
    }
}

/// Comma-separated list; `a..b` expands to the inclusive integer range.
fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (parse_usize(a.trim())?, parse_usize(b.trim())?);
            if a > b {
                return Err(format!("empty range '{part}'"));
            }
            out.extend(a..=b);
        } else {
            out.push(parse_usize(part)?);
        }
    }
    Ok(out)
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(parse_f64).collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_tags(s: &str) -> Result<SideTags, String> {
    let letters: Vec<BoundaryTag> = s
        .chars()
        .map(|c| BoundaryTag::from_letter(&c.to_string()).ok_or_else(|| format!("unknown boundary tag '{c}'")))
        .collect::<Result<_, _>>()?;
    match letters[..] {
        [t] => Ok(SideTags::uniform(t)),
        [bottom, right, top, left] => Ok(SideTags { bottom, right, top, left }),
        _ => Err(format!("tags takes 1 or 4 letters (bottom right top left), got '{s}'")),
    }
}

fn format_tags(t: &SideTags) -> String {
    [t.bottom, t.right, t.top, t.left].iter().map(|x| x.letter()).collect()
}

fn parse_tag(s: &str) -> Result<BoundaryTag, String> {
    BoundaryTag::from_letter(s).ok_or_else(|| format!("unknown boundary tag '{s}'"))
}

fn parse_point(s: &str) -> Result<Point2, String> {
    let v = parse_f64_list(s)?;
    match v[..] {
        [x, y] => Ok(Point2::new(x, y)),
        _ => Err(format!("expected 'x, y', got '{s}'")),
    }
}

fn format_point(p: Point2) -> String {
    format!("{}, {}", p.x, p.y)
}

// ---------------------------------------------------------------------------
// Parsing

type Section = BTreeMap<String, (usize, String)>;

struct Reader {
    sections: BTreeMap<String, Section>,
}

impl Reader {
    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.sections.get_mut(section)?.remove(key)
    }

    fn get<T>(
        &mut self,
        section: &str,
        key: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ConfigError> {
        match self.take(section, key) {
            Some((line, v)) => parse(&v).map(Some).map_err(|m| cfg_err(Some(line), format!("{section}.{key}: {m}"))),
            None => Ok(None),
        }
    }

    fn or<T>(&mut self, section: &str, key: &str, default: T, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, ConfigError> {
        Ok(self.get(section, key, parse)?.unwrap_or(default))
    }

    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.sections.get(section).and_then(|s| s.get(key)).map(|(l, _)| *l)
    }

    fn has(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }
}

const SECTIONS: [&str; 7] = ["problem", "method", "basis", "schedule", "output", "sweep", "run"];

impl RunConfig {
    /// Parses config text; relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(cfg_err(Some(line), format!("unknown section [{name}]")));
                }
                if sections.contains_key(&name) {
                    return Err(cfg_err(Some(line), format!("duplicate section [{name}]")));
                }
                sections.insert(name.clone(), Section::new());
                current = Some(name);
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(cfg_err(Some(line), format!("expected 'key = value', got '{content}'")));
            };
            let Some(sec) = &current else {
                return Err(cfg_err(Some(line), "key outside of any [section]"));
            };
            let key = key.trim().to_string();
            let map = sections.get_mut(sec).expect("section exists");
            if map.insert(key.clone(), (line, value.trim().to_string())).is_some() {
                return Err(cfg_err(Some(line), format!("duplicate key '{key}'")));
            }
        }
        let mut r = Reader { sections };
        let resolve = |p: &str| -> Result<PathBuf, String> {
            let p = PathBuf::from(p);
            Ok(match base_dir {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            })
        };
        let def = RunConfig::default();

        // [problem]
        let k = r.or("problem", "k", def.problem.k, parse_positive)?;
        let theta = r.or("problem", "theta", def.problem.theta, parse_positive)?;
        let domain_line = r.line_of("problem", "domain");
        let domain_kind = r.or("problem", "domain", "rect".to_string(), |s| Ok(s.to_string()))?;
        let domain = match domain_kind.as_str() {
            "rect" => {
                let v = r.or("problem", "rect", vec![0.0, 1.0, 0.0, 1.0], parse_f64_list)?;
                let [x0, x1, y0, y1] = v[..] else {
                    return Err(cfg_err(r.line_of("problem", "rect"), "problem.rect takes 'x0, x1, y0, y1'"));
                };
                if !(x1 > x0 && y1 > y0) {
                    return Err(cfg_err(None, "problem.rect must have x1 > x0 and y1 > y0"));
                }
                let tags = r.or("problem", "tags", SideTags::uniform(BoundaryTag::Robin), parse_tags)?;
                Domain::Rect { rect: Rect::new(x0, x1, y0, y1), tags }
            }
            "mesh" => {
                let path = r
                    .get("problem", "mesh_file", resolve)?
                    .ok_or_else(|| cfg_err(domain_line, "domain = mesh needs problem.mesh_file"))?;
                Domain::MeshFile(path)
            }
            "disc" => {
                let center = r.or("problem", "center", Point2::default(), parse_point)?;
                let radius = r.or("problem", "radius", 1.0, parse_positive)?;
                let tag = r.or("problem", "tag", BoundaryTag::Dirichlet, parse_tag)?;
                Domain::Disc { center, radius, tag }
            }
            other => return Err(cfg_err(domain_line, format!("unknown domain '{other}' (rect | mesh | disc)"))),
        };
        let exact_line = r.line_of("problem", "exact");
        let exact_kind = r.or("problem", "exact", "plane_wave".to_string(), |s| Ok(s.to_string()))?;
        let exact = match exact_kind.as_str() {
            "plane_wave" => ExactKind::PlaneWave {
                angle: r.or("problem", "exact_angle", 0.0, parse_f64)?,
                gamma: r.or("problem", "exact_gamma", 0.0, parse_f64)?,
            },
            "fourier_bessel" => ExactKind::FourierBessel {
                center: r.or("problem", "exact_center", Point2::default(), parse_point)?,
                order: r.or("problem", "exact_order", 0, |s| s.parse::<i64>().map_err(|e| e.to_string()))?,
            },
            "fundamental" => ExactKind::Fundamental {
                pole: r
                    .get("problem", "exact_pole", parse_point)?
                    .ok_or_else(|| cfg_err(exact_line, "exact = fundamental needs problem.exact_pole"))?,
            },
            other => {
                return Err(cfg_err(exact_line, format!("unknown exact solution '{other}' (plane_wave | fourier_bessel | fundamental)")))
            }
        };
        let problem = ProblemConfig { domain, k, theta, exact };

        // [method]
        let m = &def.method;
        let kind = r.or("method", "name", m.kind, |s| s.parse())?;
        let allowed: &[&str] = match kind {
            MethodKind::Tdg => &["flux", "a", "b", "d"],
            MethodKind::Ls => &["lambda", "sigma", "jump"],
            MethodKind::Vtcr => &["c1", "c2"],
            MethodKind::Wbm => &["z_int"],
            MethodKind::Mfs => &["mfs_poles", "mfs_radius", "mfs_mode", "mfs_oversampling"],
            MethodKind::Direct | MethodKind::Indirect => &["pairing"],
            MethodKind::Uwvf => &[],
        };
        if let Some(sec) = r.sections.get("method") {
            for (key, (line, _)) in sec {
                let common = ["solver", "tsvd_threshold", "orthonormalize"].contains(&key.as_str());
                let known = [
                    "flux", "a", "b", "d", "lambda", "sigma", "jump", "c1", "c2", "z_int", "mfs_poles", "mfs_radius",
                    "mfs_mode", "mfs_oversampling", "pairing",
                ]
                .contains(&key.as_str());
                if known && !common && !allowed.contains(&key.as_str()) {
                    return Err(cfg_err(Some(*line), format!("method.{key} does not apply to method '{}'", kind.name())));
                }
            }
        }
        let flux = r.or("method", "flux", m.flux, |s| s.parse::<FluxPreset>().map_err(|e| e.to_string()))?;
        let (a, b, d) = (
            r.or("method", "a", m.a, parse_f64)?,
            r.or("method", "b", m.b, parse_f64)?,
            r.or("method", "d", m.d, parse_f64)?,
        );
        let lambda = r.or("method", "lambda", m.lambda, parse_weight)?;
        let sigma = r.or("method", "sigma", m.sigma, parse_weight)?;
        let jump = r.or("method", "jump", m.jump, |s| match s {
            "full" => Ok(GradJumpMode::Full),
            "normal" => Ok(GradJumpMode::NormalOnly),
            _ => Err(format!("expected full | normal, got '{s}'")),
        })?;
        let c1 = r.or("method", "c1", m.c1, parse_complex)?;
        let c2 = r.or("method", "c2", m.c2, parse_complex)?;
        let z_int = r.or("method", "z_int", m.z_int, parse_complex)?;
        let mfs_poles = r.or("method", "mfs_poles", m.mfs_poles, parse_usize)?;
        let mfs_radius = r.or("method", "mfs_radius", m.mfs_radius, |s| {
            parse_f64(s).and_then(|v| if v > 1.0 { Ok(v) } else { Err("must exceed 1 (poles outside the domain)".into()) })
        })?;
        let mfs_mode = r.or("method", "mfs_mode", m.mfs_mode, |s| match s {
            "collocation" => Ok(MfsMode::Collocation),
            "least_squares" => Ok(MfsMode::LeastSquares),
            _ => Err(format!("expected collocation | least_squares, got '{s}'")),
        })?;
        let mfs_oversampling = r.or("method", "mfs_oversampling", m.mfs_oversampling, parse_count)?;
        let pairing = r.or("method", "pairing", m.pairing, |s| match s {
            "conjugated" => Ok(PairingChoice::Conjugated),
            "bilinear" => Ok(PairingChoice::Bilinear),
            _ => Err(format!("expected conjugated | bilinear, got '{s}'")),
        })?;
        let solver_line = r.line_of("method", "solver");
        let solver_name = r.or("method", "solver", "direct".to_string(), |s| Ok(s.to_string()))?;
        let threshold = r.get("method", "tsvd_threshold", parse_f64)?;
        let solver = match (solver_name.as_str(), threshold) {
            ("direct", None) => Solver::Direct,
            ("tsvd", t) => {
                let t = t.unwrap_or(1e-14);
                if !(t > 0.0 && t < 1.0) {
                    return Err(cfg_err(None, "method.tsvd_threshold must lie in (0, 1)"));
                }
                Solver::Tsvd(t)
            }
            ("direct", Some(_)) => return Err(cfg_err(None, "method.tsvd_threshold needs solver = tsvd")),
            (other, _) => return Err(cfg_err(solver_line, format!("unknown solver '{other}' (direct | tsvd)"))),
        };
        let orthonormalize = r.or("method", "orthonormalize", m.orthonormalize, parse_bool)?;
        let method = MethodConfig {
            kind,
            flux,
            a,
            b,
            d,
            lambda,
            sigma,
            jump,
            c1,
            c2,
            z_int,
            mfs_poles,
            mfs_radius,
            mfs_mode,
            mfs_oversampling,
            pairing,
            solver,
            orthonormalize,
        };

        // [basis]
        let fam_line = r.line_of("basis", "family");
        let family = r.or("basis", "family", "pw".to_string(), |s| Ok(s.to_string()))?;
        let basis = match family.as_str() {
            "pw" => BasisSpec::PlaneWave { p: r.or("basis", "p", 7, parse_usize)? },
            "ghp" => BasisSpec::Ghp { q: r.or("basis", "q", 3, parse_usize)?, scaled: r.or("basis", "scaled", true, parse_bool)? },
            "multipole" => BasisSpec::Multipole {
                q: r.or("basis", "q", 3, parse_usize)?,
                offset: r.or("basis", "offset", BasisSpec::MULTIPOLE_OFFSET, parse_f64)?,
            },
            "wbm" => BasisSpec::Wbm { n: r.or("basis", "n", 2.0, parse_f64)? },
            "mfs" => BasisSpec::Mfs {
                count: r.or("basis", "count", 8, parse_usize)?,
                radius_factor: r.or("basis", "radius_factor", BasisSpec::MFS_RADIUS_FACTOR, parse_f64)?,
            },
            other => return Err(cfg_err(fam_line, format!("unknown basis family '{other}' (pw | ghp | multipole | wbm | mfs)"))),
        };

        // [schedule]
        let levels_line = r.line_of("schedule", "levels");
        let levels = r.or("schedule", "levels", def.schedule.levels.clone(), parse_usize_list)?;
        if levels.is_empty() || levels.contains(&0) {
            return Err(cfg_err(levels_line, "schedule.levels needs positive entries"));
        }
        let p_values = r.or("schedule", "p_values", Vec::new(), parse_usize_list)?;
        let schedule = ScheduleConfig { levels, p_values };

        // [output]
        let o = &def.output;
        let output = OutputConfig {
            study_csv: r.get("output", "study_csv", resolve)?,
            field_csv: r.get("output", "field_csv", resolve)?,
            field_nx: r.or("output", "field_nx", o.field_nx, parse_count)?,
            field_ny: r.or("output", "field_ny", o.field_ny, parse_count)?,
            conditioning_csv: r.get("output", "conditioning_csv", resolve)?,
            cond: r.or("output", "cond", o.cond, parse_bool)?,
        };

        // [sweep]
        let sweep = if r.has("sweep") {
            let family = r.or("sweep", "family", SweepFamily::PlaneWave, |s| match s {
                "pw" => Ok(SweepFamily::PlaneWave),
                "ghp" => Ok(SweepFamily::Ghp),
                _ => Err(format!("expected pw | ghp, got '{s}'")),
            })?;
            let k = r.or("sweep", "k", 1.0, parse_f64)?;
            let hs = r.or("sweep", "h", vec![2.0], parse_f64_list)?;
            let orders = r.or("sweep", "orders", (1..=15).collect(), parse_usize_list)?;
            if !(k > 0.0) || hs.is_empty() || hs.iter().any(|&h| !(h > 0.0)) || orders.is_empty() {
                return Err(cfg_err(None, "[sweep] needs k > 0, positive h values and at least one order"));
            }
            if family == SweepFamily::PlaneWave && orders.contains(&0) {
                return Err(cfg_err(r.line_of("sweep", "orders"), "plane-wave sweeps need p >= 1"));
            }
            Some(SweepConfig { family, k, hs, orders })
        } else {
            None
        };

        // [run]
        let seed = r.or("run", "seed", def.seed, |s| s.parse::<u64>().map_err(|e| e.to_string()))?;

        for (sec, map) in &r.sections {
            if let Some((key, (line, _))) = map.iter().next() {
                return Err(cfg_err(Some(*line), format!("unknown key '{sec}.{key}'")));
            }
        }
        let cfg = RunConfig { problem, method, basis, schedule, output, sweep, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config file; relative paths are taken from its directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// Cross-section consistency.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let kind = self.method.kind;
        match (&self.problem.domain, kind) {
            (Domain::Disc { .. }, k) if k != MethodKind::Mfs => {
                return Err(cfg_err(None, "domain = disc is only available for method = mfs"));
            }
            (Domain::MeshFile(_), MethodKind::Mfs) => {
                return Err(cfg_err(None, "method = mfs needs a rect or disc domain"));
            }
            (_, MethodKind::Mfs) if self.schedule.levels != [1] => {
                return Err(cfg_err(None, "method = mfs is mesh-free; vary schedule.p_values (pole counts) instead of levels"));
            }
            (Domain::MeshFile(_), _) if self.schedule.levels.len() > 1 => {
                return Err(cfg_err(None, "a mesh file gives a single level; use schedule.p_values to vary the basis"));
            }
            _ => {}
        }
        if kind.is_single_element() {
            if !matches!(self.problem.domain, Domain::Rect { .. }) || self.schedule.levels != [1] {
                return Err(cfg_err(None, "direct/indirect methods run on a single rectangular element (levels = 1)"));
            }
        }
        if kind == MethodKind::Tdg && !(self.method.a > 0.0 && self.method.b > 0.0 && self.method.d > 0.0) {
            return Err(cfg_err(None, "flux parameters a, b, d must be positive"));
        }
        if let ExactKind::Fundamental { pole } = self.problem.exact {
            let inside = match &self.problem.domain {
                Domain::Rect { rect, .. } => pole.x >= rect.x0 && pole.x <= rect.x1 && pole.y >= rect.y0 && pole.y <= rect.y1,
                Domain::Disc { center, radius, .. } => pole.dist(*center) <= *radius,
                Domain::MeshFile(_) => false, // checked against the mesh at run time
            };
            if inside {
                return Err(cfg_err(None, "the fundamental-solution pole must lie outside the closed domain"));
            }
        }
        Ok(())
    }

    /// Effective configuration with every default spelled out.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.problem;
        let _ = writeln!(s, "[problem]");
        match &p.domain {
            Domain::Rect { rect, tags } => {
                let _ = writeln!(s, "domain = rect");
                let _ = writeln!(s, "rect = {}", join(&[rect.x0, rect.x1, rect.y0, rect.y1]));
                let _ = writeln!(s, "tags = {}", format_tags(tags));
            }
            Domain::MeshFile(path) => {
                let _ = writeln!(s, "domain = mesh");
                let _ = writeln!(s, "mesh_file = {}", path.display());
            }
            Domain::Disc { center, radius, tag } => {
                let _ = writeln!(s, "domain = disc");
                let _ = writeln!(s, "center = {}", format_point(*center));
                let _ = writeln!(s, "radius = {radius}");
                let _ = writeln!(s, "tag = {}", tag.letter());
            }
        }
        let _ = writeln!(s, "k = {}", p.k);
        let _ = writeln!(s, "theta = {}", p.theta);
        match &p.exact {
            ExactKind::PlaneWave { angle, gamma } => {
                let _ = writeln!(s, "exact = plane_wave\nexact_angle = {angle}\nexact_gamma = {gamma}");
            }
            ExactKind::FourierBessel { center, order } => {
                let _ = writeln!(s, "exact = fourier_bessel\nexact_center = {}\nexact_order = {order}", format_point(*center));
            }
            ExactKind::Fundamental { pole } => {
                let _ = writeln!(s, "exact = fundamental\nexact_pole = {}", format_point(*pole));
            }
        }

        let m = &self.method;
        let _ = writeln!(s, "\n[method]\nname = {}", m.kind.name());
        match m.kind {
            MethodKind::Tdg => {
                let _ = writeln!(s, "flux = {}\na = {}\nb = {}\nd = {}", m.flux.name(), m.a, m.b, m.d);
            }
            MethodKind::Ls => {
                let jump = match m.jump {
                    GradJumpMode::Full => "full",
                    GradJumpMode::NormalOnly => "normal",
                };
                let _ = writeln!(s, "lambda = {}\nsigma = {}\njump = {jump}", format_weight(m.lambda), format_weight(m.sigma));
            }
            MethodKind::Vtcr => {
                let _ = writeln!(s, "c1 = {}\nc2 = {}", format_complex(m.c1), format_complex(m.c2));
            }
            MethodKind::Wbm => {
                let _ = writeln!(s, "z_int = {}", format_complex(m.z_int));
            }
            MethodKind::Mfs => {
                let mode = match m.mfs_mode {
                    MfsMode::Collocation => "collocation",
                    MfsMode::LeastSquares => "least_squares",
                };
                let _ = writeln!(
                    s,
                    "mfs_poles = {}\nmfs_radius = {}\nmfs_mode = {mode}\nmfs_oversampling = {}",
                    m.mfs_poles, m.mfs_radius, m.mfs_oversampling
                );
            }
            MethodKind::Direct | MethodKind::Indirect => {
                let pairing = match m.pairing {
                    PairingChoice::Conjugated => "conjugated",
                    PairingChoice::Bilinear => "bilinear",
                };
                let _ = writeln!(s, "pairing = {pairing}");
            }
            MethodKind::Uwvf => {}
        }
        match m.solver {
            Solver::Direct => {
                let _ = writeln!(s, "solver = direct");
            }
            Solver::Tsvd(t) => {
                let _ = writeln!(s, "solver = tsvd\ntsvd_threshold = {t}");
            }
        }
        let _ = writeln!(s, "orthonormalize = {}", m.orthonormalize);

        let _ = writeln!(s, "\n[basis]");
        let _ = match &self.basis {
            BasisSpec::PlaneWave { p } => writeln!(s, "family = pw\np = {p}"),
            BasisSpec::Ghp { q, scaled } => writeln!(s, "family = ghp\nq = {q}\nscaled = {scaled}"),
            BasisSpec::Multipole { q, offset } => writeln!(s, "family = multipole\nq = {q}\noffset = {offset}"),
            BasisSpec::Wbm { n } => writeln!(s, "family = wbm\nn = {n}"),
            BasisSpec::Mfs { count, radius_factor } => writeln!(s, "family = mfs\ncount = {count}\nradius_factor = {radius_factor}"),
        };

        let _ = writeln!(s, "\n[schedule]\nlevels = {}", join(&self.schedule.levels));
        if !self.schedule.p_values.is_empty() {
            let _ = writeln!(s, "p_values = {}", join(&self.schedule.p_values));
        }

        let o = &self.output;
        let _ = writeln!(s, "\n[output]");
        for (key, path) in [("study_csv", &o.study_csv), ("field_csv", &o.field_csv), ("conditioning_csv", &o.conditioning_csv)] {
            if let Some(p) = path {
                let _ = writeln!(s, "{key} = {}", p.display());
            }
        }
        let _ = writeln!(s, "field_nx = {}\nfield_ny = {}\ncond = {}", o.field_nx, o.field_ny, o.cond);

        if let Some(sw) = &self.sweep {
            let _ = writeln!(
                s,
                "\n[sweep]\nfamily = {}\nk = {}\nh = {}\norders = {}",
                sw.family.name(),
                sw.k,
                join(&sw.hs),
                join(&sw.orders)
            );
        }
        let _ = writeln!(s, "\n[run]\nseed = {}", self.seed);
        s
    }
}
