//! Polygonal meshes of 2D domains and their skeleton.
//!
//! A [`Mesh`] owns vertices, counter-clockwise element polygons and the
//! boundary tagging. The skeleton is extracted once at construction: every
//! element edge is split at vertices lying on it (hanging nodes), so that each
//! stored [`Facet`] is a straight segment shared by one or two elements.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{self, Point2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("empty Robin boundary")]
    EmptyRobinBoundary,
    #[error("grid needs at least one cell per direction, got {nx}x{ny}")]
    EmptyGrid { nx: usize, ny: usize },
    #[error("degenerate domain rectangle")]
    DegenerateDomain,
    #[error("element {element} references vertex {vertex} out of range")]
    VertexOutOfRange { element: usize, vertex: usize },
    #[error("element {element} has fewer than three vertices")]
    TooFewVertices { element: usize },
    #[error("element {element} is not counter-clockwise (signed area {area})")]
    Orientation { element: usize, area: f64 },
    #[error("element {element} is not a simple polygon")]
    NotSimple { element: usize },
    #[error("vertices {0} and {1} coincide")]
    DuplicateVertex(usize, usize),
    #[error("edge {0}-{1} is shared by more than two elements")]
    OverSharedEdge(usize, usize),
    #[error("edge {0}-{1} is traversed in the same direction by two elements")]
    InconsistentOrientation(usize, usize),
    #[error("boundary facet {0}-{1} has no tag")]
    UntaggedBoundary(usize, usize),
    #[error("mesh file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Boundary condition type of a boundary facet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Dirichlet,
    Robin,
}

impl BoundaryTag {
    pub fn letter(self) -> char {
        match self {
            BoundaryTag::Dirichlet => 'D',
            BoundaryTag::Robin => 'R',
        }
    }

    pub fn from_letter(s: &str) -> Option<Self> {
        match s {
            "D" | "d" => Some(BoundaryTag::Dirichlet),
            "R" | "r" => Some(BoundaryTag::Robin),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FacetKind {
    /// Shared by two elements; `k1 < k2` and the stored normal points out of `k1`.
    Interior { k1: usize, k2: usize },
    Boundary { element: usize, tag: BoundaryTag },
}

/// One straight skeleton segment.
#[derive(Clone, Debug)]
pub struct Facet {
    /// Endpoints, ordered counter-clockwise with respect to the first element.
    pub a: Point2,
    pub b: Point2,
    /// Vertex indices of the endpoints.
    pub vertices: (usize, usize),
    pub length: f64,
    pub kind: FacetKind,
    /// Outward unit normal of the first (or only) adjacent element.
    pub normal: Point2,
}

impl Facet {
    pub fn first_element(&self) -> usize {
        match self.kind {
            FacetKind::Interior { k1, .. } => k1,
            FacetKind::Boundary { element, .. } => element,
        }
    }

    pub fn is_interior(&self) -> bool {
        matches!(self.kind, FacetKind::Interior { .. })
    }

    pub fn tag(&self) -> Option<BoundaryTag> {
        match self.kind {
            FacetKind::Boundary { tag, .. } => Some(tag),
            FacetKind::Interior { .. } => None,
        }
    }

    /// Outward unit normal seen from `element`; `None` if it is not adjacent.
    pub fn normal_for(&self, element: usize) -> Option<Point2> {
        match self.kind {
            FacetKind::Interior { k1, .. } if element == k1 => Some(self.normal),
            FacetKind::Interior { k2, .. } if element == k2 => Some(-self.normal),
            FacetKind::Boundary { element: e, .. } if e == element => Some(self.normal),
            _ => None,
        }
    }

    pub fn midpoint(&self) -> Point2 {
        (self.a + self.b) * 0.5
    }

    /// Point at parameter `t` in `[0, 1]`.
    pub fn point_at(&self, t: f64) -> Point2 {
        self.a + (self.b - self.a) * t
    }
}

/// Geometric quantities of one element.
#[derive(Clone, Copy, Debug)]
pub struct ElementMetrics {
    /// h_K, the polygon diameter.
    pub diameter: f64,
    pub barycentre: Point2,
    /// Radius of the largest circle centred at the barycentre inside the element.
    pub inradius: f64,
    pub area: f64,
}

/// Tags for the four sides of an axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SideTags {
    pub bottom: BoundaryTag,
    pub right: BoundaryTag,
    pub top: BoundaryTag,
    pub left: BoundaryTag,
}

impl SideTags {
    pub fn uniform(tag: BoundaryTag) -> Self {
        Self { bottom: tag, right: tag, top: tag, left: tag }
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point2>,
    elements: Vec<Vec<usize>>,
    boundary: Vec<(usize, usize, BoundaryTag)>,
    facets: Vec<Facet>,
    element_facets: Vec<Vec<usize>>,
    metrics: Vec<ElementMetrics>,
}

impl Mesh {
    /// Validates the input and extracts the skeleton.
    pub fn new(
        vertices: Vec<Point2>,
        elements: Vec<Vec<usize>>,
        boundary: Vec<(usize, usize, BoundaryTag)>,
    ) -> Result<Self, MeshError> {
        let scale = bbox_diag(&vertices).max(f64::MIN_POSITIVE);
        let tol = 1e-10 * scale;

        for i in 0..vertices.len() {
            for j in (i + 1)..vertices.len() {
                if vertices[i].dist(vertices[j]) <= tol {
                    return Err(MeshError::DuplicateVertex(i, j));
                }
            }
        }

        let mut metrics = Vec::with_capacity(elements.len());
        for (e, el) in elements.iter().enumerate() {
            if el.len() < 3 {
                return Err(MeshError::TooFewVertices { element: e });
            }
            if let Some(&v) = el.iter().find(|&&v| v >= vertices.len()) {
                return Err(MeshError::VertexOutOfRange { element: e, vertex: v });
            }
            let poly: Vec<Point2> = el.iter().map(|&v| vertices[v]).collect();
            if !is_simple(&poly, tol) {
                return Err(MeshError::NotSimple { element: e });
            }
            let area = geometry::signed_area(&poly);
            if area <= 0.0 {
                return Err(MeshError::Orientation { element: e, area });
            }
            metrics.push(element_metrics(&poly, area));
        }

        let mut mesh = Mesh {
            vertices,
            elements,
            boundary,
            facets: Vec::new(),
            element_facets: Vec::new(),
            metrics,
        };
        mesh.build_skeleton(tol)?;
        if !mesh
            .facets
            .iter()
            .any(|f| f.tag() == Some(BoundaryTag::Robin))
        {
            return Err(MeshError::EmptyRobinBoundary);
        }
        Ok(mesh)
    }

    fn build_skeleton(&mut self, tol: f64) -> Result<(), MeshError> {
        // fragment key (sorted vertex pair) -> facet index
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        let mut element_facets = vec![Vec::new(); self.elements.len()];

        for (e, el) in self.elements.iter().enumerate() {
            let n = el.len();
            for i in 0..n {
                let (va, vb) = (el[i], el[(i + 1) % n]);
                for (fa, fb) in split_edge(&self.vertices, va, vb, tol) {
                    let key = (fa.min(fb), fa.max(fb));
                    match seen.get(&key) {
                        None => {
                            let (a, b) = (self.vertices[fa], self.vertices[fb]);
                            let length = a.dist(b);
                            let t = (b - a) * (1.0 / length);
                            facets.push(Facet {
                                a,
                                b,
                                vertices: (fa, fb),
                                length,
                                // provisional; fixed below for unmatched fragments
                                kind: FacetKind::Boundary { element: e, tag: BoundaryTag::Robin },
                                normal: Point2::new(t.y, -t.x),
                            });
                            seen.insert(key, facets.len() - 1);
                            element_facets[e].push(facets.len() - 1);
                        }
                        Some(&fi) => {
                            let f = &mut facets[fi];
                            let FacetKind::Boundary { element: k1, .. } = f.kind else {
                                return Err(MeshError::OverSharedEdge(key.0, key.1));
                            };
                            if f.vertices != (fb, fa) {
                                return Err(MeshError::InconsistentOrientation(key.0, key.1));
                            }
                            f.kind = FacetKind::Interior { k1, k2: e };
                            element_facets[e].push(fi);
                        }
                    }
                }
            }
        }

        for f in facets.iter_mut() {
            if let FacetKind::Boundary { element, .. } = f.kind {
                let tag = self
                    .boundary
                    .iter()
                    .find(|&&(qa, qb, _)| {
                        let (qa, qb) = (self.vertices[qa], self.vertices[qb]);
                        geometry::point_segment_distance(f.a, qa, qb) <= tol
                            && geometry::point_segment_distance(f.b, qa, qb) <= tol
                    })
                    .map(|&(_, _, t)| t)
                    .ok_or(MeshError::UntaggedBoundary(f.vertices.0, f.vertices.1))?;
                f.kind = FacetKind::Boundary { element, tag };
            }
        }

        self.facets = facets;
        self.element_facets = element_facets;
        Ok(())
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn boundary_tags(&self) -> &[(usize, usize, BoundaryTag)] {
        &self.boundary
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Facet indices adjacent to element `e`.
    pub fn element_facets(&self, e: usize) -> &[usize] {
        &self.element_facets[e]
    }

    pub fn metrics(&self, e: usize) -> &ElementMetrics {
        &self.metrics[e]
    }

    pub fn polygon(&self, e: usize) -> Vec<Point2> {
        self.elements[e].iter().map(|&v| self.vertices[v]).collect()
    }

    /// Global mesh width h = max h_K.
    pub fn h(&self) -> f64 {
        self.metrics.iter().map(|m| m.diameter).fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        self.metrics.iter().map(|m| m.area).sum()
    }

    /// Area centroid of the whole domain.
    pub fn barycentre(&self) -> Point2 {
        let area = self.total_area();
        let mut c = Point2::default();
        for m in &self.metrics {
            c = c + m.barycentre * (m.area / area);
        }
        c
    }

    /// `(min, max)` corners of the bounding box.
    pub fn bounding_box(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = Point2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Point2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }

    /// First element containing `p` (closed polygons), if any.
    pub fn locate(&self, p: Point2) -> Option<usize> {
        let tol = 1e-12 * bbox_diag(&self.vertices);
        (0..self.elements.len()).find(|&e| geometry::point_in_polygon(p, &self.polygon(e), tol))
    }

    /// Serializes to the plain-text mesh format read by [`load_mesh`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:?} {:?}", v.x, v.y);
        }
        let _ = writeln!(s, "elements {}", self.elements.len());
        for el in &self.elements {
            let idx: Vec<String> = el.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{} {}", el.len(), idx.join(" "));
        }
        let _ = writeln!(s, "boundary {}", self.boundary.len());
        for &(a, b, t) in &self.boundary {
            let _ = writeln!(s, "{a} {b} {}", t.letter());
        }
        s
    }
}

fn bbox_diag(vertices: &[Point2]) -> f64 {
    if vertices.is_empty() {
        return 0.0;
    }
    let (mut lo, mut hi) = (vertices[0], vertices[0]);
    for v in vertices {
        lo = Point2::new(lo.x.min(v.x), lo.y.min(v.y));
        hi = Point2::new(hi.x.max(v.x), hi.y.max(v.y));
    }
    lo.dist(hi)
}

fn is_simple(poly: &[Point2], tol: f64) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (p1, p2) = (poly[i], poly[(i + 1) % n]);
        if p1.dist(p2) <= tol {
            return false;
        }
        for j in (i + 1)..n {
            // skip edges sharing a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (q1, q2) = (poly[j], poly[(j + 1) % n]);
            if geometry::segments_intersect(p1, p2, q1, q2, tol) {
                return false;
            }
        }
    }
    true
}

fn element_metrics(poly: &[Point2], area: f64) -> ElementMetrics {
    let mut diameter: f64 = 0.0;
    for (i, p) in poly.iter().enumerate() {
        for q in &poly[i + 1..] {
            diameter = diameter.max(p.dist(*q));
        }
    }
    let barycentre = geometry::centroid(poly);
    let n = poly.len();
    let inradius = (0..n)
        .map(|i| geometry::point_segment_distance(barycentre, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
        .min(0.5 * diameter);
    ElementMetrics { diameter, barycentre, inradius, area }
}

/// Splits edge `va -> vb` at every other vertex lying on its interior.
fn split_edge(vertices: &[Point2], va: usize, vb: usize, tol: f64) -> Vec<(usize, usize)> {
    let (a, b) = (vertices[va], vertices[vb]);
    let ab = b - a;
    let len2 = ab.dot(ab);
    let mut cuts: Vec<(f64, usize)> = vertices
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != va && i != vb)
        .filter_map(|(i, &p)| {
            let t = (p - a).dot(ab) / len2;
            let inside = t > 0.0 && t < 1.0;
            (inside && geometry::point_segment_distance(p, a, b) <= tol).then_some((t, i))
        })
        .collect();
    cuts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut chain = Vec::with_capacity(cuts.len() + 2);
    chain.push(va);
    chain.extend(cuts.into_iter().map(|(_, i)| i));
    chain.push(vb);
    chain.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Conforming `nx x ny` grid of rectangles with per-side boundary tags.
pub fn generate_rect_grid(
    domain: Rect,
    nx: usize,
    ny: usize,
    tags: SideTags,
) -> Result<Mesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::EmptyGrid { nx, ny });
    }
    if !(domain.x1 > domain.x0 && domain.y1 > domain.y0) {
        return Err(MeshError::DegenerateDomain);
    }
    let all = [tags.bottom, tags.right, tags.top, tags.left];
    if !all.contains(&BoundaryTag::Robin) {
        return Err(MeshError::EmptyRobinBoundary);
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = domain.y0 + (domain.y1 - domain.y0) * j as f64 / ny as f64;
        for i in 0..=nx {
            let x = domain.x0 + (domain.x1 - domain.x0) * i as f64 / nx as f64;
            vertices.push(Point2::new(x, y));
        }
    }
    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push(vec![idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let mut boundary = Vec::new();
    for i in 0..nx {
        boundary.push((idx(i, 0), idx(i + 1, 0), tags.bottom));
        boundary.push((idx(i + 1, ny), idx(i, ny), tags.top));
    }
    for j in 0..ny {
        boundary.push((idx(nx, j), idx(nx, j + 1), tags.right));
        boundary.push((idx(0, j + 1), idx(0, j), tags.left));
    }
    Mesh::new(vertices, elements, boundary)
}

/// Parses the plain-text mesh format:
///
/// ```text
/// vertices N
/// x y            (N lines)
/// elements M
/// k v0 .. vk-1   (M lines)
/// boundary B
/// va vb TAG      (B lines, TAG in {D, R})
/// ```
pub fn load_mesh(text: &str) -> Result<Mesh, MeshError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let mut cursor = lines.into_iter();
    let mut next = || cursor.next();
    let err = |line: usize, msg: &str| MeshError::Parse { line, msg: msg.to_string() };

    let nv = read_header(next(), "vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = next().ok_or_else(|| err(0, "unexpected end of file in vertices"))?;
        let xs: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(ln, "bad coordinate")))
            .collect::<Result<_, _>>()?;
        if xs.len() != 2 {
            return Err(err(ln, "expected 'x y'"));
        }
        vertices.push(Point2::new(xs[0], xs[1]));
    }

    let ne = read_header(next(), "elements")?;
    let mut elements = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (ln, l) = next().ok_or_else(|| err(0, "unexpected end of file in elements"))?;
        let ids: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| err(ln, "bad vertex index")))
            .collect::<Result<_, _>>()?;
        if ids.is_empty() || ids[0] + 1 != ids.len() {
            return Err(err(ln, "vertex count does not match"));
        }
        elements.push(ids[1..].to_vec());
    }

    let nb = read_header(next(), "boundary")?;
    let mut boundary = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, l) = next().ok_or_else(|| err(0, "unexpected end of file in boundary"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(err(ln, "expected 'va vb TAG'"));
        }
        let va = toks[0].parse().map_err(|_| err(ln, "bad vertex index"))?;
        let vb = toks[1].parse().map_err(|_| err(ln, "bad vertex index"))?;
        let tag = BoundaryTag::from_letter(toks[2]).ok_or_else(|| err(ln, "tag must be D or R"))?;
        if va >= nv || vb >= nv {
            return Err(err(ln, "boundary vertex out of range"));
        }
        boundary.push((va, vb, tag));
    }
    if let Some((ln, _)) = next() {
        return Err(err(ln, "trailing content"));
    }
    Mesh::new(vertices, elements, boundary)
}

fn read_header(line: Option<(usize, &str)>, name: &str) -> Result<usize, MeshError> {
    let err = |line: usize, msg: String| MeshError::Parse { line, msg };
    let (ln, l) = line.ok_or_else(|| err(0, format!("missing '{name}' section")))?;
    let mut it = l.split_whitespace();
    if it.next() != Some(name) {
        return Err(err(ln, format!("expected '{name} <count>'")));
    }
    it.next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| err(ln, "bad count".into()))
}

/// Skeleton of a mesh; facets are extracted once when the mesh is built.
pub fn extract_skeleton(mesh: &Mesh) -> &[Facet] {
    mesh.facets()
}
