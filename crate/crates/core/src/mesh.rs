//! Tetrahedral mesh, P1 finite element assembly and point location.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::{Deref, DerefMut};
use std::path::Path;

use crate::error::MeshError;
use crate::sparse::CsrMatrix;

pub type Point = [f64; 3];

/// Barycentric coordinates of the four degree-2 quadrature points.
const QA: f64 = 0.585_410_196_624_968_5;
const QB: f64 = 0.138_196_601_125_010_5;
pub const QUAD_BARY: [[f64; 4]; 4] = [
    [QA, QB, QB, QB],
    [QB, QA, QB, QB],
    [QB, QB, QA, QB],
    [QB, QB, QB, QA],
];
pub const N_QUAD: usize = 4;

/// Piecewise-linear scalar field with one value per mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub values: Vec<f64>,
    pub unit: &'static str,
}

impl NodalField {
    pub fn new(values: Vec<f64>, unit: &'static str) -> Self {
        Self { values, unit }
    }

    pub fn constant(n: usize, value: f64, unit: &'static str) -> Self {
        Self {
            values: vec![value; n],
            unit,
        }
    }
}

impl Deref for NodalField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for NodalField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLocation {
    pub tet: usize,
    pub bary: [f64; 4],
}

#[derive(Debug, Clone)]
struct TetGeometry {
    volume: f64,
    grads: [Point; 4],
    origin: Point,
    size: f64,
}

/// Sparsity pattern of the P1 operators plus, for every element, the
/// position of each local `(a, b)` pair in the CSR data array.
#[derive(Debug, Clone)]
struct P1Pattern {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    slots: Vec<[usize; 16]>,
}

#[derive(Debug, Clone)]
struct Locator {
    lo: Point,
    cell: Point,
    dims: [usize; 3],
    cells: Vec<Vec<usize>>,
}

/// Conforming tetrahedral mesh of the tissue domain.
#[derive(Debug, Clone)]
pub struct TetMesh {
    nodes: Vec<Point>,
    tets: Vec<[usize; 4]>,
    boundary_faces: Vec<[usize; 3]>,
    geometry: Vec<TetGeometry>,
    pattern: P1Pattern,
    locator: Locator,
    lumped: Vec<f64>,
    bbox: (Point, Point),
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn signed_volume(p: [Point; 4]) -> f64 {
    let (e1, e2, e3) = (sub(p[1], p[0]), sub(p[2], p[0]), sub(p[3], p[0]));
    dot3(e1, cross(e2, e3)) / 6.0
}

fn tet_geometry(p: [Point; 4]) -> TetGeometry {
    let (e1, e2, e3) = (sub(p[1], p[0]), sub(p[2], p[0]), sub(p[3], p[0]));
    let det = dot3(e1, cross(e2, e3));
    // rows of the inverse of [e1 e2 e3] (columns)
    let g1 = cross(e2, e3).map(|v| v / det);
    let g2 = cross(e3, e1).map(|v| v / det);
    let g3 = cross(e1, e2).map(|v| v / det);
    let g0 = [
        -(g1[0] + g2[0] + g3[0]),
        -(g1[1] + g2[1] + g3[1]),
        -(g1[2] + g2[2] + g3[2]),
    ];
    let mut size = 0.0f64;
    for a in 0..4 {
        for b in a + 1..4 {
            let d = sub(p[a], p[b]);
            size = size.max(dot3(d, d).sqrt());
        }
    }
    TetGeometry {
        volume: det / 6.0,
        grads: [g0, g1, g2, g3],
        origin: p[0],
        size,
    }
}

impl TetMesh {
    /// Validates and builds a mesh. Every element must have positive
    /// orientation and every node must belong to some element.
    pub fn new(nodes: Vec<Point>, tets: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        let n = nodes.len();
        let mut used = vec![false; n];
        let mut geometry = Vec::with_capacity(tets.len());
        for (e, t) in tets.iter().enumerate() {
            for &v in t {
                if v >= n {
                    return Err(MeshError::BadNodeIndex {
                        element: e,
                        node: v,
                        count: n,
                    });
                }
                used[v] = true;
            }
            let p = t.map(|v| nodes[v]);
            let vol = signed_volume(p);
            let scale = {
                let d = sub(p[1], p[0]);
                dot3(d, d).max(1e-300).powf(1.5)
            };
            if !(vol > 1e-14 * scale) {
                return Err(MeshError::InvertedElement {
                    element: e,
                    volume: vol,
                });
            }
            geometry.push(tet_geometry(p));
        }
        if let Some(node) = used.iter().position(|u| !u) {
            return Err(MeshError::DanglingNode { node });
        }

        let boundary_faces = extract_boundary(&tets);
        let pattern = build_pattern(n, &tets);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &nodes {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let locator = build_locator(&nodes, &tets, lo, hi);
        let mut lumped = vec![0.0; n];
        for (t, g) in tets.iter().zip(&geometry) {
            for &v in t {
                lumped[v] += g.volume / 4.0;
            }
        }
        Ok(Self {
            nodes,
            tets,
            boundary_faces,
            geometry,
            pattern,
            locator,
            lumped,
            bbox: (lo, hi),
        })
    }

    /// Structured mesh of the cube `[0, edge]³` with `n` cells per side,
    /// each cell split into six tetrahedra sharing the main diagonal.
    pub fn cube(n: usize, edge: f64) -> Self {
        Self::box_mesh([n, n, n], [0.0; 3], [edge; 3])
    }

    pub fn box_mesh(n: [usize; 3], lo: Point, hi: Point) -> Self {
        assert!(n.iter().all(|&k| k >= 1));
        let id = |i: usize, j: usize, k: usize| i + (n[0] + 1) * (j + (n[1] + 1) * k);
        let mut nodes = Vec::with_capacity((n[0] + 1) * (n[1] + 1) * (n[2] + 1));
        for k in 0..=n[2] {
            for j in 0..=n[1] {
                for i in 0..=n[0] {
                    let f = [i as f64 / n[0] as f64, j as f64 / n[1] as f64, k as f64 / n[2] as f64];
                    nodes.push([
                        lo[0] + f[0] * (hi[0] - lo[0]),
                        lo[1] + f[1] * (hi[1] - lo[1]),
                        lo[2] + f[2] * (hi[2] - lo[2]),
                    ]);
                }
            }
        }
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut tets = Vec::with_capacity(6 * n[0] * n[1] * n[2]);
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    for perm in PERMS {
                        let mut c = [i, j, k];
                        let mut t = [id(c[0], c[1], c[2]); 4];
                        for (s, &axis) in perm.iter().enumerate() {
                            c[axis] += 1;
                            t[s + 1] = id(c[0], c[1], c[2]);
                        }
                        let p = t.map(|v| nodes[v]);
                        if signed_volume(p) < 0.0 {
                            t.swap(2, 3);
                        }
                        tets.push(t);
                    }
                }
            }
        }
        Self::new(nodes, tets).expect("structured box mesh is valid")
    }

    /// Reads the plain-text mesh format: a header `N_nodes N_tets`, then one
    /// `x y z` line per node and one `i j k l` line (0-based) per element.
    pub fn load(path: &Path) -> Result<Self, MeshError> {
        let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, name: &str) -> Result<Self, MeshError> {
        let err = |line: usize, msg: String| MeshError::Parse {
            path: name.to_string(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or_else(|| err(1, "empty mesh file".into()))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(hl, format!("bad header: {e}")))?;
        if h.len() != 2 {
            return Err(err(hl, "header must be `N_nodes N_tets`".into()));
        }
        let mut nodes = Vec::with_capacity(h[0]);
        for _ in 0..h[0] {
            let (ln, l) = lines.next().ok_or_else(|| err(hl, "unexpected end of file in node list".into()))?;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| err(ln, format!("bad coordinate: {e}")))?;
            if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
                return Err(err(ln, "node line must hold three finite coordinates".into()));
            }
            nodes.push([v[0], v[1], v[2]]);
        }
        let mut tets = Vec::with_capacity(h[1]);
        for _ in 0..h[1] {
            let (ln, l) = lines.next().ok_or_else(|| err(hl, "unexpected end of file in element list".into()))?;
            let v: Vec<usize> = l
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| err(ln, format!("bad node index: {e}")))?;
            if v.len() != 4 {
                return Err(err(ln, "element line must hold four node indices".into()));
            }
            tets.push([v[0], v[1], v[2], v[3]]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing data after element list".into()));
        }
        Self::new(nodes, tets)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.nodes.len(), self.tets.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
        }
        for t in &self.tets {
            let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], t[3]);
        }
        s
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn boundary_faces(&self) -> &[[usize; 3]] {
        &self.boundary_faces
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.boundary_faces.iter().flatten().copied().collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    pub fn volume(&self, tet: usize) -> f64 {
        self.geometry[tet].volume
    }

    pub fn total_volume(&self) -> f64 {
        self.geometry.iter().map(|g| g.volume).sum()
    }

    /// Largest edge length of element `tet`.
    pub fn tet_size(&self, tet: usize) -> f64 {
        self.geometry[tet].size
    }

    pub fn max_h(&self) -> f64 {
        self.geometry.iter().fold(0.0, |m, g| m.max(g.size))
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        let d = sub(self.bbox.1, self.bbox.0);
        dot3(d, d).sqrt()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        self.bbox
    }

    /// Gradients of the four barycentric basis functions on `tet`.
    pub fn basis_gradients(&self, tet: usize) -> &[Point; 4] {
        &self.geometry[tet].grads
    }

    /// `∫ η_l` for every node.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    pub fn quad_point(&self, tet: usize, q: usize) -> Point {
        self.point_from_bary(tet, &QUAD_BARY[q])
    }

    pub fn point_from_bary(&self, tet: usize, bary: &[f64; 4]) -> Point {
        let t = self.tets[tet];
        let mut x = [0.0; 3];
        for a in 0..4 {
            for d in 0..3 {
                x[d] += bary[a] * self.nodes[t[a]][d];
            }
        }
        x
    }

    /// Interpolated value of a nodal field at barycentric point `bary` of `tet`.
    pub fn eval(&self, field: &[f64], tet: usize, bary: &[f64; 4]) -> f64 {
        let t = self.tets[tet];
        (0..4).map(|a| bary[a] * field[t[a]]).sum()
    }

    pub fn eval_qp(&self, field: &[f64], tet: usize, q: usize) -> f64 {
        self.eval(field, tet, &QUAD_BARY[q])
    }

    /// Piecewise-constant gradient of a nodal field, one vector per element.
    pub fn gradient(&self, field: &[f64]) -> Result<Vec<Point>, MeshError> {
        self.check_len(field)?;
        Ok((0..self.tets.len()).map(|e| self.tet_gradient(field, e)).collect())
    }

    pub fn tet_gradient(&self, field: &[f64], tet: usize) -> Point {
        let t = self.tets[tet];
        let g = &self.geometry[tet].grads;
        let mut out = [0.0; 3];
        for a in 0..4 {
            for d in 0..3 {
                out[d] += field[t[a]] * g[a][d];
            }
        }
        out
    }

    /// `∫_Ω u` for a P1 field (exact).
    pub fn integrate(&self, field: &[f64]) -> Result<f64, MeshError> {
        self.check_len(field)?;
        Ok(crate::sparse::dot(&self.lumped, field))
    }

    /// `∫_Ω f` for a coefficient given at quadrature points.
    pub fn integrate_with(&self, f: impl Fn(usize, usize) -> f64) -> f64 {
        let mut s = 0.0;
        for e in 0..self.tets.len() {
            let w = self.geometry[e].volume / 4.0;
            for q in 0..N_QUAD {
                s += w * f(e, q);
            }
        }
        s
    }

    fn check_len(&self, field: &[f64]) -> Result<(), MeshError> {
        if field.len() != self.nodes.len() {
            return Err(MeshError::DimensionMismatch {
                expected: self.nodes.len(),
                got: field.len(),
            });
        }
        Ok(())
    }

    fn empty_operator(&self) -> CsrMatrix {
        let n = self.nodes.len();
        CsrMatrix::from_raw(
            n,
            n,
            self.pattern.indptr.clone(),
            self.pattern.indices.clone(),
            vec![0.0; self.pattern.indices.len()],
        )
    }

    /// `M[l,j] = ∫ c η_j η_l` with `c` given per element and quadrature point.
    pub fn mass_with(&self, coeff: impl Fn(usize, usize) -> f64) -> CsrMatrix {
        let mut m = self.empty_operator();
        let data = m.data_mut();
        for e in 0..self.tets.len() {
            let w = self.geometry[e].volume / 4.0;
            let slots = &self.pattern.slots[e];
            for (q, lam) in QUAD_BARY.iter().enumerate() {
                let c = coeff(e, q) * w;
                if c == 0.0 {
                    continue;
                }
                for a in 0..4 {
                    for b in 0..4 {
                        data[slots[4 * a + b]] += c * (lam[a] * lam[b]);
                    }
                }
            }
        }
        m
    }

    /// `K[l,j] = ∫ c ∇η_j·∇η_l`.
    pub fn stiffness_with(&self, coeff: impl Fn(usize, usize) -> f64) -> CsrMatrix {
        let mut m = self.empty_operator();
        let data = m.data_mut();
        for e in 0..self.tets.len() {
            let geo = &self.geometry[e];
            let c: f64 = (0..N_QUAD).map(|q| coeff(e, q)).sum::<f64>() * geo.volume / 4.0;
            if c == 0.0 {
                continue;
            }
            let slots = &self.pattern.slots[e];
            for a in 0..4 {
                for b in 0..4 {
                    data[slots[4 * a + b]] += c * dot3(geo.grads[a], geo.grads[b]);
                }
            }
        }
        m
    }

    /// `A[l,j] = ∫ c (v·∇η_j) η_l` with `v` constant per element.
    pub fn advection_with(&self, velocity: &[Point], coeff: impl Fn(usize, usize) -> f64) -> CsrMatrix {
        assert_eq!(velocity.len(), self.tets.len());
        let mut m = self.empty_operator();
        let data = m.data_mut();
        for e in 0..self.tets.len() {
            let geo = &self.geometry[e];
            let v = velocity[e];
            let vg: [f64; 4] = std::array::from_fn(|b| dot3(v, geo.grads[b]));
            let slots = &self.pattern.slots[e];
            for (q, lam) in QUAD_BARY.iter().enumerate() {
                let c = coeff(e, q) * geo.volume / 4.0;
                if c == 0.0 {
                    continue;
                }
                for a in 0..4 {
                    for b in 0..4 {
                        data[slots[4 * a + b]] += c * lam[a] * vg[b];
                    }
                }
            }
        }
        m
    }

    /// Assembles a matrix from dense 4×4 element matrices.
    pub fn assemble_elementwise(&self, local: impl Fn(usize) -> [[f64; 4]; 4]) -> CsrMatrix {
        let mut m = self.empty_operator();
        let data = m.data_mut();
        for e in 0..self.tets.len() {
            let k = local(e);
            let slots = &self.pattern.slots[e];
            for a in 0..4 {
                for b in 0..4 {
                    data[slots[4 * a + b]] += k[a][b];
                }
            }
        }
        m
    }

    /// `b[l] = ∫ f η_l`.
    pub fn load_with(&self, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut b = vec![0.0; self.nodes.len()];
        for (e, t) in self.tets.iter().enumerate() {
            let w = self.geometry[e].volume / 4.0;
            for (q, lam) in QUAD_BARY.iter().enumerate() {
                let c = f(e, q) * w;
                for a in 0..4 {
                    b[t[a]] += c * lam[a];
                }
            }
        }
        b
    }

    /// Weighted mass matrix with a nodal weight interpolated at quadrature points.
    pub fn assemble_weighted_mass(&self, w: &[f64]) -> Result<CsrMatrix, MeshError> {
        self.check_len(w)?;
        Ok(self.mass_with(|e, q| self.eval_qp(w, e, q)))
    }

    pub fn assemble_weighted_stiffness(&self, w: &[f64]) -> Result<CsrMatrix, MeshError> {
        self.check_len(w)?;
        Ok(self.stiffness_with(|e, q| self.eval_qp(w, e, q)))
    }

    pub fn assemble_advection(&self, velocity: &[Point], w: &[f64]) -> Result<CsrMatrix, MeshError> {
        self.check_len(w)?;
        if velocity.len() != self.tets.len() {
            return Err(MeshError::DimensionMismatch {
                expected: self.tets.len(),
                got: velocity.len(),
            });
        }
        Ok(self.advection_with(velocity, |e, q| self.eval_qp(w, e, q)))
    }

    /// Barycentric coordinates of `x` with respect to `tet` (may be negative).
    pub fn barycentric(&self, tet: usize, x: Point) -> [f64; 4] {
        let g = &self.geometry[tet];
        let d = sub(x, g.origin);
        let l1 = dot3(g.grads[1], d);
        let l2 = dot3(g.grads[2], d);
        let l3 = dot3(g.grads[3], d);
        [1.0 - l1 - l2 - l3, l1, l2, l3]
    }

    /// Finds an element containing `x`. Points on shared faces, edges or
    /// vertices are assigned to one of the adjacent elements; the returned
    /// coordinates are clipped to `[0, 1]` and sum to one.
    pub fn locate_point(&self, x: Point) -> Option<PointLocation> {
        const TOL: f64 = 1e-9;
        let loc = &self.locator;
        let mut c = [0usize; 3];
        for d in 0..3 {
            let f = (x[d] - loc.lo[d]) / loc.cell[d];
            if !(f > -TOL * loc.dims[d] as f64 && f < loc.dims[d] as f64 * (1.0 + TOL)) {
                return None;
            }
            c[d] = (f.max(0.0) as usize).min(loc.dims[d] - 1);
        }
        let cell = &loc.cells[c[0] + loc.dims[0] * (c[1] + loc.dims[1] * c[2])];
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for &e in cell {
            let b = self.barycentric(e, x);
            let m = b.iter().copied().fold(f64::INFINITY, f64::min);
            if m >= 0.0 {
                best = Some((e, b, m));
                break;
            }
            if m >= -TOL && best.map_or(true, |(_, _, bm)| m > bm) {
                best = Some((e, b, m));
            }
        }
        best.map(|(tet, b, _)| {
            let mut b = b.map(|v| v.clamp(0.0, 1.0));
            let s: f64 = b.iter().sum();
            b.iter_mut().for_each(|v| *v /= s);
            PointLocation { tet, bary: b }
        })
    }

    pub fn contains(&self, x: Point) -> bool {
        self.locate_point(x).is_some()
    }

    /// Evaluates a nodal field at an arbitrary point, `None` outside the mesh.
    pub fn probe(&self, field: &[f64], x: Point) -> Option<f64> {
        self.locate_point(x).map(|l| self.eval(field, l.tet, &l.bary))
    }

    /// Legacy ASCII VTK unstructured grid with point and cell data.
    pub fn to_vtk(&self, point_data: &[(&str, &[f64])], cell_vectors: &[(&str, &[Point])]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 3.0\ntissue\nASCII\nDATASET UNSTRUCTURED_GRID");
        let _ = writeln!(s, "POINTS {} double", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
        let _ = writeln!(s, "CELLS {} {}", self.tets.len(), 5 * self.tets.len());
        for t in &self.tets {
            let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
        }
        let _ = writeln!(s, "CELL_TYPES {}", self.tets.len());
        for _ in &self.tets {
            s.push_str("10\n");
        }
        if !point_data.is_empty() {
            let _ = writeln!(s, "POINT_DATA {}", self.nodes.len());
            for (name, vals) in point_data {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for v in vals.iter() {
                    let _ = writeln!(s, "{v}");
                }
            }
        }
        if !cell_vectors.is_empty() {
            let _ = writeln!(s, "CELL_DATA {}", self.tets.len());
            for (name, vals) in cell_vectors {
                let _ = writeln!(s, "VECTORS {name} double");
                for v in vals.iter() {
                    let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
                }
            }
        }
        s
    }
}

fn extract_boundary(tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    // local faces oriented outward for a positively oriented element
    const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];
    let mut seen: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::new();
    let mut order = Vec::new();
    for t in tets {
        for f in FACES {
            let face = f.map(|a| t[a]);
            let mut key = face;
            key.sort_unstable();
            let entry = seen.entry(key).or_insert_with(|| {
                order.push(key);
                (0, face)
            });
            entry.0 += 1;
        }
    }
    order
        .into_iter()
        .filter_map(|k| {
            let (count, face) = seen[&k];
            (count == 1).then_some(face)
        })
        .collect()
}

fn build_pattern(n: usize, tets: &[[usize; 4]]) -> P1Pattern {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in tets {
        for &a in t {
            adj[a].extend_from_slice(t);
        }
    }
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    indptr.push(0);
    for row in adj.iter_mut() {
        row.sort_unstable();
        row.dedup();
        indices.extend_from_slice(row);
        indptr.push(indices.len());
    }
    let slots = tets
        .iter()
        .map(|t| {
            let mut s = [0usize; 16];
            for a in 0..4 {
                let r = indptr[t[a]]..indptr[t[a] + 1];
                for b in 0..4 {
                    s[4 * a + b] = r.start + indices[r.clone()].binary_search(&t[b]).unwrap();
                }
            }
            s
        })
        .collect();
    P1Pattern {
        indptr,
        indices,
        slots,
    }
}

fn build_locator(nodes: &[Point], tets: &[[usize; 4]], lo: Point, hi: Point) -> Locator {
    let per_axis = ((tets.len() as f64 / 4.0).cbrt().ceil() as usize).clamp(1, 128);
    let mut dims = [per_axis; 3];
    let mut cell = [0.0; 3];
    for d in 0..3 {
        let ext = hi[d] - lo[d];
        if ext <= 0.0 {
            dims[d] = 1;
            cell[d] = 1.0;
        } else {
            cell[d] = ext / dims[d] as f64;
        }
    }
    let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
    let index = |x: f64, d: usize| -> usize {
        (((x - lo[d]) / cell[d]).floor().max(0.0) as usize).min(dims[d] - 1)
    };
    for (e, t) in tets.iter().enumerate() {
        let mut tlo = [f64::INFINITY; 3];
        let mut thi = [f64::NEG_INFINITY; 3];
        for &v in t {
            for d in 0..3 {
                tlo[d] = tlo[d].min(nodes[v][d]);
                thi[d] = thi[d].max(nodes[v][d]);
            }
        }
        let pad: [f64; 3] = std::array::from_fn(|d| 1e-9 * cell[d]);
        let (i0, i1) = (index(tlo[0] - pad[0], 0), index(thi[0] + pad[0], 0));
        let (j0, j1) = (index(tlo[1] - pad[1], 1), index(thi[1] + pad[1], 1));
        let (k0, k1) = (index(tlo[2] - pad[2], 2), index(thi[2] + pad[2], 2));
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    cells[i + dims[0] * (j + dims[1] * k)].push(e);
                }
            }
        }
    }
    Locator { lo, cell, dims, cells }
}
