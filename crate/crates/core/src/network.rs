//! Vessel network graph, its 1D finite element discretization and the
//! line quadrature that couples it to the tissue mesh.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NetworkError;
use crate::mesh::{Point, TetMesh};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JunctionKind {
    Interior,
    Inlet,
    Outlet,
    Tip,
}

impl JunctionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JunctionKind::Interior => "interior",
            JunctionKind::Inlet => "inlet",
            JunctionKind::Outlet => "outlet",
            JunctionKind::Tip => "tip",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "interior" => Some(JunctionKind::Interior),
            "inlet" => Some(JunctionKind::Inlet),
            "outlet" => Some(JunctionKind::Outlet),
            "tip" => Some(JunctionKind::Tip),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub pos: Point,
    pub kind: JunctionKind,
}

/// Straight vessel segment. `j[0]` is the end it grew from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub j: [usize; 2],
    pub birth_time: f64,
}

/// Growth state carried by every sprout tip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tip {
    pub id: u64,
    pub junction: usize,
    pub age: f64,
    pub acc: Point,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselNetwork {
    pub junctions: Vec<Junction>,
    pub segments: Vec<Segment>,
    pub tips: Vec<Tip>,
    pub next_tip_id: u64,
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

impl VesselNetwork {
    pub fn new(junctions: Vec<Junction>, segments: Vec<Segment>) -> Result<Self, NetworkError> {
        let mut degree = vec![0usize; junctions.len()];
        for (s, seg) in segments.iter().enumerate() {
            for &j in &seg.j {
                if j >= junctions.len() {
                    return Err(NetworkError::InvalidSegment {
                        segment: s,
                        msg: format!("junction {j} does not exist"),
                    });
                }
                degree[j] += 1;
            }
            if seg.j[0] == seg.j[1] {
                return Err(NetworkError::InvalidSegment {
                    segment: s,
                    msg: "both ends at the same junction".into(),
                });
            }
            let len = dist(junctions[seg.j[0]].pos, junctions[seg.j[1]].pos);
            if !(len > 0.0) {
                return Err(NetworkError::InvalidSegment {
                    segment: s,
                    msg: "zero length".into(),
                });
            }
            if !seg.birth_time.is_finite() {
                return Err(NetworkError::InvalidSegment {
                    segment: s,
                    msg: "birth time is not finite".into(),
                });
            }
        }
        for (j, jn) in junctions.iter().enumerate() {
            if jn.pos.iter().any(|v| !v.is_finite()) {
                return Err(NetworkError::InvalidJunction {
                    junction: j,
                    msg: "non-finite coordinates".into(),
                });
            }
            if degree[j] == 0 {
                return Err(NetworkError::InvalidJunction {
                    junction: j,
                    msg: "not attached to any segment".into(),
                });
            }
            if jn.kind == JunctionKind::Tip && degree[j] != 1 {
                return Err(NetworkError::InvalidJunction {
                    junction: j,
                    msg: format!("tip must end exactly one segment, found {}", degree[j]),
                });
            }
        }
        let mut net = Self {
            junctions,
            segments,
            tips: Vec::new(),
            next_tip_id: 0,
        };
        for j in 0..net.junctions.len() {
            if net.junctions[j].kind == JunctionKind::Tip {
                net.push_tip(j);
            }
        }
        Ok(net)
    }

    fn push_tip(&mut self, junction: usize) -> u64 {
        let id = self.next_tip_id;
        self.next_tip_id += 1;
        self.tips.push(Tip {
            id,
            junction,
            age: 0.0,
            acc: [0.0; 3],
            frozen: false,
        });
        id
    }

    /// Reads `N_junctions N_segments`, then `x y z flag` per junction and
    /// `j1 j2 birth_time` per segment (0-based junction indices).
    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, name: &str) -> Result<Self, NetworkError> {
        let err = |line: usize, msg: String| NetworkError::Parse {
            path: name.to_string(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or_else(|| err(1, "empty network file".into()))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| err(hl, format!("bad header: {e}")))?;
        if h.len() != 2 {
            return Err(err(hl, "header must be `N_junctions N_segments`".into()));
        }
        let mut junctions = Vec::with_capacity(h[0]);
        for _ in 0..h[0] {
            let (ln, l) = lines.next().ok_or_else(|| err(hl, "unexpected end of file in junction list".into()))?;
            let tok: Vec<&str> = l.split_whitespace().collect();
            if tok.len() != 4 {
                return Err(err(ln, "junction line must be `x y z flag`".into()));
            }
            let mut pos = [0.0; 3];
            for d in 0..3 {
                pos[d] = tok[d].parse().map_err(|e| err(ln, format!("bad coordinate: {e}")))?;
            }
            let kind = JunctionKind::parse(tok[3]).ok_or_else(|| {
                err(ln, format!("unknown flag `{}` (interior, inlet, outlet or tip)", tok[3]))
            })?;
            junctions.push(Junction { pos, kind });
        }
        let mut segments = Vec::with_capacity(h[1]);
        for _ in 0..h[1] {
            let (ln, l) = lines.next().ok_or_else(|| err(hl, "unexpected end of file in segment list".into()))?;
            let tok: Vec<&str> = l.split_whitespace().collect();
            if tok.len() != 3 {
                return Err(err(ln, "segment line must be `j1 j2 birth_time`".into()));
            }
            let a: usize = tok[0].parse().map_err(|e| err(ln, format!("bad junction index: {e}")))?;
            let b: usize = tok[1].parse().map_err(|e| err(ln, format!("bad junction index: {e}")))?;
            let t: f64 = tok[2].parse().map_err(|e| err(ln, format!("bad birth time: {e}")))?;
            segments.push(Segment { j: [a, b], birth_time: t });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing data after segment list".into()));
        }
        Self::new(junctions, segments)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.junctions.len(), self.segments.len());
        for j in &self.junctions {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e} {}", j.pos[0], j.pos[1], j.pos[2], j.kind.as_str());
        }
        for seg in &self.segments {
            let _ = writeln!(s, "{} {} {:.17e}", seg.j[0], seg.j[1], seg.birth_time);
        }
        s
    }

    pub fn segment_length(&self, s: usize) -> f64 {
        let seg = &self.segments[s];
        dist(self.junctions[seg.j[0]].pos, self.junctions[seg.j[1]].pos)
    }

    pub fn total_length(&self) -> f64 {
        (0..self.segments.len()).map(|s| self.segment_length(s)).sum()
    }

    pub fn n_tips(&self) -> usize {
        self.tips.len()
    }

    /// Total length per tip, infinite when there are no tips.
    pub fn density(&self) -> f64 {
        if self.tips.is_empty() {
            f64::INFINITY
        } else {
            self.total_length() / self.tips.len() as f64
        }
    }

    pub fn tip_index(&self, id: u64) -> Option<usize> {
        self.tips.iter().position(|t| t.id == id)
    }

    /// Grows tip `tip` to `to`: the old tip junction becomes interior, a new
    /// segment and tip junction are created. Returns the new junction index.
    pub fn extend_tip(&mut self, tip: usize, to: Point, birth_time: f64) -> usize {
        let from = self.tips[tip].junction;
        self.junctions[from].kind = JunctionKind::Interior;
        let nj = self.junctions.len();
        self.junctions.push(Junction {
            pos: to,
            kind: JunctionKind::Tip,
        });
        self.segments.push(Segment {
            j: [from, nj],
            birth_time,
        });
        let t = &mut self.tips[tip];
        t.junction = nj;
        nj
    }

    /// Replaces tip `tip` by two child tips at `a` and `b`. Returns the new
    /// tip ids.
    pub fn branch_tip(&mut self, tip: usize, a: Point, b: Point, birth_time: f64) -> (u64, u64) {
        let old = self.tips.remove(tip);
        let from = old.junction;
        self.junctions[from].kind = JunctionKind::Interior;
        let mut ids = [0u64; 2];
        for (k, p) in [a, b].into_iter().enumerate() {
            let nj = self.junctions.len();
            self.junctions.push(Junction {
                pos: p,
                kind: JunctionKind::Tip,
            });
            self.segments.push(Segment {
                j: [from, nj],
                birth_time,
            });
            ids[k] = self.push_tip(nj);
        }
        (ids[0], ids[1])
    }

    /// Legacy VTK polydata of the graph with per-segment birth time.
    pub fn to_vtk(&self, radius: f64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 3.0\nvessel network\nASCII\nDATASET POLYDATA");
        let _ = writeln!(s, "POINTS {} double", self.junctions.len());
        for j in &self.junctions {
            let _ = writeln!(s, "{} {} {}", j.pos[0], j.pos[1], j.pos[2]);
        }
        let _ = writeln!(s, "LINES {} {}", self.segments.len(), 3 * self.segments.len());
        for seg in &self.segments {
            let _ = writeln!(s, "2 {} {}", seg.j[0], seg.j[1]);
        }
        let _ = writeln!(s, "CELL_DATA {}", self.segments.len());
        let _ = writeln!(s, "SCALARS birth_time double 1\nLOOKUP_TABLE default");
        for seg in &self.segments {
            let _ = writeln!(s, "{}", seg.birth_time);
        }
        let _ = writeln!(s, "SCALARS radius double 1\nLOOKUP_TABLE default");
        for _ in &self.segments {
            let _ = writeln!(s, "{radius}");
        }
        let _ = writeln!(s, "POINT_DATA {}", self.junctions.len());
        let _ = writeln!(s, "SCALARS kind int 1\nLOOKUP_TABLE default");
        for j in &self.junctions {
            let _ = writeln!(s, "{}", j.kind as u8);
        }
        s
    }
}

/// A 1D function space in the discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Continuous P1 on the tissue mesh.
    Tissue,
    /// Continuous P1 on the primary network partition.
    Primary,
    /// Discontinuous (per segment) P1 on the auxiliary partition.
    Aux,
}

/// Quadrature point on the network with the basis values of every space.
#[derive(Debug, Clone)]
pub struct LineQp {
    pub segment: usize,
    /// Position along the segment in `[0, 1]`.
    pub t: f64,
    pub x: Point,
    /// Quadrature weight in physical arc length.
    pub w: f64,
    pub tet: usize,
    pub bary: [f64; 4],
    pub prim_elem: usize,
    pub prim: ([usize; 2], [f64; 2]),
    pub aux: ([usize; 2], [f64; 2]),
}

/// Primary 1D element.
#[derive(Debug, Clone)]
pub struct Elem1d {
    pub segment: usize,
    pub dofs: [usize; 2],
    pub length: f64,
    /// Unit tangent, from `dofs[0]` towards `dofs[1]`.
    pub tangent: Point,
}

#[derive(Debug, Clone)]
pub struct SegmentPartition {
    /// Primary dofs along the segment, including both junction dofs.
    pub nodes: Vec<usize>,
    pub n_aux: usize,
    pub aux_offset: usize,
    pub first_elem: usize,
    pub tets_crossed: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PartitionOptions {
    /// Primary nodes per crossed element.
    pub refinement: f64,
    /// Auxiliary nodes relative to primary nodes.
    pub aux_ratio: f64,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            refinement: 1.0,
            aux_ratio: 0.5,
        }
    }
}

/// Primary and auxiliary partitions of every segment plus the quadrature
/// over the common refinement with the tissue mesh.
#[derive(Debug, Clone)]
pub struct NetworkDiscretization {
    pub n_tissue: usize,
    pub n_prim: usize,
    pub n_aux: usize,
    pub n_junctions: usize,
    pub segments: Vec<SegmentPartition>,
    pub elems: Vec<Elem1d>,
    pub positions: Vec<Point>,
    pub quad: Vec<LineQp>,
    pub radius: f64,
    trace: CsrMatrix,
}

/// Parameter interval `[t0, t1]` of the segment lying in element `tet`.
#[derive(Debug, Clone, Copy)]
struct Crossing {
    t0: f64,
    t1: f64,
    tet: usize,
}

/// Exact clipping of the segment `a → b` against every candidate element.
/// Barycentric coordinates are affine in the segment parameter, so each
/// element is entered and left at most once.
fn clip_segment(mesh: &TetMesh, a: Point, b: Point) -> Vec<Crossing> {
    let (lo, hi) = mesh.bounding_box();
    let h = mesh.max_h();
    let mut out = Vec::new();
    let smin: Point = std::array::from_fn(|d| a[d].min(b[d]) - 1e-9 * h);
    let smax: Point = std::array::from_fn(|d| a[d].max(b[d]) + 1e-9 * h);
    if (0..3).any(|d| smax[d] < lo[d] || smin[d] > hi[d]) {
        return out;
    }
    for (e, t) in mesh.tets().iter().enumerate() {
        let nodes = mesh.nodes();
        let mut skip = false;
        for d in 0..3 {
            let tmin = t.iter().map(|&v| nodes[v][d]).fold(f64::INFINITY, f64::min);
            let tmax = t.iter().map(|&v| nodes[v][d]).fold(f64::NEG_INFINITY, f64::max);
            if tmax < smin[d] || tmin > smax[d] {
                skip = true;
                break;
            }
        }
        if skip {
            continue;
        }
        let la = mesh.barycentric(e, a);
        let lb = mesh.barycentric(e, b);
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        const TOL: f64 = 1e-12;
        for k in 0..4 {
            let (p, q) = (la[k], lb[k]);
            let slope = q - p;
            if slope.abs() < 1e-15 {
                if p < -TOL {
                    t1 = -1.0;
                    break;
                }
            } else {
                let root = -p / slope;
                if slope > 0.0 {
                    t0 = t0.max(root);
                } else {
                    t1 = t1.min(root);
                }
            }
        }
        if t1 - t0 > 1e-10 {
            out.push(Crossing { t0, t1, tet: e });
        }
    }
    out
}

fn sorted_breaks(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().map(|t| t.clamp(0.0, 1.0)).collect();
    v.push(0.0);
    v.push(1.0);
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<f64> = Vec::with_capacity(v.len());
    for t in v {
        if out.last().map_or(true, |&l| t - l > 1e-10) {
            out.push(t);
        }
    }
    *out.last_mut().unwrap() = 1.0;
    out
}

impl NetworkDiscretization {
    pub fn build(
        mesh: &TetMesh,
        net: &VesselNetwork,
        radius: f64,
        opts: PartitionOptions,
    ) -> Result<Self, NetworkError> {
        let nj = net.junctions.len();
        let mut positions: Vec<Point> = net.junctions.iter().map(|j| j.pos).collect();
        let mut segments = Vec::with_capacity(net.segments.len());
        let mut elems = Vec::new();
        let mut crossings_per_seg = Vec::with_capacity(net.segments.len());
        let mut n_prim = nj;
        let mut n_aux = 0;
        for (s, seg) in net.segments.iter().enumerate() {
            let a = net.junctions[seg.j[0]].pos;
            let b = net.junctions[seg.j[1]].pos;
            let length = dist(a, b);
            let cr = clip_segment(mesh, a, b);
            // elementary intervals and the element owning each
            let breaks = sorted_breaks(cr.iter().flat_map(|c| [c.t0, c.t1]));
            let mut pieces: Vec<Crossing> = Vec::with_capacity(breaks.len());
            for w in breaks.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let owner = cr.iter().find(|c| c.t0 <= mid && mid <= c.t1).ok_or_else(|| {
                    NetworkError::InvalidSegment {
                        segment: s,
                        msg: format!("leaves the tissue domain near t = {mid:.4}"),
                    }
                })?;
                pieces.push(Crossing {
                    t0: w[0],
                    t1: w[1],
                    tet: owner.tet,
                });
            }
            let mut distinct: Vec<usize> = pieces.iter().map(|p| p.tet).collect();
            distinct.sort_unstable();
            distinct.dedup();
            let tets_crossed = distinct.len();
            let n_nodes = ((opts.refinement * tets_crossed as f64).ceil() as usize + 1).max(2);
            let m_aux = ((n_nodes as f64 * opts.aux_ratio).ceil() as usize).max(2);
            let mut nodes = Vec::with_capacity(n_nodes);
            nodes.push(seg.j[0]);
            for k in 1..n_nodes - 1 {
                positions.push(lerp(a, b, k as f64 / (n_nodes - 1) as f64));
                nodes.push(n_prim);
                n_prim += 1;
            }
            nodes.push(seg.j[1]);
            let first_elem = elems.len();
            let h = length / (n_nodes - 1) as f64;
            let tangent: Point = std::array::from_fn(|d| (b[d] - a[d]) / length);
            for k in 0..n_nodes - 1 {
                elems.push(Elem1d {
                    segment: s,
                    dofs: [nodes[k], nodes[k + 1]],
                    length: h,
                    tangent,
                });
            }
            segments.push(SegmentPartition {
                nodes,
                n_aux: m_aux,
                aux_offset: n_aux,
                first_elem,
                tets_crossed,
                length,
            });
            n_aux += m_aux;
            crossings_per_seg.push(pieces);
        }

        let mut quad = Vec::new();
        let g = 0.5 / 3f64.sqrt();
        for (s, part) in segments.iter().enumerate() {
            let seg = &net.segments[s];
            let a = net.junctions[seg.j[0]].pos;
            let b = net.junctions[seg.j[1]].pos;
            let np = part.nodes.len();
            let na = part.n_aux;
            let breaks = sorted_breaks(
                crossings_per_seg[s]
                    .iter()
                    .map(|c| c.t0)
                    .chain((1..np - 1).map(|k| k as f64 / (np - 1) as f64))
                    .chain((1..na - 1).map(|k| k as f64 / (na - 1) as f64)),
            );
            for w in breaks.windows(2) {
                let (t0, t1) = (w[0], w[1]);
                let mid = 0.5 * (t0 + t1);
                let tet = crossings_per_seg[s]
                    .iter()
                    .find(|c| c.t0 <= mid && mid <= c.t1)
                    .map(|c| c.tet)
                    .expect("pieces cover the segment");
                let pe = ((mid * (np - 1) as f64) as usize).min(np - 2);
                let ae = ((mid * (na - 1) as f64) as usize).min(na - 2);
                for off in [0.5 - g, 0.5 + g] {
                    let t = t0 + off * (t1 - t0);
                    let x = lerp(a, b, t);
                    let mut bary = mesh.barycentric(tet, x).map(|v| v.clamp(0.0, 1.0));
                    let sum: f64 = bary.iter().sum();
                    bary.iter_mut().for_each(|v| *v /= sum);
                    let lp = t * (np - 1) as f64 - pe as f64;
                    let la = t * (na - 1) as f64 - ae as f64;
                    quad.push(LineQp {
                        segment: s,
                        t,
                        x,
                        w: 0.5 * (t1 - t0) * part.length,
                        tet,
                        bary,
                        prim_elem: part.first_elem + pe,
                        prim: ([part.nodes[pe], part.nodes[pe + 1]], [1.0 - lp, lp]),
                        aux: ([part.aux_offset + ae, part.aux_offset + ae + 1], [1.0 - la, la]),
                    });
                }
            }
        }

        let mut trip = Vec::with_capacity(4 * n_prim);
        for (d, &p) in positions.iter().enumerate() {
            let loc = mesh.locate_point(p).ok_or_else(|| NetworkError::InvalidJunction {
                junction: d.min(nj.saturating_sub(1)),
                msg: format!("network node ({:.4}, {:.4}, {:.4}) is outside the tissue domain", p[0], p[1], p[2]),
            })?;
            let t = mesh.tets()[loc.tet];
            for k in 0..4 {
                if loc.bary[k] != 0.0 {
                    trip.push((d, t[k], loc.bary[k]));
                }
            }
        }
        let trace = CsrMatrix::from_triplets(n_prim, mesh.n_nodes(), &trip);

        Ok(Self {
            n_tissue: mesh.n_nodes(),
            n_prim,
            n_aux,
            n_junctions: nj,
            segments,
            elems,
            positions,
            quad,
            radius,
            trace,
        })
    }

    pub fn size(&self, space: Space) -> usize {
        match space {
            Space::Tissue => self.n_tissue,
            Space::Primary => self.n_prim,
            Space::Aux => self.n_aux,
        }
    }

    /// Interpolation of tissue nodal values at the primary nodes.
    pub fn trace(&self) -> &CsrMatrix {
        &self.trace
    }

    /// Primary dof of local node `k` of segment `s`.
    pub fn node_dof(&self, s: usize, k: usize) -> usize {
        self.segments[s].nodes[k]
    }

    fn basis(&self, qp: &LineQp, mesh: &TetMesh, space: Space) -> ([usize; 4], [f64; 4], usize) {
        match space {
            Space::Tissue => (mesh.tets()[qp.tet], qp.bary, 4),
            Space::Primary => ([qp.prim.0[0], qp.prim.0[1], 0, 0], [qp.prim.1[0], qp.prim.1[1], 0.0, 0.0], 2),
            Space::Aux => ([qp.aux.0[0], qp.aux.0[1], 0, 0], [qp.aux.1[0], qp.aux.1[1], 0.0, 0.0], 2),
        }
    }

    /// `∫_Λ c u_col v_row ds` for basis functions of two spaces.
    pub fn line_matrix(
        &self,
        mesh: &TetMesh,
        rows: Space,
        cols: Space,
        coeff: impl Fn(&LineQp) -> f64,
    ) -> CsrMatrix {
        self.line_matrix_at(mesh, rows, cols, |_, qp| coeff(qp))
    }

    /// As [`Self::line_matrix`] with the coefficient indexed by quadrature point.
    pub fn line_matrix_at(
        &self,
        mesh: &TetMesh,
        rows: Space,
        cols: Space,
        coeff: impl Fn(usize, &LineQp) -> f64,
    ) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.quad.len() * 16);
        for (q, qp) in self.quad.iter().enumerate() {
            let c = coeff(q, qp) * qp.w;
            if c == 0.0 {
                continue;
            }
            let (rd, rv, rn) = self.basis(qp, mesh, rows);
            let (cd, cv, cn) = self.basis(qp, mesh, cols);
            for a in 0..rn {
                for b in 0..cn {
                    trip.push((rd[a], cd[b], c * (rv[a] * cv[b])));
                }
            }
        }
        CsrMatrix::from_triplets(self.size(rows), self.size(cols), &trip)
    }

    /// `∫_Λ f v ds` for every basis function `v` of `space`.
    pub fn line_load(&self, mesh: &TetMesh, space: Space, f: impl Fn(&LineQp) -> f64) -> Vec<f64> {
        self.line_load_at(mesh, space, |_, qp| f(qp))
    }

    pub fn line_load_at(&self, mesh: &TetMesh, space: Space, f: impl Fn(usize, &LineQp) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.size(space)];
        for (q, qp) in self.quad.iter().enumerate() {
            let c = f(q, qp) * qp.w;
            let (d, v, n) = self.basis(qp, mesh, space);
            for a in 0..n {
                out[d[a]] += c * v[a];
            }
        }
        out
    }

    /// Value of a field of `space` at a quadrature point.
    pub fn eval(&self, mesh: &TetMesh, qp: &LineQp, space: Space, field: &[f64]) -> f64 {
        let (d, v, n) = self.basis(qp, mesh, space);
        (0..n).map(|a| v[a] * field[d[a]]).sum()
    }

    /// `∫_Λ f ds` for a field of `space`.
    pub fn integrate(&self, mesh: &TetMesh, space: Space, field: &[f64]) -> f64 {
        self.quad.iter().map(|qp| qp.w * self.eval(mesh, qp, space, field)).sum()
    }

    /// Sorted distinct tissue elements crossed by some segment.
    pub fn intersected_tets(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.quad.iter().map(|q| q.tet).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Exact P1 mass on the primary partition with element-wise coefficient.
    pub fn mass_1d(&self, coeff: impl Fn(&Elem1d) -> f64) -> CsrMatrix {
        let mut trip = Vec::with_capacity(4 * self.elems.len());
        for e in &self.elems {
            let c = coeff(e) * e.length / 6.0;
            let [i, j] = e.dofs;
            trip.extend([(i, i, 2.0 * c), (i, j, c), (j, i, c), (j, j, 2.0 * c)]);
        }
        CsrMatrix::from_triplets(self.n_prim, self.n_prim, &trip)
    }

    pub fn stiffness_1d(&self, coeff: impl Fn(&Elem1d) -> f64) -> CsrMatrix {
        let mut trip = Vec::with_capacity(4 * self.elems.len());
        for e in &self.elems {
            let c = coeff(e) / e.length;
            let [i, j] = e.dofs;
            trip.extend([(i, i, c), (i, j, -c), (j, i, -c), (j, j, c)]);
        }
        CsrMatrix::from_triplets(self.n_prim, self.n_prim, &trip)
    }

    /// `∫ c v du/ds η̂` with `v` the element-wise tangential velocity.
    pub fn advection_1d(&self, vel: &[f64], coeff: impl Fn(&Elem1d) -> f64) -> CsrMatrix {
        let mut trip = Vec::with_capacity(4 * self.elems.len());
        for (k, e) in self.elems.iter().enumerate() {
            let c = 0.5 * coeff(e) * vel[k];
            let [i, j] = e.dofs;
            trip.extend([(i, i, -c), (i, j, c), (j, i, -c), (j, j, c)]);
        }
        CsrMatrix::from_triplets(self.n_prim, self.n_prim, &trip)
    }

    /// Element-wise tangential derivative of a primary field.
    pub fn derivative_1d(&self, field: &[f64]) -> Vec<f64> {
        self.elems
            .iter()
            .map(|e| (field[e.dofs[1]] - field[e.dofs[0]]) / e.length)
            .collect()
    }

    /// Dofs of the junctions with the given kind.
    pub fn junction_dofs(&self, net: &VesselNetwork, kind: JunctionKind) -> Vec<usize> {
        (0..self.n_junctions).filter(|&j| net.junctions[j].kind == kind).collect()
    }

    /// VTK polydata of the primary partition with nodal fields.
    pub fn to_vtk(&self, fields: &[(&str, &[f64])], cell_fields: &[(&str, &[f64])]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 3.0\nvessel network\nASCII\nDATASET POLYDATA");
        let _ = writeln!(s, "POINTS {} double", self.positions.len());
        for p in &self.positions {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
        let _ = writeln!(s, "LINES {} {}", self.elems.len(), 3 * self.elems.len());
        for e in &self.elems {
            let _ = writeln!(s, "2 {} {}", e.dofs[0], e.dofs[1]);
        }
        if !fields.is_empty() {
            let _ = writeln!(s, "POINT_DATA {}", self.positions.len());
            for (name, v) in fields {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v.iter() {
                    let _ = writeln!(s, "{x}");
                }
            }
        }
        if !cell_fields.is_empty() {
            let _ = writeln!(s, "CELL_DATA {}", self.elems.len());
            for (name, v) in cell_fields {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v.iter() {
                    let _ = writeln!(s, "{x}");
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn straight(a: Point, b: Point) -> VesselNetwork {
        VesselNetwork::new(
            vec![
                Junction { pos: a, kind: JunctionKind::Inlet },
                Junction { pos: b, kind: JunctionKind::Outlet },
            ],
            vec![Segment { j: [0, 1], birth_time: 0.0 }],
        )
        .unwrap()
    }

    #[test]
    fn parse_round_trip_and_tips() {
        let text = "3 2\n0 0 0 inlet\n1 0 0 interior\n1 1 0 tip\n0 1 0\n1 2 0.0\n";
        let n = VesselNetwork::parse(text, "n").unwrap();
        assert_eq!(n.n_tips(), 1);
        assert_relative_eq!(n.total_length(), 2.0);
        assert_relative_eq!(n.density(), 2.0);
        let back = VesselNetwork::parse(&n.to_text(), "n").unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn bad_flag_reports_line() {
        let e = VesselNetwork::parse("2 1\n0 0 0 inlet\n1 0 0 sideways\n0 1 0\n", "n").unwrap_err();
        assert!(matches!(e, NetworkError::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn no_tips_gives_infinite_density() {
        assert!(straight([0.1; 3], [0.9; 3]).density().is_infinite());
    }

    #[test]
    fn axis_aligned_segment_on_structured_mesh() {
        let mesh = TetMesh::cube(4, 1.0);
        let net = straight([0.0, 0.3, 0.6], [1.0, 0.3, 0.6]);
        let d = NetworkDiscretization::build(&mesh, &net, 0.01, PartitionOptions::default()).unwrap();
        let p = &d.segments[0];
        assert!(p.tets_crossed >= 4);
        assert_eq!(p.nodes.len(), p.tets_crossed + 1);
        assert_eq!(p.n_aux, ((p.nodes.len() as f64) / 2.0).ceil() as usize);
        let w: f64 = d.quad.iter().map(|q| q.w).sum();
        assert_relative_eq!(w, 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.total_length(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn segment_leaving_domain_is_rejected() {
        let mesh = TetMesh::cube(2, 1.0);
        let net = straight([0.5, 0.5, 0.5], [1.5, 0.5, 0.5]);
        assert!(NetworkDiscretization::build(&mesh, &net, 0.01, PartitionOptions::default()).is_err());
    }

    #[test]
    fn line_integrals_of_linear_fields_are_exact() {
        let mesh = TetMesh::cube(3, 1.0);
        let net = straight([0.05, 0.1, 0.2], [0.9, 0.8, 0.7]);
        let d = NetworkDiscretization::build(&mesh, &net, 0.01, PartitionOptions::default()).unwrap();
        let f: Vec<f64> = mesh.nodes().iter().map(|p| p[0] + 2.0 * p[1] - p[2]).collect();
        let a = [0.05, 0.1, 0.2];
        let b = [0.9, 0.8, 0.7];
        let fa = a[0] + 2.0 * a[1] - a[2];
        let fb = b[0] + 2.0 * b[1] - b[2];
        let len = dist(a, b);
        // ∫ f η̂ summed over primary functions equals ∫ f ds
        let l = d.line_load(&mesh, Space::Primary, |qp| d.eval(&mesh, qp, Space::Tissue, &f));
        assert_relative_eq!(l.iter().sum::<f64>(), 0.5 * (fa + fb) * len, epsilon = 1e-12);
        // trace reproduces linear fields at the nodes
        let tr = d.trace().matvec(&f);
        for (k, &dof) in d.segments[0].nodes.iter().enumerate() {
            let t = k as f64 / (d.segments[0].nodes.len() - 1) as f64;
            assert_relative_eq!(tr[dof], fa + t * (fb - fa), epsilon = 1e-12);
        }
        // ∫ f² ds through the cross mass matrix
        let m = d.line_matrix(&mesh, Space::Tissue, Space::Tissue, |_| 1.0);
        let q = crate::sparse::dot(&f, &m.matvec(&f));
        let exact = len * (fa * fa + fa * fb + fb * fb) / 3.0;
        assert_relative_eq!(q, exact, epsilon = 1e-12);
    }

    #[test]
    fn one_dimensional_operators() {
        let mesh = TetMesh::cube(2, 1.0);
        let net = straight([0.0, 0.5, 0.5], [1.0, 0.5, 0.5]);
        let d = NetworkDiscretization::build(&mesh, &net, 0.01, PartitionOptions::default()).unwrap();
        let x: Vec<f64> = d.positions.iter().map(|p| p[0]).collect();
        let m = d.mass_1d(|_| 1.0);
        assert_relative_eq!(m.matvec(&vec![1.0; d.n_prim]).iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        let k = d.stiffness_1d(|_| 1.0);
        assert!(k.matvec(&vec![3.0; d.n_prim]).iter().all(|v| v.abs() < 1e-13));
        assert_relative_eq!(crate::sparse::dot(&x, &k.matvec(&x)), 1.0, epsilon = 1e-13);
        let vel = vec![2.0; d.elems.len()];
        let a = d.advection_1d(&vel, |_| 1.0);
        assert_relative_eq!(a.matvec(&x).iter().sum::<f64>(), 2.0, epsilon = 1e-13);
        for g in d.derivative_1d(&x) {
            assert_relative_eq!(g, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn branch_and_extend_bookkeeping() {
        let mut net = VesselNetwork::parse("2 1\n0.1 0.5 0.5 inlet\n0.3 0.5 0.5 tip\n0 1 0\n", "n").unwrap();
        let nj = net.extend_tip(0, [0.35, 0.5, 0.5], 1.0);
        assert_eq!(net.junctions[1].kind, JunctionKind::Interior);
        assert_eq!(net.tips[0].junction, nj);
        let (a, b) = net.branch_tip(0, [0.4, 0.52, 0.5], [0.4, 0.48, 0.5], 2.0);
        assert_eq!((a, b), (1, 2));
        assert_eq!(net.n_tips(), 2);
        assert_eq!(net.segments.len(), 4);
    }

    proptest! {
        #[test]
        fn quadrature_weights_sum_to_length(
            ax in 0.0f64..1.0, ay in 0.0f64..1.0, az in 0.0f64..1.0,
            bx in 0.0f64..1.0, by in 0.0f64..1.0, bz in 0.0f64..1.0,
            f in 0.5f64..3.0,
        ) {
            let a = [ax, ay, az];
            let b = [bx, by, bz];
            prop_assume!(dist(a, b) > 1e-3);
            let mesh = TetMesh::cube(3, 1.0);
            let net = straight(a, b);
            let opts = PartitionOptions { refinement: f, aux_ratio: 0.5 };
            let d = NetworkDiscretization::build(&mesh, &net, 0.01, opts).unwrap();
            let w: f64 = d.quad.iter().map(|q| q.w).sum();
            prop_assert!((w - dist(a, b)).abs() < 1e-12);
            let seg = &d.segments[0];
            prop_assert!(seg.nodes.len() >= 2 && seg.n_aux >= 2);
            prop_assert_eq!(seg.nodes.len(), ((f * seg.tets_crossed as f64).ceil() as usize + 1).max(2));
            let ones = vec![1.0; mesh.n_nodes()];
            for v in d.trace().matvec(&ones) {
                prop_assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }
}
