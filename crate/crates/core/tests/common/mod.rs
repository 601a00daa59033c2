#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use angiofem::coupling::{CoupledSystem, InterfaceMaps};
use angiofem::flow::{pressure_step, CaseHistory, FlowInputs, FlowParameters, FlowPrevious, FlowSolution};
use angiofem::mesh::{Point, TetMesh};
use angiofem::network::{Junction, JunctionKind, NetworkDiscretization, PartitionOptions, Segment, Space, VesselNetwork};
use angiofem::params::{Numerics, ParameterSet};
use angiofem::sparse::CsrMatrix;
use angiofem::tissue::TumorConstitutive;
use nalgebra::{DMatrix, DVector};

pub fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn dist(a: Point, b: Point) -> f64 {
    (0..3).map(|d| (a[d] - b[d]).powi(2)).sum::<f64>().sqrt()
}

pub fn dense(m: &CsrMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.triplets() {
        out[(i, j)] += v;
    }
    out
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L² error of `−Δu + u = f` with homogeneous Neumann data and
/// `u = cos(πx)cos(πy)cos(πz)` on an `n³` cube mesh.
pub fn neumann_error(n: usize) -> f64 {
    let exact = |p: &Point| (PI * p[0]).cos() * (PI * p[1]).cos() * (PI * p[2]).cos();
    let m = TetMesh::cube(n, 1.0);
    let a = m.stiffness_with(|_, _| 1.0).add(&m.mass_with(|_, _| 1.0));
    let rhs = m.load_with(|e, q| (3.0 * PI * PI + 1.0) * exact(&m.quad_point(e, q)));
    let u = angiofem::sparse::solve(&a, &rhs, 1e-10).unwrap();
    m.integrate_with(|e, q| {
        let d = m.eval_qp(&u, e, q) - exact(&m.quad_point(e, q));
        d * d
    })
    .sqrt()
}

/// Observed rates between successive refinements.
pub fn neumann_rates(ns: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let errs: Vec<f64> = ns.iter().map(|&n| neumann_error(n)).collect();
    let rates = errs
        .windows(2)
        .zip(ns.windows(2))
        .map(|(e, n)| (e[0] / e[1]).ln() / (n[1] as f64 / n[0] as f64).ln())
        .collect();
    (errs, rates)
}

fn pressure_only(mesh: &TetMesh, net: &VesselNetwork, fp: &FlowParameters) -> (FlowSolution, NetworkDiscretization) {
    let disc = NetworkDiscretization::build(mesh, net, fp.radius, PartitionOptions::default()).unwrap();
    let maps = InterfaceMaps::new(mesh, &disc);
    let n = mesh.n_nodes();
    let phil = vec![0.5; n];
    let phi = vec![0.5; n];
    let c = vec![0.0; n];
    let p0 = vec![fp.p_ls; n];
    let pj = vec![fp.p_in; net.junctions.len()];
    let law = TumorConstitutive::from(&ParameterSet::default());
    let sol = pressure_step(
        mesh,
        net,
        &disc,
        &maps,
        fp,
        &law,
        &FlowInputs { phi: &phi, phil: &phil, c_prev: &c, dt: 6.0 },
        &FlowPrevious { p: &p0, p_hat_junctions: &pj, phil: &phil, history: &CaseHistory::default() },
        &Numerics::default(),
    )
    .unwrap();
    (sol, disc)
}

fn no_wall_flow() -> FlowParameters {
    let mut fp = FlowParameters::from(&ParameterSet::default());
    fp.beta_p0 = 0.0;
    fp
}

/// Largest nodal deviation from the linear profile on one straight vessel.
pub fn poiseuille_error() -> f64 {
    let mesh = TetMesh::cube(4, 1.0);
    let fp = no_wall_flow();
    let net = VesselNetwork::new(
        vec![
            Junction { pos: [0.0, 0.3, 0.45], kind: JunctionKind::Inlet },
            Junction { pos: [1.0, 0.65, 0.6], kind: JunctionKind::Outlet },
        ],
        vec![Segment { j: [0, 1], birth_time: 0.0 }],
    )
    .unwrap();
    let (sol, disc) = pressure_only(&mesh, &net, &fp);
    let (a, b) = (net.junctions[0].pos, net.junctions[1].pos);
    let len = dist(a, b);
    max_abs(disc.positions.iter().enumerate().map(|(i, &x)| {
        let s = dist(x, a) / len;
        sol.p_hat[i] - (fp.p_in + s * (fp.p_out - fp.p_in))
    }))
}

/// Largest nodal deviation on a Y-shaped network from the Kirchhoff solution:
/// the branch point carries the conductance-weighted mean of its neighbours
/// and every branch is linear in between.
pub fn y_junction_error() -> f64 {
    let mesh = TetMesh::cube(4, 1.0);
    let fp = no_wall_flow();
    let ends = [[0.1, 0.5, 0.5], [0.85, 0.75, 0.4], [0.7, 0.15, 0.65]];
    let centre = [0.5, 0.45, 0.5];
    let net = VesselNetwork::new(
        vec![
            Junction { pos: ends[0], kind: JunctionKind::Inlet },
            Junction { pos: ends[1], kind: JunctionKind::Outlet },
            Junction { pos: ends[2], kind: JunctionKind::Outlet },
            Junction { pos: centre, kind: JunctionKind::Interior },
        ],
        vec![
            Segment { j: [0, 3], birth_time: 0.0 },
            Segment { j: [3, 1], birth_time: 0.0 },
            Segment { j: [3, 2], birth_time: 0.0 },
        ],
    )
    .unwrap();
    let (sol, disc) = pressure_only(&mesh, &net, &fp);
    let values = [fp.p_in, fp.p_out, fp.p_out];
    let w: Vec<f64> = ends.iter().map(|&e| 1.0 / dist(e, centre)).collect();
    let pj = (0..3).map(|i| w[i] * values[i]).sum::<f64>() / w.iter().sum::<f64>();
    let mut err: f64 = (sol.p_hat[3] - pj).abs();
    for (s, seg) in net.segments.iter().enumerate() {
        let pa = if seg.j[0] == 3 { pj } else { values[seg.j[0]] };
        let pb = if seg.j[1] == 3 { pj } else { values[seg.j[1]] };
        let nodes = &disc.segments[s].nodes;
        for (k, &d) in nodes.iter().enumerate() {
            let t = k as f64 / (nodes.len() - 1) as f64;
            err = err.max((sol.p_hat[d] - (pa + t * (pb - pa))).abs());
        }
    }
    err
}

/// Model problem `(−Δ + 1)u` in the tissue and `−½ û''` on the vessel with
/// exchange coefficient `beta` and Dirichlet vessel ends.
pub fn model_system(mesh: &TetMesh, disc: &NetworkDiscretization, beta: f64) -> CoupledSystem {
    let l = disc.line_matrix(mesh, Space::Tissue, Space::Primary, |_| beta);
    CoupledSystem {
        c_omega_omega: l.matmul(disc.trace()),
        c_omega_aux: disc.line_matrix(mesh, Space::Tissue, Space::Aux, |_| beta),
        c_lambda_lambda: disc.line_matrix(mesh, Space::Primary, Space::Primary, |_| beta),
        c_lambda_aux: disc.line_matrix(mesh, Space::Primary, Space::Aux, |_| beta),
        a_omega: mesh.stiffness_with(|_, _| 1.0).add(&mesh.mass_with(|_, _| 1.0)),
        a_lambda: disc.stiffness_1d(|_| 0.5),
        b_omega: mesh.load_with(|e, q| {
            let x = mesh.quad_point(e, q);
            0.1 + 0.2 * x[0] * x[1]
        }),
        b_lambda: vec![0.0; disc.n_prim],
        dirichlet: vec![(0, 2.0), (1, 1.0)],
    }
}

/// A vessel lying on a grid line of a cube mesh, so the primary and auxiliary
/// nodes fall on mesh vertices and the tissue trace is piecewise linear on
/// the 1D partition.
pub fn conforming_setup() -> (TetMesh, VesselNetwork, NetworkDiscretization) {
    let mesh = TetMesh::cube(4, 1.0);
    let net = VesselNetwork::new(
        vec![
            Junction { pos: [0.0, 0.5, 0.5], kind: JunctionKind::Inlet },
            Junction { pos: [1.0, 0.5, 0.5], kind: JunctionKind::Outlet },
        ],
        vec![Segment { j: [0, 1], birth_time: 0.0 }],
    )
    .unwrap();
    let opts = PartitionOptions { refinement: 1.0, aux_ratio: 1.0 };
    let disc = NetworkDiscretization::build(&mesh, &net, 0.01, opts).unwrap();
    (mesh, net, disc)
}

/// Solves the system obtained by substituting `Ψ_Ω = Q̌`, `Ψ_Λ = Q̂` into
/// both constraints, as one dense linear system.
pub fn monolithic_solve(sys: &CoupledSystem, disc: &NetworkDiscretization) -> (Vec<f64>, Vec<f64>) {
    let (n3, n1) = (sys.a_omega.nrows(), sys.a_lambda.nrows());
    // aux dof of each primary dof on matched partitions
    let mut s = DMatrix::zeros(disc.n_aux, n1);
    for part in &disc.segments {
        assert_eq!(part.n_aux, part.nodes.len());
        for (k, &d) in part.nodes.iter().enumerate() {
            s[(part.aux_offset + k, d)] = 1.0;
        }
    }
    let t = dense(disc.trace());
    let mut k = DMatrix::zeros(n3 + n1, n3 + n1);
    let mut b = DVector::zeros(n3 + n1);
    k.view_mut((0, 0), (n3, n3)).copy_from(&(dense(&sys.a_omega) + dense(&sys.c_omega_omega)));
    k.view_mut((0, n3), (n3, n1)).copy_from(&(-dense(&sys.c_omega_aux) * &s));
    k.view_mut((n3, n3), (n1, n1)).copy_from(&(dense(&sys.a_lambda) + dense(&sys.c_lambda_lambda)));
    k.view_mut((n3, 0), (n1, n3)).copy_from(&(-dense(&sys.c_lambda_aux) * &s * &t));
    b.rows_mut(0, n3).copy_from(&DVector::from_column_slice(&sys.b_omega));
    b.rows_mut(n3, n1).copy_from(&DVector::from_column_slice(&sys.b_lambda));
    for &(d, v) in &sys.dirichlet {
        let r = n3 + d;
        k.row_mut(r).fill(0.0);
        k[(r, r)] = 1.0;
        b[r] = v;
    }
    let x = k.lu().solve(&b).expect("monolithic system is regular");
    (x.rows(0, n3).iter().copied().collect(), x.rows(n3, n1).iter().copied().collect())
}

/// Largest nodal difference between the optimization-based and the
/// monolithic solution, relative to the largest nodal value, and the
/// optimal cost.
pub fn conforming_oracle_gap() -> (f64, f64) {
    let (mesh, _, disc) = conforming_setup();
    let sys = model_system(&mesh, &disc, 5.0);
    let maps = InterfaceMaps::new(&mesh, &disc);
    let sol = angiofem::coupling::solve_coupled(&sys, &maps, 1e-9).unwrap();
    let (q, qh) = monolithic_solve(&sys, &disc);
    let scale = max_abs(q.iter().chain(&qh).copied());
    let diff = max_abs(q.iter().zip(&sol.q).chain(qh.iter().zip(&sol.q_hat)).map(|(a, b)| a - b));
    (diff / scale, sol.cost)
}

/// Optimal cost with the exchange switched off.
pub fn decoupled_cost() -> f64 {
    let (mesh, _, disc) = conforming_setup();
    let sys = model_system(&mesh, &disc, 0.0);
    let maps = InterfaceMaps::new(&mesh, &disc);
    angiofem::coupling::solve_coupled(&sys, &maps, 1e-9).unwrap().cost
}
