//! Capillary tip growth driven by the VEGF gradient, with stochastic branching.

use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::{Point, TetMesh};
use crate::network::VesselNetwork;
use crate::params::ParameterSet;

#[derive(Debug, Clone, Copy)]
pub struct GrowthParameters {
    pub g_lim: f64,
    pub g_bar: f64,
    pub g_br: f64,
    pub l_e: f64,
    pub tau: f64,
    pub tau_br: f64,
    pub alpha_br: f64,
    pub d_br: f64,
}

impl From<&ParameterSet> for GrowthParameters {
    fn from(p: &ParameterSet) -> Self {
        Self {
            g_lim: p.g_lim,
            g_bar: p.g_bar,
            g_br: p.g_br,
            l_e: p.l_e,
            tau: p.tau,
            tau_br: p.tau_br,
            alpha_br: p.alpha_br,
            d_br: p.d_br,
        }
    }
}

impl GrowthParameters {
    /// Cell cycle time `τ(1 + exp(ḡ/g − 1))`, infinite for `g ≤ 0`.
    pub fn cell_cycle_time(&self, g: f64) -> f64 {
        if g <= 0.0 {
            return f64::INFINITY;
        }
        self.tau * (1.0 + (self.g_bar / g - 1.0).exp())
    }

    /// Logistic coefficients `(a, d)` with `P_br(g_br) = 0.99` and `P_br(g_lim) = 0.05`.
    pub fn branching_coefficients(&self) -> (f64, f64) {
        let a = self.g_bar * 1881f64.ln() / (self.g_br - self.g_lim);
        let d = self.g_br / self.g_bar - 99f64.ln() / a;
        (a, d)
    }

    /// Branching probability `1/(1 + exp(−a(g/ḡ − d)))`.
    pub fn branching_probability(&self, g: f64) -> f64 {
        let (a, d) = self.branching_coefficients();
        1.0 / (1.0 + (-a * (g / self.g_bar - d)).exp())
    }
}

/// Per-tet symmetric positive definite anisotropy of the extracellular matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcmField {
    pub k: Vec<[[f64; 3]; 3]>,
}

impl EcmField {
    pub fn identity(n_tets: usize) -> Self {
        Self {
            k: vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]; n_tets],
        }
    }

    /// `K = I + m(A + Aᵀ)/2`, `A` uniform in `(−1, 1)`, eigenvalues floored at 0.1.
    pub fn build(mesh: &TetMesh, seed: u64, magnitude: f64) -> Self {
        if magnitude == 0.0 {
            return Self::identity(mesh.n_tets());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let k = (0..mesh.n_tets())
            .map(|_| {
                let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                let m = Matrix3::identity() + (a + a.transpose()) * (0.5 * magnitude);
                let mut eig = SymmetricEigen::new(m);
                eig.eigenvalues.iter_mut().for_each(|l| *l = l.max(0.1));
                let m = eig.recompose();
                let m = (m + m.transpose()) * 0.5;
                std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
            })
            .collect();
        Self { k }
    }

    pub fn apply(&self, tet: usize, v: Point) -> Point {
        let k = &self.k[tet];
        std::array::from_fn(|i| k[i][0] * v[0] + k[i][1] * v[1] + k[i][2] * v[2])
    }
}

fn norm(v: Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn axpy(a: f64, x: Point, y: Point) -> Point {
    [y[0] + a * x[0], y[1] + a * x[1], y[2] + a * x[2]]
}

/// Tip velocity from `K_ECM∇g` and a flag set when that vector is degenerate.
pub fn tip_velocity(g: f64, k_grad: Point, gp: &GrowthParameters) -> (Point, bool) {
    if g < gp.g_lim {
        return ([0.0; 3], false);
    }
    let n = norm(k_grad);
    if n < 1e-14 {
        return ([0.0; 3], true);
    }
    let s = gp.l_e / gp.cell_cycle_time(g) / n;
    ([s * k_grad[0], s * k_grad[1], s * k_grad[2]], false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Advance,
    Branch,
    Freeze,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Advance => "advance",
            EventKind::Branch => "branch",
            EventKind::Freeze => "freeze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthEvent {
    pub time: f64,
    pub kind: EventKind,
    pub tip: u64,
    pub x: Point,
    pub g: f64,
}

pub fn events_csv(events: &[GrowthEvent]) -> String {
    let mut s = String::from("time,event,tip,x,y,z,g\n");
    for e in events {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.time,
            e.kind.as_str(),
            e.tip,
            e.x[0],
            e.x[1],
            e.x[2],
            e.g
        );
    }
    s
}

const FIRE_TOL: f64 = 1e-9;

/// `x + disp`, stretched by a few ulps when round-off leaves the segment
/// shorter than `min_len`.
fn endpoint(x: Point, mut disp: Point, min_len: f64) -> Point {
    loop {
        let y = axpy(1.0, disp, x);
        if norm([y[0] - x[0], y[1] - x[1], y[2] - x[2]]) >= min_len {
            return y;
        }
        disp = disp.map(|v| v * (1.0 + 4.0 * f64::EPSILON));
    }
}

/// Unit vector from the other end of the tip's segment to the tip.
fn parent_direction(net: &VesselNetwork, junction: usize) -> Option<Point> {
    let seg = net.segments.iter().rev().find(|s| s.j.contains(&junction))?;
    let other = if seg.j[0] == junction { seg.j[1] } else { seg.j[0] };
    let a = net.junctions[other].pos;
    let b = net.junctions[junction].pos;
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let n = norm(d);
    (n > 0.0).then(|| [d[0] / n, d[1] / n, d[2] / n])
}

/// Moves every tip with the VEGF field of the previous step. Tips are
/// processed in the order they are stored and the rng is consumed only by
/// tips that pass the age and direction gates.
#[allow(clippy::too_many_arguments)]
pub fn advance_tips(
    net: &mut VesselNetwork,
    mesh: &TetMesh,
    g: &[f64],
    ecm: &EcmField,
    gp: &GrowthParameters,
    dt: f64,
    time: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<GrowthEvent> {
    let mut events = Vec::new();
    let ids: Vec<u64> = net.tips.iter().map(|t| t.id).collect();
    for id in ids {
        let Some(ti) = net.tip_index(id) else { continue };
        if net.tips[ti].frozen {
            continue;
        }
        net.tips[ti].age += dt;
        let junction = net.tips[ti].junction;
        let x = net.junctions[junction].pos;
        let Some(loc) = mesh.locate_point(x) else {
            net.tips[ti].frozen = true;
            events.push(GrowthEvent { time, kind: EventKind::Freeze, tip: id, x, g: f64::NAN });
            continue;
        };
        let gv = mesh.eval(g, loc.tet, &loc.bary);
        let grad = mesh.tet_gradient(g, loc.tet);
        let (w, _) = tip_velocity(gv, ecm.apply(loc.tet, grad), gp);
        if w == [0.0; 3] {
            continue;
        }
        let disp = axpy(dt, w, net.tips[ti].acc);
        let len = norm(disp);
        if len < gp.l_e * (1.0 - FIRE_TOL) {
            net.tips[ti].acc = disp;
            continue;
        }
        let target = endpoint(x, disp, gp.l_e);
        if !mesh.contains(target) {
            net.tips[ti].frozen = true;
            net.tips[ti].acc = [0.0; 3];
            events.push(GrowthEvent { time, kind: EventKind::Freeze, tip: id, x, g: gv });
            continue;
        }

        if let Some(children) = branch_targets(net, ti, x, w, disp, gv, gp, rng) {
            if children.iter().all(|&c| mesh.contains(c)) {
                net.branch_tip(ti, children[0], children[1], time);
                events.push(GrowthEvent { time, kind: EventKind::Branch, tip: id, x, g: gv });
                continue;
            }
        }
        net.extend_tip(ti, target, time);
        net.tips[ti].acc = [0.0; 3];
        events.push(GrowthEvent { time, kind: EventKind::Advance, tip: id, x: target, g: gv });
    }
    events
}

/// Endpoints of the two sprouts if the tip branches: the displacement is
/// split along `±d_br n̂`, `n̂ = w_⊥/‖w_⊥‖`, and both directions are rescaled
/// to the displacement length.
#[allow(clippy::too_many_arguments)]
fn branch_targets(
    net: &VesselNetwork,
    ti: usize,
    x: Point,
    w: Point,
    disp: Point,
    g: f64,
    gp: &GrowthParameters,
    rng: &mut ChaCha8Rng,
) -> Option<[Point; 2]> {
    if net.tips[ti].age < gp.tau_br {
        return None;
    }
    let dir = parent_direction(net, net.tips[ti].junction)?;
    let w_perp = axpy(-dot(w, dir), dir, w);
    let np = norm(w_perp);
    if np == 0.0 || np < gp.alpha_br * norm(w) {
        return None;
    }
    if rng.gen::<f64>() >= gp.branching_probability(g) {
        return None;
    }
    let n_hat = [w_perp[0] / np, w_perp[1] / np, w_perp[2] / np];
    let len = norm(disp);
    let child = |sign: f64| {
        let d = axpy(sign * gp.d_br, n_hat, disp);
        endpoint(x, d.map(|v| v * len / norm(d)), gp.l_e)
    };
    Some([child(1.0), child(-1.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Junction, JunctionKind, Segment};
    use approx::assert_relative_eq;

    fn gp() -> GrowthParameters {
        GrowthParameters::from(&ParameterSet::default())
    }

    #[test]
    fn cell_cycle_anchors() {
        let p = gp();
        assert_eq!(p.cell_cycle_time(p.g_bar), 2.0 * p.tau);
        assert_relative_eq!(p.cell_cycle_time(1e12), p.tau * (1.0 + (-1f64).exp()), max_relative = 1e-10);
        assert!(p.cell_cycle_time(1e-3) > 1e100);
        assert_eq!(p.cell_cycle_time(0.0), f64::INFINITY);
    }

    #[test]
    fn branching_probability_anchors() {
        let p = gp();
        assert!((p.branching_probability(p.g_br) - 0.99).abs() < 1e-10);
        assert!((p.branching_probability(p.g_lim) - 0.05).abs() < 1e-10);
    }

    #[test]
    fn velocity_gate_and_speed() {
        let p = gp();
        let (w, flag) = tip_velocity(0.5 * p.g_lim, [1.0, 0.0, 0.0], &p);
        assert_eq!((w, flag), ([0.0; 3], false));
        let (w, _) = tip_velocity(p.g_bar, [0.0, 3.0, 4.0], &p);
        assert_relative_eq!(norm(w), p.l_e / (2.0 * p.tau), max_relative = 1e-14);
        assert_relative_eq!(w[1] / norm(w), 0.6, max_relative = 1e-14);
        let (w, flag) = tip_velocity(p.g_bar, [0.0; 3], &p);
        assert_eq!((w, flag), ([0.0; 3], true));
    }

    #[test]
    fn ecm_is_spd_and_deterministic() {
        let mesh = TetMesh::cube(3, 1.0);
        let a = EcmField::build(&mesh, 11, 0.45);
        let b = EcmField::build(&mesh, 11, 0.45);
        assert_eq!(a, b);
        assert_ne!(a, EcmField::build(&mesh, 12, 0.45));
        assert_eq!(EcmField::build(&mesh, 11, 0.0), EcmField::identity(mesh.n_tets()));
        for k in &a.k {
            let m = Matrix3::from_fn(|i, j| k[i][j]);
            assert_eq!(m, m.transpose());
            let e = SymmetricEigen::new(m);
            assert!(e.eigenvalues.iter().all(|&l| l >= 0.1 - 1e-12));
        }
    }

    fn single_tip() -> VesselNetwork {
        VesselNetwork::new(
            vec![
                Junction { pos: [0.0, 0.5, 0.5], kind: JunctionKind::Inlet },
                Junction { pos: [0.3, 0.5, 0.5], kind: JunctionKind::Tip },
            ],
            vec![Segment { j: [0, 1], birth_time: 0.0 }],
        )
        .unwrap()
    }

    #[test]
    fn displacement_accumulates_until_threshold() {
        let mesh = TetMesh::cube(4, 1.0);
        let mut p = gp();
        p.tau_br = 1e9;
        // g = ḡ + slope·x gives t_c = 2τ at the tip and a gradient along x
        let slope = 1e-9;
        let x_tip = 0.3;
        let g: Vec<f64> = mesh.nodes().iter().map(|x| p.g_bar + slope * (x[0] - x_tip)).collect();
        let speed = p.l_e / (2.0 * p.tau);
        let dt = p.l_e / 3.0 / speed;
        let mut net = single_tip();
        let ecm = EcmField::identity(mesh.n_tets());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for step in 1..=2 {
            let ev = advance_tips(&mut net, &mesh, &g, &ecm, &p, dt, step as f64 * dt, &mut rng);
            assert!(ev.is_empty());
            assert_eq!(net.segments.len(), 1);
            assert_relative_eq!(net.tips[0].acc[0], step as f64 * p.l_e / 3.0, max_relative = 1e-6);
        }
        let ev = advance_tips(&mut net, &mesh, &g, &ecm, &p, dt, 3.0 * dt, &mut rng);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, EventKind::Advance);
        assert_eq!(net.segments.len(), 2);
        assert!(net.segment_length(1) >= p.l_e);
        assert_eq!(net.tips[0].acc, [0.0; 3]);
        assert_eq!(net.segments[1].birth_time, 3.0 * dt);
    }

    #[test]
    fn branching_replaces_one_tip_with_two() {
        let mesh = TetMesh::cube(4, 1.0);
        let mut p = gp();
        p.tau_br = 0.0;
        p.g_br = p.g_lim * 1.0001;
        // gradient perpendicular to the parent segment, high concentration
        let g: Vec<f64> = mesh.nodes().iter().map(|x| 5.0 + 0.1 * x[1]).collect();
        let mut net = single_tip();
        let ecm = EcmField::identity(mesh.n_tets());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ev = advance_tips(&mut net, &mesh, &g, &ecm, &p, 130.0, 130.0, &mut rng);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, EventKind::Branch);
        assert_eq!(net.n_tips(), 2);
        assert_eq!(net.segments.len(), 3);
        for s in 1..3 {
            assert!(net.segment_length(s) >= p.l_e);
        }
        assert!(net.tips.iter().all(|t| t.age == 0.0 && t.acc == [0.0; 3]));
    }

    #[test]
    fn no_growth_without_vegf() {
        let mesh = TetMesh::cube(2, 1.0);
        let g = vec![0.0; mesh.n_nodes()];
        let mut net = single_tip();
        let before = net.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ev = advance_tips(&mut net, &mesh, &g, &EcmField::identity(mesh.n_tets()), &gp(), 6.0, 6.0, &mut rng);
        assert!(ev.is_empty());
        assert_eq!(net.segments, before.segments);
    }

    #[test]
    fn events_serialize_as_csv() {
        let ev = [GrowthEvent { time: 6.0, kind: EventKind::Branch, tip: 4, x: [0.1, 0.2, 0.3], g: 1.5 }];
        assert_eq!(events_csv(&ev), "time,event,tip,x,y,z,g\n6,branch,4,0.1,0.2,0.3,1.5\n");
    }
}
