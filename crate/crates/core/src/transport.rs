//! Oxygen (tissue and vessels) and VEGF (tissue with a wall sink).

use std::f64::consts::PI;

use crate::coupling::{solve_coupled, CoupledSystem, InterfaceMaps};
use crate::error::SolverError;
use crate::flow::{exchange_blocks, segment_permeability, wall_coefficients, CaseHistory, ExchangeBalance};
use crate::mesh::{Point, TetMesh};
use crate::network::{JunctionKind, LineQp, NetworkDiscretization, Space, VesselNetwork};
use crate::params::{Numerics, ParameterSet};
use crate::sparse::{solve, CsrMatrix};

#[derive(Debug, Clone, Copy)]
pub struct TransportParameters {
    pub radius: f64,
    pub phi_max: f64,
    pub d_c: f64,
    pub d_c_vessel: f64,
    pub beta_c0: f64,
    pub r_c: f64,
    pub m_c: f64,
    pub c_in: f64,
    pub d_g: f64,
    pub sigma: f64,
    pub sigma_tilde: f64,
    pub vegf_rate: f64,
    pub c_star: f64,
    pub b: f64,
}

impl From<&ParameterSet> for TransportParameters {
    fn from(p: &ParameterSet) -> Self {
        Self {
            radius: p.radius,
            phi_max: p.phi_max,
            d_c: p.d_c,
            d_c_vessel: p.d_c_vessel,
            beta_c0: p.beta_c0,
            r_c: p.r_c,
            m_c: p.m_c,
            c_in: p.c_in,
            d_g: p.d_g,
            sigma: p.sigma,
            sigma_tilde: p.sigma_tilde,
            vegf_rate: p.vegf_rate,
            c_star: p.c_star,
            b: p.b,
        }
    }
}

impl TransportParameters {
    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }
}

/// VEGF production `Γ_g = GΦ(1 − 1/(1 + exp(b(1 − Φ_l C/c*))))`.
pub fn vegf_source(phi: f64, c: f64, phil: f64, tp: &TransportParameters) -> f64 {
    let z = tp.b * (1.0 - phil * c / tp.c_star);
    tp.vegf_rate * phi * (1.0 - 1.0 / (1.0 + z.exp()))
}

/// Tissue fields at the current step used by both transport solves.
pub struct TissueState<'a> {
    pub phi: &'a [f64],
    pub phil: &'a [f64],
    pub velocity: &'a [Point],
}

#[derive(Debug, Clone)]
pub struct OxygenSolution {
    pub c: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub theta_omega: Vec<f64>,
    pub theta_lambda: Vec<f64>,
    pub history: CaseHistory,
    pub kkt_residual: f64,
    pub cost: f64,
    pub balance: ExchangeBalance,
}

/// Previous-step oxygen on the current discretization.
pub struct OxygenPrevious<'a> {
    pub c: &'a [f64],
    pub c_hat: &'a [f64],
    pub history: &'a CaseHistory,
}

/// `(πR²/Δt)M + πR²D̃K + advection` on the primary partition.
pub fn vessel_oxygen_operator(
    disc: &NetworkDiscretization,
    tp: &TransportParameters,
    vessel_velocity: &[f64],
    dt: f64,
    area_weighted_advection: bool,
) -> CsrMatrix {
    let a = tp.area();
    let adv = if area_weighted_advection { a } else { 1.0 };
    disc.mass_1d(|_| a / dt)
        .add(&disc.stiffness_1d(|_| a * tp.d_c_vessel))
        .add(&disc.advection_1d(vessel_velocity, |_| adv))
}

/// `Φ_l/Δt + m_cΦ_lΦ_c` mass, `Φ_lD` stiffness and `Φ_l v·∇` advection.
fn tissue_operator(
    mesh: &TetMesh,
    phil: &[f64],
    velocity: &[Point],
    dt: f64,
    diffusivity: f64,
    reaction: impl Fn(f64) -> f64,
) -> CsrMatrix {
    mesh.mass_with(|e, q| {
        let pl = mesh.eval_qp(phil, e, q);
        pl / dt + reaction(pl)
    })
    .add(&mesh.stiffness_with(|e, q| mesh.eval_qp(phil, e, q) * diffusivity))
    .add(&mesh.advection_with(velocity, |e, q| mesh.eval_qp(phil, e, q)))
}

/// One backward Euler oxygen step. `dt = ∞` gives the steady problem.
#[allow(clippy::too_many_arguments)]
pub fn oxygen_step(
    mesh: &TetMesh,
    net: &VesselNetwork,
    disc: &NetworkDiscretization,
    maps: &InterfaceMaps,
    tp: &TransportParameters,
    tissue: &TissueState,
    vessel_velocity: &[f64],
    prev: &OxygenPrevious,
    dt: f64,
    num: &Numerics,
) -> Result<OxygenSolution, SolverError> {
    let phil = tissue.phil;
    let phi_max = tp.phi_max;
    let a_omega = tissue_operator(mesh, phil, tissue.velocity, dt, tp.d_c, |pl| {
        tp.m_c * pl * (phi_max - pl)
    });
    let b_omega = mesh.load_with(|e, q| mesh.eval_qp(phil, e, q) / dt * mesh.eval_qp(prev.c, e, q));
    let a_lambda = vessel_oxygen_operator(disc, tp, vessel_velocity, dt, num.vessel_advection_area);
    let b_lambda = disc.mass_1d(|_| tp.area() / dt).matvec(prev.c_hat);
    let mut dirichlet: Vec<(usize, f64)> =
        disc.junction_dofs(net, JunctionKind::Inlet).into_iter().map(|d| (d, tp.c_in)).collect();
    if num.oxygen_outlet_dirichlet {
        dirichlet.extend(disc.junction_dofs(net, JunctionKind::Outlet).into_iter().map(|d| (d, 0.0)));
    }
    let perm = segment_permeability(net, tp.radius, tp.beta_c0, tp.r_c);
    let fallback = |qp: &LineQp| {
        disc.eval(mesh, qp, Space::Primary, prev.c_hat) - mesh.eval(prev.c, qp.tet, &qp.bary)
    };

    let mut history = prev.history.clone();
    let mut last = None;
    for _ in 0..num.case_iterations.max(1) {
        let k = wall_coefficients(mesh, disc, &perm, phil, |qp| {
            history.jump_at(disc, qp).unwrap_or_else(|| fallback(qp))
        });
        let blocks = exchange_blocks(mesh, disc, &k, 0.0);
        let sys = CoupledSystem {
            a_omega: a_omega.clone(),
            a_lambda: a_lambda.clone(),
            c_omega_omega: blocks.c_omega_omega,
            c_omega_aux: blocks.c_omega_aux,
            c_lambda_lambda: blocks.c_lambda_lambda,
            c_lambda_aux: blocks.c_lambda_aux,
            b_omega: b_omega.clone(),
            b_lambda: b_lambda.clone(),
            dirichlet: dirichlet.clone(),
        };
        let sol = solve_coupled(&sys, maps, num.kkt_tol)?;
        let balance = ExchangeBalance::compute(mesh, disc, &k, 0.0, &sol);
        history = CaseHistory::from_solution(disc, &sol, 0.0);
        last = Some((sol, balance));
    }
    let (sol, balance) = last.expect("at least one case iteration");
    Ok(OxygenSolution {
        kkt_residual: sol.residual,
        cost: sol.cost,
        balance,
        c: sol.q,
        c_hat: sol.q_hat,
        theta_omega: sol.psi_omega,
        theta_lambda: sol.psi_lambda,
        history,
    })
}

/// One fully implicit VEGF step with the wall sink `2πRσ̃φ̌_l ǧ`.
#[allow(clippy::too_many_arguments)]
pub fn vegf_step(
    mesh: &TetMesh,
    disc: Option<&NetworkDiscretization>,
    tp: &TransportParameters,
    tissue: &TissueState,
    c: &[f64],
    g_prev: &[f64],
    dt: f64,
    tol: f64,
) -> Result<Vec<f64>, SolverError> {
    let phil = tissue.phil;
    let sigma = tp.sigma;
    let mut a = tissue_operator(mesh, phil, tissue.velocity, dt, tp.d_g, |pl| sigma * pl);
    if let Some(disc) = disc {
        let k = 2.0 * PI * tp.radius * tp.sigma_tilde;
        let sink = disc
            .line_matrix(mesh, Space::Tissue, Space::Primary, |qp| k * mesh.eval(phil, qp.tet, &qp.bary))
            .matmul(disc.trace());
        a = a.add(&sink);
    }
    let b = mesh.load_with(|e, q| {
        let pl = mesh.eval_qp(phil, e, q);
        let src = vegf_source(mesh.eval_qp(tissue.phi, e, q), mesh.eval_qp(c, e, q), pl, tp);
        pl / dt * mesh.eval_qp(g_prev, e, q) + src
    });
    solve(&a, &b, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Junction, PartitionOptions, Segment};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn tp() -> TransportParameters {
        TransportParameters::from(&ParameterSet::default())
    }

    #[test]
    fn vegf_source_anchors() {
        let t = tp();
        assert_relative_eq!(vegf_source(0.4, t.c_star / 0.5, 0.5, &t), 0.5 * t.vegf_rate * 0.4, max_relative = 1e-15);
        assert_eq!(vegf_source(0.0, 3.0, 0.5, &t), 0.0);
        let upper = vegf_source(1.0, 0.0, 0.5, &t);
        assert_relative_eq!(upper, t.vegf_rate * (1.0 - 1.0 / (1.0 + t.b.exp())), max_relative = 1e-15);
        assert!((upper / t.vegf_rate - (1.0 - 1.0e-5)).abs() < 1e-6);
        assert!(vegf_source(1.0, 1e4, 1.0, &t) < 1e-12);
    }

    fn line(mesh: &TetMesh, refinement: f64) -> (VesselNetwork, NetworkDiscretization) {
        let net = VesselNetwork::new(
            vec![
                Junction { pos: [0.0, 0.5, 0.5], kind: JunctionKind::Inlet },
                Junction { pos: [1.0, 0.5, 0.5], kind: JunctionKind::Outlet },
            ],
            vec![Segment { j: [0, 1], birth_time: 0.0 }],
        )
        .unwrap();
        let disc = NetworkDiscretization::build(mesh, &net, 5e-3, PartitionOptions { refinement, aux_ratio: 0.5 }).unwrap();
        (net, disc)
    }

    #[test]
    fn stationary_oxygen_without_exchange() {
        let mesh = TetMesh::cube(3, 1.0);
        let (net, disc) = line(&mesh, 1.0);
        let maps = InterfaceMaps::new(&mesh, &disc);
        let mut t = tp();
        t.beta_c0 = 0.0;
        t.m_c = 0.0;
        t.c_in = 7.0;
        let n = mesh.n_nodes();
        let phil = vec![0.5; n];
        let phi = vec![0.5; n];
        let vel = vec![[0.0; 3]; mesh.n_tets()];
        let c0 = vec![7.0; n];
        let ch0 = vec![7.0; disc.n_prim];
        let sol = oxygen_step(
            &mesh,
            &net,
            &disc,
            &maps,
            &t,
            &TissueState { phi: &phi, phil: &phil, velocity: &vel },
            &vec![0.0; disc.elems.len()],
            &OxygenPrevious { c: &c0, c_hat: &ch0, history: &CaseHistory::default() },
            6.0,
            &Numerics::default(),
        )
        .unwrap();
        for v in sol.c.iter().chain(&sol.c_hat) {
            assert_abs_diff_eq!(*v, 7.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn vessel_steady_state_matches_exponential() {
        // A D ĉ'' − Q ĉ' − k ĉ = 0, ĉ(0) = c_in, ĉ'(S) = 0
        let mesh = TetMesh::cube(2, 1.0);
        let (net, disc) = line(&mesh, 40.0);
        let t = tp();
        let q_flow = 0.02;
        let vel = vec![q_flow / t.area(); disc.elems.len()];
        let mut a = vessel_oxygen_operator(&disc, &t, &vel, f64::INFINITY, true);
        let k = 2.0 * PI * t.radius * t.beta_c0;
        a = a.add(&disc.mass_1d(|_| k));
        let mut rhs = vec![0.0; disc.n_prim];
        let inlet = disc.junction_dofs(&net, JunctionKind::Inlet)[0];
        a.apply_dirichlet(&mut rhs, &[(inlet, t.c_in)]);
        let ch = solve(&a, &rhs, 1e-12).unwrap();

        let ad = t.area() * t.d_c_vessel;
        let disc_root = (q_flow * q_flow + 4.0 * ad * k).sqrt();
        let (l1, l2) = ((q_flow + disc_root) / (2.0 * ad), (q_flow - disc_root) / (2.0 * ad));
        let s_len = 1.0;
        // c = A e^{l1 s} + B e^{l2 s}, A + B = c_in, A l1 e^{l1 S} + B l2 e^{l2 S} = 0
        let r = -l2 * (l2 * s_len).exp() / (l1 * (l1 * s_len).exp());
        let bb = t.c_in / (1.0 + r);
        let aa = r * bb;
        let exact = |s: f64| aa * (l1 * s).exp() + bb * (l2 * s).exp();
        for (i, x) in disc.positions.iter().enumerate() {
            let e = exact(x[0]);
            assert!((ch[i] - e).abs() <= 1e-3 * e.abs().max(1e-3 * t.c_in), "{} {} {}", x[0], ch[i], e);
        }
    }

    #[test]
    fn uniform_vegf_matches_scalar_update() {
        let mesh = TetMesh::cube(2, 1.0);
        let t = tp();
        let n = mesh.n_nodes();
        let (pl, ph, c, g0, dt) = (0.6, 0.4, 20.0, 0.3, 6.0);
        let vel = vec![[0.0; 3]; mesh.n_tets()];
        let g = vegf_step(
            &mesh,
            None,
            &t,
            &TissueState { phi: &vec![ph; n], phil: &vec![pl; n], velocity: &vel },
            &vec![c; n],
            &vec![g0; n],
            dt,
            1e-12,
        )
        .unwrap();
        let src = vegf_source(ph, c, pl, &t);
        let expect = (pl / dt * g0 + src) / (pl / dt + t.sigma * pl);
        for v in g {
            assert_relative_eq!(v, expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn vessel_sink_lowers_vegf() {
        let mesh = TetMesh::cube(3, 1.0);
        let (_, disc) = line(&mesh, 1.0);
        let t = tp();
        let n = mesh.n_nodes();
        let vel = vec![[0.0; 3]; mesh.n_tets()];
        let phil = vec![0.5; n];
        let state = TissueState { phi: &phil, phil: &phil, velocity: &vel };
        let c = vec![5.0; n];
        let g0 = vec![0.0; n];
        let free = vegf_step(&mesh, None, &t, &state, &c, &g0, 6.0, 1e-12).unwrap();
        let sunk = vegf_step(&mesh, Some(&disc), &t, &state, &c, &g0, 6.0, 1e-12).unwrap();
        let w = |g: &[f64]| mesh.integrate_with(|e, q| mesh.eval_qp(&phil, e, q) * mesh.eval_qp(g, e, q));
        assert!(w(&sunk) < w(&free));
        let zero = vegf_step(&mesh, Some(&disc), &t, &TissueState { phi: &vec![0.0; n], ..state }, &c, &g0, 6.0, 1e-12)
            .unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }
}
