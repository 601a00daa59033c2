//! Interstitial and vascular pressure with Starling exchange at the vessel wall.

use serde::{Deserialize, Serialize};

use crate::coupling::{solve_coupled, CoupledSolution, CoupledSystem, InterfaceMaps};
use crate::error::SolverError;
use crate::mesh::{Point, TetMesh};
use crate::network::{JunctionKind, LineQp, NetworkDiscretization, Space, VesselNetwork};
use crate::params::{Numerics, ParameterSet};
use crate::tissue::TumorConstitutive;

/// Sign of the previous-step interface jump at the auxiliary nodes of every
/// segment, used to pick the exchange regime.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseHistory {
    pub jump: Vec<Option<Vec<f64>>>,
}

impl CaseHistory {
    /// Jump `Ψ_Λ − Ψ_Ω − offset` at the auxiliary nodes.
    pub fn from_solution(disc: &NetworkDiscretization, sol: &CoupledSolution, offset: f64) -> Self {
        let jump = disc
            .segments
            .iter()
            .map(|p| {
                Some(
                    (0..p.n_aux)
                        .map(|k| sol.psi_lambda[p.aux_offset + k] - sol.psi_omega[p.aux_offset + k] - offset)
                        .collect(),
                )
            })
            .collect();
        Self { jump }
    }

    /// Previous jump at a quadrature point, `None` for segments without history.
    pub fn jump_at(&self, disc: &NetworkDiscretization, qp: &LineQp) -> Option<f64> {
        let values = self.jump.get(qp.segment)?.as_ref()?;
        let part = &disc.segments[qp.segment];
        if values.len() != part.n_aux {
            return None;
        }
        let (dofs, w) = qp.aux;
        Some(w[0] * values[dofs[0] - part.aux_offset] + w[1] * values[dofs[1] - part.aux_offset])
    }
}

/// Wall exchange coefficient `2πRβ` per segment, scaled on vessels grown
/// during the simulation.
pub fn segment_permeability(net: &VesselNetwork, radius: f64, beta0: f64, scale: f64) -> Vec<f64> {
    net.segments
        .iter()
        .map(|s| {
            let b = if s.birth_time > 0.0 { scale * beta0 } else { beta0 };
            2.0 * std::f64::consts::PI * radius * b
        })
        .collect()
}

/// Exchange coefficient at every quadrature point: `perm` in the release
/// regime (positive jump), `perm·φ̌_l` otherwise.
pub fn wall_coefficients(
    mesh: &TetMesh,
    disc: &NetworkDiscretization,
    perm: &[f64],
    phil: &[f64],
    jump: impl Fn(&LineQp) -> f64,
) -> Vec<f64> {
    disc.quad
        .iter()
        .map(|qp| {
            let k = perm[qp.segment];
            if jump(qp) > 0.0 {
                k
            } else {
                k * mesh.eval(phil, qp.tet, &qp.bary)
            }
        })
        .collect()
}

/// Coupling blocks for an exchange flux `k(û − ǔ − offset)`.
pub struct ExchangeBlocks {
    pub c_omega_omega: crate::sparse::CsrMatrix,
    pub c_omega_aux: crate::sparse::CsrMatrix,
    pub c_lambda_lambda: crate::sparse::CsrMatrix,
    pub c_lambda_aux: crate::sparse::CsrMatrix,
    /// `∫ k·offset η` on the tissue space.
    pub offset_omega: Vec<f64>,
    /// `∫ k·offset η̂` on the primary space.
    pub offset_lambda: Vec<f64>,
}

pub fn exchange_blocks(mesh: &TetMesh, disc: &NetworkDiscretization, k: &[f64], offset: f64) -> ExchangeBlocks {
    let l = disc.line_matrix_at(mesh, Space::Tissue, Space::Primary, |q, _| k[q]);
    ExchangeBlocks {
        c_omega_omega: l.matmul(disc.trace()),
        c_omega_aux: disc.line_matrix_at(mesh, Space::Tissue, Space::Aux, |q, _| k[q]),
        c_lambda_lambda: disc.line_matrix_at(mesh, Space::Primary, Space::Primary, |q, _| k[q]),
        c_lambda_aux: disc.line_matrix_at(mesh, Space::Primary, Space::Aux, |q, _| k[q]),
        offset_omega: disc.line_load_at(mesh, Space::Tissue, |q, _| k[q] * offset),
        offset_lambda: disc.line_load_at(mesh, Space::Primary, |q, _| k[q] * offset),
    }
}

/// Total exchanged amount seen by each side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExchangeBalance {
    /// `∫_Λ k(Ψ_Λ − ǔ − offset) ds`, the source in the tissue equation.
    pub tissue_source: f64,
    /// `∫_Λ k(û − Ψ_Ω − offset) ds`, the sink in the vessel equation.
    pub vessel_sink: f64,
}

impl ExchangeBalance {
    pub fn compute(
        mesh: &TetMesh,
        disc: &NetworkDiscretization,
        k: &[f64],
        offset: f64,
        sol: &CoupledSolution,
    ) -> Self {
        let tq = disc.trace().matvec(&sol.q);
        let mut out = Self::default();
        for (q, qp) in disc.quad.iter().enumerate() {
            let w = qp.w * k[q];
            let check = disc.eval(mesh, qp, Space::Primary, &tq);
            let hat = disc.eval(mesh, qp, Space::Primary, &sol.q_hat);
            let po = disc.eval(mesh, qp, Space::Aux, &sol.psi_omega);
            let pl = disc.eval(mesh, qp, Space::Aux, &sol.psi_lambda);
            out.tissue_source += w * (pl - check - offset);
            out.vessel_sink += w * (hat - po - offset);
        }
        out
    }

    /// `|source − sink| / max(|source|, |sink|)`, zero when nothing is exchanged.
    pub fn mismatch(&self) -> f64 {
        let scale = self.tissue_source.abs().max(self.vessel_sink.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.tissue_source - self.vessel_sink).abs() / scale
        }
    }
}

/// Pressure-related constants in internal units.
#[derive(Debug, Clone, Copy)]
pub struct FlowParameters {
    pub radius: f64,
    pub kappa_over_mu: f64,
    pub viscosity: f64,
    pub beta_p0: f64,
    pub r_p: f64,
    pub dp_onc: f64,
    pub beta_ls: f64,
    pub p_ls: f64,
    pub p_in: f64,
    pub p_out: f64,
}

impl From<&ParameterSet> for FlowParameters {
    fn from(p: &ParameterSet) -> Self {
        Self {
            radius: p.radius,
            kappa_over_mu: p.kappa_over_mu(),
            viscosity: p.viscosity,
            beta_p0: p.beta_p0,
            r_p: p.r_p,
            dp_onc: p.dp_onc,
            beta_ls: p.beta_ls,
            p_ls: p.p_ls,
            p_in: p.p_in,
            p_out: p.p_out,
        }
    }
}

impl FlowParameters {
    pub fn conductance(&self) -> f64 {
        std::f64::consts::PI * self.radius.powi(4) / (8.0 * self.viscosity)
    }
}

/// Fields from the previous time level needed by the pressure step.
pub struct FlowPrevious<'a> {
    pub p: &'a [f64],
    /// Vessel pressure at the junctions, indexed by junction.
    pub p_hat_junctions: &'a [f64],
    pub phil: &'a [f64],
    pub history: &'a CaseHistory,
}

/// Current-step tissue state entering the pressure source.
pub struct FlowInputs<'a> {
    pub phi: &'a [f64],
    pub phil: &'a [f64],
    pub c_prev: &'a [f64],
    pub dt: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub kkt_residual: f64,
    pub cost: f64,
    pub balance: ExchangeBalance,
    /// Relative residual of the tissue fluid budget: lymphatic drainage,
    /// storage and cell uptake against the wall source.
    pub budget_residual: f64,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub p: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub psi_omega: Vec<f64>,
    pub psi_lambda: Vec<f64>,
    /// Interstitial fluid velocity per tet.
    pub velocity: Vec<Point>,
    /// Blood velocity per primary element, positive along the element tangent.
    pub vessel_velocity: Vec<f64>,
    pub history: CaseHistory,
    pub diagnostics: FlowDiagnostics,
}

/// Interstitial velocity `−(1/(1−Φ_l))(κ/μ)∇p` per tet, with `Φ_l` averaged on the tet.
pub fn tissue_velocity(mesh: &TetMesh, p: &[f64], phil: &[f64], kappa_over_mu: f64) -> Vec<Point> {
    mesh.tets()
        .iter()
        .enumerate()
        .map(|(e, t)| {
            let pl = t.iter().map(|&v| phil[v]).sum::<f64>() / 4.0;
            let g = mesh.tet_gradient(p, e);
            let c = -kappa_over_mu / (1.0 - pl).max(1e-12);
            [c * g[0], c * g[1], c * g[2]]
        })
        .collect()
}

/// Poiseuille velocity `−(R²/8μ) dp̂/ds` per primary element.
pub fn vessel_velocity(disc: &NetworkDiscretization, p_hat: &[f64], radius: f64, viscosity: f64) -> Vec<f64> {
    let c = radius * radius / (8.0 * viscosity);
    disc.derivative_1d(p_hat).into_iter().map(|d| -c * d).collect()
}

/// Dirichlet data on the vessel inlets and outlets.
pub fn boundary_pressures(disc: &NetworkDiscretization, net: &VesselNetwork, fp: &FlowParameters) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = disc
        .junction_dofs(net, JunctionKind::Inlet)
        .into_iter()
        .map(|d| (d, fp.p_in))
        .collect();
    out.extend(disc.junction_dofs(net, JunctionKind::Outlet).into_iter().map(|d| (d, fp.p_out)));
    out
}

/// One pressure solve on the current network.
#[allow(clippy::too_many_arguments)]
pub fn pressure_step(
    mesh: &TetMesh,
    net: &VesselNetwork,
    disc: &NetworkDiscretization,
    maps: &InterfaceMaps,
    fp: &FlowParameters,
    law: &TumorConstitutive,
    inputs: &FlowInputs,
    prev: &FlowPrevious,
    num: &Numerics,
) -> Result<FlowSolution, SolverError> {
    let km = fp.kappa_over_mu;
    let phil = inputs.phil;
    let a_omega = mesh
        .stiffness_with(|e, q| {
            let pl = mesh.eval_qp(phil, e, q);
            pl / (1.0 - pl).max(1e-12) * km
        })
        .add(&mesh.mass_with(|e, q| mesh.eval_qp(phil, e, q) * fp.beta_ls));
    let f3d = |e: usize, q: usize| {
        let pl = mesh.eval_qp(phil, e, q);
        let ph = mesh.eval_qp(inputs.phi, e, q);
        let c = mesh.eval_qp(inputs.c_prev, e, q);
        let pl0 = mesh.eval_qp(prev.phil, e, q);
        pl * fp.beta_ls * fp.p_ls - ph * law.s_c(ph, c) - (pl - pl0) / inputs.dt
    };
    let b3d = mesh.load_with(f3d);
    let a_lambda = disc.stiffness_1d(|_| fp.conductance());
    let dirichlet = boundary_pressures(disc, net, fp);
    let perm = segment_permeability(net, fp.radius, fp.beta_p0, fp.r_p);

    let fallback = |qp: &LineQp| -> f64 {
        let origin = net.segments[qp.segment].j[0];
        match prev.p_hat_junctions.get(origin) {
            Some(&ph) => ph - mesh.eval(prev.p, qp.tet, &qp.bary) - fp.dp_onc,
            None => 1.0,
        }
    };
    let mut history = prev.history.clone();
    let mut result = None;
    for _ in 0..num.case_iterations.max(1) {
        let k = wall_coefficients(mesh, disc, &perm, phil, |qp| {
            history.jump_at(disc, qp).unwrap_or_else(|| fallback(qp))
        });
        let blocks = exchange_blocks(mesh, disc, &k, fp.dp_onc);
        let b_omega: Vec<f64> = b3d.iter().zip(&blocks.offset_omega).map(|(b, o)| b - o).collect();
        let sys = CoupledSystem {
            a_omega: a_omega.clone(),
            a_lambda: a_lambda.clone(),
            c_omega_omega: blocks.c_omega_omega,
            c_omega_aux: blocks.c_omega_aux,
            c_lambda_lambda: blocks.c_lambda_lambda,
            c_lambda_aux: blocks.c_lambda_aux,
            b_omega,
            b_lambda: blocks.offset_lambda,
            dirichlet: dirichlet.clone(),
        };
        let sol = solve_coupled(&sys, maps, num.kkt_tol)?;
        let balance = ExchangeBalance::compute(mesh, disc, &k, fp.dp_onc, &sol);
        history = CaseHistory::from_solution(disc, &sol, fp.dp_onc);
        result = Some((sol, balance));
    }
    let (sol, balance) = result.expect("at least one case iteration");

    // ∫Φ_lβ(p − p_LS) + ∫ΦS_c + ∫∂_tΦ_l against the wall source
    let drain = mesh.integrate_with(|e, q| {
        let pl = mesh.eval_qp(phil, e, q);
        pl * fp.beta_ls * (mesh.eval_qp(&sol.q, e, q) - fp.p_ls)
    });
    let rest = -b3d.iter().sum::<f64>() + mesh.integrate_with(|e, q| mesh.eval_qp(phil, e, q) * fp.beta_ls * fp.p_ls);
    let lhs = drain + rest;
    let scale = drain.abs().max(rest.abs()).max(balance.tissue_source.abs()).max(f64::MIN_POSITIVE);
    let budget_residual = (lhs - balance.tissue_source).abs() / scale;

    let velocity = tissue_velocity(mesh, &sol.q, phil, km);
    let vessel_velocity = vessel_velocity(disc, &sol.q_hat, fp.radius, fp.viscosity);
    Ok(FlowSolution {
        diagnostics: FlowDiagnostics {
            kkt_residual: sol.residual,
            cost: sol.cost,
            balance,
            budget_residual,
        },
        p: sol.q,
        p_hat: sol.q_hat,
        psi_omega: sol.psi_omega,
        psi_lambda: sol.psi_lambda,
        velocity,
        vessel_velocity,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Junction, PartitionOptions, Segment};
    use approx::assert_abs_diff_eq;

    fn straight(mesh: &TetMesh, aux_ratio: f64) -> (VesselNetwork, NetworkDiscretization) {
        let net = VesselNetwork::new(
            vec![
                Junction { pos: [0.0, 0.45, 0.5], kind: JunctionKind::Inlet },
                Junction { pos: [1.0, 0.55, 0.5], kind: JunctionKind::Outlet },
            ],
            vec![Segment { j: [0, 1], birth_time: 0.0 }],
        )
        .unwrap();
        let disc = NetworkDiscretization::build(mesh, &net, 5e-3, PartitionOptions { refinement: 1.0, aux_ratio }).unwrap();
        (net, disc)
    }

    fn run(mesh: &TetMesh, fp: FlowParameters, phil: f64) -> (FlowSolution, NetworkDiscretization) {
        run_with(mesh, fp, phil, 0.5)
    }

    fn run_with(mesh: &TetMesh, fp: FlowParameters, phil: f64, aux: f64) -> (FlowSolution, NetworkDiscretization) {
        let (net, disc) = straight(mesh, aux);
        let maps = InterfaceMaps::new(mesh, &disc);
        let n = mesh.n_nodes();
        let phil_v = vec![phil; n];
        let phi = vec![1.0 - phil; n];
        let c = vec![0.0; n];
        let p0 = vec![fp.p_ls; n];
        let law = TumorConstitutive::from(&ParameterSet::default());
        let sol = pressure_step(
            mesh,
            &net,
            &disc,
            &maps,
            &fp,
            &law,
            &FlowInputs { phi: &phi, phil: &phil_v, c_prev: &c, dt: 6.0 },
            &FlowPrevious { p: &p0, p_hat_junctions: &[fp.p_in, fp.p_out], phil: &phil_v, history: &CaseHistory::default() },
            &Numerics::default(),
        )
        .unwrap();
        (sol, disc)
    }

    #[test]
    fn lymphatic_equilibrium_without_exchange() {
        let mesh = TetMesh::cube(3, 1.0);
        let mut fp = FlowParameters::from(&ParameterSet::default());
        fp.beta_p0 = 0.0;
        let (sol, _) = run(&mesh, fp, 0.5);
        for &p in &sol.p {
            assert_abs_diff_eq!(p, fp.p_ls, epsilon = 1e-10);
        }
        assert!(sol.velocity.iter().all(|v| v.iter().all(|c| c.abs() < 1e-8)));
    }

    #[test]
    fn poiseuille_profile_without_exchange() {
        let mesh = TetMesh::cube(3, 1.0);
        let mut fp = FlowParameters::from(&ParameterSet::default());
        fp.beta_p0 = 0.0;
        let (sol, disc) = run(&mesh, fp, 0.5);
        let a = disc.positions[0];
        let b = disc.positions[1];
        let len = ((0..3).map(|d| (b[d] - a[d]).powi(2)).sum::<f64>()).sqrt();
        for (i, x) in disc.positions.iter().enumerate() {
            let s = ((0..3).map(|d| (x[d] - a[d]).powi(2)).sum::<f64>()).sqrt() / len;
            let expect = fp.p_in + s * (fp.p_out - fp.p_in);
            assert_abs_diff_eq!(sol.p_hat[i], expect, epsilon = 1e-10);
        }
        // flow runs from the higher to the lower pressure end
        let v = (fp.p_out - fp.p_in) / len * fp.radius.powi(2) / (8.0 * fp.viscosity);
        for &u in &sol.vessel_velocity {
            assert_abs_diff_eq!(u, -v, epsilon = 1e-8 * v.abs());
        }
    }

    #[test]
    fn tissue_budget_closes() {
        let mesh = TetMesh::cube(3, 1.0);
        let fp = FlowParameters::from(&ParameterSet::default());
        let (sol, _) = run(&mesh, fp, 0.5);
        assert!(sol.diagnostics.budget_residual < 1e-8, "{:?}", sol.diagnostics);
        assert!(sol.diagnostics.balance.tissue_source > 0.0);
    }

    #[test]
    fn matched_partitions_balance_exchange() {
        let mesh = TetMesh::cube(4, 1.0);
        let fp = FlowParameters::from(&ParameterSet::default());
        let (sol, _) = run_with(&mesh, fp, 0.5, 1.0);
        assert!(sol.diagnostics.balance.mismatch() < 1e-8, "{:?}", sol.diagnostics);
        assert!(sol.diagnostics.cost < 1e-10);
    }

    #[test]
    fn velocity_is_scaled_gradient() {
        let mesh = TetMesh::cube(2, 1.0);
        let p: Vec<f64> = mesh.nodes().iter().map(|x| 2.0 * x[0] - x[2]).collect();
        let phil = vec![0.25; mesh.n_nodes()];
        let v = tissue_velocity(&mesh, &p, &phil, 0.3);
        for w in v {
            assert_abs_diff_eq!(w[0], -0.3 / 0.75 * 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(w[1], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(w[2], 0.3 / 0.75, epsilon = 1e-12);
        }
    }

    #[test]
    fn grown_segments_use_scaled_permeability() {
        let net = VesselNetwork::new(
            vec![
                Junction { pos: [0.0, 0.5, 0.5], kind: JunctionKind::Inlet },
                Junction { pos: [0.5, 0.5, 0.5], kind: JunctionKind::Interior },
                Junction { pos: [0.6, 0.5, 0.5], kind: JunctionKind::Tip },
            ],
            vec![Segment { j: [0, 1], birth_time: 0.0 }, Segment { j: [1, 2], birth_time: 6.0 }],
        )
        .unwrap();
        let k = segment_permeability(&net, 5e-3, 2.0, 100.0);
        assert_abs_diff_eq!(k[1] / k[0], 100.0, epsilon = 1e-12);
    }

    #[test]
    fn regimes_coincide_for_full_liquid_fraction() {
        let mesh = TetMesh::cube(2, 1.0);
        let (_, disc) = straight(&mesh, 0.5);
        let phil = vec![1.0; mesh.n_nodes()];
        let a = wall_coefficients(&mesh, &disc, &[3.0], &phil, |_| 1.0);
        let b = wall_coefficients(&mesh, &disc, &[3.0], &phil, |_| -1.0);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }
}
