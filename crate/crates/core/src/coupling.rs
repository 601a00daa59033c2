//! Optimization-based 3D–1D coupling.
//!
//! The tissue and vessel problems each see the other side only through an
//! auxiliary interface variable. The auxiliary pair is chosen to minimise
//!
//! `J = ½ (‖Q̌ − Ψ_Ω‖² + ‖Q̂ − Ψ_Λ‖²)` in `L²(Λ)`
//!
//! subject to
//!
//! ```text
//! (A_Ω + C_ΩΩ) Q − C_ΩA Ψ_Λ = b_Ω
//! (A_Λ + C_ΛΛ) Q̂ − C_ΛA Ψ_Ω = b_Λ
//! ```
//!
//! and the optimality system is solved directly.

use crate::error::SolverError;
use crate::mesh::TetMesh;
use crate::network::{NetworkDiscretization, Space};
use crate::sparse::{dot, CsrMatrix, SparseLu};

/// Blocks of one coupled linear problem.
#[derive(Debug, Clone)]
pub struct CoupledSystem {
    pub a_omega: CsrMatrix,
    pub a_lambda: CsrMatrix,
    /// Acts on the tissue unknown through its trace.
    pub c_omega_omega: CsrMatrix,
    pub c_omega_aux: CsrMatrix,
    pub c_lambda_lambda: CsrMatrix,
    pub c_lambda_aux: CsrMatrix,
    pub b_omega: Vec<f64>,
    pub b_lambda: Vec<f64>,
    /// Prescribed values of vessel dofs.
    pub dirichlet: Vec<(usize, f64)>,
}

/// Interface quantities that define the cost functional.
#[derive(Debug, Clone)]
pub struct InterfaceMaps {
    pub trace: CsrMatrix,
    pub m11: CsrMatrix,
    pub m1a: CsrMatrix,
    pub maa: CsrMatrix,
}

impl InterfaceMaps {
    pub fn new(mesh: &TetMesh, disc: &NetworkDiscretization) -> Self {
        Self {
            trace: disc.trace().clone(),
            m11: disc.line_matrix(mesh, Space::Primary, Space::Primary, |_| 1.0),
            m1a: disc.line_matrix(mesh, Space::Primary, Space::Aux, |_| 1.0),
            maa: disc.line_matrix(mesh, Space::Aux, Space::Aux, |_| 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KktSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    n3: usize,
    n1: usize,
    na: usize,
}

#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub q: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub psi_omega: Vec<f64>,
    pub psi_lambda: Vec<f64>,
    pub mult_omega: Vec<f64>,
    pub mult_lambda: Vec<f64>,
    pub cost: f64,
    pub residual: f64,
}

/// Places the block `m` at offset `(r0, c0)` in a triplet list.
fn push_block(trip: &mut Vec<(usize, usize, f64)>, m: &CsrMatrix, r0: usize, c0: usize) {
    for i in 0..m.nrows() {
        for (j, v) in m.row(i) {
            if v != 0.0 {
                trip.push((r0 + i, c0 + j, v));
            }
        }
    }
}

/// Value of the cost functional for given unknowns.
pub fn cost(maps: &InterfaceMaps, q: &[f64], q_hat: &[f64], psi_omega: &[f64], psi_lambda: &[f64]) -> f64 {
    let tq = maps.trace.matvec(q);
    let part = |u: &[f64], psi: &[f64]| {
        dot(u, &maps.m11.matvec(u)) - 2.0 * dot(u, &maps.m1a.matvec(psi)) + dot(psi, &maps.maa.matvec(psi))
    };
    (0.5 * (part(&tq, psi_omega) + part(q_hat, psi_lambda))).max(0.0)
}

/// Builds the symmetric saddle-point matrix
///
/// ```text
/// [ H  Eᵀ ] [x]   [0]
/// [ E  0  ] [λ] = [b]
/// ```
///
/// with `x = (Q, Q̂, Ψ_Ω, Ψ_Λ)`. Vessel Dirichlet rows are replaced by
/// identities and their columns moved to the right-hand side.
pub fn build_saddle_system(sys: &CoupledSystem, maps: &InterfaceMaps) -> Result<KktSystem, SolverError> {
    let n3 = sys.a_omega.nrows();
    let n1 = sys.a_lambda.nrows();
    let na = maps.maa.nrows();
    let dims_ok = sys.a_omega.ncols() == n3
        && sys.a_lambda.ncols() == n1
        && sys.c_omega_omega.nrows() == n3
        && sys.c_omega_omega.ncols() == n3
        && sys.c_omega_aux.nrows() == n3
        && sys.c_omega_aux.ncols() == na
        && sys.c_lambda_lambda.nrows() == n1
        && sys.c_lambda_aux.nrows() == n1
        && sys.c_lambda_aux.ncols() == na
        && maps.trace.nrows() == n1
        && maps.trace.ncols() == n3
        && sys.b_omega.len() == n3
        && sys.b_lambda.len() == n1;
    if !dims_ok {
        return Err(SolverError::Factorization("inconsistent coupled block dimensions".into()));
    }

    let e_omega = sys.a_omega.add(&sys.c_omega_omega);
    let mut e_lambda = sys.a_lambda.add(&sys.c_lambda_lambda);
    let mut c_la = sys.c_lambda_aux.clone();
    let mut b_lambda = sys.b_lambda.clone();
    if !sys.dirichlet.is_empty() {
        e_lambda.apply_dirichlet(&mut b_lambda, &sys.dirichlet);
        let mut fixed = vec![false; n1];
        for &(d, _) in &sys.dirichlet {
            fixed[d] = true;
        }
        // the fixed rows no longer couple to the auxiliary variables
        let mask: Vec<f64> = fixed.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect();
        c_la = c_la.scale_rows(&mask);
    }

    // Hessian of J
    let tt = maps.trace.transpose();
    let h_qq = tt.matmul(&maps.m11.matmul(&maps.trace));
    let h_qq = h_qq.lin_comb(0.5, &h_qq.transpose(), 0.5);
    let h_qpsi = tt.matmul(&maps.m1a).scaled(-1.0);
    let m1a_neg = maps.m1a.scaled(-1.0);

    let (oq, oqh, opo, opl, olo, oll) = (0, n3, n3 + n1, n3 + n1 + na, n3 + n1 + 2 * na, 2 * n3 + n1 + 2 * na);
    let n = 2 * n3 + 2 * n1 + 2 * na;
    let mut trip = Vec::new();
    push_block(&mut trip, &h_qq, oq, oq);
    push_block(&mut trip, &h_qpsi, oq, opo);
    push_block(&mut trip, &h_qpsi.transpose(), opo, oq);
    push_block(&mut trip, &maps.maa, opo, opo);
    push_block(&mut trip, &maps.m11, oqh, oqh);
    push_block(&mut trip, &m1a_neg, oqh, opl);
    push_block(&mut trip, &m1a_neg.transpose(), opl, oqh);
    push_block(&mut trip, &maps.maa, opl, opl);

    // constraints and their transposes
    let neg_coa = sys.c_omega_aux.scaled(-1.0);
    let neg_cla = c_la.scaled(-1.0);
    push_block(&mut trip, &e_omega, olo, oq);
    push_block(&mut trip, &neg_coa, olo, opl);
    push_block(&mut trip, &e_lambda, oll, oqh);
    push_block(&mut trip, &neg_cla, oll, opo);
    push_block(&mut trip, &e_omega.transpose(), oq, olo);
    push_block(&mut trip, &neg_coa.transpose(), opl, olo);
    push_block(&mut trip, &e_lambda.transpose(), oqh, oll);
    push_block(&mut trip, &neg_cla.transpose(), opo, oll);

    let matrix = CsrMatrix::from_triplets(n, n, &trip);
    let mut rhs = vec![0.0; n];
    rhs[olo..olo + n3].copy_from_slice(&sys.b_omega);
    rhs[oll..oll + n1].copy_from_slice(&b_lambda);
    Ok(KktSystem { matrix, rhs, n3, n1, na })
}

/// Solves the optimality system and checks `‖Kx − b‖/‖b‖ < tol`.
pub fn solve_kkt(kkt: &KktSystem, maps: &InterfaceMaps, tol: f64) -> Result<CoupledSolution, SolverError> {
    let lu = SparseLu::new(&kkt.matrix)?;
    let (x, residual) = lu.solve(&kkt.rhs);
    if !(residual <= tol) || x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Residual {
            residual,
            tolerance: tol,
            size: kkt.rhs.len(),
        });
    }
    let (n3, n1, na) = (kkt.n3, kkt.n1, kkt.na);
    let mut off = 0;
    let mut take = |n: usize| {
        let v = x[off..off + n].to_vec();
        off += n;
        v
    };
    let q = take(n3);
    let q_hat = take(n1);
    let psi_omega = take(na);
    let psi_lambda = take(na);
    let mult_omega = take(n3);
    let mult_lambda = take(n1);
    let cost = cost(maps, &q, &q_hat, &psi_omega, &psi_lambda);
    Ok(CoupledSolution {
        q,
        q_hat,
        psi_omega,
        psi_lambda,
        mult_omega,
        mult_lambda,
        cost,
        residual,
    })
}

/// Convenience wrapper: build and solve.
pub fn solve_coupled(sys: &CoupledSystem, maps: &InterfaceMaps, tol: f64) -> Result<CoupledSolution, SolverError> {
    let kkt = build_saddle_system(sys, maps)?;
    solve_kkt(&kkt, maps, tol)
}
