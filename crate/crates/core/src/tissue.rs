//! Tumor cell volume fraction: constitutive laws and the implicit Newton step.

use crate::error::TissueError;
use crate::mesh::{TetMesh, N_QUAD, QUAD_BARY};
use crate::params::{Numerics, ParameterSet};
use crate::sparse::{norm2, CsrMatrix, SparseLu};

/// Constitutive constants of the cell phase.
#[derive(Debug, Clone, Copy)]
pub struct TumorConstitutive {
    pub em: f64,
    pub phi_max: f64,
    pub phi_0: f64,
    pub gamma: f64,
    pub c_ref: f64,
}

impl From<&ParameterSet> for TumorConstitutive {
    fn from(p: &ParameterSet) -> Self {
        Self {
            em: p.em(),
            phi_max: p.phi_max,
            phi_0: p.phi_0,
            gamma: p.gamma,
            c_ref: p.c_ref,
        }
    }
}

impl TumorConstitutive {
    /// Cell diffusivity `F_c(φ) = EMφ(φmax(2φ−φ0)−φ²)/(φmax−φ)²`.
    pub fn f_c(&self, phi: f64) -> f64 {
        let g = self.phi_max * (2.0 * phi - self.phi_0) - phi * phi;
        let d = self.phi_max - phi;
        self.em * phi * g / (d * d)
    }

    /// Checked version that rejects the saturation singularity.
    pub fn try_f_c(&self, phi: f64) -> Result<f64, String> {
        if phi >= self.phi_max {
            return Err(format!("F_c is singular at phi = {phi} >= phi_max = {}", self.phi_max));
        }
        Ok(self.f_c(phi))
    }

    pub fn f_c_prime(&self, phi: f64) -> f64 {
        let g = self.phi_max * (2.0 * phi - self.phi_0) - phi * phi;
        let dg = 2.0 * self.phi_max - 2.0 * phi;
        let u = phi * g;
        let du = g + phi * dg;
        let d = self.phi_max - phi;
        self.em * (du * d + 2.0 * u) / (d * d * d)
    }

    /// Proliferation rate `(γ/c_ref)((φmax−φ)c − c_ref)₊`.
    pub fn s_c(&self, phi: f64, c: f64) -> f64 {
        let a = (self.phi_max - phi) * c - self.c_ref;
        if a > 0.0 {
            self.gamma / self.c_ref * a
        } else {
            0.0
        }
    }

    /// `∂S_c/∂φ`, zero at the kink.
    pub fn s_c_prime(&self, phi: f64, c: f64) -> f64 {
        let a = (self.phi_max - phi) * c - self.c_ref;
        if a > 0.0 {
            -self.gamma / self.c_ref * c
        } else {
            0.0
        }
    }

    /// Isotropic stress `Σ(φ) = Eφ(φ−φ0)/(φmax−φ)`, scaled by `M` so that `F_c = φΣ′`.
    pub fn sigma(&self, phi: f64) -> f64 {
        let e = self.em;
        e * phi * (phi - self.phi_0) / (self.phi_max - phi)
    }
}

/// Liquid fraction from the saturation constraint.
pub fn update_phil(phi: &[f64], phi_max: f64) -> Vec<f64> {
    phi.iter().map(|&p| phi_max - p).collect()
}

#[derive(Debug, Clone, Default)]
pub struct NewtonReport {
    pub iterations: usize,
    pub substeps: u32,
    pub residuals: Vec<f64>,
    pub increments: Vec<f64>,
}

/// Discrete residual `G(Φ)` and its exact Jacobian for one backward Euler step.
pub struct TumorProblem<'a> {
    pub mesh: &'a TetMesh,
    pub law: TumorConstitutive,
    pub phi_old: &'a [f64],
    pub c_old: &'a [f64],
    pub dt: f64,
    pub eps: f64,
}

impl TumorProblem<'_> {
    fn guard(&self, phi: f64) -> f64 {
        phi.clamp(0.0, self.law.phi_max - self.eps)
    }

    fn f_c_and_prime(&self, phi: f64) -> (f64, f64) {
        let g = self.guard(phi);
        let d = if g == phi { self.law.f_c_prime(g) } else { 0.0 };
        (self.law.f_c(g), d)
    }

    pub fn residual(&self, phi: &[f64]) -> Vec<f64> {
        let mesh = self.mesh;
        let mut r = vec![0.0; phi.len()];
        for (e, t) in mesh.tets().iter().enumerate() {
            let w = mesh.volume(e) / 4.0;
            let grads = mesh.basis_gradients(e);
            let gphi = mesh.tet_gradient(phi, e);
            for lam in QUAD_BARY.iter().take(N_QUAD) {
                let p: f64 = (0..4).map(|a| lam[a] * phi[t[a]]).sum();
                let p0: f64 = (0..4).map(|a| lam[a] * self.phi_old[t[a]]).sum();
                let c: f64 = (0..4).map(|a| lam[a] * self.c_old[t[a]]).sum();
                let (fc, _) = self.f_c_and_prime(p);
                let react = (p - p0) / self.dt - self.law.s_c(p, c) * p;
                for a in 0..4 {
                    let diff = gphi[0] * grads[a][0] + gphi[1] * grads[a][1] + gphi[2] * grads[a][2];
                    r[t[a]] += w * (react * lam[a] + fc * diff);
                }
            }
        }
        r
    }

    pub fn jacobian(&self, phi: &[f64]) -> CsrMatrix {
        let mesh = self.mesh;
        mesh.assemble_elementwise(|e| {
            let t = mesh.tets()[e];
            let w = mesh.volume(e) / 4.0;
            let grads = mesh.basis_gradients(e);
            let gphi = mesh.tet_gradient(phi, e);
            let gg: [[f64; 4]; 4] = std::array::from_fn(|a| {
                std::array::from_fn(|b| {
                    grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1] + grads[a][2] * grads[b][2]
                })
            });
            let gl: [f64; 4] =
                std::array::from_fn(|a| gphi[0] * grads[a][0] + gphi[1] * grads[a][1] + gphi[2] * grads[a][2]);
            let mut k = [[0.0; 4]; 4];
            for lam in QUAD_BARY.iter() {
                let p: f64 = (0..4).map(|a| lam[a] * phi[t[a]]).sum();
                let c: f64 = (0..4).map(|a| lam[a] * self.c_old[t[a]]).sum();
                let (fc, dfc) = self.f_c_and_prime(p);
                let react = 1.0 / self.dt - self.law.s_c(p, c) - self.law.s_c_prime(p, c) * p;
                for a in 0..4 {
                    for b in 0..4 {
                        k[a][b] += w * (react * lam[a] * lam[b] + fc * gg[a][b] + dfc * lam[b] * gl[a]);
                    }
                }
            }
            k
        })
    }
}

/// Newton solve of a single backward Euler step without sub-stepping.
fn newton(
    mesh: &TetMesh,
    law: TumorConstitutive,
    phi_old: &[f64],
    c_old: &[f64],
    dt: f64,
    num: &Numerics,
    report: &mut NewtonReport,
) -> Result<Vec<f64>, f64> {
    let prob = TumorProblem {
        mesh,
        law,
        phi_old,
        c_old,
        dt,
        eps: num.phi_eps,
    };
    let n = phi_old.len();
    let mut phi = phi_old.to_vec();
    let mut r = prob.residual(&phi);
    let r0 = norm2(&r);
    let tol = (num.newton_tol_abs * n as f64).max(num.newton_tol_rel * r0);
    report.residuals.push(r0);
    let mut res = r0;
    let mut converged = res < tol;
    for _ in 0..num.newton_max_iter {
        if converged {
            break;
        }
        let jac = prob.jacobian(&phi);
        let lu = SparseLu::new(&jac).map_err(|_| res)?;
        let (delta, _) = lu.solve(&r);
        let dnorm = norm2(&delta);
        for (p, d) in phi.iter_mut().zip(&delta) {
            *p -= d;
        }
        report.iterations += 1;
        report.increments.push(dnorm);
        r = prob.residual(&phi);
        res = norm2(&r);
        report.residuals.push(res);
        if !res.is_finite() {
            return Err(res);
        }
        // the residual test alone stops one quadratic step early on stiff cases
        let scale = norm2(&phi).max(1.0);
        converged = (res < tol && dnorm <= 1e-8 * scale) || dnorm <= 1e-14 * scale;
    }
    converged |= res < tol;
    let bound = law.phi_max - 0.5 * num.phi_eps;
    if !converged || phi.iter().any(|&p| p > bound || !p.is_finite()) {
        return Err(res);
    }
    Ok(phi)
}

/// Advances the tumor fraction by `dt` with the oxygen lagged at `c_old`.
///
/// A failed Newton solve (divergence, non-finite values or a saturation
/// bound violation) halves the step, up to `num.max_halvings` times.
pub fn tumor_step(
    mesh: &TetMesh,
    law: TumorConstitutive,
    phi_old: &[f64],
    c_old: &[f64],
    dt: f64,
    num: &Numerics,
) -> Result<(Vec<f64>, NewtonReport), TissueError> {
    let mut report = NewtonReport::default();
    let phi = substep(mesh, law, phi_old, c_old, dt, num, 0, &mut report)?;
    Ok((phi, report))
}

#[allow(clippy::too_many_arguments)]
fn substep(
    mesh: &TetMesh,
    law: TumorConstitutive,
    phi_old: &[f64],
    c_old: &[f64],
    dt: f64,
    num: &Numerics,
    depth: u32,
    report: &mut NewtonReport,
) -> Result<Vec<f64>, TissueError> {
    match newton(mesh, law, phi_old, c_old, dt, num, report) {
        Ok(phi) => Ok(phi),
        Err(res) if depth >= num.max_halvings => Err(TissueError::NotConverged {
            substeps: depth,
            residual: res,
        }),
        Err(_) => {
            report.substeps = report.substeps.max(depth + 1);
            let mid = substep(mesh, law, phi_old, c_old, 0.5 * dt, num, depth + 1, report)?;
            substep(mesh, law, &mid, c_old, 0.5 * dt, num, depth + 1, report)
        }
    }
}
