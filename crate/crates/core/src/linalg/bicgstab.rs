use super::bsr::{BlockCsr, BlockVector};

pub trait LinearOperator {
    fn num_rows(&self) -> usize;
    fn apply(&self, x: &BlockVector, y: &mut BlockVector);
}

pub trait Preconditioner {
    fn apply(&self, r: &BlockVector, z: &mut BlockVector);
}

impl LinearOperator for BlockCsr {
    fn num_rows(&self) -> usize {
        BlockCsr::num_rows(self)
    }

    fn apply(&self, x: &BlockVector, y: &mut BlockVector) {
        self.spmv_into(x, y).expect("operator dimension");
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &BlockVector, z: &mut BlockVector) {
        z.copy_from(r);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative residual reduction `|b - Ax| / |b|`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    /// True relative residual of the returned solution.
    pub relative_residual: f64,
    pub restarts: usize,
}

fn residual(op: &impl LinearOperator, b: &BlockVector, x: &BlockVector, r: &mut BlockVector) {
    op.apply(x, r);
    for (ri, bi) in r.0.iter_mut().zip(&b.0) {
        *ri = bi - *ri;
    }
}

/// Right-preconditioned BiCGStab started from `x`. On breakdown the
/// iteration restarts once from the current iterate.
pub fn bicgstab(
    op: &impl LinearOperator,
    precond: &impl Preconditioner,
    b: &BlockVector,
    x: &mut BlockVector,
    config: &SolverConfig,
) -> SolveStats {
    let n = op.num_rows();
    assert_eq!(b.len(), n, "right-hand side length");
    assert_eq!(x.len(), n, "initial guess length");
    let b_norm = b.norm();
    if b_norm == 0.0 {
        x.fill_zero();
        return SolveStats {
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
            restarts: 0,
        };
    }

    let mut r = BlockVector::zeros(n);
    let mut r_hat = BlockVector::zeros(n);
    let mut p = BlockVector::zeros(n);
    let mut p_hat = BlockVector::zeros(n);
    let mut v = BlockVector::zeros(n);
    let mut s = BlockVector::zeros(n);
    let mut s_hat = BlockVector::zeros(n);
    let mut t = BlockVector::zeros(n);

    let mut iterations = 0;
    let mut restarts = 0;
    let mut converged = false;
    'outer: loop {
        residual(op, b, x, &mut r);
        if r.norm() / b_norm < config.tolerance {
            converged = true;
            break;
        }
        r_hat.copy_from(&r);
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        v.fill_zero();
        p.fill_zero();
        let breakdown_scale = f64::EPSILON * r_hat.norm();
        while iterations < config.max_iterations {
            iterations += 1;
            let rho_new = r_hat.dot(&r);
            if rho_new.abs() <= breakdown_scale * r.norm() || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            precond.apply(&p, &mut p_hat);
            op.apply(&p_hat, &mut v);
            let denom = r_hat.dot(&v);
            if denom == 0.0 || !denom.is_finite() {
                break;
            }
            alpha = rho / denom;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if s.norm() / b_norm < config.tolerance {
                x.axpy(alpha, &p_hat);
                converged = true;
                break 'outer;
            }
            precond.apply(&s, &mut s_hat);
            op.apply(&s_hat, &mut t);
            let tt = t.dot(&t);
            omega = if tt > 0.0 { t.dot(&s) / tt } else { 0.0 };
            x.axpy(alpha, &p_hat);
            x.axpy(omega, &s_hat);
            for i in 0..n {
                r[i] = s[i] - omega * t[i];
            }
            if r.norm() / b_norm < config.tolerance {
                converged = true;
                break 'outer;
            }
        }
        if iterations >= config.max_iterations || restarts >= 1 {
            break;
        }
        restarts += 1;
        log::debug!("bicgstab breakdown after {iterations} iterations, restarting");
    }

    residual(op, b, x, &mut r);
    let relative_residual = r.norm() / b_norm;
    SolveStats {
        iterations,
        converged: converged && relative_residual.is_finite(),
        relative_residual,
        restarts,
    }
}
