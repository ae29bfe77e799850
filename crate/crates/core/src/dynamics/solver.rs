//! Per-stage algebraic network solve.
//!
//! The network equation at each integration stage is a current balance
//! `Y_aug V = I_norton(states) - I_cp(V)`: generator EMFs and motor
//! transient EMFs enter as Norton sources behind their internal admittances
//! (folded into `Y_aug`), while constant-power load currents depend on the
//! unknown voltages. The linear part is eliminated through one cached LU
//! factorization per topology segment, and Newton iterates on the
//! constant-power bus block (the Schur complement of the current mismatch),
//! warm-started from the previous stage.

use nalgebra::{DMatrix, DVector, Dyn};
use num_complex::Complex64;

/// Low-voltage cutoff for constant-power loads: below this magnitude the
/// load degrades to the constant-impedance characteristic matched at the
/// cutoff, which keeps the algebraic system solvable through deep sags.
pub const CP_VOLTAGE_CUTOFF: f64 = 0.3;

/// Constant-power load current (drawn) and its 2×2 real Jacobian
/// `d[I_re, I_im]/d[V_re, V_im]`.
pub fn constant_power_current(s: Complex64, v: Complex64) -> (Complex64, [[f64; 2]; 2]) {
    let (e, f) = (v.re, v.im);
    let r = e * e + f * f;
    let (p, q) = (s.re, s.im);
    let cut = CP_VOLTAGE_CUTOFF * CP_VOLTAGE_CUTOFF;
    if r >= cut {
        // I = conj(S/V) = conj(S)·V / |V|²
        let ire = (p * e + q * f) / r;
        let iim = (p * f - q * e) / r;
        let jac = [
            [p / r - 2.0 * e * ire / r, q / r - 2.0 * f * ire / r],
            [-q / r - 2.0 * e * iim / r, p / r - 2.0 * f * iim / r],
        ];
        (Complex64::new(ire, iim), jac)
    } else {
        // constant-impedance continuation: I = conj(S)·V / cut  (linear)
        let ire = (p * e + q * f) / cut;
        let iim = (p * f - q * e) / cut;
        let jac = [[p / cut, q / cut], [-q / cut, p / cut]];
        (Complex64::new(ire, iim), jac)
    }
}

pub(crate) struct NetSolver {
    lu: nalgebra::LU<Complex64, Dyn, Dyn>,
    /// Columns of `Y_aug⁻¹` at the constant-power buses (n × m).
    z_cols: DMatrix<Complex64>,
    /// Real 2m×2m representation of the CP block of `Y_aug⁻¹`.
    zr: DMatrix<f64>,
    pub cp_pos: Vec<usize>,
    pub cp_power: Vec<Complex64>,
    tol: f64,
    max_iter: usize,
}

impl NetSolver {
    pub fn new(
        y_aug: DMatrix<Complex64>,
        cp_pos: Vec<usize>,
        cp_power: Vec<Complex64>,
        tol: f64,
        max_iter: usize,
    ) -> Option<NetSolver> {
        let n = y_aug.nrows();
        let lu = y_aug.lu();
        let m = cp_pos.len();
        let mut z_cols = DMatrix::zeros(n, m);
        for (c, &pos) in cp_pos.iter().enumerate() {
            let mut e = DVector::zeros(n);
            e[pos] = Complex64::new(1.0, 0.0);
            let col = lu.solve(&e)?;
            z_cols.set_column(c, &col);
        }
        let mut zr = DMatrix::zeros(2 * m, 2 * m);
        for (r, &pos) in cp_pos.iter().enumerate() {
            for c in 0..m {
                let z = z_cols[(pos, c)];
                zr[(2 * r, 2 * c)] = z.re;
                zr[(2 * r, 2 * c + 1)] = -z.im;
                zr[(2 * r + 1, 2 * c)] = z.im;
                zr[(2 * r + 1, 2 * c + 1)] = z.re;
            }
        }
        Some(NetSolver { lu, z_cols, zr, cp_pos, cp_power, tol, max_iter })
    }

    /// Solve for bus voltages given the Norton injection vector. Returns the
    /// voltages and the Newton iteration count, or `None` on divergence.
    pub fn solve(
        &self,
        i_norton: &DVector<Complex64>,
        warm: &DVector<Complex64>,
    ) -> Option<(DVector<Complex64>, usize)> {
        let v0 = self.lu.solve(i_norton)?;
        let m = self.cp_pos.len();
        if m == 0 {
            return Some((v0, 0));
        }
        let mut vc: Vec<Complex64> = self.cp_pos.iter().map(|&p| warm[p]).collect();
        let v0c: Vec<Complex64> = self.cp_pos.iter().map(|&p| v0[p]).collect();

        let mut restarted = false;
        let mut it = 0usize;
        loop {
            let (residual, norm, jacs) = self.residual(&vc, &v0c);
            if norm < self.tol {
                break;
            }
            if it >= self.max_iter || !norm.is_finite() {
                if !restarted {
                    // retry once from the linear solution
                    restarted = true;
                    it = 0;
                    vc.copy_from_slice(&v0c);
                    continue;
                }
                return None;
            }
            // J = I + ZR·blockdiag(dIcp)
            let mut jac = DMatrix::identity(2 * m, 2 * m);
            for r in 0..2 * m {
                for (b, jb) in jacs.iter().enumerate() {
                    let z0 = self.zr[(r, 2 * b)];
                    let z1 = self.zr[(r, 2 * b + 1)];
                    jac[(r, 2 * b)] += z0 * jb[0][0] + z1 * jb[1][0];
                    jac[(r, 2 * b + 1)] += z0 * jb[0][1] + z1 * jb[1][1];
                }
            }
            let dx = jac.lu().solve(&residual)?;
            // backtracking on the residual norm
            let mut step = 1.0f64;
            let mut accepted = false;
            for _ in 0..5 {
                let trial: Vec<Complex64> = (0..m)
                    .map(|b| vc[b] - step * Complex64::new(dx[2 * b], dx[2 * b + 1]))
                    .collect();
                let (_, trial_norm, _) = self.residual(&trial, &v0c);
                if trial_norm < norm || trial_norm < self.tol {
                    vc = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // take the damped step anyway; next check will catch stall
                for b in 0..m {
                    vc[b] -= step * Complex64::new(dx[2 * b], dx[2 * b + 1]);
                }
            }
            it += 1;
        }

        // full voltage vector: V = V0 - Z_cols · I_cp
        let mut v = v0;
        for (b, &vb) in vc.iter().enumerate() {
            let (icp, _) = constant_power_current(self.cp_power[b], vb);
            for rb in 0..v.len() {
                v[rb] -= self.z_cols[(rb, b)] * icp;
            }
        }
        // pin the CP buses to the Newton iterate (identical up to rounding)
        for (b, &pos) in self.cp_pos.iter().enumerate() {
            v[pos] = vc[b];
        }
        Some((v, it))
    }

    #[allow(clippy::type_complexity)]
    fn residual(
        &self,
        vc: &[Complex64],
        v0c: &[Complex64],
    ) -> (DVector<f64>, f64, Vec<[[f64; 2]; 2]>) {
        let m = vc.len();
        let mut icp = Vec::with_capacity(m);
        let mut jacs = Vec::with_capacity(m);
        for b in 0..m {
            let (i, j) = constant_power_current(self.cp_power[b], vc[b]);
            icp.push(i);
            jacs.push(j);
        }
        // F = Vc + Zcc·Icp - V0c
        let mut res = DVector::zeros(2 * m);
        for r in 0..m {
            let mut acc = vc[r] - v0c[r];
            for b in 0..m {
                acc += self.z_cols[(self.cp_pos[r], b)] * icp[b];
            }
            res[2 * r] = acc.re;
            res[2 * r + 1] = acc.im;
        }
        let norm = res.amax();
        (res, norm, jacs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cp_jacobian_matches_finite_differences() {
        let s = Complex64::new(0.8, 0.3);
        for v in [Complex64::new(1.0, 0.1), Complex64::new(0.5, -0.2), Complex64::new(0.2, 0.05)] {
            let (_, jac) = constant_power_current(s, v);
            let h = 1e-7;
            let (ip_e, _) = constant_power_current(s, v + Complex64::new(h, 0.0));
            let (im_e, _) = constant_power_current(s, v - Complex64::new(h, 0.0));
            let (ip_f, _) = constant_power_current(s, v + Complex64::new(0.0, h));
            let (im_f, _) = constant_power_current(s, v - Complex64::new(0.0, h));
            let fd = [
                [(ip_e.re - im_e.re) / (2.0 * h), (ip_f.re - im_f.re) / (2.0 * h)],
                [(ip_e.im - im_e.im) / (2.0 * h), (ip_f.im - im_f.im) / (2.0 * h)],
            ];
            for r in 0..2 {
                for c in 0..2 {
                    assert!(
                        (jac[r][c] - fd[r][c]).abs() < 1e-5,
                        "v={v}: jac[{r}][{c}]={} fd={}",
                        jac[r][c],
                        fd[r][c]
                    );
                }
            }
        }
    }

    #[test]
    fn cutoff_continuous_at_boundary() {
        let s = Complex64::new(1.0, 0.4);
        let eps = 1e-9;
        let v_hi = Complex64::from_polar(CP_VOLTAGE_CUTOFF + eps, 0.3);
        let v_lo = Complex64::from_polar(CP_VOLTAGE_CUTOFF - eps, 0.3);
        let (i_hi, _) = constant_power_current(s, v_hi);
        let (i_lo, _) = constant_power_current(s, v_lo);
        assert!((i_hi - i_lo).norm() < 1e-6);
    }

    #[test]
    fn linear_network_solves_in_zero_iterations() {
        // 2-bus, no CP loads: Y V = I has a direct solution
        let y = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, -10.0),
                Complex64::new(0.0, 5.0),
                Complex64::new(0.0, 5.0),
                Complex64::new(0.0, -5.0),
            ],
        );
        let ns = NetSolver::new(y.clone(), vec![], vec![], 1e-10, 20).unwrap();
        let i = DVector::from_vec(vec![Complex64::new(0.0, -1.0), Complex64::new(0.0, 0.0)]);
        let warm = DVector::from_element(2, Complex64::new(1.0, 0.0));
        let (v, it) = ns.solve(&i, &warm).unwrap();
        assert_eq!(it, 0);
        let res = &y * &v - &i;
        let worst = res.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        assert!(worst < 1e-12);
    }

    #[test]
    fn newton_satisfies_current_balance() {
        // 2-bus with a constant-power load at bus 1
        let y = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.5, -10.0),
                Complex64::new(-0.5, 5.0),
                Complex64::new(-0.5, 5.0),
                Complex64::new(0.5, -5.0),
            ],
        );
        let s_cp = Complex64::new(0.6, 0.2);
        let ns = NetSolver::new(y.clone(), vec![1], vec![s_cp], 1e-10, 20).unwrap();
        let i = DVector::from_vec(vec![Complex64::new(2.0, -9.0), Complex64::new(0.0, 0.0)]);
        let warm = DVector::from_element(2, Complex64::new(1.0, 0.0));
        let (v, _) = ns.solve(&i, &warm).unwrap();
        let (icp, _) = constant_power_current(s_cp, v[1]);
        let mut rhs = i.clone();
        rhs[1] -= icp;
        let res = &y * &v - rhs;
        let worst = res.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        assert!(worst < 1e-7, "current mismatch {worst}");
    }
}
