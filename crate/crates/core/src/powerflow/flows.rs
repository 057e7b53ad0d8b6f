//! Branch π-model in polar coordinates.
//!
//! Each branch end is described by the self admittance of the end (`gs + j bs`)
//! and the transfer admittance towards the far end (`g + j b`):
//!
//! ```txt
//! P = gs·va² + va·vb·(g cos δ + b sin δ)
//! Q = −bs·va² + va·vb·(g sin δ − b cos δ),      δ = θa − θb
//! ```

use num_complex::Complex64;

use crate::net::{Branch, NetworkCase};

/// Admittance data for one branch end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndAdmittance {
    pub gs: f64,
    pub bs: f64,
    pub g: f64,
    pub b: f64,
}

/// Admittance data for both ends of a branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub from: EndAdmittance,
    pub to: EndAdmittance,
}

impl BranchAdmittance {
    pub fn new(br: &Branch) -> Self {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift);
        let ytt = ys + Complex64::new(0.0, br.b_charging / 2.0);
        let yff = ytt / (br.tap_ratio * br.tap_ratio);
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;
        BranchAdmittance {
            from: EndAdmittance {
                gs: yff.re,
                bs: yff.im,
                g: yft.re,
                b: yft.im,
            },
            to: EndAdmittance {
                gs: ytt.re,
                bs: ytt.im,
                g: ytf.re,
                b: ytf.im,
            },
        }
    }

    pub fn for_case(case: &NetworkCase) -> Vec<BranchAdmittance> {
        case.branches.iter().map(BranchAdmittance::new).collect()
    }
}

/// Flow at one end and its gradient with respect to `[va, vb, θa, θb]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndFlow {
    pub p: f64,
    pub q: f64,
    pub dp: [f64; 4],
    pub dq: [f64; 4],
}

impl EndAdmittance {
    #[inline]
    fn terms(&self, ta: f64, tb: f64) -> (f64, f64) {
        let (s, c) = (ta - tb).sin_cos();
        (self.g * c + self.b * s, self.g * s - self.b * c)
    }

    #[inline]
    pub fn power(&self, va: f64, vb: f64, ta: f64, tb: f64) -> (f64, f64) {
        let (a, c) = self.terms(ta, tb);
        (self.gs * va * va + va * vb * a, -self.bs * va * va + va * vb * c)
    }

    pub fn flow(&self, va: f64, vb: f64, ta: f64, tb: f64) -> EndFlow {
        let (a, c) = self.terms(ta, tb);
        let vv = va * vb;
        EndFlow {
            p: self.gs * va * va + vv * a,
            q: -self.bs * va * va + vv * c,
            dp: [2.0 * self.gs * va + vb * a, va * a, -vv * c, vv * c],
            dq: [-2.0 * self.bs * va + vb * c, va * c, vv * a, -vv * a],
        }
    }

    /// Hessians of `p` and `q` over `[va, vb, θa, θb]`.
    pub fn hessians(&self, va: f64, vb: f64, ta: f64, tb: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
        let (a, c) = self.terms(ta, tb);
        let vv = va * vb;
        let hp = [
            [2.0 * self.gs, a, -vb * c, vb * c],
            [a, 0.0, -va * c, va * c],
            [-vb * c, -va * c, -vv * a, vv * a],
            [vb * c, va * c, vv * a, -vv * a],
        ];
        let hq = [
            [-2.0 * self.bs, c, vb * a, -vb * a],
            [c, 0.0, va * a, -va * a],
            [vb * a, va * a, -vv * c, vv * c],
            [-vb * a, -va * a, vv * c, -vv * c],
        ];
        (hp, hq)
    }
}

/// `(p_fr, q_fr, p_to, q_to)` for every branch.
pub fn branch_flows(case: &NetworkCase, adm: &[BranchAdmittance], v: &[f64], theta: &[f64]) -> [Vec<f64>; 4] {
    let nl = case.branches.len();
    let mut out = [vec![0.0; nl], vec![0.0; nl], vec![0.0; nl], vec![0.0; nl]];
    for (l, (br, y)) in case.branches.iter().zip(adm).enumerate() {
        let (f, t) = (br.from, br.to);
        let (pf, qf) = y.from.power(v[f], v[t], theta[f], theta[t]);
        let (pt, qt) = y.to.power(v[t], v[f], theta[t], theta[f]);
        out[0][l] = pf;
        out[1][l] = qf;
        out[2][l] = pt;
        out[3][l] = qt;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_end() -> EndAdmittance {
        EndAdmittance {
            gs: 0.7,
            bs: -2.1,
            g: -0.6,
            b: 2.4,
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let y = sample_end();
        let x = [1.03, 0.97, 0.12, -0.05];
        let f = y.flow(x[0], x[1], x[2], x[3]);
        let h = 1e-6;
        for k in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let (pp, qp) = y.power(xp[0], xp[1], xp[2], xp[3]);
            let (pm, qm) = y.power(xm[0], xm[1], xm[2], xm[3]);
            assert!(((pp - pm) / (2.0 * h) - f.dp[k]).abs() < 1e-8);
            assert!(((qp - qm) / (2.0 * h) - f.dq[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn hessian_matches_differences_of_gradient() {
        let y = sample_end();
        let x = [1.03, 0.97, 0.12, -0.05];
        let (hp, hq) = y.hessians(x[0], x[1], x[2], x[3]);
        let h = 1e-6;
        for k in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fp = y.flow(xp[0], xp[1], xp[2], xp[3]);
            let fm = y.flow(xm[0], xm[1], xm[2], xm[3]);
            for j in 0..4 {
                assert!(((fp.dp[j] - fm.dp[j]) / (2.0 * h) - hp[j][k]).abs() < 1e-7);
                assert!(((fp.dq[j] - fm.dq[j]) / (2.0 * h) - hq[j][k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn lossless_line_conserves_active_power() {
        let br = Branch {
            from: 0,
            to: 1,
            r: 0.0,
            x: 0.2,
            b_charging: 0.0,
            tap_ratio: 1.0,
            phase_shift: 0.0,
            s_max: 0.0,
        };
        let y = BranchAdmittance::new(&br);
        let (pf, _) = y.from.power(1.02, 0.98, 0.1, -0.03);
        let (pt, _) = y.to.power(0.98, 1.02, -0.03, 0.1);
        assert!((pf + pt).abs() < 1e-14);
        // P = va·vb·sin δ / x on a lossless line
        assert!((pf - 1.02 * 0.98 * 0.13f64.sin() / 0.2).abs() < 1e-12);
    }
}
