//! Minimum-violation reformulation used to certify infeasibility.
//!
//! ```txt
//!     min Σ p + Σ n + Σ s   s.t.   g(x) - p + n = 0,   h(x) - s <= 0,
//!                                  lower <= x <= upper,   p, n, s >= 0
//! ```
//!
//! A strictly positive optimum is a (local) certificate that the original
//! constraint set is empty.

use crate::problem::{Dims, NlpProblem};

pub struct ElasticProblem<'a> {
    inner: &'a dyn NlpProblem,
    inner_dims: Dims,
    lower: &'a [f64],
    upper: &'a [f64],
}

impl<'a> ElasticProblem<'a> {
    pub fn new(inner: &'a dyn NlpProblem, lower: &'a [f64], upper: &'a [f64]) -> Self {
        Self {
            inner,
            inner_dims: inner.dims(),
            lower,
            upper,
        }
    }

    /// A starting point that satisfies the elastic constraints exactly.
    pub fn start_from(&self, x: &[f64]) -> Vec<f64> {
        let d = self.inner_dims;
        let x: Vec<f64> = x
            .iter()
            .zip(self.lower.iter().zip(self.upper))
            .map(|(&v, (&lo, &up))| v.clamp(lo, up))
            .collect();
        let mut g = vec![0.0; d.eq];
        let mut h = vec![0.0; d.ineq];
        self.inner.constraints(&x, &mut g, &mut h);
        let pad = 1e-2;
        let mut out = x;
        out.extend(g.iter().map(|&v| v.max(0.0) + pad));
        out.extend(g.iter().map(|&v| (-v).max(0.0) + pad));
        out.extend(h.iter().map(|&v| v.max(0.0) + pad));
        out
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let d = self.inner_dims;
        (d.vars, d.vars + d.eq, d.vars + 2 * d.eq)
    }
}

impl NlpProblem for ElasticProblem<'_> {
    fn dims(&self) -> Dims {
        let d = self.inner_dims;
        Dims {
            vars: d.vars + 2 * d.eq + d.ineq,
            eq: d.eq,
            ineq: d.ineq,
        }
    }

    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        let n = self.inner_dims.vars;
        lower[..n].copy_from_slice(self.lower);
        upper[..n].copy_from_slice(self.upper);
        for (l, u) in lower[n..].iter_mut().zip(&mut upper[n..]) {
            *l = 0.0;
            *u = f64::INFINITY;
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        x[self.inner_dims.vars..].iter().sum()
    }

    fn gradient(&self, _x: &[f64], grad: &mut [f64]) {
        let n = self.inner_dims.vars;
        grad[..n].fill(0.0);
        grad[n..].fill(1.0);
    }

    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        let (op, on, os) = self.offsets();
        self.inner.constraints(&x[..op], eq, ineq);
        for (r, e) in eq.iter_mut().enumerate() {
            *e += -x[op + r] + x[on + r];
        }
        for (r, h) in ineq.iter_mut().enumerate() {
            *h -= x[os + r];
        }
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        let d = self.inner_dims;
        let (op, on, os) = self.offsets();
        let mut s = self.inner.jacobian_structure();
        for r in 0..d.eq {
            s.push((r, op + r));
            s.push((r, on + r));
        }
        for r in 0..d.ineq {
            s.push((d.eq + r, os + r));
        }
        s
    }

    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        let d = self.inner_dims;
        let k = values.len() - 2 * d.eq - d.ineq;
        self.inner.jacobian_values(&x[..d.vars], &mut values[..k]);
        let mut c = k;
        for _ in 0..d.eq {
            values[c] = -1.0;
            values[c + 1] = 1.0;
            c += 2;
        }
        for v in &mut values[c..] {
            *v = -1.0;
        }
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.inner.hessian_structure()
    }

    fn hessian_values(&self, x: &[f64], _obj_factor: f64, multipliers: &[f64], values: &mut [f64]) {
        self.inner
            .hessian_values(&x[..self.inner_dims.vars], 0.0, multipliers, values);
    }
}
