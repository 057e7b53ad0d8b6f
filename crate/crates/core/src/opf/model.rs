//! The AC-OPF as a smooth nonlinear program.
//!
//! Variable vector
//! `[v (nb), θ (nb), pg (ng), qg (ng), p_fr, q_fr, p_to, q_to (nl each), params, λ]`.
//! Equalities: bus P and Q balance written linearly in the flow variables,
//! the π-model definitions of the four end flows, then the parameter
//! equalities. Inequalities: squared flow limits at both ends of every
//! rated branch, then margin-coupled limit rows, then the margin norm rows
//! `z √(‖b + Pθ‖² + δ²) − λ ≤ 0`.

use std::collections::BTreeMap;

use cloudopf_nlp::{Dims, NlpProblem, Sink};

use super::coupling::{Coupling, MarginTarget};
use super::{MarginSides, Margins};
use crate::net::{BusKind, NetworkCase};
use crate::powerflow::{branch_flows, BranchAdmittance, Demand};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub nb: usize,
    pub ng: usize,
    pub nl: usize,
    pub n_par: usize,
    pub n_lam: usize,
}

impl Layout {
    pub fn v(&self, i: usize) -> usize {
        i
    }
    pub fn th(&self, i: usize) -> usize {
        self.nb + i
    }
    pub fn pg(&self, g: usize) -> usize {
        2 * self.nb + g
    }
    pub fn qg(&self, g: usize) -> usize {
        2 * self.nb + self.ng + g
    }
    /// End flow `k` (0 p_fr, 1 q_fr, 2 p_to, 3 q_to) of branch `l`.
    pub fn flow(&self, k: usize, l: usize) -> usize {
        2 * self.nb + 2 * self.ng + k * self.nl + l
    }
    pub fn base_len(&self) -> usize {
        2 * self.nb + 2 * self.ng + 4 * self.nl
    }
    pub fn par(&self, k: usize) -> usize {
        self.base_len() + k
    }
    pub fn lam(&self, r: usize) -> usize {
        self.base_len() + self.n_par + r
    }
    pub fn len(&self) -> usize {
        self.base_len() + self.n_par + self.n_lam
    }
}

/// Limit row `x + λ − ub ≤ 0` (`upper`) or `lb + λ − x ≤ 0`.
#[derive(Debug, Clone, Copy)]
struct BoundRow {
    var: usize,
    lam: usize,
    limit: f64,
    upper: bool,
}

/// `F_end + λ − s_max² ≤ 0`, `λ` fixed or a variable.
#[derive(Debug, Clone, Copy)]
struct FlowRow {
    p: usize,
    q: usize,
    lam: Option<usize>,
    rhs: f64,
}

/// Smoothing of the norm at zero, in units of standard deviation.
const NORM_SMOOTHING: f64 = 1e-7;

struct NormRow {
    lam: usize,
    z: f64,
    form: usize,
}

/// Precomputed `‖b + Pθ‖²` with its Hessian `2 PᵀP` on the shared pattern.
/// Forms under a norm row also carry the slots of all support pairs.
struct Form {
    inner: super::coupling::QuadForm,
    support: Vec<usize>,
    hess: Vec<(usize, f64)>,
    /// `(slot, a, b)` for support entries `a ≥ b`.
    pairs: Vec<(usize, usize, usize)>,
}

fn smoothed_norm(q: f64) -> f64 {
    (q + NORM_SMOOTHING * NORM_SMOOTHING).sqrt()
}

pub struct OpfModel<'a> {
    case: &'a NetworkCase,
    demand: Demand,
    adm: Vec<BranchAdmittance>,
    lay: Layout,
    lower: Vec<f64>,
    upper: Vec<f64>,
    flow_rows: Vec<FlowRow>,
    bound_rows: Vec<BoundRow>,
    norm_rows: Vec<NormRow>,
    forms: Vec<Form>,
    cost_forms: Vec<(f64, usize)>,
    param_eqs: Vec<super::coupling::LinearEq>,
    param_hess: Vec<(usize, usize)>,
    param_start: Vec<f64>,
}

impl<'a> OpfModel<'a> {
    pub(crate) fn new(
        case: &'a NetworkCase,
        demand: &Demand,
        margins: &Margins,
        sides: MarginSides,
        coupling: Option<&Coupling>,
    ) -> Self {
        let nb = case.buses.len();
        let ng = case.generators.len();
        let nl = case.branches.len();
        let (n_par, n_lam) = coupling.map_or((0, 0), |c| (c.n_params, c.margin_rows.len()));
        let lay = Layout { nb, ng, nl, n_par, n_lam };
        let mut coupled: BTreeMap<(u8, usize), usize> = BTreeMap::new();
        let key = |t: MarginTarget| match t {
            MarginTarget::P(g) => (0u8, g),
            MarginTarget::Q(g) => (1, g),
            MarginTarget::V(i) => (2, i),
            MarginTarget::FFrom(l) => (3, l),
            MarginTarget::FTo(l) => (4, l),
        };
        if let Some(c) = coupling {
            for (r, row) in c.margin_rows.iter().enumerate() {
                coupled.insert(key(row.target), r);
            }
        }
        let lower_side = sides == MarginSides::Symmetric;

        let n = lay.len();
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        let mut bound_rows = Vec::new();
        let mut push_bounds = |var: usize, lo: f64, hi: f64, fixed: f64, k: (u8, usize), lower: &mut [f64], upper: &mut [f64]| {
            if let Some(&r) = coupled.get(&k) {
                lower[var] = lo;
                upper[var] = hi;
                bound_rows.push(BoundRow {
                    var,
                    lam: lay.lam(r),
                    limit: hi,
                    upper: true,
                });
                if lower_side {
                    bound_rows.push(BoundRow {
                        var,
                        lam: lay.lam(r),
                        limit: lo,
                        upper: false,
                    });
                }
            } else {
                lower[var] = if lower_side { lo + fixed } else { lo };
                upper[var] = hi - fixed;
            }
        };
        for (i, b) in case.buses.iter().enumerate() {
            let fixed = if b.kind == BusKind::PQ { margins.v[i] } else { 0.0 };
            push_bounds(lay.v(i), b.vmin, b.vmax, fixed, (2, i), &mut lower, &mut upper);
        }
        lower[lay.th(case.slack)] = 0.0;
        upper[lay.th(case.slack)] = 0.0;
        for (g, gen) in case.generators.iter().enumerate() {
            push_bounds(lay.pg(g), gen.pmin, gen.pmax, margins.p[g], (0, g), &mut lower, &mut upper);
            push_bounds(lay.qg(g), gen.qmin, gen.qmax, margins.q[g], (1, g), &mut lower, &mut upper);
        }

        let mut flow_rows = Vec::new();
        for (l, br) in case.branches.iter().enumerate() {
            if br.s_max <= 0.0 {
                continue;
            }
            let s2 = br.s_max * br.s_max;
            for (end, margin, k) in [(0usize, margins.f_from[l], 3u8), (2, margins.f_to[l], 4)] {
                let lam = coupled.get(&(k, l)).map(|&r| lay.lam(r));
                flow_rows.push(FlowRow {
                    p: lay.flow(end, l),
                    q: lay.flow(end + 1, l),
                    lam,
                    rhs: if lam.is_some() { s2 } else { s2 - margin },
                });
            }
        }

        let mut forms = Vec::new();
        let mut norm_rows = Vec::new();
        let mut cost_forms = Vec::new();
        let mut param_eqs = Vec::new();
        let mut param_start = Vec::new();
        if let Some(c) = coupling {
            for (r, row) in c.margin_rows.iter().enumerate() {
                forms.push(row.form.clone());
                norm_rows.push(NormRow {
                    lam: lay.lam(r),
                    z: row.z,
                    form: forms.len() - 1,
                });
                lower[lay.lam(r)] = 0.0;
            }
            for (w, form) in &c.cost_forms {
                forms.push(form.clone());
                cost_forms.push((*w, forms.len() - 1));
            }
            param_eqs = c.param_eqs.clone();
            param_start = c.param_start.clone();
        }
        // Shared lower-triangle pattern of all `PᵀP` blocks.
        let mut pattern: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut dense = Vec::new();
        let mut pair_lists = Vec::new();
        for (k, f) in forms.iter().enumerate() {
            let q = f.p.transpose() * &f.p;
            let mut entries = Vec::new();
            for i in 0..q.nrows() {
                for j in 0..=i {
                    if q[(i, j)] != 0.0 {
                        entries.push(((i, j), 2.0 * q[(i, j)]));
                        let next = pattern.len();
                        pattern.entry((i, j)).or_insert(next);
                    }
                }
            }
            dense.push(entries);
            let mut pairs = Vec::new();
            if k < norm_rows.len() {
                let support = f.support();
                for (ai, &a) in support.iter().enumerate() {
                    for &b in &support[..=ai] {
                        let next = pattern.len();
                        pattern.entry((a, b)).or_insert(next);
                        pairs.push((a, b));
                    }
                }
            }
            pair_lists.push(pairs);
        }
        let mut param_hess: Vec<(usize, usize)> = vec![(0, 0); pattern.len()];
        for (&(i, j), &slot) in &pattern {
            param_hess[slot] = (lay.par(i), lay.par(j));
        }
        let forms = forms
            .into_iter()
            .zip(dense.into_iter().zip(pair_lists))
            .map(|(inner, (entries, pairs))| Form {
                support: inner.support(),
                hess: entries.into_iter().map(|(ij, v)| (pattern[&ij], v)).collect(),
                pairs: pairs.into_iter().map(|(a, b)| (pattern[&(a, b)], a, b)).collect(),
                inner,
            })
            .collect();

        OpfModel {
            case,
            demand: demand.clone(),
            adm: BranchAdmittance::for_case(case),
            lay,
            lower,
            upper,
            flow_rows,
            bound_rows,
            norm_rows,
            forms,
            cost_forms,
            param_eqs,
            param_hess,
            param_start,
        }
    }

    pub(crate) fn layout(&self) -> Layout {
        self.lay
    }

    /// Flat start: unit voltages, zero angles, mid-range dispatch, flows
    /// consistent with the voltages, margins at their closed-form values.
    pub(crate) fn flat_start(&self) -> Vec<f64> {
        let lay = self.lay;
        let mut x = vec![0.0; lay.len()];
        for i in 0..lay.nb {
            x[lay.v(i)] = 1.0;
        }
        for (g, gen) in self.case.generators.iter().enumerate() {
            x[lay.pg(g)] = 0.5 * (gen.pmin + gen.pmax);
            x[lay.qg(g)] = 0.5 * (gen.qmin + gen.qmax);
        }
        self.complete_start(&mut x);
        x
    }

    /// Recompute flow, parameter and λ entries of a start vector whose
    /// voltage and dispatch entries are set.
    pub(crate) fn complete_start(&self, x: &mut [f64]) {
        let lay = self.lay;
        let v: Vec<f64> = (0..lay.nb).map(|i| x[lay.v(i)]).collect();
        let th: Vec<f64> = (0..lay.nb).map(|i| x[lay.th(i)]).collect();
        let flows = branch_flows(self.case, &self.adm, &v, &th);
        for (k, f) in flows.iter().enumerate() {
            for l in 0..lay.nl {
                x[lay.flow(k, l)] = f[l];
            }
        }
        for (k, &p) in self.param_start.iter().enumerate() {
            x[lay.par(k)] = p;
        }
        let theta = &x[lay.par(0)..lay.par(0) + lay.n_par].to_vec();
        for row in &self.norm_rows {
            let q = self.forms[row.form].inner.eval(theta);
            x[row.lam] = row.z * smoothed_norm(q);
        }
    }

    pub(crate) fn params<'x>(&self, x: &'x [f64]) -> &'x [f64] {
        &x[self.lay.par(0)..self.lay.par(0) + self.lay.n_par]
    }

    /// Generation cost at `x` without the policy-dependent term.
    pub(crate) fn generation_cost(&self, x: &[f64]) -> f64 {
        self.case
            .generators
            .iter()
            .enumerate()
            .map(|(g, gen)| gen.cost(x[self.lay.pg(g)]))
            .sum()
    }

    pub(crate) fn policy_cost(&self, x: &[f64]) -> f64 {
        let theta = self.params(x);
        self.cost_forms.iter().map(|&(w, f)| w * self.forms[f].inner.eval(theta)).sum()
    }

    fn n_flow_eq(&self) -> usize {
        4 * self.lay.nl
    }

    fn jac(&self, x: &[f64], s: &mut Sink) {
        let lay = self.lay;
        let (nb, nl) = (lay.nb, lay.nl);
        // bus balance rows
        for (i, b) in self.case.buses.iter().enumerate() {
            s.push(i, lay.v(i), 2.0 * b.gs * x[lay.v(i)]);
            s.push(nb + i, lay.v(i), -2.0 * b.bs * x[lay.v(i)]);
        }
        for (l, br) in self.case.branches.iter().enumerate() {
            s.push(br.from, lay.flow(0, l), 1.0);
            s.push(nb + br.from, lay.flow(1, l), 1.0);
            s.push(br.to, lay.flow(2, l), 1.0);
            s.push(nb + br.to, lay.flow(3, l), 1.0);
        }
        for (g, gen) in self.case.generators.iter().enumerate() {
            s.push(gen.bus, lay.pg(g), -1.0);
            s.push(nb + gen.bus, lay.qg(g), -1.0);
        }
        // flow definitions
        let base = 2 * nb;
        for (l, (br, y)) in self.case.branches.iter().zip(&self.adm).enumerate() {
            let (f, t) = (br.from, br.to);
            let vars_f = [lay.v(f), lay.v(t), lay.th(f), lay.th(t)];
            let vars_t = [lay.v(t), lay.v(f), lay.th(t), lay.th(f)];
            let ef = y.from.flow(x[lay.v(f)], x[lay.v(t)], x[lay.th(f)], x[lay.th(t)]);
            let et = y.to.flow(x[lay.v(t)], x[lay.v(f)], x[lay.th(t)], x[lay.th(f)]);
            for (k, (vars, d)) in [(&vars_f, &ef.dp), (&vars_f, &ef.dq), (&vars_t, &et.dp), (&vars_t, &et.dq)]
                .into_iter()
                .enumerate()
            {
                let row = base + k * nl + l;
                s.push(row, lay.flow(k, l), 1.0);
                for (c, &var) in vars.iter().enumerate() {
                    s.push(row, var, -d[c]);
                }
            }
        }
        let base = 2 * nb + self.n_flow_eq();
        for (k, eq) in self.param_eqs.iter().enumerate() {
            for &(p, c) in &eq.coeffs {
                s.push(base + k, lay.par(p), c);
            }
        }
        // inequalities
        let base = base + self.param_eqs.len();
        for (k, r) in self.flow_rows.iter().enumerate() {
            s.push(base + k, r.p, 2.0 * x[r.p]);
            s.push(base + k, r.q, 2.0 * x[r.q]);
            if let Some(lam) = r.lam {
                s.push(base + k, lam, 1.0);
            }
        }
        let base = base + self.flow_rows.len();
        for (k, r) in self.bound_rows.iter().enumerate() {
            s.push(base + k, r.var, if r.upper { 1.0 } else { -1.0 });
            s.push(base + k, r.lam, 1.0);
        }
        let base = base + self.bound_rows.len();
        let theta = if s.is_structure() { None } else { Some(self.params(x)) };
        for (k, r) in self.norm_rows.iter().enumerate() {
            let form = &self.forms[r.form];
            let scaled = theta.map(|t| {
                let c = r.z / (2.0 * smoothed_norm(form.inner.eval(t)));
                form.inner.gradient(t).into_iter().map(|g| c * g).collect::<Vec<_>>()
            });
            for &p in &form.support {
                s.push(base + k, lay.par(p), scaled.as_ref().map_or(0.0, |g| g[p]));
            }
            s.push(base + k, r.lam, -1.0);
        }
    }

    fn hess(&self, x: &[f64], of: f64, m: &[f64], s: &mut Sink) {
        let lay = self.lay;
        let (nb, nl) = (lay.nb, lay.nl);
        for (g, gen) in self.case.generators.iter().enumerate() {
            s.push(lay.pg(g), lay.pg(g), of * 2.0 * gen.cost_a);
        }
        for (i, b) in self.case.buses.iter().enumerate() {
            s.push(lay.v(i), lay.v(i), 2.0 * b.gs * m[i] - 2.0 * b.bs * m[nb + i]);
        }
        let base = 2 * nb;
        for (l, (br, y)) in self.case.branches.iter().zip(&self.adm).enumerate() {
            let (f, t) = (br.from, br.to);
            let (vf, vt, tf, tt) = (x[lay.v(f)], x[lay.v(t)], x[lay.th(f)], x[lay.th(t)]);
            let (hpf, hqf) = y.from.hessians(vf, vt, tf, tt);
            let (hpt, hqt) = y.to.hessians(vt, vf, tt, tf);
            let mf = (m[base + l], m[base + nl + l]);
            let mt = (m[base + 2 * nl + l], m[base + 3 * nl + l]);
            // combine into one 4×4 block over [v_f, v_t, θ_f, θ_t]
            let swap = [1usize, 0, 3, 2];
            let vars = [lay.v(f), lay.v(t), lay.th(f), lay.th(t)];
            for a in 0..4 {
                for c in 0..=a {
                    let val = -(mf.0 * hpf[a][c] + mf.1 * hqf[a][c])
                        - (mt.0 * hpt[swap[a]][swap[c]] + mt.1 * hqt[swap[a]][swap[c]]);
                    s.push_lower(vars[a], vars[c], val);
                }
            }
        }
        let ineq = 2 * nb + self.n_flow_eq() + self.param_eqs.len();
        for (k, r) in self.flow_rows.iter().enumerate() {
            let mu = m[ineq + k];
            s.push(r.p, r.p, 2.0 * mu);
            s.push(r.q, r.q, 2.0 * mu);
        }
        let norm = ineq + self.flow_rows.len() + self.bound_rows.len();
        // parameter block on the shared pattern
        if self.param_hess.is_empty() {
            return;
        }
        let mut block = vec![0.0; self.param_hess.len()];
        if !s.is_structure() {
            let theta = self.params(x);
            for (k, r) in self.norm_rows.iter().enumerate() {
                let mu = m[norm + k];
                if mu == 0.0 {
                    continue;
                }
                // z (∇²q / 2s − ∇q ∇qᵀ / 4s³)
                let form = &self.forms[r.form];
                let sn = smoothed_norm(form.inner.eval(theta));
                let w = mu * r.z / (2.0 * sn);
                for &(slot, v) in &form.hess {
                    block[slot] += w * v;
                }
                let grad = form.inner.gradient(theta);
                let w2 = mu * r.z / (4.0 * sn * sn * sn);
                for &(slot, a, b) in &form.pairs {
                    block[slot] -= w2 * grad[a] * grad[b];
                }
            }
            for &(w, f) in &self.cost_forms {
                for &(slot, v) in &self.forms[f].hess {
                    block[slot] += of * w * v;
                }
            }
        }
        for (&(i, j), v) in self.param_hess.iter().zip(block) {
            s.push(i, j, v);
        }
    }
}

impl NlpProblem for OpfModel<'_> {
    fn dims(&self) -> Dims {
        Dims {
            vars: self.lay.len(),
            eq: 2 * self.lay.nb + self.n_flow_eq() + self.param_eqs.len(),
            ineq: self.flow_rows.len() + self.bound_rows.len() + self.norm_rows.len(),
        }
    }

    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower.copy_from_slice(&self.lower);
        upper.copy_from_slice(&self.upper);
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.generation_cost(x) + self.policy_cost(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let lay = self.lay;
        for (g, gen) in self.case.generators.iter().enumerate() {
            grad[lay.pg(g)] = gen.marginal_cost(x[lay.pg(g)]);
        }
        let theta = self.params(x);
        for &(w, f) in &self.cost_forms {
            for (k, d) in self.forms[f].inner.gradient(theta).into_iter().enumerate() {
                grad[lay.par(k)] += w * d;
            }
        }
    }

    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        let lay = self.lay;
        let (nb, nl) = (lay.nb, lay.nl);
        for (i, b) in self.case.buses.iter().enumerate() {
            let v2 = x[lay.v(i)] * x[lay.v(i)];
            eq[i] = b.gs * v2 + self.demand.pd[i];
            eq[nb + i] = -b.bs * v2 + self.demand.qd[i];
        }
        for (l, br) in self.case.branches.iter().enumerate() {
            eq[br.from] += x[lay.flow(0, l)];
            eq[nb + br.from] += x[lay.flow(1, l)];
            eq[br.to] += x[lay.flow(2, l)];
            eq[nb + br.to] += x[lay.flow(3, l)];
        }
        for (g, gen) in self.case.generators.iter().enumerate() {
            eq[gen.bus] -= x[lay.pg(g)];
            eq[nb + gen.bus] -= x[lay.qg(g)];
        }
        let base = 2 * nb;
        for (l, (br, y)) in self.case.branches.iter().zip(&self.adm).enumerate() {
            let (f, t) = (br.from, br.to);
            let (pf, qf) = y.from.power(x[lay.v(f)], x[lay.v(t)], x[lay.th(f)], x[lay.th(t)]);
            let (pt, qt) = y.to.power(x[lay.v(t)], x[lay.v(f)], x[lay.th(t)], x[lay.th(f)]);
            eq[base + l] = x[lay.flow(0, l)] - pf;
            eq[base + nl + l] = x[lay.flow(1, l)] - qf;
            eq[base + 2 * nl + l] = x[lay.flow(2, l)] - pt;
            eq[base + 3 * nl + l] = x[lay.flow(3, l)] - qt;
        }
        let base = base + self.n_flow_eq();
        for (k, e) in self.param_eqs.iter().enumerate() {
            eq[base + k] = e.coeffs.iter().map(|&(p, c)| c * x[lay.par(p)]).sum::<f64>() - e.rhs;
        }
        for (k, r) in self.flow_rows.iter().enumerate() {
            ineq[k] = x[r.p] * x[r.p] + x[r.q] * x[r.q] + r.lam.map_or(0.0, |l| x[l]) - r.rhs;
        }
        let base = self.flow_rows.len();
        for (k, r) in self.bound_rows.iter().enumerate() {
            ineq[base + k] = if r.upper {
                x[r.var] + x[r.lam] - r.limit
            } else {
                r.limit + x[r.lam] - x[r.var]
            };
        }
        let base = base + self.bound_rows.len();
        let theta = self.params(x);
        for (k, r) in self.norm_rows.iter().enumerate() {
            ineq[base + k] = r.z * smoothed_norm(self.forms[r.form].inner.eval(theta)) - x[r.lam];
        }
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let x = vec![0.0; self.lay.len()];
        self.jac(&x, &mut Sink::structure(&mut out));
        out
    }

    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        self.jac(x, &mut Sink::values(values));
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let d = self.dims();
        let x = vec![1.0; self.lay.len()];
        self.hess(&x, 1.0, &vec![0.0; d.eq + d.ineq], &mut Sink::structure(&mut out));
        out
    }

    fn hessian_values(&self, x: &[f64], obj_factor: f64, multipliers: &[f64], values: &mut [f64]) {
        self.hess(x, obj_factor, multipliers, &mut Sink::values(values));
    }
}
