/// Sizes of a nonlinear program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Number of variables.
    pub vars: usize,
    /// Number of equality constraints `g(x) = 0`.
    pub eq: usize,
    /// Number of inequality constraints `h(x) <= 0`.
    pub ineq: usize,
}

/// A smooth nonlinear program
///
/// ```txt
///     min f(x)   s.t.   g(x) = 0,   h(x) <= 0,   lower <= x <= upper
/// ```
///
/// Jacobian rows are numbered `0..eq` for `g` followed by `eq..eq+ineq`
/// for `h`. Sparsity structures must not change between calls: the solver
/// analyses them once and the value callbacks fill arrays in the same order.
/// Duplicated coordinates are summed.
pub trait NlpProblem {
    fn dims(&self) -> Dims;

    /// Variable bounds; use `f64::NEG_INFINITY` / `f64::INFINITY` for free sides.
    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]);

    fn objective(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], grad: &mut [f64]);

    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]);

    fn jacobian_structure(&self) -> Vec<(usize, usize)>;

    fn jacobian_values(&self, x: &[f64], values: &mut [f64]);

    /// Lower-triangle (`row >= col`) coordinates of the Lagrangian Hessian.
    fn hessian_structure(&self) -> Vec<(usize, usize)>;

    /// Hessian of `obj_factor * f + Σ multipliers[k] * c_k` where `c` is
    /// `g` followed by `h`.
    fn hessian_values(&self, x: &[f64], obj_factor: f64, multipliers: &[f64], values: &mut [f64]);
}

/// Helper for models that emit structure and values from one traversal.
///
/// Writing the Jacobian and Hessian with a single routine that pushes
/// through a `Sink` keeps the two in lock-step.
pub enum Sink<'a> {
    Structure(&'a mut Vec<(usize, usize)>),
    Values { values: &'a mut [f64], cursor: usize },
}

impl<'a> Sink<'a> {
    pub fn structure(out: &'a mut Vec<(usize, usize)>) -> Self {
        Sink::Structure(out)
    }

    pub fn values(values: &'a mut [f64]) -> Self {
        Sink::Values { values, cursor: 0 }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        match self {
            Sink::Structure(out) => out.push((row, col)),
            Sink::Values { values, cursor } => {
                values[*cursor] = value;
                *cursor += 1;
            }
        }
    }

    /// Push a Hessian entry, swapping to the lower triangle if needed.
    #[inline]
    pub fn push_lower(&mut self, row: usize, col: usize, value: f64) {
        if row >= col {
            self.push(row, col, value)
        } else {
            self.push(col, row, value)
        }
    }

    pub fn is_structure(&self) -> bool {
        matches!(self, Sink::Structure(_))
    }
}
