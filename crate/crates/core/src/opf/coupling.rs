use nalgebra::DMatrix;

/// Quantity whose limit a margin tightens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginTarget {
    /// Active output of a generator.
    P(usize),
    /// Reactive output of a generator.
    Q(usize),
    /// Voltage magnitude at a bus.
    V(usize),
    /// Squared apparent power at the from end of a branch.
    FFrom(usize),
    /// Squared apparent power at the to end of a branch.
    FTo(usize),
}

/// `‖b + P θ‖²` over the policy parameters `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    pub b: Vec<f64>,
    pub p: DMatrix<f64>,
}

impl QuadForm {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.residual(theta).iter().map(|r| r * r).sum()
    }

    fn residual(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.b.len())
            .map(|i| self.b[i] + (0..theta.len()).map(|k| self.p[(i, k)] * theta[k]).sum::<f64>())
            .collect()
    }

    /// Gradient `2 Pᵀ (b + P θ)`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let r = self.residual(theta);
        (0..theta.len())
            .map(|k| 2.0 * (0..r.len()).map(|i| self.p[(i, k)] * r[i]).sum::<f64>())
            .collect()
    }

    /// Columns of `P` that hold a nonzero entry.
    pub fn support(&self) -> Vec<usize> {
        (0..self.p.ncols()).filter(|&k| self.p.column(k).iter().any(|&x| x != 0.0)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.b.iter().all(|&x| x == 0.0) && self.p.iter().all(|&x| x == 0.0)
    }
}

/// A margin that is an optimization variable `λ ≥ 0` tied to the policy
/// parameters through `λ² ≥ z² · form(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginRow {
    pub target: MarginTarget,
    pub z: f64,
    pub form: QuadForm,
}

/// Linear equality `Σ coeffs · θ = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEq {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Policy parameters and the constraints and costs that depend on them.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub n_params: usize,
    pub param_start: Vec<f64>,
    pub param_eqs: Vec<LinearEq>,
    pub margin_rows: Vec<MarginRow>,
    /// Objective terms `weight · form(θ)`.
    pub cost_forms: Vec<(f64, QuadForm)>,
}
