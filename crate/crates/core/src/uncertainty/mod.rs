//! Scenario clouds of uncertain active demand and affine generator response.
//!
//! A deviation `w_j` is added to the active demand of `uncertain_buses[j]`;
//! positive `w` is extra consumption that the generators must cover.

mod io;
mod policy;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::net::NetworkCase;
pub use io::{read_alpha_csv, read_samples_csv, write_alpha_csv, write_samples_csv};
pub use policy::{apply_response, PolicyKind, ResponsePolicy};

/// Eigenvalues of a covariance above this (negative) value are clipped to 0.
pub const PSD_TOLERANCE: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UncertaintyError {
    #[error("at least 2 samples are required, found {0}")]
    TooFewSamples(usize),
    #[error("uncertain bus {0} carries no active demand")]
    ZeroDemandBus(u32),
    #[error("covariance is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("response policy invariant violated: {0}")]
    PolicyInvariantViolated(String),
    #[error("unknown bus id {0}")]
    UnknownBus(u32),
    #[error("malformed csv: {0}")]
    Csv(String),
}

/// Mean and covariance of the uncertain active demand.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCloud {
    /// Internal bus indices, one per source.
    pub uncertain_buses: Vec<usize>,
    /// Mean active demand per source, p.u.
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `N × N`, p.u.².
    pub cov: DMatrix<f64>,
    /// Raw `M × N` draws the statistics came from.
    pub samples: Option<DMatrix<f64>>,
}

impl ScenarioCloud {
    pub fn sources(&self) -> usize {
        self.uncertain_buses.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.cov.iter().all(|&c| c == 0.0)
    }

    /// Copy with the covariance multiplied by `t` (σ by `√t`).
    pub fn scaled(&self, t: f64) -> ScenarioCloud {
        ScenarioCloud {
            uncertain_buses: self.uncertain_buses.clone(),
            mean: self.mean.clone(),
            sigma: self.sigma.iter().map(|s| s * t.sqrt()).collect(),
            cov: &self.cov * t,
            samples: None,
        }
    }

    /// Symmetric square root of the covariance.
    pub fn sqrt_cov(&self) -> Result<DMatrix<f64>, UncertaintyError> {
        psd_sqrt(&self.cov)
    }
}

/// Buses with positive active demand.
pub fn default_uncertain_buses(case: &NetworkCase) -> Vec<usize> {
    (0..case.buses.len()).filter(|&i| case.buses[i].pd > 0.0).collect()
}

/// Population statistics of `samples` (`M × N`, absolute demands).
pub fn cloud_from_samples(samples: &DMatrix<f64>, uncertain_buses: &[usize]) -> Result<ScenarioCloud, UncertaintyError> {
    let (m, n) = samples.shape();
    if m < 2 {
        return Err(UncertaintyError::TooFewSamples(m));
    }
    if n != uncertain_buses.len() {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "{n} sample columns for {} uncertain buses",
            uncertain_buses.len()
        )));
    }
    let mean: Vec<f64> = (0..n).map(|j| samples.column(j).sum() / m as f64).collect();
    let centered = DMatrix::from_fn(m, n, |a, j| samples[(a, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / m as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    let sigma = (0..n).map(|j| cov[(j, j)].sqrt()).collect();
    Ok(ScenarioCloud {
        uncertain_buses: uncertain_buses.to_vec(),
        mean,
        sigma,
        cov,
        samples: Some(samples.clone()),
    })
}

/// Independent Gaussian demand around the case's own demand with
/// `σ_i = sigma_ratio · pd_i`.
pub fn gaussian_cloud(case: &NetworkCase, uncertain_buses: &[usize], sigma_ratio: f64) -> Result<ScenarioCloud, UncertaintyError> {
    if !(sigma_ratio >= 0.0) || !sigma_ratio.is_finite() {
        return Err(UncertaintyError::DimensionMismatch(format!("sigma ratio {sigma_ratio} must be finite and nonnegative")));
    }
    let mut mean = Vec::with_capacity(uncertain_buses.len());
    for &b in uncertain_buses {
        let bus = case
            .buses
            .get(b)
            .ok_or_else(|| UncertaintyError::DimensionMismatch(format!("bus index {b} out of range")))?;
        if bus.pd == 0.0 {
            return Err(UncertaintyError::ZeroDemandBus(bus.id));
        }
        mean.push(bus.pd);
    }
    let sigma: Vec<f64> = mean.iter().map(|pd| sigma_ratio * pd.abs()).collect();
    let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(sigma.len(), sigma.iter().map(|s| s * s)));
    Ok(ScenarioCloud {
        uncertain_buses: uncertain_buses.to_vec(),
        mean,
        sigma,
        cov,
        samples: None,
    })
}

/// Symmetric PSD square root by eigendecomposition; eigenvalues in
/// `[PSD_TOLERANCE, 0)` are clipped to zero.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, UncertaintyError> {
    if !cov.is_square() {
        return Err(UncertaintyError::DimensionMismatch("covariance is not square".into()));
    }
    let n = cov.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if cov.iter().all(|&c| c == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = cov.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&e| e < PSD_TOLERANCE * scale) {
        return Err(UncertaintyError::NotPsd(bad));
    }
    let roots = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&roots) * q.transpose();
    out = (&out + out.transpose()) * 0.5;
    Ok(out)
}

/// `m` zero-mean Gaussian deviations with the cloud's covariance, one row per
/// draw. The same seed always yields the same matrix.
pub fn sample_cloud(cloud: &ScenarioCloud, m: usize, seed: u64) -> Result<DMatrix<f64>, UncertaintyError> {
    let n = cloud.sources();
    let root = cloud.sqrt_cov()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(m, n);
    let mut z = vec![0.0; n];
    for a in 0..m {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            out[(a, i)] = (0..n).map(|k| root[(i, k)] * z[k]).sum();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_have_no_spread() {
        let s = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let c = cloud_from_samples(&s, &[4, 5]).unwrap();
        assert_eq!(c.mean, vec![1.0, 2.0]);
        assert_eq!(c.sigma, vec![0.0, 0.0]);
        assert!(c.is_degenerate());
    }

    #[test]
    fn population_convention() {
        let s = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let c = cloud_from_samples(&s, &[0]).unwrap();
        assert_eq!(c.mean, vec![2.0]);
        assert_eq!(c.sigma, vec![1.0]);
    }

    #[test]
    fn one_sample_is_too_few() {
        let s = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert_eq!(cloud_from_samples(&s, &[0]), Err(UncertaintyError::TooFewSamples(1)));
    }

    #[test]
    fn gaussian_cloud_follows_ratio() {
        let case = NetworkCase::ieee30();
        let buses = default_uncertain_buses(&case);
        assert_eq!(buses.len(), 20);
        let c = gaussian_cloud(&case, &buses, 0.1).unwrap();
        for (j, &b) in buses.iter().enumerate() {
            let s = 0.1 * case.buses[b].pd;
            assert!((c.cov[(j, j)] - s * s).abs() <= 1e-15);
            assert!((c.sigma[j].powi(2) - c.cov[(j, j)]).abs() <= 1e-12);
        }
        let zero = gaussian_cloud(&case, &buses, 0.0).unwrap();
        assert!(zero.is_degenerate());
    }

    #[test]
    fn five_percent_of_twenty_hundredths() {
        let mut case = NetworkCase::ieee30();
        case.buses[3].pd = 0.20;
        let c = gaussian_cloud(&case, &[3], 0.05).unwrap();
        assert!((c.sigma[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_demand_bus_is_rejected() {
        let case = NetworkCase::ieee30();
        let empty = (0..30).find(|&i| case.buses[i].pd == 0.0).unwrap();
        assert_eq!(
            gaussian_cloud(&case, &[empty], 0.05),
            Err(UncertaintyError::ZeroDemandBus(case.buses[empty].id))
        );
    }

    #[test]
    fn sqrt_of_rank_deficient_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let r = psd_sqrt(&cov).unwrap();
        assert!((&r * &r - &cov).abs().max() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(psd_sqrt(&bad), Err(UncertaintyError::NotPsd(_))));
    }

    #[test]
    fn zero_covariance_draws_zeros() {
        let case = NetworkCase::ieee30();
        let c = gaussian_cloud(&case, &[1, 2], 0.0).unwrap();
        let s = sample_cloud(&c, 10, 7).unwrap();
        assert!(s.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sampling_is_reproducible() {
        let case = NetworkCase::ieee30();
        let c = gaussian_cloud(&case, &default_uncertain_buses(&case), 0.05).unwrap();
        let a = sample_cloud(&c, 50, 42).unwrap();
        let b = sample_cloud(&c, 50, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_cloud(&c, 50, 43).unwrap());
    }
}
