//! Correlated Gaussian demand scenarios.
//!
//! Each (product, store) pair is one demand series. Within a period the
//! series are jointly normal with a fixed correlation matrix; periods are
//! drawn independently. Negative draws are truncated to zero.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Smallest eigenvalue kept when a correlation matrix has to be repaired.
pub const PSD_EIGEN_FLOOR: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Decreasing,
    Increasing,
    Fashion,
    Stationary,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Decreasing,
        ScenarioKind::Increasing,
        ScenarioKind::Fashion,
        ScenarioKind::Stationary,
    ];

    /// Shape in [0, 1] at relative season position `x` in [0, 1]. Means are
    /// `base - amplitude + 2 * amplitude * shape`, except stationary.
    fn shape(self, x: f64) -> f64 {
        match self {
            ScenarioKind::Decreasing => 1.0 - x,
            ScenarioKind::Increasing => x,
            // rise over the first third, plateau, fall over the last third
            ScenarioKind::Fashion => (3.0 * x).min(3.0 * (1.0 - x)).clamp(0.0, 1.0),
            ScenarioKind::Stationary => 0.5,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioKind::Decreasing => "decreasing",
            ScenarioKind::Increasing => "increasing",
            ScenarioKind::Fashion => "fashion",
            ScenarioKind::Stationary => "stationary",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "decreasing" => Ok(ScenarioKind::Decreasing),
            "increasing" => Ok(ScenarioKind::Increasing),
            "fashion" => Ok(ScenarioKind::Fashion),
            "stationary" | "stable" => Ok(ScenarioKind::Stationary),
            other => Err(Error::Config(format!("unknown scenario kind '{other}'"))),
        }
    }
}

/// Parameters of the parametric mean profiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileParams {
    pub base_mean: f64,
    pub amplitude: f64,
    /// Coefficient of variation: `std_t = cv * mean_t`.
    pub cv: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            base_mean: 10.0,
            amplitude: 5.0,
            cv: 0.25,
        }
    }
}

/// Mean trajectory of one series for the given profile.
pub fn profile_means(kind: ScenarioKind, p: &ProfileParams, horizon: usize) -> Result<Vec<f64>> {
    if !(p.base_mean > 0.0) {
        return Err(Error::Parameter(format!("base_mean must be > 0, got {}", p.base_mean)));
    }
    if !(p.amplitude >= 0.0) || p.amplitude > p.base_mean {
        return Err(Error::Parameter(format!(
            "amplitude must lie in [0, base_mean={}], got {}",
            p.base_mean, p.amplitude
        )));
    }
    if !(p.cv >= 0.0) {
        return Err(Error::Parameter(format!("cv must be >= 0, got {}", p.cv)));
    }
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be >= 1".into()));
    }
    let lo = p.base_mean - p.amplitude;
    Ok((0..horizon)
        .map(|t| {
            if kind == ScenarioKind::Stationary {
                return p.base_mean;
            }
            let x = if horizon == 1 {
                0.5
            } else {
                t as f64 / (horizon - 1) as f64
            };
            lo + 2.0 * p.amplitude * kind.shape(x)
        })
        .collect())
}

/// Correlation over `products * stores` series as the Kronecker product of a
/// product-level and a store-level equicorrelation matrix. Series index is
/// `product * stores + store`.
pub fn kronecker_correlation(products: usize, stores: usize, product_rho: f64, store_rho: f64) -> DMatrix<f64> {
    let equi = |n: usize, rho: f64| DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho });
    equi(products, product_rho).kronecker(&equi(stores, store_rho))
}

/// Outcome of a correlation PSD repair.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairReport {
    pub min_eigenvalue: f64,
    pub clipped: usize,
}

impl fmt::Display for RepairReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "correlation matrix not positive definite (min eigenvalue {:.3e}); clipped {} eigenvalue(s) at {:e} and renormalized the diagonal",
            self.min_eigenvalue, self.clipped, PSD_EIGEN_FLOOR
        )
    }
}

/// Validates a correlation matrix and returns its lower Cholesky factor,
/// repairing it by eigenvalue clipping when needed.
pub fn correlation_factor(corr: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, Option<RepairReport>)> {
    let n = corr.nrows();
    if corr.ncols() != n || n == 0 {
        return Err(Error::Config(format!(
            "correlation must be square and nonempty, got {}x{}",
            corr.nrows(),
            corr.ncols()
        )));
    }
    for i in 0..n {
        if (corr[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
            return Err(Error::Config(format!(
                "correlation diagonal entry {i} is {}, not 1",
                corr[(i, i)]
            )));
        }
        for j in 0..n {
            let v = corr[(i, j)];
            if !v.is_finite() || v.abs() > 1.0 + SYMMETRY_TOL {
                return Err(Error::Config(format!(
                    "correlation entry ({i},{j}) = {v} outside [-1, 1]"
                )));
            }
            if (v - corr[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::Config(format!("correlation not symmetric at ({i},{j})")));
            }
        }
    }
    if let Some(ch) = corr.clone().cholesky() {
        return Ok((corr.clone(), ch.l(), None));
    }
    let eig = corr.clone().symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.min();
    let clipped = eig.eigenvalues.iter().filter(|&&v| v < PSD_EIGEN_FLOOR).count();
    let vals = eig.eigenvalues.map(|v| v.max(PSD_EIGEN_FLOOR));
    let raw = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let d = DVector::from_fn(n, |i, _| 1.0 / raw[(i, i)].sqrt());
    let mut fixed = DMatrix::from_fn(n, n, |i, j| raw[(i, j)] * d[i] * d[j]);
    // exact symmetry and unit diagonal after the floating-point round trip
    for i in 0..n {
        fixed[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (fixed[(i, j)] + fixed[(j, i)]);
            fixed[(i, j)] = v;
            fixed[(j, i)] = v;
        }
    }
    let l = fixed
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("correlation matrix is not PSD even after repair".into()))?
        .l();
    Ok((
        fixed,
        l,
        Some(RepairReport {
            min_eigenvalue,
            clipped,
        }),
    ))
}

/// Immutable demand model over `products x stores` series and a horizon.
#[derive(Debug, Clone)]
pub struct DemandScenario {
    products: usize,
    stores: usize,
    horizon: usize,
    /// `mean[k * horizon + t]` for series k.
    mean: Vec<f64>,
    std: Vec<f64>,
    corr: DMatrix<f64>,
    chol: DMatrix<f64>,
    repair: Option<RepairReport>,
    kind: Option<ScenarioKind>,
}

impl DemandScenario {
    /// Builds a scenario from explicit per-series trajectories laid out as
    /// `[series][period]`.
    pub fn new(
        products: usize,
        stores: usize,
        mean: Vec<Vec<f64>>,
        std: Vec<Vec<f64>>,
        corr: DMatrix<f64>,
    ) -> Result<Self> {
        let n = products * stores;
        if n == 0 {
            return Err(Error::Config("scenario needs at least one product and store".into()));
        }
        if mean.len() != n || std.len() != n {
            return Err(Error::Config(format!(
                "expected {n} mean/std series, got {}/{}",
                mean.len(),
                std.len()
            )));
        }
        let horizon = mean[0].len();
        if horizon == 0 {
            return Err(Error::Config("scenario horizon must be >= 1".into()));
        }
        if mean.iter().chain(std.iter()).any(|s| s.len() != horizon) {
            return Err(Error::Config("all series must share one horizon".into()));
        }
        if std.iter().flatten().any(|&s| !(s >= 0.0)) {
            return Err(Error::Config("demand std entries must be >= 0".into()));
        }
        if mean.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::Config("demand means must be finite".into()));
        }
        if corr.nrows() != n {
            return Err(Error::Config(format!(
                "correlation is {}x{} but there are {n} series",
                corr.nrows(),
                corr.ncols()
            )));
        }
        let (corr, chol, repair) = correlation_factor(&corr)?;
        Ok(Self {
            products,
            stores,
            horizon,
            mean: mean.into_iter().flatten().collect(),
            std: std.into_iter().flatten().collect(),
            corr,
            chol,
            repair,
            kind: None,
        })
    }

    /// Parametric scenario: every series follows the same `kind` profile with
    /// `std_t = cv * mean_t`.
    pub fn make(
        kind: ScenarioKind,
        params: &ProfileParams,
        horizon: usize,
        products: usize,
        stores: usize,
        corr: DMatrix<f64>,
    ) -> Result<Self> {
        let mu = profile_means(kind, params, horizon)?;
        let sd: Vec<f64> = mu.iter().map(|m| params.cv * m).collect();
        let n = products * stores;
        let mut s = Self::new(products, stores, vec![mu; n], vec![sd; n], corr)?;
        s.kind = Some(kind);
        Ok(s)
    }

    /// Single series with the same demand every period and no noise.
    pub fn deterministic(value: f64, horizon: usize) -> Result<Self> {
        Self::new(
            1,
            1,
            vec![vec![value; horizon]],
            vec![vec![0.0; horizon]],
            DMatrix::identity(1, 1),
        )
    }

    pub fn products(&self) -> usize {
        self.products
    }

    pub fn stores(&self) -> usize {
        self.stores
    }

    pub fn series(&self) -> usize {
        self.products * self.stores
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn kind(&self) -> Option<ScenarioKind> {
        self.kind
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.corr
    }

    /// Set when the supplied correlation had to be repaired.
    pub fn repair(&self) -> Option<&RepairReport> {
        self.repair.as_ref()
    }

    pub fn mean(&self, product: usize, store: usize, t: usize) -> f64 {
        self.mean[(product * self.stores + store) * self.horizon + t]
    }

    pub fn std(&self, product: usize, store: usize, t: usize) -> f64 {
        self.std[(product * self.stores + store) * self.horizon + t]
    }

    /// Mean trajectory of series `k`.
    pub fn series_mean(&self, k: usize) -> &[f64] {
        &self.mean[k * self.horizon..(k + 1) * self.horizon]
    }

    pub fn series_std(&self, k: usize) -> &[f64] {
        &self.std[k * self.horizon..(k + 1) * self.horizon]
    }

    pub fn max_mean(&self) -> f64 {
        self.mean.iter().copied().fold(0.0, f64::max)
    }

    /// True when every std entry is zero.
    pub fn is_deterministic(&self) -> bool {
        self.std.iter().all(|&s| s == 0.0)
    }

    /// Draws one period of demand, `u[product * stores + store]`, truncated at 0.
    pub fn sample_period<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Result<Vec<f64>> {
        if t >= self.horizon {
            return Err(Error::EpisodeFinished {
                t,
                horizon: self.horizon,
            });
        }
        let n = self.series();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Ok((0..n)
            .map(|k| {
                let mut c = 0.0;
                for (j, zj) in z.iter().enumerate().take(k + 1) {
                    c += self.chol[(k, j)] * zj;
                }
                let m = self.mean[k * self.horizon + t];
                let s = self.std[k * self.horizon + t];
                (m + s * c).max(0.0)
            })
            .collect())
    }

    /// Writes `t,product,store,mean,std` rows for plotting.
    pub fn write_trajectories<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,product,store,mean,std")?;
        for i in 0..self.products {
            for r in 0..self.stores {
                for t in 0..self.horizon {
                    writeln!(w, "{t},{i},{r},{},{}", self.mean(i, r, t), self.std(i, r, t))?;
                }
            }
        }
        Ok(())
    }
}
