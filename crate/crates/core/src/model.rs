//! Model parameterization and the closed-form pieces of the leaky and
//! Bernoulli RBMs: responses, conditionals, activation patterns, region
//! Gaussians and unnormalized marginal log-densities.
//!
//! Conventions: `weights` is `I x J`, column `j` is the weight vector of
//! hidden unit `j`, and the response is `eta = W^T v + b`. Visible units
//! always have unit variance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest eigenvalue a region precision must exceed to count as PD.
pub const PD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HiddenKind {
    LeakyRelu,
    Bernoulli,
}

impl HiddenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HiddenKind::LeakyRelu => "leaky",
            HiddenKind::Bernoulli => "bernoulli",
        }
    }
}

impl std::str::FromStr for HiddenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "leaky" | "leaky-relu" | "leakyrelu" => Ok(HiddenKind::LeakyRelu),
            "bernoulli" => Ok(HiddenKind::Bernoulli),
            other => Err(Error::InvalidParameter(format!("unknown hidden kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    pub weights: DMatrix<f64>,
    pub visible_bias: DVector<f64>,
    pub hidden_bias: DVector<f64>,
    /// Negative-side slope of the leaky ReLU; ignored for Bernoulli units.
    pub leakiness: f64,
    pub kind: HiddenKind,
}

/// Rescaled view of a model used by annealing paths: responses become
/// `scale * eta`, weights `scale * W`, the visible bias `bias_scale * a`, and
/// the leaky units use `leakiness`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub scale: f64,
    pub bias_scale: f64,
    pub leakiness: f64,
}

impl Level {
    pub fn target(params: &RbmParams) -> Self {
        Level {
            scale: 1.0,
            bias_scale: 1.0,
            leakiness: params.leakiness,
        }
    }

    pub fn with_leakiness(leakiness: f64) -> Self {
        Level {
            scale: 1.0,
            bias_scale: 1.0,
            leakiness,
        }
    }
}

/// Per-hidden-unit slope `alpha_j`: 1 when `eta_j > 0`, the leakiness otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPattern {
    pub alpha: DVector<f64>,
}

impl ActivationPattern {
    pub fn all_ones(num_hidden: usize) -> Self {
        ActivationPattern {
            alpha: DVector::from_element(num_hidden, 1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub v: DVector<f64>,
    pub h: DVector<f64>,
}

impl GibbsState {
    pub fn from_visible(v: DVector<f64>, num_hidden: usize) -> Self {
        GibbsState {
            v,
            h: DVector::zeros(num_hidden),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.h.iter()).all(|x| x.is_finite())
    }
}

/// Mean and variance of one Gaussian hidden unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitGaussian {
    pub mean: f64,
    pub variance: f64,
}

/// The Gaussian carried by one activation region.
#[derive(Debug, Clone)]
pub struct RegionGaussian {
    pub precision: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub min_eigenvalue: f64,
    pub is_pd: bool,
}

/// `F_c(eta)`: the antiderivative of the leaky ReLU, `eta^2/2` on the
/// positive side and `c eta^2/2` otherwise.
#[inline]
pub fn leaky_potential(eta: f64, leakiness: f64) -> f64 {
    if eta > 0.0 {
        0.5 * eta * eta
    } else {
        0.5 * leakiness * eta * eta
    }
}

#[inline]
pub fn leaky_slope(eta: f64, leakiness: f64) -> f64 {
    if eta > 0.0 {
        1.0
    } else {
        leakiness
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

impl RbmParams {
    /// Leaky model with zero visible bias.
    pub fn leaky(weights: DMatrix<f64>, hidden_bias: DVector<f64>, leakiness: f64) -> Result<Self> {
        let visible_bias = DVector::zeros(weights.nrows());
        Self::new(weights, visible_bias, hidden_bias, leakiness, HiddenKind::LeakyRelu)
    }

    /// Bernoulli-hidden, Gaussian-visible model with zero visible bias.
    pub fn bernoulli(weights: DMatrix<f64>, hidden_bias: DVector<f64>) -> Result<Self> {
        let visible_bias = DVector::zeros(weights.nrows());
        Self::new(weights, visible_bias, hidden_bias, 1.0, HiddenKind::Bernoulli)
    }

    pub fn new(
        weights: DMatrix<f64>,
        visible_bias: DVector<f64>,
        hidden_bias: DVector<f64>,
        leakiness: f64,
        kind: HiddenKind,
    ) -> Result<Self> {
        let params = RbmParams {
            weights,
            visible_bias,
            hidden_bias,
            leakiness,
            kind,
        };
        params.validate()?;
        Ok(params)
    }

    /// Model with all-zero weights and biases.
    pub fn zeros(num_visible: usize, num_hidden: usize, leakiness: f64, kind: HiddenKind) -> Result<Self> {
        Self::new(
            DMatrix::zeros(num_visible, num_hidden),
            DVector::zeros(num_visible),
            DVector::zeros(num_hidden),
            leakiness,
            kind,
        )
    }

    pub fn validate(&self) -> Result<()> {
        check_len("visible bias", self.num_visible(), self.visible_bias.len())?;
        check_len("hidden bias", self.num_hidden(), self.hidden_bias.len())?;
        if self.kind == HiddenKind::LeakyRelu && !(self.leakiness > 0.0 && self.leakiness <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "leakiness must lie in (0, 1], got {}",
                self.leakiness
            )));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|x| x.is_finite())
            && self.visible_bias.iter().all(|x| x.is_finite())
            && self.hidden_bias.iter().all(|x| x.is_finite())
    }

    pub fn num_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_hidden(&self) -> usize {
        self.weights.ncols()
    }

    pub fn with_leakiness(&self, leakiness: f64) -> Result<Self> {
        let mut p = self.clone();
        p.leakiness = leakiness;
        p.validate()?;
        Ok(p)
    }

    pub fn with_visible_bias(mut self, visible_bias: DVector<f64>) -> Result<Self> {
        self.visible_bias = visible_bias;
        self.validate()?;
        Ok(self)
    }

    /// True when `I - W W^T` is PD within tolerance (largest singular value <= 1).
    pub fn is_safe(&self) -> bool {
        crate::projection::is_globally_safe(&self.weights).safe
    }

    fn check_visible(&self, v: &DVector<f64>) -> Result<()> {
        check_len("visible vector", self.num_visible(), v.len())
    }

    fn check_hidden(&self, h: &DVector<f64>) -> Result<()> {
        check_len("hidden vector", self.num_hidden(), h.len())
    }

    fn require_kind(&self, kind: HiddenKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "operation needs {} hidden units, model has {}",
                kind.as_str(),
                self.kind.as_str()
            )))
        }
    }

    /// `eta = W^T v + b`.
    pub fn response(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_visible(v)?;
        Ok(self.response_unchecked(v))
    }

    pub(crate) fn response_unchecked(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut eta = self.hidden_bias.clone();
        eta.gemv_tr(1.0, &self.weights, v, 1.0);
        eta
    }

    /// Per-unit Gaussian of `p(h_j | v)`: `(eta, 1)` above zero and
    /// `(c eta, c)` at or below zero.
    pub fn hidden_conditional(&self, v: &DVector<f64>) -> Result<Vec<UnitGaussian>> {
        self.require_kind(HiddenKind::LeakyRelu)?;
        let eta = self.response(v)?;
        Ok(eta
            .iter()
            .map(|&e| {
                let alpha = leaky_slope(e, self.leakiness);
                UnitGaussian {
                    mean: alpha * e,
                    variance: alpha,
                }
            })
            .collect())
    }

    /// `p(h_j = 1 | v) = sigmoid(eta_j)`.
    pub fn bernoulli_hidden_conditional(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.require_kind(HiddenKind::Bernoulli)?;
        Ok(self.response(v)?.map(sigmoid))
    }

    /// Mean of `p(v | h)`, `W h + a`; the variance is 1 per unit.
    pub fn visible_conditional(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_hidden(h)?;
        let mut mean = self.visible_bias.clone();
        mean.gemv(1.0, &self.weights, h, 1.0);
        Ok(mean)
    }

    /// Conditional mean of the hidden layer: `alpha_j eta_j` (leaky) or
    /// `sigmoid(eta_j)` (Bernoulli).
    pub fn hidden_mean(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_visible(v)?;
        Ok(self.hidden_mean_unchecked(v))
    }

    pub(crate) fn hidden_mean_unchecked(&self, v: &DVector<f64>) -> DVector<f64> {
        let eta = self.response_unchecked(v);
        match self.kind {
            HiddenKind::LeakyRelu => eta.map(|e| leaky_slope(e, self.leakiness) * e),
            HiddenKind::Bernoulli => eta.map(sigmoid),
        }
    }

    pub fn activation_pattern(&self, v: &DVector<f64>) -> Result<ActivationPattern> {
        self.require_kind(HiddenKind::LeakyRelu)?;
        let eta = self.response(v)?;
        Ok(self.pattern_from_response(&eta, self.leakiness))
    }

    pub(crate) fn pattern_from_response(&self, eta: &DVector<f64>, leakiness: f64) -> ActivationPattern {
        ActivationPattern {
            alpha: eta.map(|e| leaky_slope(e, leakiness)),
        }
    }

    /// `Omega = I - sum_j alpha_j W_j W_j^T` and its smallest eigenvalue.
    pub fn region_precision(&self, pattern: &ActivationPattern) -> Result<(DMatrix<f64>, f64)> {
        check_len("activation pattern", self.num_hidden(), pattern.len())?;
        let omega = precision_for_slopes(&self.weights, &pattern.alpha);
        let min_eig = min_symmetric_eigenvalue(&omega);
        Ok((omega, min_eig))
    }

    /// Precision and mean of the Gaussian piece living on the region with the
    /// given activation pattern. The mean solves
    /// `Omega mu = a + sum_j alpha_j b_j W_j`.
    pub fn region_precision_mean(&self, pattern: &ActivationPattern) -> Result<RegionGaussian> {
        let (precision, min_eigenvalue) = self.region_precision(pattern)?;
        if min_eigenvalue.abs() <= PD_TOLERANCE {
            return Err(Error::NonPositiveDefinite { min_eigenvalue });
        }
        let mut rhs = self.visible_bias.clone();
        let weighted_bias = self.hidden_bias.component_mul(&pattern.alpha);
        rhs.gemv(1.0, &self.weights, &weighted_bias, 1.0);
        let mean = precision
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::NonPositiveDefinite { min_eigenvalue })?;
        Ok(RegionGaussian {
            precision,
            mean,
            min_eigenvalue,
            is_pd: min_eigenvalue > PD_TOLERANCE,
        })
    }

    /// `-|v|^2/2 + a^T v + sum_j F_c(eta_j)`: the leaky marginal with the
    /// hidden layer integrated out.
    pub fn log_unnorm_marginal(&self, v: &DVector<f64>) -> Result<f64> {
        self.require_kind(HiddenKind::LeakyRelu)?;
        self.check_visible(v)?;
        Ok(self.log_density_at(Level::target(self), v))
    }

    /// `-|v|^2/2 + a^T v + sum_j softplus(eta_j)`, the exact sum over binary `h`.
    pub fn bernoulli_log_unnorm_marginal(&self, v: &DVector<f64>) -> Result<f64> {
        self.require_kind(HiddenKind::Bernoulli)?;
        self.check_visible(v)?;
        Ok(self.log_density_at(Level::target(self), v))
    }

    /// Unnormalized marginal of whichever hidden kind the model has.
    pub fn log_marginal(&self, v: &DVector<f64>) -> Result<f64> {
        self.check_visible(v)?;
        Ok(self.log_density_at(Level::target(self), v))
    }

    /// Unnormalized log marginal of the rescaled model described by `level`.
    pub fn log_density_at(&self, level: Level, v: &DVector<f64>) -> f64 {
        let eta = self.response_unchecked(v);
        self.log_density_from_response(level, v, &eta)
    }

    pub(crate) fn log_density_from_response(&self, level: Level, v: &DVector<f64>, eta: &DVector<f64>) -> f64 {
        let base = -0.5 * v.norm_squared() + level.bias_scale * self.visible_bias.dot(v);
        let hidden: f64 = match self.kind {
            HiddenKind::LeakyRelu => eta
                .iter()
                .map(|&e| leaky_potential(level.scale * e, level.leakiness))
                .sum(),
            HiddenKind::Bernoulli => eta.iter().map(|&e| softplus(level.scale * e)).sum(),
        };
        base + hidden
    }
}

/// `I - W diag(alpha) W^T`.
pub fn precision_for_slopes(weights: &DMatrix<f64>, alpha: &DVector<f64>) -> DMatrix<f64> {
    let n = weights.nrows();
    let mut scaled = weights.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= alpha[j];
    }
    let mut omega = DMatrix::identity(n, n);
    omega.gemm(-1.0, &scaled, &weights.transpose(), 1.0);
    omega
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigenvalues().min()
}
