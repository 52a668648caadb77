//! Affine factor models of the short rate and their bond-pricing
//! coefficient functions.
//!
//! Every model describes a factor diffusion
//!
//! ```text
//! dY(t) = [B1 + B2 Y(t) + Sigma lambda] dt + Sigma dW(t),     r(t) = phi1 + <phi2, Y(t)>
//! ```
//!
//! with zero-coupon bond prices in exponential-affine form
//! `P(t)(x) = exp(m(x) - <n(x), Y(t)>)` at time to maturity `x`. The rolling
//! bond at constant time to maturity `x` then carries the volatility loading
//! `sigma_tilde(x) = Sigma^T n(x)`.
//!
//! The CIR model keeps the same container but has state-dependent diffusion
//! `sigma * sqrt(r)` and market price of risk `lambda_bar * sqrt(r)`; generic
//! code paths must query [`AffineModelSpec::diffusion_at`] and
//! [`AffineModelSpec::lambda_at`] instead of the constant fields.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::linalg::expm_with_integral;
use crate::quad::adaptive_gk;

/// Default maximal time to maturity (years) when a config leaves it open.
pub const DEFAULT_T_STAR: f64 = 30.0;

/// Supported model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Merton,
    Vasicek,
    Cir,
    G2pp,
    GenericGaussianAffine,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Merton => "merton",
            Family::Vasicek => "vasicek",
            Family::Cir => "cir",
            Family::G2pp => "g2pp",
            Family::GenericGaussianAffine => "generic_gaussian_affine",
        }
    }
}

// ---------------------------------------------------------------------------
// Numerically stable scalar kernels around (1 - e^{-z}) / z
// ---------------------------------------------------------------------------

/// em1(z) = (1 - e^{-z}) / z, with em1(0) = 1.
pub(crate) fn em1(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - z / 2.0 + z * z / 6.0
    } else {
        -(-z).exp_m1() / z
    }
}

/// psi(z) = (1 - em1(z)) / z; the reduced primitive of n:
/// int_0^x n_kappa = x^2 psi(kappa x).
fn psi(z: f64) -> f64 {
    if z.abs() < 0.01 {
        0.5 - z / 6.0 + z * z / 24.0 - z * z * z / 120.0
    } else {
        (1.0 - em1(z)) / z
    }
}

/// chi(z) = (1 - 2 em1(z) + em1(2z)) / z^2; the reduced primitive of n^2:
/// int_0^x n_kappa^2 = x^3 chi(kappa x).
fn chi(z: f64) -> f64 {
    if z.abs() < 0.01 {
        1.0 / 3.0 - z / 4.0 + 7.0 * z * z / 60.0 - z * z * z / 24.0
    } else {
        (1.0 - 2.0 * em1(z) + em1(2.0 * z)) / (z * z)
    }
}

/// n_kappa(x) = (1 - e^{-kappa x}) / kappa, the one-factor exposure function.
pub(crate) fn n_kappa(kappa: f64, x: f64) -> f64 {
    x * em1(kappa * x)
}

/// int_0^x n_kappa(s) ds.
pub(crate) fn int_n(kappa: f64, x: f64) -> f64 {
    x * x * psi(kappa * x)
}

/// int_0^x n_kappa(s)^2 ds.
pub(crate) fn int_n2(kappa: f64, x: f64) -> f64 {
    x * x * x * chi(kappa * x)
}

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

/// Coefficients of the affine factor SDE and short rate.
///
/// Immutable after construction; all operations are pure functions, so specs
/// can be shared freely across worker threads.
#[derive(Debug, Clone)]
pub struct AffineModelSpec {
    pub dim_factor: usize,
    pub dim_noise: usize,
    /// Constant drift part B1 (1/time).
    pub b1: DVector<f64>,
    /// Linear drift part B2 (1/time).
    pub b2: DMatrix<f64>,
    /// Constant diffusion Sigma; for CIR this is the loading multiplying sqrt(r).
    pub sigma: DMatrix<f64>,
    /// Market price of risk; for CIR the loading multiplying sqrt(r).
    pub lambda: DVector<f64>,
    /// Short-rate intercept.
    pub phi1: f64,
    /// Short-rate factor loading.
    pub phi2: DVector<f64>,
    pub family: Family,
    /// Maximal time to maturity tradable on the market.
    pub t_star: f64,
    /// Raw constructor parameters, kept for exact JSON round-trips.
    pub params: BTreeMap<String, f64>,
}

/// Build a one-factor mean-reverting Gaussian model
/// `dr = (beta - kappa r) dt + sigma (lambda dt + dW)`.
///
/// Passing `kappa = 0` degenerates to the driftwise-linear Merton model.
pub fn make_vasicek(beta: f64, kappa: f64, sigma: f64, lambda: f64) -> Result<AffineModelSpec, ModelError> {
    if sigma <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "sigma",
            reason: format!("must be positive for uniform ellipticity, got {sigma}"),
        });
    }
    if kappa < 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "kappa",
            reason: format!("mean-reversion speed must be nonnegative, got {kappa}"),
        });
    }
    let family = if kappa == 0.0 { Family::Merton } else { Family::Vasicek };
    let mut params = BTreeMap::new();
    params.insert("beta".into(), beta);
    params.insert("kappa".into(), kappa);
    params.insert("sigma".into(), sigma);
    params.insert("lambda".into(), lambda);
    Ok(AffineModelSpec {
        dim_factor: 1,
        dim_noise: 1,
        b1: DVector::from_row_slice(&[beta]),
        b2: DMatrix::from_row_slice(1, 1, &[-kappa]),
        sigma: DMatrix::from_row_slice(1, 1, &[sigma]),
        lambda: DVector::from_row_slice(&[lambda]),
        phi1: 0.0,
        phi2: DVector::from_row_slice(&[1.0]),
        family,
        t_star: DEFAULT_T_STAR,
        params,
    })
}

/// Build the square-root model
/// `dr = (beta - kappa r) dt + sigma sqrt(r) (lambda_bar sqrt(r) dt + dW)`.
///
/// The market price of risk is `lambda_bar * sqrt(r)`. Violation of the
/// Feller bound `2 beta >= sigma^2` is reported by
/// [`AffineModelSpec::feller_ok`] but does not fail construction.
pub fn make_cir(beta: f64, kappa: f64, sigma: f64, lambda_bar: f64) -> Result<AffineModelSpec, ModelError> {
    if sigma <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "sigma",
            reason: format!("must be positive, got {sigma}"),
        });
    }
    if beta < 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "beta",
            reason: format!("must be nonnegative to keep the rate nonnegative, got {beta}"),
        });
    }
    let mut params = BTreeMap::new();
    params.insert("beta".into(), beta);
    params.insert("kappa".into(), kappa);
    params.insert("sigma".into(), sigma);
    params.insert("lambda_bar".into(), lambda_bar);
    Ok(AffineModelSpec {
        dim_factor: 1,
        dim_noise: 1,
        b1: DVector::from_row_slice(&[beta]),
        b2: DMatrix::from_row_slice(1, 1, &[-kappa]),
        sigma: DMatrix::from_row_slice(1, 1, &[sigma]),
        lambda: DVector::from_row_slice(&[lambda_bar]),
        phi1: 0.0,
        phi2: DVector::from_row_slice(&[1.0]),
        family: Family::Cir,
        t_star: DEFAULT_T_STAR,
        params,
    })
}

/// Build the two-factor model with `r = Y1 + Y2`, where `Y1`, `Y2` are
/// correlated mean-reverting Gaussian factors:
///
/// ```text
/// dY1 = -kappa1 Y1 dt + sigma1 [lambda1 dt + dW1]
/// dY2 = -kappa2 Y2 dt + sigma2 [rho (lambda1 dt + dW1) + sqrt(1-rho^2) (lambda2 dt + dW2)]
/// ```
///
/// `sigma2 = 0` is accepted and degenerates to the one-factor model in `Y1`.
pub fn make_g2pp(
    kappa1: f64,
    kappa2: f64,
    sigma1: f64,
    sigma2: f64,
    rho: f64,
    lambda1: f64,
    lambda2: f64,
) -> Result<AffineModelSpec, ModelError> {
    if rho.abs() >= 1.0 {
        return Err(ModelError::InvalidParameter {
            name: "rho",
            reason: format!("correlation must satisfy |rho| < 1, got {rho}"),
        });
    }
    if sigma1 <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "sigma1",
            reason: format!("must be positive, got {sigma1}"),
        });
    }
    if sigma2 < 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "sigma2",
            reason: format!("must be nonnegative, got {sigma2}"),
        });
    }
    if kappa1 < 0.0 || kappa2 < 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "kappa",
            reason: "mean-reversion speeds must be nonnegative".into(),
        });
    }
    let mut params = BTreeMap::new();
    params.insert("kappa1".into(), kappa1);
    params.insert("kappa2".into(), kappa2);
    params.insert("sigma1".into(), sigma1);
    params.insert("sigma2".into(), sigma2);
    params.insert("rho".into(), rho);
    params.insert("lambda1".into(), lambda1);
    params.insert("lambda2".into(), lambda2);
    Ok(AffineModelSpec {
        dim_factor: 2,
        dim_noise: 2,
        b1: DVector::zeros(2),
        b2: DMatrix::from_row_slice(2, 2, &[-kappa1, 0.0, 0.0, -kappa2]),
        sigma: DMatrix::from_row_slice(
            2,
            2,
            &[sigma1, 0.0, rho * sigma2, sigma2 * (1.0 - rho * rho).sqrt()],
        ),
        lambda: DVector::from_row_slice(&[lambda1, lambda2]),
        phi1: 0.0,
        phi2: DVector::from_row_slice(&[1.0, 1.0]),
        family: Family::G2pp,
        t_star: DEFAULT_T_STAR,
        params,
    })
}

/// Build a Gaussian affine model from raw coefficients.
pub fn make_generic(
    b1: DVector<f64>,
    b2: DMatrix<f64>,
    sigma: DMatrix<f64>,
    lambda: DVector<f64>,
    phi1: f64,
    phi2: DVector<f64>,
) -> Result<AffineModelSpec, ModelError> {
    let n = b1.len();
    let m = lambda.len();
    if b2.nrows() != n || b2.ncols() != n || sigma.nrows() != n || sigma.ncols() != m || phi2.len() != n {
        return Err(ModelError::InvalidParameter {
            name: "shapes",
            reason: format!(
                "inconsistent dimensions: b1 {n}, b2 {}x{}, sigma {}x{}, lambda {m}, phi2 {}",
                b2.nrows(),
                b2.ncols(),
                sigma.nrows(),
                sigma.ncols(),
                phi2.len()
            ),
        });
    }
    Ok(AffineModelSpec {
        dim_factor: n,
        dim_noise: m,
        b1,
        b2,
        sigma,
        lambda,
        phi1,
        phi2,
        family: Family::GenericGaussianAffine,
        t_star: DEFAULT_T_STAR,
        params: BTreeMap::new(),
    })
}

impl AffineModelSpec {
    pub fn with_t_star(mut self, t_star: f64) -> Self {
        self.t_star = t_star;
        self
    }

    fn param(&self, key: &str) -> f64 {
        self.params[key]
    }

    pub fn is_cir(&self) -> bool {
        self.family == Family::Cir
    }

    /// Whether Sigma Sigma^T is strictly positive definite (checked on the
    /// constant loading; CIR is excluded from this notion by construction).
    pub fn is_elliptic(&self) -> bool {
        if self.is_cir() {
            return false;
        }
        let a = &self.sigma * self.sigma.transpose();
        a.symmetric_eigen().eigenvalues.iter().all(|&e| e > 1e-14)
    }

    /// Feller bound `2 beta >= sigma^2` for CIR; `None` for other families.
    pub fn feller_ok(&self) -> Option<bool> {
        if self.is_cir() {
            let beta = self.param("beta");
            let sigma = self.param("sigma");
            Some(2.0 * beta >= sigma * sigma)
        } else {
            None
        }
    }

    /// CIR auxiliary constant rho = (kappa^2 + 2 sigma^2)^{1/2} / 2.
    pub fn cir_rho(&self) -> Option<f64> {
        if self.is_cir() {
            let kappa = self.param("kappa");
            let sigma = self.param("sigma");
            Some(0.5 * (kappa * kappa + 2.0 * sigma * sigma).sqrt())
        } else {
            None
        }
    }

    pub fn short_rate(&self, y: &DVector<f64>) -> f64 {
        self.phi1 + self.phi2.dot(y)
    }

    /// Diffusion loading at state `y`: Sigma for Gaussian families,
    /// sigma * sqrt(max(r, 0)) for CIR.
    pub fn diffusion_at(&self, y: &DVector<f64>) -> DMatrix<f64> {
        if self.is_cir() {
            &self.sigma * y[0].max(0.0).sqrt()
        } else {
            self.sigma.clone()
        }
    }

    /// Market price of risk at state `y`.
    pub fn lambda_at(&self, y: &DVector<f64>) -> DVector<f64> {
        if self.is_cir() {
            &self.lambda * y[0].max(0.0).sqrt()
        } else {
            self.lambda.clone()
        }
    }

    /// Drift B(y) = B1 + B2 y (excluding the risk-premium term).
    pub fn b_at(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.b1 + &self.b2 * y
    }

    fn check_maturity(&self, x: f64) -> Result<(), ModelError> {
        if !(0.0..=self.t_star).contains(&x) || !x.is_finite() {
            Err(ModelError::MaturityOutOfRange { x, t_star: self.t_star })
        } else {
            Ok(())
        }
    }

    /// Affine bond exposure n(x), with n(0) = 0.
    pub fn bond_n(&self, x: f64) -> Result<DVector<f64>, ModelError> {
        self.check_maturity(x)?;
        Ok(match self.family {
            Family::Merton => DVector::from_row_slice(&[x]),
            Family::Vasicek => DVector::from_row_slice(&[n_kappa(self.param("kappa"), x)]),
            Family::G2pp => DVector::from_row_slice(&[
                n_kappa(self.param("kappa1"), x),
                n_kappa(self.param("kappa2"), x),
            ]),
            Family::Cir => DVector::from_row_slice(&[self.cir_n(x)]),
            Family::GenericGaussianAffine => {
                let (_, integral) = expm_with_integral(&self.b2.transpose(), &self.phi2, x);
                integral
            }
        })
    }

    /// Derivative n'(x), from the Riccati/linear coefficient ODEs.
    pub fn bond_n_prime(&self, x: f64) -> Result<DVector<f64>, ModelError> {
        self.check_maturity(x)?;
        Ok(match self.family {
            Family::Merton => DVector::from_row_slice(&[1.0]),
            Family::Vasicek => DVector::from_row_slice(&[(-self.param("kappa") * x).exp()]),
            Family::G2pp => DVector::from_row_slice(&[
                (-self.param("kappa1") * x).exp(),
                (-self.param("kappa2") * x).exp(),
            ]),
            Family::Cir => {
                let n = self.cir_n(x);
                let kappa = self.param("kappa");
                let sigma = self.param("sigma");
                DVector::from_row_slice(&[1.0 - kappa * n - 0.5 * sigma * sigma * n * n])
            }
            Family::GenericGaussianAffine => {
                let (phi, _) = expm_with_integral(&self.b2.transpose(), &self.phi2, x);
                phi * &self.phi2
            }
        })
    }

    /// Affine bond intercept m(x), with m(0) = 0.
    ///
    /// Closed form for the one-factor families; for multi-factor Gaussian
    /// models the risk-neutral drift integral
    /// `int_0^x [ |Sigma^T n|^2 / 2 - <B1, n> ] ds`
    /// is evaluated by adaptive quadrature to 1e-10.
    pub fn bond_m(&self, x: f64) -> Result<f64, ModelError> {
        self.check_maturity(x)?;
        match self.family {
            Family::Merton => {
                let beta = self.param("beta");
                let sigma = self.param("sigma");
                Ok(-beta * x * x / 2.0 + sigma * sigma * x * x * x / 6.0)
            }
            Family::Vasicek => {
                let beta = self.param("beta");
                let kappa = self.param("kappa");
                let sigma = self.param("sigma");
                Ok(-beta * int_n(kappa, x) + 0.5 * sigma * sigma * int_n2(kappa, x))
            }
            Family::Cir => Ok(self.cir_m(x)),
            Family::G2pp | Family::GenericGaussianAffine => {
                let integrand = |s: f64| {
                    let n = self.bond_n(s).expect("s within [0, x]");
                    let stn = self.sigma.transpose() * &n;
                    0.5 * stn.norm_squared() - self.b1.dot(&n)
                };
                adaptive_gk(integrand, 0.0, x, 1e-12, 200_000).map_err(|e| ModelError::InvalidParameter {
                    name: "bond_m quadrature",
                    reason: e.to_string(),
                })
            }
        }
    }

    /// Derivative m'(x) from the same coefficient ODEs.
    pub fn bond_m_prime(&self, x: f64) -> Result<f64, ModelError> {
        self.check_maturity(x)?;
        if self.is_cir() {
            return Ok(-self.param("beta") * self.cir_n(x));
        }
        let n = self.bond_n(x)?;
        let stn = self.sigma.transpose() * &n;
        Ok(0.5 * stn.norm_squared() - self.b1.dot(&n))
    }

    /// Zero-coupon bond price P(t)(x) = exp(m(x) - <n(x), y>).
    pub fn bond_price(&self, x: f64, y: &DVector<f64>) -> Result<f64, ModelError> {
        Ok((self.bond_m(x)? - self.bond_n(x)?.dot(y)).exp())
    }

    /// Instantaneous forward rate at time to maturity x:
    /// r(t)(x) = -m'(x) + <n'(x), y>.
    pub fn forward_rate(&self, x: f64, y: &DVector<f64>) -> Result<f64, ModelError> {
        Ok(-self.bond_m_prime(x)? + self.bond_n_prime(x)?.dot(y))
    }

    /// Rolling-bond volatility loading Sigma^T n(x) on the constant diffusion.
    ///
    /// For CIR this is the loading per unit sqrt(r); the state factor is
    /// applied at simulation time. See [`AffineModelSpec::rolling_bond_vol_at`].
    pub fn rolling_bond_vol(&self, x: f64) -> Result<DVector<f64>, ModelError> {
        Ok(self.sigma.transpose() * self.bond_n(x)?)
    }

    /// State-aware rolling-bond volatility Sigma(y)^T n(x).
    pub fn rolling_bond_vol_at(&self, x: f64, y: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        Ok(self.diffusion_at(y).transpose() * self.bond_n(x)?)
    }

    fn cir_n(&self, x: f64) -> f64 {
        let kappa = self.param("kappa");
        let rho = self.cir_rho().unwrap();
        cir_riccati_n(1.0, kappa, rho, x)
    }

    fn cir_m(&self, x: f64) -> f64 {
        let beta = self.param("beta");
        let kappa = self.param("kappa");
        let sigma = self.param("sigma");
        let rho = self.cir_rho().unwrap();
        cir_riccati_m(beta, sigma, kappa, rho, x)
    }
}

/// Solution n(x) of the Riccati equation n' = theta - kappa n - sigma^2 n^2 / 2
/// with n(0) = 0 and rho = sqrt(kappa^2 + 2 sigma^2 theta) / 2:
///
/// ```text
/// n(x) = theta sinh(rho x) / (rho cosh(rho x) + (kappa/2) sinh(rho x))
/// ```
///
/// evaluated in tanh form so large arguments do not overflow.
pub(crate) fn cir_riccati_n(theta: f64, kappa: f64, rho: f64, x: f64) -> f64 {
    let t = (rho * x).tanh();
    theta * t / (rho + 0.5 * kappa * t)
}

/// The matching intercept m(x) = -beta int_0^x n, normalized so m(0) = 0:
///
/// ```text
/// m(x) = (2 beta / sigma^2) log( rho e^{kappa x / 2} / (rho cosh(rho x) + (kappa/2) sinh(rho x)) )
/// ```
pub(crate) fn cir_riccati_m(beta: f64, sigma: f64, kappa: f64, rho: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    // log(rho cosh + (kappa/2) sinh) = rho x + log((rho + kappa/2)/2) + log1p(c e^{-2 rho x})
    let c = (rho - 0.5 * kappa) / (rho + 0.5 * kappa);
    let log_den = rho * x + ((rho + 0.5 * kappa) / 2.0).ln() + (c * (-2.0 * rho * x).exp()).ln_1p();
    2.0 * beta / (sigma * sigma) * (rho.ln() + 0.5 * kappa * x - log_den)
}

// ---------------------------------------------------------------------------
// Utility parameters
// ---------------------------------------------------------------------------

/// Investment horizon of the reward functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

/// Power-utility preferences: discount `gamma`, consumption weight `a`,
/// bequest weight `b`, and exponent `alpha` (in (0,1), or negative for the
/// square-root-model candidate regime).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UtilityParams {
    pub alpha: f64,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub horizon: Horizon,
}

impl UtilityParams {
    pub fn new(alpha: f64, gamma: f64, a: f64, b: f64, horizon: Horizon) -> Result<Self, ModelError> {
        let u = UtilityParams { alpha, gamma, a, b, horizon };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.alpha == 0.0 || self.alpha >= 1.0 || !self.alpha.is_finite() {
            return Err(ModelError::InvalidUtility(format!(
                "alpha must lie in (0,1) or be negative, got {}",
                self.alpha
            )));
        }
        if self.gamma < 0.0 {
            return Err(ModelError::InvalidUtility("gamma must be nonnegative".into()));
        }
        if self.a < 0.0 || self.b < 0.0 {
            return Err(ModelError::InvalidUtility("a and b must be nonnegative".into()));
        }
        match self.horizon {
            Horizon::Finite(t) => {
                if t <= 0.0 {
                    return Err(ModelError::InvalidUtility("finite horizon must be positive".into()));
                }
                if self.a + self.b <= 0.0 {
                    return Err(ModelError::InvalidUtility("need a + b > 0".into()));
                }
            }
            Horizon::Infinite => {
                if self.a <= 0.0 {
                    return Err(ModelError::InvalidUtility(
                        "infinite horizon requires a > 0 (b is ignored)".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// alpha / (1 - alpha).
    pub fn alpha_bar(&self) -> f64 {
        self.alpha / (1.0 - self.alpha)
    }

    /// a^{1/(1-alpha)} (0 when a = 0).
    pub fn a_pow(&self) -> f64 {
        self.a.powf(1.0 / (1.0 - self.alpha))
    }

    /// b^{1/(1-alpha)} (0 when b = 0).
    pub fn b_pow(&self) -> f64 {
        self.b.powf(1.0 / (1.0 - self.alpha))
    }

    pub fn horizon_t(&self) -> Option<f64> {
        match self.horizon {
            Horizon::Finite(t) => Some(t),
            Horizon::Infinite => None,
        }
    }
}

// ---------------------------------------------------------------------------
// JSON schema: { "family": ..., "params": { name -> number }, "t_star": ... }
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelSpecJson {
    family: String,
    params: BTreeMap<String, f64>,
    #[serde(default = "default_t_star")]
    t_star: f64,
}

fn default_t_star() -> f64 {
    DEFAULT_T_STAR
}

impl TryFrom<ModelSpecJson> for AffineModelSpec {
    type Error = ModelError;

    fn try_from(j: ModelSpecJson) -> Result<Self, ModelError> {
        let get = |key: &str| -> Result<f64, ModelError> {
            j.params.get(key).copied().ok_or(ModelError::InvalidParameter {
                name: "params",
                reason: format!("missing key '{key}' for family '{}'", j.family),
            })
        };
        let spec = match j.family.as_str() {
            "vasicek" => make_vasicek(get("beta")?, get("kappa")?, get("sigma")?, get("lambda")?)?,
            "merton" => {
                let kappa = j.params.get("kappa").copied().unwrap_or(0.0);
                if kappa != 0.0 {
                    return Err(ModelError::InvalidParameter {
                        name: "kappa",
                        reason: "merton family requires kappa = 0".into(),
                    });
                }
                make_vasicek(get("beta")?, 0.0, get("sigma")?, get("lambda")?)?
            }
            "cir" => make_cir(get("beta")?, get("kappa")?, get("sigma")?, get("lambda_bar")?)?,
            "g2pp" => make_g2pp(
                get("kappa1")?,
                get("kappa2")?,
                get("sigma1")?,
                get("sigma2")?,
                get("rho")?,
                get("lambda1")?,
                get("lambda2")?,
            )?,
            other => {
                return Err(ModelError::UnsupportedFamily {
                    family: match other {
                        "generic_gaussian_affine" => "generic_gaussian_affine (not JSON-constructible)",
                        _ => "unknown",
                    },
                })
            }
        };
        Ok(spec.with_t_star(j.t_star))
    }
}

impl Serialize for AffineModelSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let j = ModelSpecJson {
            family: self.family.name().to_string(),
            params: self.params.clone(),
            t_star: self.t_star,
        };
        j.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AffineModelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let j = ModelSpecJson::deserialize(deserializer)?;
        AffineModelSpec::try_from(j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vasicek_desk() -> AffineModelSpec {
        make_vasicek(0.05, 0.2, 0.01, 0.1).unwrap()
    }

    fn g2pp_desk() -> AffineModelSpec {
        make_g2pp(0.1, 0.5, 0.01, 0.02, -0.5, 0.1, 0.1).unwrap()
    }

    /// Composite Simpson rule; kept here as the independent oracle for the
    /// closed-form integrals.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n_half: usize) -> f64 {
        let n = 2 * n_half;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn vasicek_fields_transcribed() {
        let spec = vasicek_desk();
        assert_eq!(spec.b2[(0, 0)], -0.2);
        assert_eq!(spec.b1[0], 0.05);
        assert_eq!(spec.phi1, 0.0);
        assert_eq!(spec.phi2[0], 1.0);
        assert_eq!(spec.family, Family::Vasicek);
        assert!(spec.is_elliptic());
    }

    #[test]
    fn kappa_zero_gives_merton_family() {
        let spec = make_vasicek(0.05, 0.0, 0.01, 0.1).unwrap();
        assert_eq!(spec.family, Family::Merton);
    }

    #[test]
    fn zero_sigma_rejected() {
        assert!(make_vasicek(0.05, 0.2, 0.0, 0.1).is_err());
        assert!(make_vasicek(0.05, 0.2, -0.01, 0.1).is_err());
    }

    #[test]
    fn cir_feller_flag() {
        let ok = make_cir(0.04, 0.3, 0.1, 0.2).unwrap();
        assert_eq!(ok.feller_ok(), Some(true)); // 2*0.04 = 0.08 >= 0.01
        let warn = make_cir(0.004, 0.3, 0.2, 0.2).unwrap();
        assert_eq!(warn.feller_ok(), Some(false)); // 0.008 < 0.04
    }

    #[test]
    fn cir_rho_value() {
        // rho = (kappa^2 + 2 sigma^2)^{1/2} / 2 evaluated directly
        let spec = make_cir(0.04, 0.3, 0.1, 0.2).unwrap();
        let expected = 0.5 * (0.3f64 * 0.3 + 2.0 * 0.01).sqrt();
        assert!((spec.cir_rho().unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.5 * 0.11f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn g2pp_sigma_matrix() {
        let spec = g2pp_desk();
        assert!((spec.sigma[(1, 1)] - 0.02 * 0.75f64.sqrt()).abs() < 1e-15);
        assert!((spec.sigma[(1, 0)] - (-0.5 * 0.02)).abs() < 1e-15);
        assert_eq!(spec.sigma[(0, 1)], 0.0);

        let diag = make_g2pp(0.1, 0.5, 0.01, 0.02, 0.0, 0.1, 0.1).unwrap();
        assert_eq!(diag.sigma[(1, 0)], 0.0);
        assert!((diag.sigma[(1, 1)] - 0.02).abs() < 1e-15);

        assert!(make_g2pp(0.1, 0.5, 0.01, 0.02, 1.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn bond_n_vasicek_closed_form() {
        let spec = make_vasicek(0.05, 0.1, 0.01, 0.1).unwrap();
        let expected = (1.0 - (-0.1f64).exp()) / 0.1; // ~0.9516258
        assert!((spec.bond_n(1.0).unwrap()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn bond_n_zero_is_zero() {
        for spec in [
            vasicek_desk(),
            g2pp_desk(),
            make_cir(0.04, 0.3, 0.1, 0.2).unwrap(),
            make_vasicek(0.05, 0.0, 0.01, 0.1).unwrap(),
        ] {
            assert_eq!(spec.bond_n(0.0).unwrap().norm(), 0.0);
            assert_eq!(spec.bond_m(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn bond_n_small_kappa_matches_merton() {
        let spec = make_vasicek(0.05, 1e-8, 0.01, 0.1).unwrap();
        assert!((spec.bond_n(2.0).unwrap()[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn maturity_out_of_range_rejected() {
        let spec = vasicek_desk();
        assert!(spec.bond_n(31.0).is_err());
        assert!(spec.bond_n(-0.1).is_err());
    }

    #[test]
    fn bond_m_vasicek_matches_simpson_oracle() {
        let spec = vasicek_desk();
        let kappa = 0.2;
        let n = |s: f64| (1.0 - (-kappa * s as f64).exp()) / kappa;
        for &x in &[0.5, 1.0, 5.0, 17.0] {
            let oracle = -0.05 * simpson(n, 0.0, x, 400)
                + 0.5 * 0.01 * 0.01 * simpson(|s| n(s) * n(s), 0.0, x, 400);
            assert!(
                (spec.bond_m(x).unwrap() - oracle).abs() < 1e-9,
                "x = {x}: {} vs {oracle}",
                spec.bond_m(x).unwrap()
            );
        }
    }

    #[test]
    fn bond_m_merton_closed_form_and_limit() {
        // The kappa -> 0 limit of the Vasicek integrals fixes the closed form
        // as -beta x^2/2 + sigma^2 x^3/6.
        let merton = make_vasicek(0.05, 0.0, 0.01, 0.1).unwrap();
        let x = 2.0;
        let expected = -0.05 * x * x / 2.0 + 0.01 * 0.01 * x * x * x / 6.0;
        assert!((merton.bond_m(x).unwrap() - expected).abs() < 1e-15);

        let nearly = make_vasicek(0.05, 1e-8, 0.01, 0.1).unwrap();
        for &x in &[0.5, 2.0, 10.0] {
            assert!((merton.bond_m(x).unwrap() - nearly.bond_m(x).unwrap()).abs() < 1e-5);
            assert!((merton.bond_n(x).unwrap() - nearly.bond_n(x).unwrap()).norm() < 1e-5);
            assert!(
                (merton.rolling_bond_vol(x).unwrap() - nearly.rolling_bond_vol(x).unwrap()).norm() < 1e-5
            );
        }
    }

    #[test]
    fn bond_m_g2pp_matches_simpson_oracle() {
        let spec = g2pp_desk();
        let (k1, k2, s1, s2, rho) = (0.1, 0.5, 0.01, 0.02, -0.5f64);
        let n1 = |s: f64| (1.0 - (-k1 * s).exp()) / k1;
        let n2 = |s: f64| (1.0 - (-k2 * s).exp()) / k2;
        let integrand = |s: f64| {
            let a = s1 * n1(s) + rho * s2 * n2(s);
            let b = s2 * (1.0 - rho * rho).sqrt() * n2(s);
            0.5 * (a * a + b * b)
        };
        for &x in &[1.0, 5.0, 12.0] {
            let oracle = simpson(integrand, 0.0, x, 600);
            assert!(
                (spec.bond_m(x).unwrap() - oracle).abs() < 1e-9,
                "x = {x}"
            );
        }
    }

    #[test]
    fn cir_bond_price_terminal_and_monotone() {
        let spec = make_cir(0.04, 0.3, 0.1, 0.2).unwrap();
        assert_eq!(spec.cir_n(0.0), 0.0);
        assert_eq!(spec.cir_m(0.0), 0.0);
        // n increasing and bounded
        let mut prev = 0.0;
        for i in 1..=60 {
            let n = spec.cir_n(i as f64 * 0.5);
            assert!(n >= prev);
            prev = n;
        }
        // m' = -beta n cross-check against finite differences
        let h = 1e-6;
        for &x in &[0.5, 2.0, 10.0] {
            let fd = (spec.cir_m(x + h) - spec.cir_m(x - h)) / (2.0 * h);
            assert!((fd + 0.04 * spec.cir_n(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn rolling_bond_vol_composition() {
        let spec = vasicek_desk();
        assert_eq!(spec.rolling_bond_vol(0.0).unwrap().norm(), 0.0);
        let n1 = spec.bond_n(1.0).unwrap()[0];
        assert!((spec.rolling_bond_vol(1.0).unwrap()[0] - 0.01 * n1).abs() < 1e-15);

        // G2++: Sigma^T (n1, n2)
        let g2 = g2pp_desk();
        let n = g2.bond_n(1.0).unwrap();
        let vol = g2.rolling_bond_vol(1.0).unwrap();
        let expected0 = 0.01 * n[0] + (-0.5) * 0.02 * n[1];
        let expected1 = 0.02 * 0.75f64.sqrt() * n[1];
        assert!((vol[0] - expected0).abs() < 1e-15);
        assert!((vol[1] - expected1).abs() < 1e-15);
    }

    #[test]
    fn g2pp_vol_matches_log_price_finite_difference() {
        let g2 = g2pp_desk();
        let y = DVector::from_row_slice(&[0.02, 0.01]);
        let x = 1.0;
        let h = 1e-5;
        let vol = g2.rolling_bond_vol(x).unwrap();
        // sigma_tilde = -Sigma^T D_y log F; D_y log F = -n(x)
        for i in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            let d = (g2.bond_price(x, &yp).unwrap().ln() - g2.bond_price(x, &ym).unwrap().ln()) / (2.0 * h);
            // D_y log F finite difference should equal -n_i
            assert!((d + g2.bond_n(x).unwrap()[i]).abs() < 1e-6);
        }
        let stn = g2.sigma.transpose() * g2.bond_n(x).unwrap();
        assert!((&vol - &stn).norm() < 1e-15);
    }

    #[test]
    fn bond_price_at_zero_maturity_is_one() {
        let spec = vasicek_desk();
        for &r in &[0.0, 0.03, 0.2, -0.05] {
            let y = DVector::from_row_slice(&[r]);
            assert_eq!(spec.bond_price(0.0, &y).unwrap(), 1.0);
        }
    }

    #[test]
    fn n_increasing_and_bounded() {
        let spec = vasicek_desk();
        let mut prev = -1.0;
        for i in 0..=100 {
            let x = i as f64 * 0.1;
            let n = spec.bond_n(x).unwrap()[0];
            assert!(n > prev);
            assert!(n <= 1.0 / 0.2 + 1e-12);
            prev = n;
        }
    }

    #[test]
    fn forward_rate_reproduces_short_rate_at_zero() {
        let spec = vasicek_desk();
        let y = DVector::from_row_slice(&[0.03]);
        // r(t)(0) = short rate
        assert!((spec.forward_rate(0.0, &y).unwrap() - 0.03).abs() < 1e-12);
    }

    #[test]
    fn utility_validation() {
        assert!(UtilityParams::new(0.5, 0.02, 1.0, 1.0, Horizon::Finite(5.0)).is_ok());
        assert!(UtilityParams::new(0.0, 0.02, 1.0, 1.0, Horizon::Finite(5.0)).is_err());
        assert!(UtilityParams::new(1.0, 0.02, 1.0, 1.0, Horizon::Finite(5.0)).is_err());
        assert!(UtilityParams::new(0.5, 0.02, 0.0, 0.0, Horizon::Finite(5.0)).is_err());
        assert!(UtilityParams::new(0.5, 0.02, 0.0, 0.0, Horizon::Infinite).is_err());
        assert!(UtilityParams::new(-1.0, 0.05, 1.0, 0.0, Horizon::Finite(2.0)).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let spec = vasicek_desk().with_t_star(20.0);
        let s = serde_json::to_string(&spec).unwrap();
        let back: AffineModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back.family, Family::Vasicek);
        assert_eq!(back.t_star, 20.0);
        assert_eq!(back.b2[(0, 0)], spec.b2[(0, 0)]);

        let g2 = g2pp_desk();
        let s = serde_json::to_string(&g2).unwrap();
        let back: AffineModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back.sigma, g2.sigma);

        let parsed: AffineModelSpec = serde_json::from_str(
            r#"{"family":"vasicek","params":{"beta":0.05,"kappa":0.2,"sigma":0.01,"lambda":0.1},"t_star":30.0}"#,
        )
        .unwrap();
        assert_eq!(parsed.b1[0], 0.05);
    }

    #[test]
    fn json_rejects_bad_family_and_missing_params() {
        assert!(serde_json::from_str::<AffineModelSpec>(
            r#"{"family":"hull_white","params":{},"t_star":30.0}"#
        )
        .is_err());
        assert!(serde_json::from_str::<AffineModelSpec>(
            r#"{"family":"vasicek","params":{"beta":0.05},"t_star":30.0}"#
        )
        .is_err());
    }
}
