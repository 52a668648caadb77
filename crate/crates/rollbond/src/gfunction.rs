//! The value-function kernel G(t, y) for affine models.
//!
//! For Gaussian affine factors the drift-adjusted process in the
//! Feynman-Kac representation is Gaussian, so the running exponent
//! `int_t^u g(Y~(k)) dk` has Gaussian law and
//!
//! ```text
//! G(t,y) = a^{1/(1-alpha)} int_t^T eta(t,u,y) du + b^{1/(1-alpha)} eta(t,T,y)
//! eta(t,u,y) = exp( m1(t,u) + <m2(t,u), y> + sigma2(t,u) / 2 )
//! ```
//!
//! where, writing s = u - t, abar = alpha/(1-alpha), and B1~ = B1 + Sigma lambda/(1-alpha),
//!
//! ```text
//! m2(s)     = abar int_0^s exp(B2^T v) phi2 dv
//! sigma2(s) = int_0^s <m2(k), Sigma Sigma^T m2(k)> dk        (variance part)
//! m1(s)     = int_0^s <B1~, m2(k)> dk + g0 s                 (mean part)
//! ```
//!
//! The square-root (CIR) model replaces the Gaussian functional with the
//! exact exponential-affine moment generating function of the integrated
//! rate; its output is a candidate value (no verification guarantee) and
//! is flagged as such.

use nalgebra::{DMatrix, DVector};

use crate::error::KernelError;
use crate::linalg::expm_with_integral;
use crate::models::{cir_riccati_m, cir_riccati_n, n_kappa, AffineModelSpec, Family, Horizon, UtilityParams};
use crate::quad::{adaptive_gk_vec, gl16_composite, gl16_nodes};

const REL_TOL: f64 = 1e-8;
const MAX_EVALS: usize = 1_000_000;
/// Natural-log drop below the integrand's peak at which the improper
/// integral is truncated (e^-25 ~ 1.4e-11 relative tail).
const LOG_TAIL_DROP: f64 = 25.0;

/// A kernel evaluation: the value, its logarithmic gradient, and flags.
#[derive(Debug, Clone)]
pub struct GValue {
    pub value: f64,
    /// D_y G / G.
    pub grad_over_g: DVector<f64>,
    pub horizon: Horizon,
    /// True when no verification theorem backs the value (square-root model,
    /// or any negative-alpha regime).
    pub candidate: bool,
    pub convergence: Option<ConvergenceReport>,
}

/// Diagnostics for the infinite-horizon improper integral.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// Estimated asymptotic growth rate of m1(0,s) + sigma2(0,s)/2.
    pub rate: f64,
    /// Truncation point of the improper integral.
    pub truncation: f64,
    /// Relative bound on the discarded tail.
    pub tail_bound: f64,
    pub passed: bool,
}

/// Dissipativity / integrability report for the exponential-moment bound
/// used by the infinite-horizon existence argument.
#[derive(Debug, Clone)]
pub struct Condition87Report {
    /// Dissipativity constant: smallest eigenvalue of -(B2 + B2^T)/2.
    pub l2: f64,
    /// Asymptotic growth rate of log kappa(t, n).
    pub rate: f64,
    /// Sampled envelope values (t, kappa(t, n)).
    pub envelope: Vec<(f64, f64)>,
    /// Whether int sqrt(t kappa(t,n)) dt is finite.
    pub integrable: bool,
    pub passed: bool,
}

// ---------------------------------------------------------------------------
// Gaussian kernel coefficients
// ---------------------------------------------------------------------------

enum M2Form {
    /// Componentwise (1-e^{-kappa_i s})/kappa_i loadings, scaled by coeff_i.
    Diag { kappas: Vec<f64>, coeffs: Vec<f64> },
    /// General matrix-exponential integral coeff * int_0^s exp(B2^T v) c1 dv.
    Generic { b2t: DMatrix<f64>, c1: DVector<f64> },
}

/// Log-moment engine for `E exp( int_0^s [ <c1, X(k)> + c0 ] dk )` where `X`
/// is the Gaussian process `dX = (drift + B2 X) dk + Sigma dW`.
pub(crate) struct GaussKernel {
    form: M2Form,
    sigma_t: DMatrix<f64>,
    drift: DVector<f64>,
    c0: f64,
    b2: DMatrix<f64>,
    /// Panel width for the inner cumulative integrals.
    panel: f64,
}

impl GaussKernel {
    fn new(spec: &AffineModelSpec, drift: DVector<f64>, c1_mult: f64, c0: f64) -> Self {
        let form = match spec.family {
            Family::Merton => M2Form::Diag { kappas: vec![0.0], coeffs: vec![c1_mult] },
            Family::Vasicek => M2Form::Diag {
                kappas: vec![spec.params["kappa"]],
                coeffs: vec![c1_mult],
            },
            Family::G2pp => M2Form::Diag {
                kappas: vec![spec.params["kappa1"], spec.params["kappa2"]],
                coeffs: vec![c1_mult, c1_mult],
            },
            Family::GenericGaussianAffine => M2Form::Generic {
                b2t: spec.b2.transpose(),
                c1: &spec.phi2 * c1_mult,
            },
            Family::Cir => unreachable!("CIR uses its own kernel"),
        };
        let panel = 1.0 / (1.0 + spec.b2.amax());
        GaussKernel {
            form,
            sigma_t: spec.sigma.transpose(),
            drift,
            c0,
            b2: spec.b2.clone(),
            panel,
        }
    }

    /// The kernel driving G: c1 = abar * phi2, c0 = g0, tilde drift.
    pub(crate) fn for_g(spec: &AffineModelSpec, util: &UtilityParams) -> Self {
        let one_m = 1.0 - util.alpha;
        let drift = &spec.b1 + (&spec.sigma * &spec.lambda) / one_m;
        let g0 = (util.alpha * spec.phi1
            + util.alpha / (2.0 * one_m) * spec.lambda.norm_squared()
            - util.gamma)
            / one_m;
        GaussKernel::new(spec, drift, util.alpha_bar(), g0)
    }

    /// The doubled kernel bounding `E exp(int 2 g(Y))` under the physical
    /// dynamics, used by the exponential-moment condition.
    fn for_doubled_g(spec: &AffineModelSpec, util: &UtilityParams) -> Self {
        let one_m = 1.0 - util.alpha;
        let drift = &spec.b1 + &spec.sigma * &spec.lambda;
        let g0 = (util.alpha * spec.phi1
            + util.alpha / (2.0 * one_m) * spec.lambda.norm_squared()
            - util.gamma)
            / one_m;
        GaussKernel::new(spec, drift, 2.0 * util.alpha_bar(), 2.0 * g0)
    }

    pub(crate) fn m2(&self, s: f64) -> DVector<f64> {
        match &self.form {
            M2Form::Diag { kappas, coeffs } => DVector::from_iterator(
                kappas.len(),
                kappas.iter().zip(coeffs).map(|(&k, &c)| c * n_kappa(k, s)),
            ),
            M2Form::Generic { b2t, c1 } => {
                if s == 0.0 {
                    DVector::zeros(c1.len())
                } else {
                    expm_with_integral(b2t, c1, s).1
                }
            }
        }
    }

    /// Mean and variance parts (m1, sigma2) at elapsed time s.
    pub(crate) fn moments(&self, s: f64) -> (f64, f64) {
        if s == 0.0 {
            return (0.0, 0.0);
        }
        let sigma2 = gl16_composite(
            |k| {
                let m2 = self.m2(k);
                (&self.sigma_t * &m2).norm_squared()
            },
            0.0,
            s,
            self.panel,
        );
        let mean_drift = gl16_composite(|k| self.drift.dot(&self.m2(k)), 0.0, s, self.panel);
        (mean_drift + self.c0 * s, sigma2)
    }

    /// log eta(s, 0) = m1 + sigma2/2 (the y-independent exponent part).
    fn phi(&self, s: f64) -> f64 {
        let (m1, s2) = self.moments(s);
        m1 + 0.5 * s2
    }

    fn log_eta(&self, s: f64, y: &DVector<f64>) -> f64 {
        self.phi(s) + self.m2(s).dot(y)
    }

    /// Analytic asymptotic rate of m1 + sigma2/2 when B2 is stable, i.e.
    /// the value of the exponent integrand at the bounded limit of m2.
    fn analytic_rate(&self) -> Option<f64> {
        let eigs = self.b2.complex_eigenvalues();
        if eigs.iter().any(|e| e.re >= -1e-12) {
            return None;
        }
        // m_inf solves B2^T m = -c1.
        let c1 = self.m2_linear_coeff();
        let m_inf = self.b2.transpose().lu().solve(&(-&c1))?;
        let v = (&self.sigma_t * &m_inf).norm_squared();
        Some(0.5 * v + self.drift.dot(&m_inf) + self.c0)
    }

    fn m2_linear_coeff(&self) -> DVector<f64> {
        match &self.form {
            M2Form::Diag { coeffs, .. } => DVector::from_row_slice(coeffs),
            M2Form::Generic { c1, .. } => c1.clone(),
        }
    }

    /// Asymptotic rate estimate, falling back to slope probes of phi when
    /// B2 is not strictly stable (drifting factors).
    fn growth_rate(&self) -> f64 {
        if let Some(rate) = self.analytic_rate() {
            return rate;
        }
        let probes = [10.0, 20.0, 40.0, 80.0];
        let phis: Vec<f64> = probes.iter().map(|&s| self.phi(s)).collect();
        let slopes: Vec<f64> = (1..probes.len())
            .map(|i| (phis[i] - phis[i - 1]) / (probes[i] - probes[i - 1]))
            .collect();
        let increasing = slopes.windows(2).all(|w| w[1] >= w[0] - 1e-14);
        let last = *slopes.last().unwrap();
        if increasing && last > 0.0 {
            last
        } else {
            last
        }
    }
}

// ---------------------------------------------------------------------------
// CIR kernel coefficients (candidate regime, alpha < 0)
// ---------------------------------------------------------------------------

pub(crate) struct CirKernel {
    beta: f64,
    sigma: f64,
    kappa_tilde: f64,
    gamma_tilde: f64,
    q: f64,
    gamma_disc: f64,
}

impl CirKernel {
    pub(crate) fn new(spec: &AffineModelSpec, util: &UtilityParams) -> Result<Self, KernelError> {
        if !spec.is_cir() {
            return Err(KernelError::BadRegime(format!(
                "square-root kernel requires the cir family, got {}",
                spec.family.name()
            )));
        }
        if util.alpha >= 0.0 {
            return Err(KernelError::BadRegime(
                "square-root kernel is computed only for alpha < 0 (candidate regime)".into(),
            ));
        }
        let beta = spec.params["beta"];
        let kappa = spec.params["kappa"];
        let sigma = spec.params["sigma"];
        let lambda = spec.params["lambda_bar"];
        let one_m = 1.0 - util.alpha;
        let kappa_tilde = kappa - lambda * sigma / one_m;
        // Linear coefficient of -g: q = |alpha|/(1-alpha) [1 + lambda^2/(2(1-alpha))]
        let q = util.alpha.abs() / one_m * (1.0 + lambda * lambda / (2.0 * one_m));
        let gamma_tilde = 0.5 * (kappa_tilde * kappa_tilde + 2.0 * sigma * sigma * q).sqrt();
        Ok(CirKernel {
            beta,
            sigma,
            kappa_tilde,
            gamma_tilde,
            q,
            gamma_disc: util.gamma / one_m,
        })
    }

    pub(crate) fn kappa_tilde(&self) -> f64 {
        self.kappa_tilde
    }

    /// m2(s) = -n~(s) <= 0.
    pub(crate) fn m2(&self, s: f64) -> f64 {
        -cir_riccati_n(self.q, self.kappa_tilde, self.gamma_tilde, s)
    }

    /// m1(s) = m~(s) - gamma s / (1 - alpha).
    pub(crate) fn m1(&self, s: f64) -> f64 {
        cir_riccati_m(self.beta, self.sigma, self.kappa_tilde, self.gamma_tilde, s) - self.gamma_disc * s
    }

    fn log_eta(&self, s: f64, r: f64) -> f64 {
        self.m1(s) + self.m2(s) * r
    }

    /// Exact asymptotic rate of m1(s).
    fn growth_rate(&self) -> f64 {
        2.0 * self.beta / (self.sigma * self.sigma) * (0.5 * self.kappa_tilde - self.gamma_tilde)
            - self.gamma_disc
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// The drift function of the kernel PDE:
/// g(y) = [ alpha r(y) + alpha ||lambda(y)||^2 / (2(1-alpha)) - gamma ] / (1-alpha).
pub fn g_drift_function(spec: &AffineModelSpec, util: &UtilityParams, y: &DVector<f64>) -> Result<f64, KernelError> {
    util.validate()?;
    let one_m = 1.0 - util.alpha;
    let lam = spec.lambda_at(y);
    Ok((util.alpha * spec.short_rate(y) + util.alpha / (2.0 * one_m) * lam.norm_squared() - util.gamma) / one_m)
}

/// Affine split g(y) = g0 + <g1, y>.
pub fn g_affine_split(spec: &AffineModelSpec, util: &UtilityParams) -> Result<(f64, DVector<f64>), KernelError> {
    util.validate()?;
    let one_m = 1.0 - util.alpha;
    if spec.is_cir() {
        let lambda = spec.params["lambda_bar"];
        let g1 = util.alpha_bar() * (1.0 + lambda * lambda / (2.0 * one_m));
        Ok((-util.gamma / one_m, DVector::from_row_slice(&[g1])))
    } else {
        let g0 = (util.alpha * spec.phi1 + util.alpha / (2.0 * one_m) * spec.lambda.norm_squared() - util.gamma)
            / one_m;
        Ok((g0, &spec.phi2 * util.alpha_bar()))
    }
}

fn check_order(t: f64, u: f64) -> Result<(), KernelError> {
    if t > u {
        Err(KernelError::BadTimeOrder { t, u })
    } else {
        Ok(())
    }
}

/// The linear exponent coefficient m2(t,u) of the kernel.
pub fn m2_coefficient(
    spec: &AffineModelSpec,
    util: &UtilityParams,
    t: f64,
    u: f64,
) -> Result<DVector<f64>, KernelError> {
    util.validate()?;
    check_order(t, u)?;
    if spec.is_cir() {
        let k = CirKernel::new(spec, util)?;
        Ok(DVector::from_row_slice(&[k.m2(u - t)]))
    } else {
        Ok(GaussKernel::for_g(spec, util).m2(u - t))
    }
}

/// Cross-check path: integrate the backward coefficient ODE
/// `d m2 / d tau = B2^T m2 + abar phi2`, `m2(0) = 0`, with classical RK4.
///
/// Gaussian families only; this route is independent of the closed
/// matrix-exponential integral.
pub fn m2_coefficient_ode(
    spec: &AffineModelSpec,
    util: &UtilityParams,
    t: f64,
    u: f64,
    steps: usize,
) -> Result<DVector<f64>, KernelError> {
    util.validate()?;
    check_order(t, u)?;
    if spec.is_cir() {
        return Err(KernelError::BadRegime("coefficient ODE path applies to Gaussian families".into()));
    }
    let b2t = spec.b2.transpose();
    let src = &spec.phi2 * util.alpha_bar();
    let h = (u - t) / steps.max(1) as f64;
    let mut m = DVector::zeros(spec.dim_factor);
    let rhs = |v: &DVector<f64>| &b2t * v + &src;
    for _ in 0..steps.max(1) {
        let k1 = rhs(&m);
        let k2 = rhs(&(&m + &k1 * (h / 2.0)));
        let k3 = rhs(&(&m + &k2 * (h / 2.0)));
        let k4 = rhs(&(&m + &k3 * h));
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(m)
}

/// Mean and variance exponent parts (m1, sigma2) of the kernel.
///
/// For the square-root model the moment generating function is exact and
/// sigma2 is reported as zero.
pub fn m1_sigma2(
    spec: &AffineModelSpec,
    util: &UtilityParams,
    t: f64,
    u: f64,
) -> Result<(f64, f64), KernelError> {
    util.validate()?;
    check_order(t, u)?;
    if spec.is_cir() {
        let k = CirKernel::new(spec, util)?;
        Ok((k.m1(u - t), 0.0))
    } else {
        Ok(GaussKernel::for_g(spec, util).moments(u - t))
    }
}

fn finite_t(util: &UtilityParams) -> Result<f64, KernelError> {
    util.horizon_t().ok_or_else(|| {
        KernelError::BadRegime("finite-horizon kernel requires Horizon::Finite".into())
    })
}

/// Assemble (G, D_y G) from node integrals plus the bequest term.
fn assemble_g(
    util: &UtilityParams,
    horizon: Horizon,
    integral: Option<(f64, DVector<f64>)>,
    bequest: Option<(f64, DVector<f64>)>,
    dim: usize,
    candidate: bool,
    convergence: Option<ConvergenceReport>,
) -> Result<GValue, KernelError> {
    let mut g = 0.0;
    let mut grad = DVector::zeros(dim);
    if let Some((v, dv)) = integral {
        g += util.a_pow() * v;
        grad += dv * util.a_pow();
    }
    if let Some((v, dv)) = bequest {
        g += util.b_pow() * v;
        grad += dv * util.b_pow();
    }
    if !(g.is_finite() && g > 0.0) {
        return Err(KernelError::NonPositive { value: g });
    }
    Ok(GValue {
        value: g,
        grad_over_g: grad / g,
        horizon,
        candidate,
        convergence,
    })
}

/// Finite-horizon kernel for Gaussian affine families (alpha in (0,1)).
pub fn g_finite(
    spec: &AffineModelSpec,
    util: &UtilityParams,
    t: f64,
    y: &DVector<f64>,
) -> Result<GValue, KernelError> {
    util.validate()?;
    if spec.is_cir() {
        return g_cir(spec, util, t, y[0]);
    }
    if util.alpha <= 0.0 {
        return Err(KernelError::BadRegime(
            "finite-horizon Gaussian kernel requires alpha in (0,1)".into(),
        ));
    }
    let t_end = finite_t(util)?;
    check_order(t, t_end)?;
    let kernel = GaussKernel::for_g(spec, util);
    let tau = t_end - t;
    let n = spec.dim_factor;

    let bequest = if util.b > 0.0 {
        let eta = kernel.log_eta(tau, y).exp();
        Some((eta, kernel.m2(tau) * eta))
    } else {
        None
    };
    let integral = if util.a > 0.0 && tau > 0.0 {
        let f = |s: f64, out: &mut [f64]| {
            let m2 = kernel.m2(s);
            let eta = (kernel.phi(s) + m2.dot(y)).exp();
            out[0] = eta;
            for i in 0..n {
                out[1 + i] = m2[i] * eta;
            }
        };
        let vals = adaptive_gk_vec(&f, 0.0, tau, 1 + n, REL_TOL, MAX_EVALS)?;
        Some((vals[0], DVector::from_row_slice(&vals[1..])))
    } else {
        None
    };
    assemble_g(util, util.horizon, integral, bequest, n, false, None)
}

/// Finite-horizon candidate kernel for the square-root model (alpha < 0).
pub fn g_cir(spec: &AffineModelSpec, util: &UtilityParams, t: f64, r: f64) -> Result<GValue, KernelError> {
    util.validate()?;
    if r < 0.0 {
        return Err(KernelError::BadRegime(format!("short rate must be nonnegative, got {r}")));
    }
    let t_end = finite_t(util)?;
    check_order(t, t_end)?;
    let kernel = CirKernel::new(spec, util)?;
    let tau = t_end - t;

    let bequest = if util.b > 0.0 {
        let eta = kernel.log_eta(tau, r).exp();
        Some((eta, DVector::from_row_slice(&[kernel.m2(tau) * eta])))
    } else {
        None
    };
    let integral = if util.a > 0.0 && tau > 0.0 {
        let f = |s: f64, out: &mut [f64]| {
            let eta = kernel.log_eta(s, r).exp();
            out[0] = eta;
            out[1] = kernel.m2(s) * eta;
        };
        let vals = adaptive_gk_vec(&f, 0.0, tau, 2, REL_TOL, MAX_EVALS)?;
        Some((vals[0], DVector::from_row_slice(&[vals[1]])))
    } else {
        None
    };
    assemble_g(util, util.horizon, integral, bequest, 1, true, None)
}

/// Find the truncation point where the log-integrand envelope has dropped
/// [`LOG_TAIL_DROP`] below its running maximum.
fn find_truncation<F: Fn(f64) -> f64>(envelope: F, rate: f64) -> f64 {
    let step = (LOG_TAIL_DROP / rate.abs().max(1e-3) / 50.0).clamp(0.05, 10.0);
    let mut peak = envelope(0.0);
    let mut s = step;
    while s < 50_000.0 {
        let e = envelope(s);
        if e > peak {
            peak = e;
        } else if e <= peak - LOG_TAIL_DROP {
            return s;
        }
        s += step;
    }
    50_000.0
}

/// Infinite-horizon kernel G(y) = a^{1/(1-alpha)} int_0^inf eta(s, y) ds.
///
/// Fails with [`KernelError::DivergentKernel`] when the estimated asymptotic
/// rate of the log-integrand is nonnegative.
pub fn g_infinite(spec: &AffineModelSpec, util: &UtilityParams, y: &DVector<f64>) -> Result<GValue, KernelError> {
    util.validate()?;
    if util.horizon != Horizon::Infinite {
        return Err(KernelError::BadRegime("g_infinite requires Horizon::Infinite".into()));
    }
    let n = spec.dim_factor;

    enum K {
        Gauss(GaussKernel),
        Cir(CirKernel),
    }
    let (kernel, candidate) = if spec.is_cir() {
        if y[0] < 0.0 {
            return Err(KernelError::BadRegime(format!("short rate must be nonnegative, got {}", y[0])));
        }
        (K::Cir(CirKernel::new(spec, util)?), true)
    } else {
        if util.alpha <= 0.0 {
            return Err(KernelError::BadRegime(
                "infinite-horizon Gaussian kernel requires alpha in (0,1)".into(),
            ));
        }
        (K::Gauss(GaussKernel::for_g(spec, util)), false)
    };

    let rate = match &kernel {
        K::Gauss(k) => k.growth_rate(),
        K::Cir(k) => k.growth_rate(),
    };
    if rate >= 0.0 {
        return Err(KernelError::DivergentKernel { rate });
    }

    let y_norm = y.norm();
    let envelope = |s: f64| match &kernel {
        K::Gauss(k) => k.phi(s) + k.m2(s).norm() * y_norm,
        K::Cir(k) => k.m1(s) + k.m2(s).abs() * y_norm,
    };
    let s_max = find_truncation(envelope, rate);

    let f = |s: f64, out: &mut [f64]| match &kernel {
        K::Gauss(k) => {
            let m2 = k.m2(s);
            let eta = (k.phi(s) + m2.dot(y)).exp();
            out[0] = eta;
            for i in 0..n {
                out[1 + i] = m2[i] * eta;
            }
        }
        K::Cir(k) => {
            let eta = k.log_eta(s, y[0]).exp();
            out[0] = eta;
            out[1] = k.m2(s) * eta;
        }
    };

    // Integrate in geometrically growing chunks so the adaptive rule spends
    // its budget near the head where the integrand lives.
    let mut total = vec![0.0; 1 + n];
    let mut lo = 0.0;
    let mut width = 1.0;
    while lo < s_max {
        let hi = (lo + width).min(s_max);
        let vals = adaptive_gk_vec(&f, lo, hi, 1 + n, REL_TOL, MAX_EVALS)?;
        for (acc, v) in total.iter_mut().zip(&vals) {
            *acc += v;
        }
        lo = hi;
        width *= 2.0;
    }

    let report = ConvergenceReport {
        rate,
        truncation: s_max,
        tail_bound: (-LOG_TAIL_DROP).exp(),
        passed: true,
    };
    assemble_g(
        util,
        Horizon::Infinite,
        Some((total[0], DVector::from_row_slice(&total[1..]))),
        None,
        n,
        candidate,
        Some(report),
    )
}

/// Dissipativity and exponential-moment integrability check backing the
/// infinite-horizon existence argument.
///
/// The envelope kappa(t, n) bounds `E exp(int_0^t 2 g(Y))` over the ball
/// ||y|| <= n using the same Gaussian log-moment machinery with doubled g
/// under the physical dynamics.
pub fn check_condition_87(
    spec: &AffineModelSpec,
    util: &UtilityParams,
    radius_n: f64,
) -> Result<Condition87Report, KernelError> {
    util.validate()?;
    if spec.is_cir() {
        return Err(KernelError::BadRegime(
            "the exponential-moment check applies to Gaussian families".into(),
        ));
    }
    let sym = (&spec.b2 + spec.b2.transpose()) * (-0.5);
    let l2 = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));

    let doubled = GaussKernel::for_doubled_g(spec, util);
    let rate = doubled.growth_rate();
    let integrable = rate < 0.0;
    let envelope: Vec<(f64, f64)> = [1.0, 5.0, 10.0, 20.0, 40.0]
        .iter()
        .map(|&t| {
            let (m1, s2) = doubled.moments(t);
            (t, (m1 + 0.5 * s2 + radius_n * doubled.m2(t).norm()).exp())
        })
        .collect();
    Ok(Condition87Report {
        l2,
        rate,
        envelope,
        integrable,
        passed: l2 > 0.0 && integrable,
    })
}

// ---------------------------------------------------------------------------
// Sum-of-exponentials tables for policy evaluation inside simulations
// ---------------------------------------------------------------------------

/// Precomputed quadrature representation of G on a fixed time grid:
/// `G(t_k, y) = a' sum_j w_kj exp(<m2_kj, y>) + beq_k exp(<m2_k, y>)`.
///
/// Each evaluation costs one exponential per node, which keeps the optimal
/// policy affordable inside Monte Carlo loops. Agreement with the adaptive
/// quadrature path is covered by tests.
pub struct PolicyTable {
    entries: Vec<TableEntry>,
    pub times: Vec<f64>,
    dim: usize,
    pub candidate: bool,
}

struct TableEntry {
    /// (weight including exp(m1 + sigma2/2), exponent loading m2)
    nodes: Vec<(f64, DVector<f64>)>,
    /// Bequest weight b' exp(m1(tau) + sigma2(tau)/2) and loading.
    bequest: Option<(f64, DVector<f64>)>,
}

impl PolicyTable {
    /// Table for the finite-horizon kernel on the given simulation grid.
    pub fn finite(
        spec: &AffineModelSpec,
        util: &UtilityParams,
        times: &[f64],
    ) -> Result<PolicyTable, KernelError> {
        util.validate()?;
        let t_end = finite_t(util)?;
        let dim = spec.dim_factor;

        enum K {
            Gauss(GaussKernel),
            Cir(CirKernel),
        }
        let (kernel, candidate) = if spec.is_cir() {
            (K::Cir(CirKernel::new(spec, util)?), true)
        } else {
            if util.alpha <= 0.0 {
                return Err(KernelError::BadRegime(
                    "finite-horizon Gaussian kernel requires alpha in (0,1)".into(),
                ));
            }
            (K::Gauss(GaussKernel::for_g(spec, util)), false)
        };
        let phi = |s: f64| match &kernel {
            K::Gauss(k) => k.phi(s),
            K::Cir(k) => k.m1(s),
        };
        let m2 = |s: f64| match &kernel {
            K::Gauss(k) => k.m2(s),
            K::Cir(k) => DVector::from_row_slice(&[k.m2(s)]),
        };

        let a_pow = util.a_pow();
        let mut entries = Vec::with_capacity(times.len());
        for &t in times {
            check_order(t, t_end)?;
            let tau = t_end - t;
            let mut raw = Vec::new();
            if a_pow > 0.0 && tau > 0.0 {
                let n_panels = (tau / 0.625).ceil().max(1.0) as usize;
                let h = tau / n_panels as f64;
                for p in 0..n_panels {
                    gl16_nodes(p as f64 * h, (p + 1) as f64 * h, &mut raw);
                }
            }
            let nodes = raw
                .iter()
                .map(|&(s, w)| (a_pow * w * phi(s).exp(), m2(s)))
                .collect();
            let bequest = if util.b > 0.0 {
                Some((util.b_pow() * phi(tau).exp(), m2(tau)))
            } else {
                None
            };
            entries.push(TableEntry { nodes, bequest });
        }
        Ok(PolicyTable {
            entries,
            times: times.to_vec(),
            dim,
            candidate,
        })
    }

    /// Time-invariant table for the infinite-horizon kernel.
    pub fn infinite(spec: &AffineModelSpec, util: &UtilityParams, y0: &DVector<f64>) -> Result<PolicyTable, KernelError> {
        // Run the full evaluation once to obtain the divergence check and
        // truncation point at the starting state.
        let probe = g_infinite(spec, util, y0)?;
        let s_max = probe.convergence.as_ref().map(|c| c.truncation).unwrap_or(200.0);
        let candidate = probe.candidate;
        let dim = spec.dim_factor;

        enum K {
            Gauss(GaussKernel),
            Cir(CirKernel),
        }
        let kernel = if spec.is_cir() {
            K::Cir(CirKernel::new(spec, util)?)
        } else {
            K::Gauss(GaussKernel::for_g(spec, util))
        };
        let phi = |s: f64| match &kernel {
            K::Gauss(k) => k.phi(s),
            K::Cir(k) => k.m1(s),
        };
        let m2 = |s: f64| match &kernel {
            K::Gauss(k) => k.m2(s),
            K::Cir(k) => DVector::from_row_slice(&[k.m2(s)]),
        };

        let mut raw = Vec::new();
        let mut lo = 0.0;
        let mut width = 0.625;
        while lo < s_max {
            let hi = (lo + width).min(s_max);
            gl16_nodes(lo, hi, &mut raw);
            lo = hi;
            width = (width * 1.6).min(20.0);
        }
        let a_pow = util.a_pow();
        let nodes = raw.iter().map(|&(s, w)| (a_pow * w * phi(s).exp(), m2(s))).collect();
        Ok(PolicyTable {
            entries: vec![TableEntry { nodes, bequest: None }],
            times: vec![0.0],
            dim,
            candidate,
        })
    }

    /// Evaluate (G, D_y G / G) at grid index `idx` and state `y`.
    pub fn eval(&self, idx: usize, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let entry = &self.entries[idx.min(self.entries.len() - 1)];
        let mut g = 0.0;
        let mut grad = DVector::zeros(self.dim);
        for (w, m2) in &entry.nodes {
            let e = w * m2.dot(y).exp();
            g += e;
            grad.axpy(e, m2, 1.0);
        }
        if let Some((w, m2)) = &entry.bequest {
            let e = w * m2.dot(y).exp();
            g += e;
            grad.axpy(e, m2, 1.0);
        }
        if g > 0.0 {
            grad /= g;
        }
        (g, grad)
    }
}
