//! Coordinate realization of the Dirichlet sine eigenbasis on (0, 1).
//!
//! The wave function lives in the basis phi_k(x) = sqrt(2) sin(k pi x) with
//! eigenvalues lambda_k = pi^2 k^2. Real two-component states y = (y1, y2)
//! (Psi = y1 + i y2) are stored interleaved as
//! `[y1 of mode 1, y2 of mode 1, y1 of mode 2, ...]` (length 2N), and the
//! codimension-one subspace with vanishing Phi^1_1 component additionally has
//! an orthonormalized coordinate layout
//! `[Phi^2_1/sqrt(w_1), Phi^1_2/sqrt(w_2), Phi^2_2/sqrt(w_2), ...]`
//! (length 2N-1) in which the H^3 inner product is the plain dot product.
//!
//! The key collapse used everywhere: the H^3 pairing of a Dirichlet function
//! against phi_k minus its boundary corrections equals w_k times the L^2
//! pairing, with w_k = 1 + lambda_k + lambda_k^2 + lambda_k^3. This reduces
//! the unbounded control functional B* to the finite per-mode coefficients
//! beta_k = w_k b_k, b_k = <mu phi_1, phi_k>_{L^2}.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad;

/// Default truncation level for desk-scale experiments.
pub const DEFAULT_N_MODES: usize = 16;

/// Dirichlet Laplacian eigenvalue `pi^2 k^2`.
pub fn eigenvalue(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("eigenvalue index must be >= 1".into()));
    }
    Ok(PI * PI * (k * k) as f64)
}

/// Interval endpoint for boundary traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Zero,
    One,
}

/// Third derivative of `phi_k(x) = sqrt(2) sin(k pi x)` at an endpoint:
/// `-sqrt(2) (k pi)^3` at x = 0 and `-sqrt(2) (k pi)^3 (-1)^k` at x = 1.
pub fn eigenfunction_third_derivative_at_boundary(k: usize, endpoint: Endpoint) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("mode index must be >= 1".into()));
    }
    let base = -std::f64::consts::SQRT_2 * (k as f64 * PI).powi(3);
    Ok(match endpoint {
        Endpoint::Zero => base,
        Endpoint::One => {
            if k.is_multiple_of(2) {
                base
            } else {
                -base
            }
        }
    })
}

/// Diagonal H^3 metric: `w_k = 1 + lambda_k + lambda_k^2 + lambda_k^3 = ||phi_k||^2_{H^3}`.
#[derive(Debug, Clone)]
pub struct SobolevWeights {
    values: DVector<f64>,
}

impl SobolevWeights {
    pub fn new(n_modes: usize) -> Result<Self> {
        if n_modes < 2 {
            return Err(Error::Domain("need at least 2 modes".into()));
        }
        let values = DVector::from_fn(n_modes, |i, _| {
            let l = eigenvalue(i + 1).expect("i + 1 >= 1");
            1.0 + l + l * l + l * l * l
        });
        Ok(Self { values })
    }

    pub fn n_modes(&self) -> usize {
        self.values.len()
    }

    /// `w_k` for 1-based mode index `k`.
    pub fn get(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }
}

/// Dipole profile mu on [0, 1]. Only polynomial profiles are accepted from
/// configuration ("poly:[c0,c1,...]" and the alias "builtin:xsq"), which keeps
/// every coupling integral available in closed form; quadrature stays as the
/// independent oracle route.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleProfile {
    coeffs: Vec<f64>,
    id: String,
}

impl DipoleProfile {
    pub fn poly(coeffs: Vec<f64>) -> Self {
        let id = format!(
            "poly:[{}]",
            coeffs
                .iter()
                .map(|c| format!("{c}"))
                .collect::<Vec<_>>()
                .join(",")
        );
        Self { coeffs, id }
    }

    /// The workhorse profile mu(x) = x^2.
    pub fn xsq() -> Self {
        Self {
            coeffs: vec![0.0, 0.0, 1.0],
            id: "builtin:xsq".into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::poly(vec![c])
    }

    /// Parse a machine identifier: `poly:[c0,c1,...]` or `builtin:xsq`.
    pub fn parse(id: &str) -> Result<Self> {
        if id == "builtin:xsq" {
            return Ok(Self::xsq());
        }
        if let Some(rest) = id.strip_prefix("poly:") {
            let inner = rest
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| Error::Domain(format!("malformed dipole identifier {id:?}")))?;
            let coeffs = if inner.trim().is_empty() {
                vec![0.0]
            } else {
                inner
                    .split(',')
                    .map(|tok| {
                        tok.trim().parse::<f64>().map_err(|_| {
                            Error::Domain(format!("malformed dipole identifier {id:?}"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?
            };
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::Domain(format!(
                    "non-finite coefficient in dipole identifier {id:?}"
                )));
            }
            return Ok(Self {
                coeffs,
                id: id.to_string(),
            });
        }
        Err(Error::Domain(format!("unknown dipole identifier {id:?}")))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn deriv1(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (j, c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * x + j as f64 * c;
        }
        acc
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (j, c) in self.coeffs.iter().enumerate().skip(2).rev() {
            acc = acc * x + (j * (j - 1)) as f64 * c;
        }
        acc
    }
}

/// `int_0^1 x^j cos(m pi x) dx` and `int_0^1 x^j sin(m pi x) dx` for m >= 1,
/// via the integration-by-parts recursion. sin(m pi) = 0 kills the boundary
/// term of the cosine integral.
fn poly_trig_moments(max_j: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let a = m as f64 * PI;
    let cos_a = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut cos_m = vec![0.0; max_j + 1];
    let mut sin_m = vec![0.0; max_j + 1];
    cos_m[0] = 0.0;
    sin_m[0] = (1.0 - cos_a) / a;
    for j in 1..=max_j {
        cos_m[j] = -(j as f64 / a) * sin_m[j - 1];
        sin_m[j] = -cos_a / a + (j as f64 / a) * cos_m[j - 1];
    }
    (cos_m, sin_m)
}

/// `int_0^1 mu(x) cos(m pi x) dx` for a polynomial profile, exact.
fn profile_cos_moment(profile: &DipoleProfile, m: usize) -> f64 {
    if m == 0 {
        return profile
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c / (j + 1) as f64)
            .sum();
    }
    let (cos_m, _) = poly_trig_moments(profile.coeffs.len().saturating_sub(1), m);
    profile
        .coeffs
        .iter()
        .enumerate()
        .map(|(j, c)| c * cos_m[j])
        .sum()
}

/// Precomputed interaction data of a dipole profile at truncation level N.
#[derive(Debug, Clone)]
pub struct DipoleCoupling {
    /// `b_k = <mu phi_1, phi_k>_{L^2}`.
    pub b: DVector<f64>,
    /// `mu_{kl} = <mu phi_k, phi_l>_{L^2}`, symmetric.
    pub mu_mat: DMatrix<f64>,
    /// `beta_k = w_k b_k`, the per-mode control coefficients of B*.
    pub beta: DVector<f64>,
    /// `omega_k = lambda_k - lambda_1`.
    pub omega: DVector<f64>,
    pub weights: SobolevWeights,
    pub mu_id: String,
}

impl DipoleCoupling {
    pub fn n_modes(&self) -> usize {
        self.b.len()
    }

    /// Largest retained rotation frequency `omega_N`.
    pub fn omega_max(&self) -> f64 {
        self.omega[self.omega.len() - 1]
    }
}

/// Build the coupling tables from exact polynomial moments:
/// `mu_{kl} = int mu [cos((k-l)pi x) - cos((k+l)pi x)] dx`.
pub fn build_coupling(profile: &DipoleProfile, n_modes: usize) -> Result<DipoleCoupling> {
    if n_modes < 2 {
        return Err(Error::Domain("need at least 2 modes".into()));
    }
    let weights = SobolevWeights::new(n_modes)?;
    let mut moments = vec![0.0; 2 * n_modes + 1];
    for (m, slot) in moments.iter_mut().enumerate() {
        *slot = profile_cos_moment(profile, m);
    }
    let mu_mat = DMatrix::from_fn(n_modes, n_modes, |r, c| {
        let (k, l) = (r + 1, c + 1);
        moments[k.abs_diff(l)] - moments[k + l]
    });
    finish_coupling(mu_mat, weights, profile.id().to_string())
}

/// Quadrature route for the same tables; the independent oracle for the
/// closed-form path and the fallback for non-polynomial evaluators.
pub fn build_coupling_quadrature(
    profile: &DipoleProfile,
    n_modes: usize,
    tol: f64,
) -> Result<DipoleCoupling> {
    if n_modes < 2 {
        return Err(Error::Domain("need at least 2 modes".into()));
    }
    let weights = SobolevWeights::new(n_modes)?;
    let mut mu_mat = DMatrix::zeros(n_modes, n_modes);
    for k in 1..=n_modes {
        for l in k..=n_modes {
            let v = quad::integrate(
                |x| 2.0 * profile.eval(x) * (k as f64 * PI * x).sin() * (l as f64 * PI * x).sin(),
                0.0,
                1.0,
                tol,
                (k, l),
            )?;
            mu_mat[(k - 1, l - 1)] = v;
            mu_mat[(l - 1, k - 1)] = v;
        }
    }
    finish_coupling(mu_mat, weights, profile.id().to_string())
}

fn finish_coupling(
    mu_mat: DMatrix<f64>,
    weights: SobolevWeights,
    mu_id: String,
) -> Result<DipoleCoupling> {
    let n = mu_mat.nrows();
    let b = DVector::from_fn(n, |i, _| mu_mat[(0, i)]);
    let beta = DVector::from_fn(n, |i, _| weights.get(i + 1) * b[i]);
    let lambda1 = eigenvalue(1)?;
    let omega = DVector::from_fn(n, |i, _| eigenvalue(i + 1).expect("i + 1 >= 1") - lambda1);
    Ok(DipoleCoupling {
        b,
        mu_mat,
        beta,
        omega,
        weights,
        mu_id,
    })
}

// ---------------------------------------------------------------------------
// Coordinate layouts and the B*, H^3 pairings
// ---------------------------------------------------------------------------

/// Dimension of the truncated H_{1,#}: mode 1 keeps only its imaginary
/// direction, so the Phi^1_1 row of every Gramian is excluded by construction.
pub fn sharp_dim(n_modes: usize) -> usize {
    2 * n_modes - 1
}

/// Index of `Phi^i_k` in the orthonormalized sharp layout; `None` for the
/// excluded Phi^1_1 direction. `i` is 1 (real) or 2 (imaginary), `k` 1-based.
pub fn sharp_index(i: usize, k: usize) -> Option<usize> {
    match (i, k) {
        (1, 1) => None,
        (2, 1) => Some(0),
        (i @ (1 | 2), k) if k >= 2 => Some(1 + 2 * (k - 2) + (i - 1)),
        _ => panic!("component index must be 1 or 2"),
    }
}

/// `B* v = sum_k beta_k v^2_k` on an interleaved H-coordinate vector.
pub fn bstar_apply(coupling: &DipoleCoupling, v: &DVector<f64>) -> Result<f64> {
    let n = coupling.n_modes();
    if v.len() != 2 * n {
        return Err(Error::Dimension {
            expected: 2 * n,
            got: v.len(),
        });
    }
    Ok((0..n).map(|k| coupling.beta[k] * v[2 * k + 1]).sum())
}

/// H^3 inner product of two interleaved H-coordinate vectors.
pub fn h3_inner(weights: &SobolevWeights, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    let n = weights.n_modes();
    if a.len() != 2 * n || b.len() != 2 * n {
        return Err(Error::Dimension {
            expected: 2 * n,
            got: if a.len() != 2 * n { a.len() } else { b.len() },
        });
    }
    Ok((0..n)
        .map(|k| weights.get(k + 1) * (a[2 * k] * b[2 * k] + a[2 * k + 1] * b[2 * k + 1]))
        .sum())
}

pub fn h3_norm(weights: &SobolevWeights, v: &DVector<f64>) -> Result<f64> {
    Ok(h3_inner(weights, v, v)?.sqrt())
}

/// Orthogonal projection onto H_{1,#}: zero the Phi^1_1 coordinate.
pub fn project_h1sharp(v: &DVector<f64>) -> DVector<f64> {
    let mut out = v.clone();
    if !out.is_empty() {
        out[0] = 0.0;
    }
    out
}

/// Interleaved H coordinates -> orthonormalized sharp coordinates
/// (drops the Phi^1_1 component).
pub fn to_sharp(weights: &SobolevWeights, v: &DVector<f64>) -> Result<DVector<f64>> {
    let n = weights.n_modes();
    if v.len() != 2 * n {
        return Err(Error::Dimension {
            expected: 2 * n,
            got: v.len(),
        });
    }
    let mut out = DVector::zeros(sharp_dim(n));
    out[0] = v[1] * weights.get(1).sqrt();
    for k in 2..=n {
        let sw = weights.get(k).sqrt();
        out[sharp_index(1, k).unwrap()] = v[2 * (k - 1)] * sw;
        out[sharp_index(2, k).unwrap()] = v[2 * (k - 1) + 1] * sw;
    }
    Ok(out)
}

/// Orthonormalized sharp coordinates -> interleaved H coordinates
/// (Phi^1_1 component zero).
pub fn from_sharp(weights: &SobolevWeights, s: &DVector<f64>) -> Result<DVector<f64>> {
    let n = weights.n_modes();
    if s.len() != sharp_dim(n) {
        return Err(Error::Dimension {
            expected: sharp_dim(n),
            got: s.len(),
        });
    }
    let mut out = DVector::zeros(2 * n);
    out[1] = s[0] / weights.get(1).sqrt();
    for k in 2..=n {
        let sw = weights.get(k).sqrt();
        out[2 * (k - 1)] = s[sharp_index(1, k).unwrap()] / sw;
        out[2 * (k - 1) + 1] = s[sharp_index(2, k).unwrap()] / sw;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Modal states
// ---------------------------------------------------------------------------

/// Complex modal coefficient vector `a_k = <Psi, phi_k>_{L^2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    coeffs: Vec<Complex64>,
}

impl SpectralState {
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::Domain("need at least 2 modes".into()));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Contract("non-finite modal coefficient".into()));
        }
        Ok(Self { coeffs })
    }

    /// The ground state Phi_1 = (phi_1, 0): coefficient 1 on mode 1.
    pub fn ground_state(n_modes: usize) -> Result<Self> {
        let mut coeffs = vec![Complex64::ZERO; n_modes];
        coeffs[0] = Complex64::ONE;
        Self::new(coeffs)
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn h3_norm_sq(&self, weights: &SobolevWeights) -> Result<f64> {
        if weights.n_modes() != self.n_modes() {
            return Err(Error::Dimension {
                expected: weights.n_modes(),
                got: self.n_modes(),
            });
        }
        Ok(self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| weights.get(i + 1) * c.norm_sqr())
            .sum())
    }

    /// Interleaved real H coordinates (Psi = y1 + i y2).
    pub fn to_hvector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.coeffs.len());
        for (k, c) in self.coeffs.iter().enumerate() {
            v[2 * k] = c.re;
            v[2 * k + 1] = c.im;
        }
        v
    }

    pub fn from_hvector(v: &DVector<f64>) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::Dimension {
                expected: v.len() + 1,
                got: v.len(),
            });
        }
        Self::new(
            (0..v.len() / 2)
                .map(|k| Complex64::new(v[2 * k], v[2 * k + 1]))
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Genericity check on mu
// ---------------------------------------------------------------------------

/// Empirical evidence table for the lower bound `|b_k| >= c / k^3`.
#[derive(Debug, Clone)]
pub struct MuConditionReport {
    /// `inf_{k <= N} k^3 |b_k|`.
    pub min_value: f64,
    /// 1-based index attaining the minimum.
    pub argmin_k: usize,
    /// `(k, k^3 |b_k|)` for every retained mode.
    pub rows: Vec<(usize, f64)>,
}

/// Report `min_{2 <= k <= N} k^3 |b_k|`; a strictly positive, N-stable value
/// is the caller's evidence for the genericity condition on mu. The constant
/// is reported, never asserted against a threshold here.
///
/// The table carries every retained mode including k = 1, but the minimum
/// runs over k >= 2: the k^3 rate is the tail statement, while mode 1 only
/// contributes its imaginary direction, whose controllability is the separate
/// requirement beta_1 != 0. (For mu = x^2 the k = 1 entry sits well below the
/// 8/pi^2 tail constant and would mask it.)
pub fn mu_condition_check(coupling: &DipoleCoupling) -> MuConditionReport {
    let mut rows = Vec::with_capacity(coupling.n_modes());
    let mut min_value = f64::INFINITY;
    let mut argmin_k = 2;
    for k in 1..=coupling.n_modes() {
        let v = (k as f64).powi(3) * coupling.b[k - 1].abs();
        if k >= 2 && v < min_value {
            min_value = v;
            argmin_k = k;
        }
        rows.push((k, v));
    }
    MuConditionReport {
        min_value,
        argmin_k,
        rows,
    }
}
