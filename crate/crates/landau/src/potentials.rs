//! The zeroth-order collision coefficient c(f) for Coulomb-type interactions
//! and the normalization functionals built from it.
//!
//! For the Coulomb exponent gamma = -3 the coefficient is the identity,
//! c(f) = f. For very soft exponents gamma in (-3, -2) it is the 3D
//! convolution |v|^gamma * f, reduced over spheres to
//!
//!   K(r) = 2 pi / (r (gamma+2)) int_0^inf s f(s) [ (r+s)^{gamma+2}
//!                                                - |r-s|^{gamma+2} ] ds,
//!
//! with K(0) = 4 pi int s^{gamma+2} f(s) ds by continuity. The convolution is
//! computed up to the interaction's positive prefactor, which is set to 1:
//! everything consumed downstream (C1, C2, their ratio sigma, and all sign
//! statements) is invariant under that choice, and a test pins the
//! invariance.
//!
//! The kernel exponent gamma+2 lies in (-1, 0), so |r-s|^{gamma+2} has an
//! integrable kink on the diagonal. Each cell integral treats the kernel by
//! product integration against the cubic interpolant of the smooth factor:
//! closed-form power moments on cells near the singular point, Gauss-Legendre
//! on cells far enough away that the kernel is analytic at cell scale.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{differentiate, integrate, Parity, RadialField, RadialGrid};

/// Closed-form value of the first normalization functional at the Gaussian
/// for the Coulomb branch: C1 = -7/(8 sqrt 2).
pub const C1_GAUSSIAN: f64 = -7.0 / (8.0 * std::f64::consts::SQRT_2);
/// Closed-form value of the second normalization functional at the Gaussian
/// for the Coulomb branch: C2 = 1/(8 sqrt 2).
pub const C2_GAUSSIAN: f64 = 1.0 / (8.0 * std::f64::consts::SQRT_2);

/// Interaction exponent. Valid range [-3, -2); the endpoint -3 dispatches to
/// the identity branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSpec {
    gamma: f64,
}

impl PotentialSpec {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && (-3.0..-2.0).contains(&gamma)) {
            return Err(Error::config(format!(
                "interaction exponent gamma must lie in [-3, -2), got {gamma}"
            )));
        }
        Ok(PotentialSpec { gamma })
    }

    pub fn coulomb() -> Self {
        PotentialSpec { gamma: -3.0 }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_coulomb(&self) -> bool {
        self.gamma == -3.0
    }
}

/// Stencil width of the convolution's per-cell interpolant.
const CONV_STENCIL: usize = 4;
/// Cells whose distance to the singular point is below this many cell widths
/// take the closed-form route.
const SINGULAR_CELL_FACTOR: f64 = 3.0;

/// 12-point Gauss-Legendre rule on [-1, 1] (duplicated from the grid module's
/// quadrature tables; the convolution needs it at shifted singular points the
/// cached tables cannot express).
const GL12_X: [f64; 12] = [
    -0.9815606342467192,
    -0.9041172563704749,
    -0.7699026741943047,
    -0.5873179542866175,
    -0.3678314989981802,
    -0.1252334085114689,
    0.1252334085114689,
    0.3678314989981802,
    0.5873179542866175,
    0.7699026741943047,
    0.9041172563704749,
    0.9815606342467192,
];
const GL12_W: [f64; 12] = [
    0.04717533638651183,
    0.10693932599531843,
    0.16007832854334622,
    0.20316742672306592,
    0.23349253653835481,
    0.24914704581340277,
    0.24914704581340277,
    0.23349253653835481,
    0.20316742672306592,
    0.16007832854334622,
    0.10693932599531843,
    0.04717533638651183,
];

/// int_0^{R_max} phi(s) |s - s0|^beta ds for beta in (-1, 0), with the
/// singular point s0 either nonpositive or exactly a grid node, so every cell
/// lies on a single sign branch.
fn kernel_integral(grid: &RadialGrid, phi: &[f64], s0: f64, beta: f64) -> f64 {
    let nodes = grid.nodes();
    let n_cells = grid.intervals();
    let mut total = 0.0;
    for j in 0..n_cells {
        let start = j.saturating_sub(1).min(grid.len() - CONV_STENCIL);
        let a = nodes[j];
        let b = nodes[j + 1];
        let width = b - a;
        let dist = (a - s0).abs().min((b - s0).abs());
        let xs: [f64; CONV_STENCIL] = std::array::from_fn(|m| nodes[start + m]);
        let fv: [f64; CONV_STENCIL] = std::array::from_fn(|m| phi[start + m]);
        if dist <= SINGULAR_CELL_FACTOR * width {
            total += singular_cell(&xs, &fv, a, b, s0, beta);
        } else {
            let half = 0.5 * width;
            let mid = 0.5 * (a + b);
            let mut acc = 0.0;
            for (g, &xg) in GL12_X.iter().enumerate() {
                let s = mid + half * xg;
                let kern = (s - s0).abs().powf(beta);
                // Interpolated phi at the Gauss point.
                let mut p = 0.0;
                for m in 0..CONV_STENCIL {
                    let mut lag = 1.0;
                    for q in 0..CONV_STENCIL {
                        if q != m {
                            lag *= (s - xs[q]) / (xs[m] - xs[q]);
                        }
                    }
                    p += lag * fv[m];
                }
                acc += GL12_W[g] * kern * p;
            }
            total += half * acc;
        }
    }
    total
}

/// Closed-form product integration of the cubic interpolant against
/// |s - s0|^beta over one cell [a, b] lying on a single sign branch.
fn singular_cell(
    xs: &[f64; CONV_STENCIL],
    fv: &[f64; CONV_STENCIL],
    a: f64,
    b: f64,
    s0: f64,
    beta: f64,
) -> f64 {
    let ua = a - s0;
    let ub = b - s0;
    // Power moments M_p = int_ua^ub |u|^beta u^p du on the cell's branch.
    let mut moments = [0.0; CONV_STENCIL];
    if ua >= 0.0 {
        for (p, mp) in moments.iter_mut().enumerate() {
            let e = beta + p as f64 + 1.0;
            *mp = (ub.powf(e) - ua.powf(e)) / e;
        }
    } else {
        debug_assert!(ub <= 1e-14 * ua.abs().max(1.0), "cell straddles the singular point");
        let (va, vb) = (-ub, -ua);
        let mut sign = 1.0;
        for (p, mp) in moments.iter_mut().enumerate() {
            let e = beta + p as f64 + 1.0;
            *mp = sign * (vb.max(0.0).powf(e) - va.max(0.0).powf(e)) / e;
            sign = -sign;
        }
    }
    let mut acc = 0.0;
    for m in 0..CONV_STENCIL {
        // Numerator of L_m expanded in powers of u = s - s0.
        let mut coeff = [0.0; CONV_STENCIL];
        coeff[0] = 1.0;
        let mut deg = 0;
        let mut denom = 1.0;
        for q in 0..CONV_STENCIL {
            if q == m {
                continue;
            }
            let root = xs[q] - s0;
            for p in (0..=deg).rev() {
                coeff[p + 1] += coeff[p];
                coeff[p] *= -root;
            }
            deg += 1;
            denom *= xs[m] - xs[q];
        }
        let mut w = 0.0;
        for p in 0..CONV_STENCIL {
            w += coeff[p] * moments[p];
        }
        acc += w / denom * fv[m];
    }
    acc
}

/// The coefficient c(f): identity for the Coulomb branch, power-law
/// convolution (prefactor 1) for gamma in (-3, -2). Output is positive
/// wherever f is nonnegative and not identically zero.
pub fn c_of_f(f: &RadialField, spec: &PotentialSpec) -> Result<RadialField> {
    if spec.is_coulomb() {
        return Ok(f.clone());
    }
    let beta = spec.gamma + 2.0;
    let grid = f.grid();
    let nodes = grid.nodes();
    let phi: Vec<f64> = nodes.iter().zip(f.values()).map(|(&s, &v)| s * v).collect();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if i == 0 {
                4.0 * std::f64::consts::PI * kernel_integral(grid, f.values(), 0.0, beta)
            } else {
                let r = nodes[i];
                let plus = kernel_integral(grid, &phi, -r, beta);
                let minus = kernel_integral(grid, &phi, r, beta);
                2.0 * std::f64::consts::PI / (r * beta) * (plus - minus)
            }
        })
        .collect();
    let out = RadialField::new(Arc::clone(grid), values, Parity::Even)?;
    out.validate_finite("c_of_f convolution")?;
    Ok(out)
}

/// r times the radial derivative of c(mu): the monotonicity field of the
/// coefficient at the Gaussian. Nonpositive everywhere, vanishing only at the
/// origin. The Coulomb branch is rejected: there the field is trivially
/// r times mu_r and carries no information about the convolution.
pub fn maxwellian_monotonicity(grid: &Arc<RadialGrid>, gamma: f64) -> Result<RadialField> {
    let spec = PotentialSpec::new(gamma)?;
    if spec.is_coulomb() {
        return Err(Error::config(
            "monotonicity field for the identity branch is just r mu_r; \
             use a gamma in (-3, -2)",
        ));
    }
    let mu = RadialField::maxwellian(grid);
    let c = c_of_f(&mu, &spec)?;
    let dc = differentiate(&c, 1)?;
    let field = dc.map(|r, v| r * v);
    let scale = field.max_abs().max(f64::MIN_POSITIVE);
    if let Some(i) = field.values().iter().position(|&v| v > 1e-9 * scale) {
        return Err(Error::Check(format!(
            "monotonicity field positive at node {} (r = {}): {:.3e} against scale {:.3e}",
            i,
            grid.nodes()[i],
            field.values()[i],
            scale
        )));
    }
    Ok(field)
}

/// The normalization functionals and the derived weight exponent.
#[derive(Debug, Clone, Copy)]
pub struct NormalizationConstants {
    pub c1: f64,
    pub c2: f64,
    /// sigma = |C1/C2|, the rate ratio of the rescaled flow at this field.
    pub sigma: f64,
    /// k = 2 + sigma, the polynomial weight exponent matched to sigma.
    pub k_gamma: f64,
}

impl NormalizationConstants {
    /// Weight growth must stay below the decay the rate ratio provides:
    /// 7 < k < 2 sigma - 3.
    pub fn feasible(&self) -> bool {
        7.0 < self.k_gamma && self.k_gamma < 2.0 * self.sigma - 3.0
    }
}

/// C1 = (1/2)(-5 Q0/P0 + 3 Q2/P2), C2 = (1/2)(Q0/P0 - Q2/P2) with
/// P_k = int f r^{2+k} dr and Q_k = int c(f) f r^{2+k} dr.
pub fn normalization_constants(f: &RadialField, gamma: f64) -> Result<NormalizationConstants> {
    let spec = PotentialSpec::new(gamma)?;
    let cf = c_of_f(f, &spec)?;
    let p0 = integrate(f, 2)?;
    let p2 = integrate(f, 4)?;
    if !(p0.abs() > f64::MIN_POSITIVE && p2.abs() > f64::MIN_POSITIVE) {
        return Err(Error::data(format!(
            "degenerate field: moment denominators P0 = {p0:.3e}, P2 = {p2:.3e}"
        )));
    }
    let cff = cf.mul_pointwise(f);
    let q0 = integrate(&cff, 2)?;
    let q2 = integrate(&cff, 4)?;
    let r0 = q0 / p0;
    let r2 = q2 / p2;
    let c1 = 0.5 * (-5.0 * r0 + 3.0 * r2);
    let c2 = 0.5 * (r0 - r2);
    if c2.abs() <= f64::MIN_POSITIVE {
        return Err(Error::data(
            "degenerate field: the second normalization functional vanishes",
        ));
    }
    let sigma = (c1 / c2).abs();
    Ok(NormalizationConstants {
        c1,
        c2,
        sigma,
        k_gamma: 2.0 + sigma,
    })
}

/// One row of the exponent table at the Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct SigmaRow {
    pub gamma: f64,
    pub sigma: f64,
    pub k_gamma: f64,
    pub feasible: bool,
}

/// sigma, the weight exponent, and the feasibility window for each requested
/// interaction exponent, all evaluated at the Gaussian.
pub fn sigma_table(grid: &Arc<RadialGrid>, gammas: &[f64]) -> Result<Vec<SigmaRow>> {
    let mu = RadialField::maxwellian(grid);
    gammas
        .iter()
        .map(|&gamma| {
            let nc = normalization_constants(&mu, gamma)?;
            Ok(SigmaRow {
                gamma,
                sigma: nc.sigma,
                k_gamma: nc.k_gamma,
                feasible: nc.feasible(),
            })
        })
        .collect()
}
