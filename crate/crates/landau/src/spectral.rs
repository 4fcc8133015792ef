//! Quadratic forms of the linearized operator and constrained spectral-gap
//! estimation: the local form J_rho and its nonnegative comparison J~_rho,
//! the polynomial-weight form J(rho2), the energy E2 and damping D2
//! functionals, the composite coercivity form <L_alpha f, f W>, Ritz
//! estimates of the constrained top Rayleigh quotient, and the localized
//! gap surrogate built from the truncated Maxwellian.
//!
//! Conventions. All pairings written <.,.> are R^3 pairings of radial
//! functions, 4 pi int ... r^2 dr; the J-forms are plain line integrals as
//! displayed in their definitions. The constraint throughout is vanishing
//! mass and energy moments, int f r^2 dr = int f r^4 dr = 0. Fitted
//! constants (the loss constant of the J_rho lower bound, the three
//! coefficients of the J(rho2) upper bound) are measured over a fixed,
//! seeded family of fields and then frozen as literals; they are outputs of
//! this laboratory, not imported ground truth.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::biharmonic::solve_biharmonic;
use crate::collision::{self, l_alpha, linearized_l1, MaxwellianCache};
use crate::error::{Error, Result};
use crate::grid::{integrate, Parity, RadialField, RadialGrid};
use crate::weights::WeightFamily;

/// One quadratic-form evaluation, split into the part with a definite sign
/// (damping) and the remainder (loss), plus the field's constraint moments.
#[derive(Debug, Clone)]
pub struct FormReport {
    pub value: f64,
    pub damping: f64,
    pub loss: f64,
    pub residual_r2: f64,
    pub residual_r4: f64,
}

/// J(rho2) together with its fitted upper bound.
#[derive(Debug, Clone)]
pub struct Jrho2Report {
    pub form: FormReport,
    /// Value of the frozen-constant majorant; bound_holds means value <= bound.
    pub bound: f64,
    pub bound_holds: bool,
}

/// The composite form <L_alpha f, f W> against the damping reference
/// 4 pi int <r>^-3 (f^2 + f_r^2) W r^2 dr.
#[derive(Debug, Clone)]
pub struct CoercivityReport {
    pub form: FormReport,
    pub reference: f64,
    /// value / reference; the reference is positive for nonzero f.
    pub ratio: f64,
}

/// Which quadratic form normalizes the constrained Rayleigh quotient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapDenominator {
    D2,
    E2,
}

#[derive(Debug, Clone)]
pub struct GapEstimate {
    pub alpha: f64,
    pub top_rayleigh: f64,
    pub denominator: GapDenominator,
    pub n_modes: usize,
    pub grid_n: usize,
    pub r_max: f64,
    /// Constrained Rayleigh spectrum, most positive first.
    pub spectrum: Vec<f64>,
}

/// Recorded coupling K1 for the desk-scale coercivity experiment on the
/// default family (R1 = 4): the smallest decade at which the constrained
/// top Rayleigh quotient with the D2 denominator is negative and stable
/// within 20% across n_modes in {80, 120} and N in {512, 1024}. No
/// canonical value exists; the continuum construction only pins K1 into a
/// two-sided window. Measured behavior on the decade grid: the top
/// crosses zero near 5e-14 (below, the rho2 near-field loss is
/// uncompensated), the margin here is -2.9e-3, it deepens to -2.7e-2 at
/// 1e-3, and between 1e-3 and 1e-2 the far transition loss of the rho
/// channel flips the sign.
pub const K1_GAP: f64 = 1.0e-13;

/// Loss constant of J_rho >= J~_rho - C int_{r>=R1} f^2 r^2 dr. Worst
/// measured -loss/tail over the frozen sample family at R1 = 4 is 4.5e-9
/// (the loss factor 2r - lambda only activates past the eta transition
/// near r = 9, where the family carries almost no mass); frozen at double
/// that, rounded up to the decade.
pub const JRHO_LOSS_CONSTANT: f64 = 1.0e-8;

/// Coefficients of the J(rho2) majorant
/// int (-c1 (k2-2) <r>^-3 + C <r>^-5) f^2 rho2 dr - c4 int <r>^-3 f_r^2 rho2 dr,
/// fitted over the frozen sample family and then held fixed. The damping
/// coefficients are set to a quarter of min (-gbar_rr) <r>^3 ~ 0.2; the
/// smallest C closing the bound over the family at these c1, c4 is 2.78,
/// frozen with slack at 10, which also keeps the sign radius beyond r = 4
/// where the far-bump negativity check runs.
pub const JRHO2_C1: f64 = 0.05;
pub const JRHO2_C4: f64 = 0.05;
pub const JRHO2_BIG_C: f64 = 10.0;

/// Radius beyond which the majorant integrand is strictly negative, so a
/// field supported there must produce J(rho2) < 0 if the bound holds:
/// <r>^2 > C / (c1 (k2 - 2)).
pub fn jrho2_sign_radius() -> f64 {
    (JRHO2_BIG_C / (JRHO2_C1 * (12.5 - 2.0)) - 1.0).max(0.0).sqrt()
}

fn check_even(f: &RadialField, what: &str) -> Result<()> {
    if f.parity() != Parity::Even {
        return Err(Error::config(format!("{what} expects an even-parity field")));
    }
    Ok(())
}

fn quad(grid: &Arc<RadialGrid>, values: Vec<f64>) -> Result<f64> {
    integrate(&RadialField::new(Arc::clone(grid), values, Parity::Even)?, 0)
}

fn moments_pair(f: &RadialField) -> Result<(f64, f64)> {
    Ok((integrate(f, 2)?, integrate(f, 4)?))
}

fn require_materialized<'a>(
    family: &'a WeightFamily,
    what: &str,
) -> Result<(&'a RadialField, &'a RadialField)> {
    match (&family.rho, &family.w) {
        (Some(rho), Some(w)) => Ok((rho, w)),
        _ => Err(Error::numerical(format!(
            "{what} needs materialized weights; this family (R1 = {}) only exists in log form",
            family.r1
        ))),
    }
}

/// J_rho(f, f) = int (-gbar_rr r^2) (f_r + 2 r f) (f_r rho + f rho_r) dr,
/// with rho_r = lambda rho taken from the family. Damping is the
/// J~_rho part, loss the remainder carried by (2r - lambda) f, supported
/// where the profile has left the Gaussian branch.
pub fn form_jrho(f: &RadialField, family: &WeightFamily) -> Result<FormReport> {
    check_even(f, "form_jrho")?;
    f.check_same_grid(&family.eta, "form_jrho")?;
    let (rho, _) = require_materialized(family, "form_jrho")?;
    let grid = f.grid();
    let cache = MaxwellianCache::new(grid)?;
    let (f_r, _) = collision::density_derivatives(f)?;
    let nodes = grid.nodes();
    let gbar_rr = cache.gbar().g_rr.values();
    let lam = family.lambda.values();
    let mut damping = vec![0.0; nodes.len()];
    let mut loss = vec![0.0; nodes.len()];
    for i in 0..nodes.len() {
        let r = nodes[i];
        let core = (-gbar_rr[i]) * r * r * (f_r.values()[i] + lam[i] * f.values()[i]) * rho.values()[i];
        damping[i] = core * (f_r.values()[i] + lam[i] * f.values()[i]);
        loss[i] = core * (2.0 * r - lam[i]) * f.values()[i];
    }
    let damping = quad(grid, damping)?;
    let loss = quad(grid, loss)?;
    let (m2, m4) = moments_pair(f)?;
    Ok(FormReport { value: damping + loss, damping, loss, residual_r2: m2, residual_r4: m4 })
}

/// J~_rho(f, f) = int (-gbar_rr r^2) (f_r + lambda f)^2 rho dr, a weighted
/// square, hence nonnegative for every field.
pub fn form_jrho_tilde(f: &RadialField, family: &WeightFamily) -> Result<FormReport> {
    check_even(f, "form_jrho_tilde")?;
    f.check_same_grid(&family.eta, "form_jrho_tilde")?;
    let (rho, _) = require_materialized(family, "form_jrho_tilde")?;
    let grid = f.grid();
    let cache = MaxwellianCache::new(grid)?;
    let (f_r, _) = collision::density_derivatives(f)?;
    let nodes = grid.nodes();
    let gbar_rr = cache.gbar().g_rr.values();
    let lam = family.lambda.values();
    let vals: Vec<f64> = (0..nodes.len())
        .map(|i| {
            let r = nodes[i];
            let s = f_r.values()[i] + lam[i] * f.values()[i];
            (-gbar_rr[i]) * r * r * s * s * rho.values()[i]
        })
        .collect();
    let damping = quad(grid, vals)?;
    let (m2, m4) = moments_pair(f)?;
    Ok(FormReport { value: damping, damping, loss: 0.0, residual_r2: m2, residual_r4: m4 })
}

/// J(rho2) = int (L1 f) f rho2 dr at the default polynomial exponent
/// k2 = 25/2, reported against the frozen majorant.
pub fn form_jrho2(f: &RadialField) -> Result<Jrho2Report> {
    check_even(f, "form_jrho2")?;
    let grid = f.grid();
    let cache = MaxwellianCache::new(grid)?;
    let pieces = linearized_l1(f, &cache)?;
    let rho2 = crate::weights::build_rho2(grid, 12.5)?;
    let loc = quad(
        grid,
        (0..grid.len())
            .map(|i| pieces.l_loc.values()[i] * f.values()[i] * rho2.values()[i])
            .collect(),
    )?;
    let nloc = quad(
        grid,
        (0..grid.len())
            .map(|i| pieces.l_nloc.values()[i] * f.values()[i] * rho2.values()[i])
            .collect(),
    )?;
    let (f_r, _) = collision::density_derivatives(f)?;
    let nodes = grid.nodes();
    let mut majorant = vec![0.0; nodes.len()];
    for i in 0..nodes.len() {
        let br = 1.0 + nodes[i] * nodes[i];
        let w3 = br.powf(-1.5);
        let w5 = br.powf(-2.5);
        majorant[i] = (-JRHO2_C1 * (12.5 - 2.0) * w3 + JRHO2_BIG_C * w5)
            * f.values()[i]
            * f.values()[i]
            * rho2.values()[i]
            - JRHO2_C4 * w3 * f_r.values()[i] * f_r.values()[i] * rho2.values()[i];
    }
    let bound = quad(grid, majorant)?;
    let (m2, m4) = moments_pair(f)?;
    let value = loc + nloc;
    Ok(Jrho2Report {
        form: FormReport { value, damping: loc, loss: nloc, residual_r2: m2, residual_r4: m4 },
        bound,
        bound_holds: value <= bound,
    })
}

/// (E2, D2): E2 = K1 <f, f rho> + int f^2 rho2 dr with the R^3 pairing in
/// the first term, D2 = int (f^2 + f_r^2) r^2 <r>^(k2-5) dr.
pub fn energy_functionals(f: &RadialField, family: &WeightFamily) -> Result<(f64, f64)> {
    check_even(f, "energy_functionals")?;
    f.check_same_grid(&family.eta, "energy_functionals")?;
    let e2 = crate::weights::energy_e2(f, family)?;
    let (f_r, _) = collision::density_derivatives(f)?;
    let nodes = f.grid().nodes();
    let vals: Vec<f64> = (0..nodes.len())
        .map(|i| {
            let r = nodes[i];
            (f.values()[i] * f.values()[i] + f_r.values()[i] * f_r.values()[i])
                * r
                * r
                * (1.0 + r * r).powf((family.k2 - 5.0) / 2.0)
        })
        .collect();
    Ok((e2, quad(f.grid(), vals)?))
}

/// <L_alpha f, f W> for a constrained field, against the reference
/// 4 pi int <r>^-3 (f^2 + f_r^2) W r^2 dr. Damping is the alpha-independent
/// L1 part of the pairing, loss the alpha additions.
pub fn coercivity_form(
    f: &RadialField,
    family: &WeightFamily,
    alpha: f64,
) -> Result<CoercivityReport> {
    check_even(f, "coercivity_form")?;
    f.check_same_grid(&family.eta, "coercivity_form")?;
    let (_, w) = require_materialized(family, "coercivity_form")?;
    let (m2, m4) = moments_pair(f)?;
    let scale = integrate(&f.map(|_, v| v.abs()), 2)?;
    if scale > 0.0 && (m2.abs() > 1e-10 * scale || m4.abs() > 1e-10 * scale * 10.0) {
        return Err(Error::config(format!(
            "coercivity_form needs a constrained field: residuals int f r^2 = {m2:.3e}, int f r^4 = {m4:.3e} against scale {scale:.3e}"
        )));
    }
    let grid = f.grid();
    let cache = MaxwellianCache::new(grid)?;
    let pieces = l_alpha(f, alpha, &cache)?;
    let pair = |op: &RadialField| -> Result<f64> {
        let vals: Vec<f64> = (0..grid.len())
            .map(|i| {
                let r = grid.nodes()[i];
                op.values()[i] * f.values()[i] * w.values()[i] * r * r
            })
            .collect();
        Ok(4.0 * PI * quad(grid, vals)?)
    };
    let damping = pair(&pieces.l_loc)? + pair(&pieces.l_nloc)?;
    let loss = pair(&pieces.l_add)?;
    let (f_r, _) = collision::density_derivatives(f)?;
    let ref_vals: Vec<f64> = (0..grid.len())
        .map(|i| {
            let r = grid.nodes()[i];
            (1.0 + r * r).powf(-1.5)
                * (f.values()[i] * f.values()[i] + f_r.values()[i] * f_r.values()[i])
                * w.values()[i]
                * r
                * r
        })
        .collect();
    let reference = 4.0 * PI * quad(grid, ref_vals)?;
    let value = damping + loss;
    let ratio = if reference > 0.0 { value / reference } else { 0.0 };
    Ok(CoercivityReport {
        form: FormReport { value, damping, loss, residual_r2: m2, residual_r4: m4 },
        reference,
        ratio,
    })
}

/// Centered cubic B-spline, support |x| < 2, B(0) = 2/3.
fn bspline(x: f64) -> f64 {
    let a = x.abs();
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        let t = 2.0 - a;
        t * t * t / 6.0
    } else {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    }
}

fn bspline_d(x: f64) -> f64 {
    let a = x.abs();
    let s = x.signum();
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        let t = 2.0 - a;
        -s * t * t / 2.0
    } else {
        s * (-2.0 * a + 1.5 * a * a)
    }
}

fn bspline_dd(x: f64) -> f64 {
    let a = x.abs();
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        2.0 - a
    } else {
        3.0 * a - 2.0
    }
}

/// Knot spacing shared by the Ritz and window bases. Chosen against the
/// unit scale of the Gaussian background; 120 Ritz modes then reach r ~ 12,
/// by which point the e^{-r^2/2} envelope has extinguished everything.
const SPLINE_SPACING: f64 = 0.1;

struct BasisSet {
    fields: Vec<RadialField>,
    derivs: Vec<RadialField>,
    second: Vec<RadialField>,
}

/// Mirrored splines b_i(r) = B((r - i d)/d) + B((r + i d)/d), optionally
/// carrying the e^{-r^2/2} envelope. Mirroring keeps every member exactly
/// even with an odd derivative.
fn spline_basis(grid: &Arc<RadialGrid>, n_modes: usize, envelope: bool) -> Result<BasisSet> {
    let d = SPLINE_SPACING;
    let mut fields = Vec::with_capacity(n_modes);
    let mut derivs = Vec::with_capacity(n_modes);
    let mut second = Vec::with_capacity(n_modes);
    for i in 0..n_modes {
        let c = i as f64 * d;
        let raw = |r: f64| bspline((r - c) / d) + bspline((r + c) / d);
        let raw_d = |r: f64| (bspline_d((r - c) / d) + bspline_d((r + c) / d)) / d;
        let raw_dd = |r: f64| (bspline_dd((r - c) / d) + bspline_dd((r + c) / d)) / (d * d);
        let (f, fr, frr) = if envelope {
            let env = |r: f64| (-r * r / 2.0).exp();
            (
                RadialField::from_fn(grid, Parity::Even, |r| raw(r) * env(r))?,
                RadialField::from_fn(grid, Parity::Odd, |r| (raw_d(r) - r * raw(r)) * env(r))?,
                RadialField::from_fn(grid, Parity::Even, |r| {
                    (raw_dd(r) - 2.0 * r * raw_d(r) + (r * r - 1.0) * raw(r)) * env(r)
                })?,
            )
        } else {
            (
                RadialField::from_fn(grid, Parity::Even, raw)?,
                RadialField::from_fn(grid, Parity::Odd, raw_d)?,
                RadialField::from_fn(grid, Parity::Even, raw_dd)?,
            )
        };
        fields.push(f);
        derivs.push(fr);
        second.push(frr);
    }
    Ok(BasisSet { fields, derivs, second })
}

/// Sparse spanning set of the nullspace of the constraint rows: one column
/// per free mode, supported on that mode plus the pivot modes.
fn constraint_nullspace(rows: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    if rows.is_empty() {
        return DMatrix::identity(n, n);
    }
    // Reduce the constraint rows to echelon form with pivot columns drawn
    // from the near half of the basis. Each nullspace column then touches
    // only its own mode plus the pivot modes. A Gram-Schmidt nullspace
    // would instead smear a slice of every constraint row into every
    // column; the rows have components on the far modes, where the
    // numerator form is stiffer than the metric by tens of orders, and
    // columns sharing one stiff rank-2 slice make the numerator Gram
    // numerically singular.
    let limit = if n > 8 { n / 2 } else { n };
    let mut r: Vec<Vec<f64>> = rows.to_vec();
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    for t in 0..r.len() {
        for &(pr, pc) in &pivots {
            let f = r[t][pc] / r[pr][pc];
            let prow = r[pr].clone();
            for (c, v) in r[t].iter_mut().enumerate() {
                *v -= f * prow[c];
            }
        }
        let scale = r[t].iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut best = (0usize, -1.0_f64);
        for j in 0..limit {
            if pivots.iter().any(|&(_, pc)| pc == j) {
                continue;
            }
            if r[t][j].abs() > best.1 {
                best = (j, r[t][j].abs());
            }
        }
        if best.1 > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            pivots.push((t, best.0));
        }
    }
    // Clear each pivot column from the other pivot rows so the nullspace
    // coefficients read off directly.
    for a in 0..pivots.len() {
        for b in 0..pivots.len() {
            if a == b {
                continue;
            }
            let (br, bc) = pivots[b];
            let (ar, _) = pivots[a];
            let f = r[ar][bc] / r[br][bc];
            let brow = r[br].clone();
            for (c, v) in r[ar].iter_mut().enumerate() {
                *v -= f * brow[c];
            }
        }
    }
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n - pivots.len());
    for j in 0..n {
        if pivots.iter().any(|&(_, pc)| pc == j) {
            continue;
        }
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        for &(pr, pc) in &pivots {
            v[pc] = -r[pr][j] / r[pr][pc];
        }
        let norm = v.norm();
        cols.push(v / norm);
    }
    DMatrix::from_columns(&cols)
}

/// Relative Gram-eigenvalue floor below which a basis direction counts as
/// numerically dependent. The e^{-r^2/2} envelope drives far Ritz modes to
/// Gram weights like e^{-c^2}, pure roundoff in double precision; keeping
/// them would amplify quadrature noise by their inverse square roots.
const GRAM_TRUNCATION: f64 = 1e-12;

/// Spectrum of the pencil (A, M), most positive first. M is positive
/// definite in exact arithmetic; directions whose Gram eigenvalue falls
/// under the truncation floor are discarded before the whitened solve.
fn pencil_spectrum(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let gram = nalgebra::linalg::SymmetricEigen::new(m.clone());
    let top = gram.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    if !(top.is_finite() && top > 0.0) {
        return Err(Error::numerical(format!(
            "denominator form is not positive (largest Gram eigenvalue {top:.3e})"
        )));
    }
    let keep: Vec<usize> = (0..gram.eigenvalues.len())
        .filter(|&i| gram.eigenvalues[i] > GRAM_TRUNCATION * top)
        .collect();
    if keep.is_empty() {
        return Err(Error::numerical("denominator form collapsed under truncation"));
    }
    // Whitening map S with S^T M S = I on the retained subspace.
    let n = m.nrows();
    let mut s = DMatrix::zeros(n, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let scale = gram.eigenvalues[i].sqrt().recip();
        for row in 0..n {
            s[(row, col)] = gram.eigenvectors[(row, i)] * scale;
        }
    }
    let b = s.transpose() * a * &s;
    let sym = DMatrix::from_fn(keep.len(), keep.len(), |i, j| 0.5 * (b[(i, j)] + b[(j, i)]));
    let eig = nalgebra::linalg::SymmetricEigen::new(sym);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).expect("eigenvalues are finite"));
    Ok(vals)
}

/// Pencil spectrum through the inverse pencil, usable when every pencil
/// eigenvalue is negative (-A positive definite). Returns None when the
/// Cholesky of -A fails, i.e. the top eigenvalue is nonnegative or too
/// close to zero to certify.
///
/// The point of this route is dynamic range. Trial modes reaching the
/// rho transition zone are damped by the W-form at rates up to e^{40}
/// relative to the D2 metric, so the whitened numerator matrix has norm
/// ~ e^{40} while the sought top edge sits near -1e-2; a symmetric
/// eigensolve carries normwise backward error eps * |A| and reports noise
/// at the top. Diagonally scaled Cholesky is elementwise stable across
/// that range, and in C = L^{-1} M L^{-T} the stiff directions shrink to
/// harmless near-zero eigenvalues: |C| ~ 1/|top|, so the edge comes out
/// with ordinary accuracy. Eigenvalues are lambda = -1/theta over the
/// eigenvalues theta of C; directions with theta below machine precision
/// relative to the top (damping beyond 1/eps of the edge) are omitted
/// from the returned spectrum.
fn pencil_spectrum_negative(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = a.nrows();
    let mut d = vec![0.0; n];
    for i in 0..n {
        let h = -a[(i, i)];
        if !(h.is_finite() && h > 0.0) {
            return None;
        }
        d[i] = h.sqrt().recip();
    }
    let hs = DMatrix::from_fn(n, n, |i, j| -0.5 * (a[(i, j)] + a[(j, i)]) * d[i] * d[j]);
    let chol = nalgebra::linalg::Cholesky::new(hs)?;
    let ms = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]) * d[i] * d[j]);
    let l = chol.l();
    let w = l.solve_lower_triangular(&ms)?;
    let c = l.solve_lower_triangular(&w.transpose())?;
    let cs = DMatrix::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let eig = nalgebra::linalg::SymmetricEigen::new(cs);
    let tmax = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    if !(tmax.is_finite() && tmax > 0.0) {
        return None;
    }
    let mut thetas: Vec<f64> = eig
        .eigenvalues
        .iter()
        .cloned()
        .filter(|&t| t >= tmax * f64::EPSILON)
        .collect();
    thetas.sort_by(|a, b| b.partial_cmp(a).expect("eigenvalues are finite"));
    Some(thetas.into_iter().map(|t| -1.0 / t).collect())
}

/// The two weight channels of the Ritz numerator, assembled in the
/// integrated-by-parts representations the continuum estimates use. The
/// first matrix holds the symmetrized entries <L_alpha b_i, b_j rho>_{R^3},
/// the second the 1D rho2 pairings int (L_alpha b_i) b_j rho2 dr; the full
/// W-numerator is K1 * first + second.
///
/// The direct route (apply the operator, multiply by the weight, integrate)
/// cannot be used here: the cross term -(2/r^2) f_r gbar_r . f rho2 has an
/// integrand of size ~ r f f_r rho2 whose integral collapses by three
/// orders of magnitude through cancellation, and for modes near the basis
/// edge the leftover quadrature noise is larger than the gap being
/// measured. After integrating by parts each channel is a sum of
/// same-sign-structured products of smooth coefficients with b_i b_j or
/// b_i' b_j', and plain quadrature converges at its nominal order.
fn stable_numerator_channels(
    family: &WeightFamily,
    cache: &MaxwellianCache,
    alpha: f64,
    basis: &BasisSet,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let grid = family.grid();
    let nodes = grid.nodes();
    let len = grid.len();
    let n = basis.fields.len();
    let (rho, _) = require_materialized(family, "numerator assembly")?;
    let rho = rho.values();
    let gb = cache.gbar();
    let g1 = gb.g_r.values();
    let g2 = gb.g_rr.values();
    let g3 = gb.g_rrr.values();
    let g4 = gb.g_rrrr.values();
    let mu = cache.mu().values();
    let mu_r = cache.mu_r().values();
    let mu_rr = cache.mu_rr().values();
    let rho2 = family.rho2.values();
    let lam = family.lambda.values();
    let (cbar_l, cbar_omega) = collision::steady_rates(alpha);
    let pe = (family.k2 - 2.0) / 2.0;

    // rho2 derivatives as the field times scale-free log factors, so that a
    // uniformly rescaled family stays consistent with its stored fields.
    let mut r2d1 = vec![0.0; len];
    let mut r2d2 = vec![0.0; len];
    for p in 1..len {
        let r = nodes[p];
        let u = 1.0 + r * r;
        let a = 1.0 + (pe + 1.0) * r * r;
        r2d1[p] = rho2[p] * (2.0 / r + 2.0 * pe * r / u);
        r2d2[p] = rho2[p] * 2.0 * (u * a + 2.0 * (pe - 1.0) * r * r * a + 2.0 * (pe + 1.0) * r * r * u)
            / (r * r * u * u);
    }

    // f^2 coefficient of the rho2 local channel after parts:
    //   -(g4 rho2 + 2 g3 rho2' + g2 rho2'')/2 + g2 rho2/r^2
    //   + g1 (rho2/r^2)' + mu rho2,
    // with (rho2/r^2)' = rho2 . 2 pe / (r u). At r = 0 the two surviving
    // pieces are -g2(0) and +g2(0) from rho2'' -> 2 and rho2/r^2 -> 1; the
    // coefficient vanishes there exactly.
    let mut coef2 = vec![0.0; len];
    for p in 1..len {
        let r = nodes[p];
        let u = 1.0 + r * r;
        coef2[p] = -0.5 * (g4[p] * rho2[p] + 2.0 * g3[p] * r2d1[p] + g2[p] * r2d2[p])
            + g2[p] * rho2[p] / (r * r)
            + g1[p] * rho2[p] * 2.0 * pe / (r * u)
            + mu[p] * rho2[p];
    }

    let solves: Vec<_> = basis
        .fields
        .par_iter()
        .map(solve_biharmonic)
        .collect::<Result<Vec<_>>>()?;

    // L_nloc b_i is mu-localized, so its pairings carry no far cancellation
    // and stay in the direct form; node 0 uses the operator's r -> 0 limit
    // but both weights vanish there anyway.
    let nloc_vals: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sb = &solves[i];
            let bi = basis.fields[i].values();
            (0..len)
                .map(|p| {
                    if p == 0 {
                        -3.0 * mu_rr[0] * sb.g_rr.values()[0] + mu[0] * bi[0]
                    } else {
                        let r = nodes[p];
                        -mu_rr[p] * sb.g_rr.values()[p]
                            - 2.0 / (r * r) * mu_r[p] * sb.g_r.values()[p]
                            + mu[p] * bi[p]
                    }
                })
                .collect()
        })
        .collect();

    let entries: Vec<Vec<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let bi = basis.fields[i].values();
            let bid = basis.derivs[i].values();
            (0..=i)
                .map(|j| {
                    let bj = basis.fields[j].values();
                    let bjd = basis.derivs[j].values();
                    let mut ch_rho = vec![0.0; len];
                    let mut ch_rho2 = vec![0.0; len];
                    for p in 0..len {
                        let r = nodes[p];
                        let prod = bi[p] * bj[p];
                        // rho local, divergence form: the symmetrized
                        // bilinear version of -J_rho.
                        let di = bid[p] + 2.0 * r * bi[p];
                        let dj = bjd[p] + 2.0 * r * bj[p];
                        let ei = bid[p] + lam[p] * bi[p];
                        let ej = bjd[p] + lam[p] * bj[p];
                        let mut vr = 2.0 * PI * g2[p] * r * r * rho[p] * (di * ej + dj * ei);
                        // rho2 local, parts form.
                        let mut v2 = g2[p] * bid[p] * bjd[p] * rho2[p] + coef2[p] * prod;
                        // nonlocal, both channels.
                        let nl = 0.5 * (nloc_vals[i][p] * bj[p] + nloc_vals[j][p] * bi[p]);
                        vr += 4.0 * PI * nl * rho[p] * r * r;
                        v2 += nl * rho2[p];
                        if alpha != 1.0 {
                            // additive channel in its symmetric closed form.
                            vr += 2.0 * PI * cbar_l * prod * rho[p] * r * r * (3.0 + lam[p] * r)
                                + 4.0 * PI * cbar_omega * prod * rho[p] * r * r
                                + 8.0 * PI * (alpha - 1.0) * mu[p] * prod * rho[p] * r * r;
                            v2 += 0.5 * cbar_l * prod * (rho2[p] + r * r2d1[p])
                                + cbar_omega * prod * rho2[p]
                                + 2.0 * (alpha - 1.0) * mu[p] * prod * rho2[p];
                        }
                        ch_rho[p] = vr;
                        ch_rho2[p] = v2;
                    }
                    Ok((quad(grid, ch_rho)?, quad(grid, ch_rho2)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut a_rho = DMatrix::zeros(n, n);
    let mut a_rho2 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (vr, v2) = entries[i][j];
            a_rho[(i, j)] = vr;
            a_rho[(j, i)] = vr;
            a_rho2[(i, j)] = v2;
            a_rho2[(j, i)] = v2;
        }
    }
    Ok((a_rho, a_rho2))
}

/// Top constrained Rayleigh quotient of <L_alpha b, b W> against the chosen
/// denominator over the enveloped spline space with the moment constraints
/// removed. The discrete numerator is symmetrized; x . A x is unchanged by
/// that, so the quotient bounds the true form exactly.
pub fn constrained_gap(
    family: &WeightFamily,
    alpha: f64,
    n_modes: usize,
    denominator: GapDenominator,
) -> Result<GapEstimate> {
    let grid = family.grid();
    let (a_c, m_c) = constrained_pencil(family, alpha, n_modes, denominator)?;
    // The all-negative route first; the whitened eigensolve is the
    // fallback for configurations whose top is nonnegative (couplings
    // outside the coercive window, strong perturbations).
    let spectrum = match pencil_spectrum_negative(&a_c, &m_c) {
        Some(spec) => spec,
        None => pencil_spectrum(&a_c, &m_c)?,
    };
    Ok(GapEstimate {
        alpha,
        top_rayleigh: spectrum[0],
        denominator,
        n_modes,
        grid_n: grid.len(),
        r_max: grid.r_max(),
        spectrum,
    })
}

/// Moment-constrained numerator and denominator matrices of the Ritz
/// problem, prescaled by the Gram diagonal.
fn constrained_pencil(
    family: &WeightFamily,
    alpha: f64,
    n_modes: usize,
    denominator: GapDenominator,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let grid = family.grid();
    let (rho, _) = require_materialized(family, "constrained_gap")?;
    if n_modes < 4 || n_modes > grid.len() / 2 {
        return Err(Error::config(format!(
            "n_modes must lie in [4, N/2] = [4, {}], got {n_modes}",
            grid.len() / 2
        )));
    }
    let reach = (n_modes as f64 + 2.0) * SPLINE_SPACING;
    if reach >= grid.r_max() {
        return Err(Error::config(format!(
            "basis reach {reach:.1} exceeds the grid radius {}",
            grid.r_max()
        )));
    }
    let cache = MaxwellianCache::new(grid)?;
    let basis = spline_basis(grid, n_modes, true)?;
    let (a_rho, a_rho2) = stable_numerator_channels(family, &cache, alpha, &basis)?;
    let nodes = grid.nodes();
    let n = n_modes;
    let a = DMatrix::from_fn(n, n, |i, j| family.k1 * a_rho[(i, j)] + a_rho2[(i, j)]);

    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let vals: Vec<f64> = match denominator {
                GapDenominator::D2 => (0..grid.len())
                    .map(|p| {
                        let r = nodes[p];
                        (basis.fields[i].values()[p] * basis.fields[j].values()[p]
                            + basis.derivs[i].values()[p] * basis.derivs[j].values()[p])
                            * r
                            * r
                            * (1.0 + r * r).powf((family.k2 - 5.0) / 2.0)
                    })
                    .collect(),
                GapDenominator::E2 => (0..grid.len())
                    .map(|p| {
                        let r = nodes[p];
                        let prod = basis.fields[i].values()[p] * basis.fields[j].values()[p];
                        4.0 * PI * family.k1 * prod * rho.values()[p] * r * r
                            + prod * family.rho2.values()[p]
                    })
                    .collect(),
            };
            let v = quad(grid, vals)?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }

    let mut rows = Vec::with_capacity(2);
    for k in [2u32, 4] {
        let mut row = Vec::with_capacity(n);
        for b in &basis.fields {
            row.push(integrate(b, k)?);
        }
        rows.push(row);
    }
    // Normalize every mode by its Gram diagonal before solving. The
    // envelope spreads raw mode amplitudes over dozens of orders of
    // magnitude; without this the constraint rows lose the far modes to
    // roundoff and the solver admits fields with nonzero moments.
    let scale: Vec<f64> = (0..n).map(|i| m[(i, i)].sqrt().recip()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let m = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * scale[i] * scale[j]);
    for row in &mut rows {
        for (i, v) in row.iter_mut().enumerate() {
            *v *= scale[i];
        }
    }
    let z = constraint_nullspace(&rows, n);
    let a_c = z.transpose() * &a * &z;
    let m_c = z.transpose() * &m * &z;
    Ok((a_c, m_c))
}

/// Everything the localized surrogate needs about the window [0, n]:
/// the truncated Maxwellian, its potential chain, and the inverse-Maxwellian
/// weight masked to the window.
struct LocalWindow {
    n: f64,
    mu_cut: RadialField,
    mu_r_cut: RadialField,
    mu_rr_cut: RadialField,
    gbar_rr: RadialField,
    gbar_r: RadialField,
    inv_mu: Vec<f64>,
}

impl LocalWindow {
    fn build(grid: &Arc<RadialGrid>, n: f64) -> Result<LocalWindow> {
        let cache = MaxwellianCache::new(grid)?;
        let mask = |field: &RadialField| {
            field.map(|r, v| if r <= n { v } else { 0.0 })
        };
        let mu_cut = mask(cache.mu());
        let mu_r_cut = mask(cache.mu_r());
        let mu_rr_cut = mask(cache.mu_rr());
        let gbar = solve_biharmonic(&mu_cut)?;
        let inv_mu = grid
            .nodes()
            .iter()
            .map(|&r| if r <= n { (r * r).exp() } else { 0.0 })
            .collect();
        Ok(LocalWindow {
            n,
            mu_cut,
            mu_r_cut,
            mu_rr_cut,
            gbar_rr: gbar.g_rr,
            gbar_r: gbar.g_r,
            inv_mu,
        })
    }

    /// L1 with the truncated Maxwellian in both slots, applied to a field
    /// supported inside the window. Derivatives of the cutoff are taken on
    /// the analytic branch; the distributional boundary terms at r = n pair
    /// against fields vanishing there and drop out.
    fn apply(&self, f: &RadialField, f_r: &RadialField, f_rr: &RadialField) -> Result<Vec<f64>> {
        let grid = f.grid();
        let nodes = grid.nodes();
        let gf = solve_biharmonic(f)?;
        let loc = collision::q_bilinear(
            nodes,
            self.gbar_r.values(),
            self.gbar_rr.values(),
            self.mu_cut.values(),
            f.values(),
            f_r.values(),
            f_rr.values(),
        );
        let nloc = collision::q_bilinear(
            nodes,
            gf.g_r.values(),
            gf.g_rr.values(),
            f.values(),
            self.mu_cut.values(),
            self.mu_r_cut.values(),
            self.mu_rr_cut.values(),
        );
        Ok((0..nodes.len()).map(|i| loc[i] + nloc[i]).collect())
    }

    /// Truncated sigma pairing <f, g>_{sigma,n} through p = f mu^{-1/2}:
    /// 4 pi int_0^n (-gbar_rr)(p_f' p_g' + r^2 p_f p_g) r^2 dr, with all
    /// inputs given nodally as (p, p').
    fn sigma_pair(&self, grid: &Arc<RadialGrid>, p1: &[f64], d1: &[f64], p2: &[f64], d2: &[f64]) -> Result<f64> {
        let nodes = grid.nodes();
        let vals: Vec<f64> = (0..nodes.len())
            .map(|i| {
                let r = nodes[i];
                if r > self.n {
                    0.0
                } else {
                    (-self.gbar_rr.values()[i]) * (d1[i] * d2[i] + r * r * p1[i] * p2[i]) * r * r
                }
            })
            .collect();
        Ok(4.0 * PI * quad(grid, vals)?)
    }
}

/// delta_n: the smallest constrained Rayleigh quotient of the localized
/// surrogate form <-L1^(n) f, f mu^-1> against the truncated sigma norm
/// |f mu^-1/2|^2_{sigma,n}, over window-supported splines with the local
/// kernel directions mu and r^2 mu removed by sigma-orthogonality.
///
/// Surrogate: L1^(n) carries the truncated Maxwellian in both operator
/// slots; whether that reproduces the paper's localized form exactly or
/// only up to boundary terms at r = n is open, so every consumer labels
/// this value as the surrogate estimate.
pub fn local_gap_surrogate(n: u32, family: &WeightFamily) -> Result<f64> {
    let grid = family.grid();
    if n < 2 || n > family.r1 {
        return Err(Error::config(format!(
            "local window must satisfy 2 <= n <= R1 = {}; n = {n} is too coarse or too wide",
            family.r1
        )));
    }
    let nf = f64::from(n);
    let m = (nf / SPLINE_SPACING - 2.0).floor() as usize;
    if m < 6 {
        return Err(Error::config(format!("window [0, {n}] holds only {m} basis modes")));
    }
    let window = LocalWindow::build(grid, nf)?;
    let basis = spline_basis(grid, m, false)?;

    // p = f mu^{-1/2} and its derivative for basis members and carriers.
    let half = |r: f64| (r * r / 2.0).exp();
    let nodes = grid.nodes();
    let to_p = |f: &RadialField, fr: &RadialField| -> (Vec<f64>, Vec<f64>) {
        let p: Vec<f64> = (0..nodes.len())
            .map(|i| f.values()[i] * half(nodes[i]))
            .collect();
        let d: Vec<f64> = (0..nodes.len())
            .map(|i| (fr.values()[i] + nodes[i] * f.values()[i]) * half(nodes[i]))
            .collect();
        (p, d)
    };
    let ps: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .map(|i| to_p(&basis.fields[i], &basis.derivs[i]))
        .collect();
    // Carriers mu and r^2 mu give p = e^{-r^2/2} and r^2 e^{-r^2/2}.
    let carrier_p: Vec<(Vec<f64>, Vec<f64>)> = vec![
        (
            nodes.iter().map(|&r| (-r * r / 2.0).exp()).collect(),
            nodes.iter().map(|&r| -r * (-r * r / 2.0).exp()).collect(),
        ),
        (
            nodes.iter().map(|&r| r * r * (-r * r / 2.0).exp()).collect(),
            nodes.iter().map(|&r| (2.0 * r - r * r * r) * (-r * r / 2.0).exp()).collect(),
        ),
    ];

    let images: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| window.apply(&basis.fields[i], &basis.derivs[i], &basis.second[i]))
        .collect::<Result<_>>()?;

    let mut num = DMatrix::zeros(m, m);
    let mut den = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let vals: Vec<f64> = (0..nodes.len())
                .map(|p| {
                    -images[i][p] * basis.fields[j].values()[p] * window.inv_mu[p] * nodes[p] * nodes[p]
                })
                .collect();
            num[(i, j)] = 4.0 * PI * quad(grid, vals)?;
        }
    }
    for i in 0..m {
        for j in 0..=i {
            let v = window.sigma_pair(grid, &ps[i].0, &ps[i].1, &ps[j].0, &ps[j].1)?;
            den[(i, j)] = v;
            den[(j, i)] = v;
        }
    }
    let num = DMatrix::from_fn(m, m, |i, j| 0.5 * (num[(i, j)] + num[(j, i)]));

    let mut rows = Vec::with_capacity(2);
    for (cp, cd) in &carrier_p {
        let mut row = Vec::with_capacity(m);
        for i in 0..m {
            row.push(window.sigma_pair(grid, &ps[i].0, &ps[i].1, cp, cd)?);
        }
        rows.push(row);
    }
    let z = constraint_nullspace(&rows, m);
    let num_c = z.transpose() * &num * &z;
    let den_c = z.transpose() * &den * &z;
    let spectrum = pencil_spectrum(&num_c, &den_c)?;
    Ok(*spectrum.last().expect("constrained space is nonempty"))
}
