//! B-spline bases and the learnable per-edge activation
//! `phi(x) = w_b * silu(x) + w_s * sum_m c_m B_m(x)`.
//!
//! Grids are uniform: `G` intervals over `[domain_lo, domain_hi]`, extended by
//! `K` knots of the same width on each side, giving `G + K` basis functions of
//! degree `K`. Outside the extended knot span every basis function is zero, so
//! an activation falls back to its SiLU term there.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{silu, silu_deriv, Real};

/// Largest supported spline degree. Bounds the stack scratch used by the basis recursion.
pub const MAX_DEGREE: usize = 7;

/// Half-width of the domain used when every grid-update sample is identical.
pub const DEGENERATE_HALF_WIDTH: f64 = 0.1;

/// Relative margin added on each side of the sample range by a grid update.
pub const GRID_MARGIN: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid<T> {
    num_intervals: usize,
    degree: usize,
    domain_lo: T,
    domain_hi: T,
}

/// Nonzero basis values (and derivatives) at one point.
///
/// `values[r]` is `B_{first + r}(x)`; indices outside `0..G+K` belong to
/// virtual basis functions past the ends of the knot vector and must be skipped.
#[derive(Clone, Copy, Debug)]
pub struct LocalBasis<T> {
    pub first: isize,
    pub values: [T; MAX_DEGREE + 1],
    pub derivs: [T; MAX_DEGREE + 1],
}

impl<T: Real> SplineGrid<T> {
    pub fn uniform(num_intervals: usize, degree: usize, domain_lo: T, domain_hi: T) -> Result<Self> {
        if num_intervals == 0 {
            return Err(invalid("spline grid needs at least one interval"));
        }
        if degree > MAX_DEGREE {
            return Err(invalid(format!("spline degree {degree} exceeds {MAX_DEGREE}")));
        }
        if !domain_lo.is_finite() || !domain_hi.is_finite() || domain_lo >= domain_hi {
            return Err(invalid(format!("bad spline domain [{domain_lo}, {domain_hi}]")));
        }
        Ok(Self {
            num_intervals,
            degree,
            domain_lo,
            domain_hi,
        })
    }

    pub fn num_intervals(&self) -> usize {
        self.num_intervals
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn domain(&self) -> (T, T) {
        (self.domain_lo, self.domain_hi)
    }

    /// Number of basis functions, `G + K`.
    pub fn num_basis(&self) -> usize {
        self.num_intervals + self.degree
    }

    pub fn step(&self) -> T {
        (self.domain_hi - self.domain_lo) / T::from_usize_lossy(self.num_intervals)
    }

    /// Knot `t_i` of the uniform extension; `t_K = domain_lo`, `t_{G+K} = domain_hi`.
    /// Indices outside `0..=G+2K` continue the uniform spacing.
    #[inline]
    pub fn knot(&self, i: isize) -> T {
        let k = self.degree as isize;
        if i == k + self.num_intervals as isize {
            return self.domain_hi;
        }
        self.domain_lo + self.step() * T::from_isize(i - k).expect("knot index")
    }

    /// The extended knot vector, `G + 2K + 1` entries.
    pub fn knots(&self) -> Vec<T> {
        let n = (self.num_intervals + 2 * self.degree + 1) as isize;
        (0..n).map(|i| self.knot(i)).collect()
    }

    /// Knot interval containing `x`, or `None` outside `[t_0, t_{G+2K})`.
    #[inline]
    fn span(&self, x: T) -> Option<isize> {
        let last = (self.num_intervals + 2 * self.degree) as isize;
        if !(x >= self.knot(0) && x < self.knot(last)) {
            return None;
        }
        let guess = ((x - self.knot(0)) / self.step()).floor().to_isize().unwrap_or(0);
        let mut s = guess.clamp(0, last - 1);
        while s > 0 && x < self.knot(s) {
            s -= 1;
        }
        while s < last - 1 && x >= self.knot(s + 1) {
            s += 1;
        }
        Some(s)
    }

    /// Cox-de Boor evaluation of the `K + 1` basis functions that can be
    /// nonzero at `x`, plus their derivatives. Returns `None` when `x` lies
    /// outside the support of every basis function.
    #[inline]
    pub fn local_basis(&self, x: T) -> Option<LocalBasis<T>> {
        let s = self.span(x)?;
        let p = self.degree;
        let zero = T::zero();
        let mut n = [zero; MAX_DEGREE + 1];
        let mut lower = [zero; MAX_DEGREE + 1];
        let mut left = [zero; MAX_DEGREE + 1];
        let mut right = [zero; MAX_DEGREE + 1];
        n[0] = T::one();
        for j in 1..=p {
            if j == p {
                lower[..p].copy_from_slice(&n[..p]);
            }
            left[j] = x - self.knot(s + 1 - j as isize);
            right[j] = self.knot(s + j as isize) - x;
            let mut saved = zero;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }

        let mut derivs = [zero; MAX_DEGREE + 1];
        if p > 0 {
            let kf = T::from_usize_lossy(p);
            let first = s - p as isize;
            for (r, d) in derivs.iter_mut().enumerate().take(p + 1) {
                let m = first + r as isize;
                let mut acc = zero;
                if r >= 1 {
                    acc += kf * lower[r - 1] / (self.knot(m + p as isize) - self.knot(m));
                }
                if r < p {
                    acc -= kf * lower[r] / (self.knot(m + p as isize + 1) - self.knot(m + 1));
                }
                *d = acc;
            }
        }

        Some(LocalBasis {
            first: s - p as isize,
            values: n,
            derivs,
        })
    }

    /// All `G + K` basis values `B_1(x) .. B_{G+K}(x)`.
    pub fn basis_eval(&self, x: T) -> Result<Vec<T>> {
        if !x.is_finite() {
            return Err(invalid("basis evaluated at non-finite x"));
        }
        let mut out = vec![T::zero(); self.num_basis()];
        if let Some(local) = self.local_basis(x) {
            for r in 0..=self.degree {
                if let Some(slot) = self.slot(local.first + r as isize) {
                    out[slot] = local.values[r];
                }
            }
        }
        Ok(out)
    }

    #[inline]
    pub(crate) fn slot(&self, m: isize) -> Option<usize> {
        (m >= 0 && (m as usize) < self.num_basis()).then_some(m as usize)
    }

    /// Grid with the same `G` and `K` whose interior covers the sample range plus a margin.
    pub fn covering(&self, xs: &[T]) -> Result<Self> {
        if xs.is_empty() {
            return Err(invalid("grid update needs at least one sample"));
        }
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for &x in xs {
            if !x.is_finite() {
                return Err(invalid("grid update sample is not finite"));
            }
            lo = lo.min(x);
            hi = hi.max(x);
        }
        let range = hi - lo;
        let (lo, hi) = if range > T::zero() {
            let margin = T::lit(GRID_MARGIN) * range;
            (lo - margin, hi + margin)
        } else {
            let half = T::lit(DEGENERATE_HALF_WIDTH);
            (lo - half, hi + half)
        };
        Self::uniform(self.num_intervals, self.degree, lo, hi)
    }
}

/// One learnable edge function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineActivation<T> {
    pub grid: SplineGrid<T>,
    pub coeffs: Vec<T>,
    pub w_b: T,
    pub w_s: T,
}

/// Partial derivatives of one activation at one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationGrad<T> {
    pub d_x: T,
    pub d_coeffs: Vec<T>,
    pub d_w_b: T,
    pub d_w_s: T,
}

impl<T: Real> SplineActivation<T> {
    pub fn new(grid: SplineGrid<T>, coeffs: Vec<T>, w_b: T, w_s: T) -> Result<Self> {
        let act = Self {
            grid,
            coeffs,
            w_b,
            w_s,
        };
        act.validate()?;
        Ok(act)
    }

    /// Conventional initialization: coefficients ~ N(0, 0.1^2), both scales 1.
    pub fn random<R: Rng + ?Sized>(grid: SplineGrid<T>, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let coeffs = (0..grid.num_basis())
            .map(|_| T::lit(normal.sample(rng)))
            .collect();
        Self {
            grid,
            coeffs,
            w_b: T::one(),
            w_s: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.len() != self.grid.num_basis() {
            return Err(invalid(format!(
                "activation has {} coefficients, grid needs {}",
                self.coeffs.len(),
                self.grid.num_basis()
            )));
        }
        let finite = self.coeffs.iter().all(|c| c.is_finite())
            && self.w_b.is_finite()
            && self.w_s.is_finite();
        if !finite {
            return Err(invalid("activation parameters must be finite"));
        }
        Ok(())
    }

    /// `sum_m c_m B_m(x)`.
    #[inline]
    pub fn spline_sum(&self, x: T) -> T {
        match self.grid.local_basis(x) {
            Some(local) => self.dot_local(&local),
            None => T::zero(),
        }
    }

    #[inline]
    pub(crate) fn dot_local(&self, local: &LocalBasis<T>) -> T {
        let mut acc = T::zero();
        for r in 0..=self.grid.degree() {
            if let Some(m) = self.grid.slot(local.first + r as isize) {
                acc += self.coeffs[m] * local.values[r];
            }
        }
        acc
    }

    #[inline]
    pub(crate) fn dot_local_derivs(&self, local: &LocalBasis<T>) -> T {
        let mut acc = T::zero();
        for r in 0..=self.grid.degree() {
            if let Some(m) = self.grid.slot(local.first + r as isize) {
                acc += self.coeffs[m] * local.derivs[r];
            }
        }
        acc
    }

    pub fn eval(&self, x: T) -> Result<T> {
        if !x.is_finite() {
            return Err(invalid("activation evaluated at non-finite x"));
        }
        Ok(self.w_b * silu(x) + self.w_s * self.spline_sum(x))
    }

    pub fn grad(&self, x: T) -> Result<ActivationGrad<T>> {
        if !x.is_finite() {
            return Err(invalid("activation gradient at non-finite x"));
        }
        let mut d_coeffs = vec![T::zero(); self.coeffs.len()];
        let (spline, spline_dx) = match self.grid.local_basis(x) {
            Some(local) => {
                for r in 0..=self.grid.degree() {
                    if let Some(m) = self.grid.slot(local.first + r as isize) {
                        d_coeffs[m] = self.w_s * local.values[r];
                    }
                }
                (self.dot_local(&local), self.dot_local_derivs(&local))
            }
            None => (T::zero(), T::zero()),
        };
        Ok(ActivationGrad {
            d_x: self.w_b * silu_deriv(x) + self.w_s * spline_dx,
            d_coeffs,
            d_w_b: silu(x),
            d_w_s: spline,
        })
    }

    /// Moves the grid onto the sample range and refits the coefficients by
    /// least squares so the spline term keeps its values on the samples.
    pub fn update_grid_from_samples(&self, xs: &[T]) -> Result<Self> {
        let refit = GridRefit::new(&self.grid, xs)?;
        Ok(refit.apply(self, xs))
    }
}

/// A new grid for one sample set together with the factorized design matrix,
/// so every activation fed by the same samples can be refit cheaply.
pub(crate) struct GridRefit<T> {
    grid: SplineGrid<T>,
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    tolerance: f64,
}

impl<T: Real> GridRefit<T> {
    pub(crate) fn new(old: &SplineGrid<T>, xs: &[T]) -> Result<Self> {
        let grid = old.covering(xs)?;
        let nb = grid.num_basis();
        let mut design = DMatrix::<f64>::zeros(xs.len(), nb);
        for (i, &x) in xs.iter().enumerate() {
            if let Some(local) = grid.local_basis(x) {
                for r in 0..=grid.degree() {
                    if let Some(m) = grid.slot(local.first + r as isize) {
                        design[(i, m)] = local.values[r].as_f64();
                    }
                }
            }
        }
        let svd = design.svd(true, true);
        let largest = svd.singular_values.max();
        let tolerance = largest * 1e-12 * (xs.len().max(nb) as f64);
        Ok(Self {
            grid,
            svd,
            tolerance,
        })
    }

    pub(crate) fn apply(&self, act: &SplineActivation<T>, xs: &[T]) -> SplineActivation<T> {
        let target = DVector::from_iterator(xs.len(), xs.iter().map(|&x| act.spline_sum(x).as_f64()));
        // Singular values under the tolerance are dropped, which yields the minimum-norm solution.
        let solution = self
            .svd
            .solve(&target, self.tolerance)
            .expect("svd computed with both factors");
        SplineActivation {
            grid: self.grid.clone(),
            coeffs: solution.iter().map(|&c| T::lit(c)).collect(),
            w_b: act.w_b,
            w_s: act.w_s,
        }
    }
}
