//! Lane resampling to a fixed point count.
//!
//! Polylines with at least four distinct points get a global cubic B-spline
//! interpolant (chord-length parameters, averaged clamped knots) sampled at
//! uniform parameter steps. Shorter ones fall back to linear interpolation at
//! uniform arclength. Both keep the endpoints.

use nalgebra::{DMatrix, DVector};

use crate::error::{PlcError, Result};
use crate::lane::{distance, Point};

const DEGREE: usize = 3;

pub fn resample_lane(points: &[Point], m: usize) -> Result<Vec<Point>> {
    if m < 2 {
        return Err(PlcError::invalid(format!("cannot resample a lane to {m} points")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PlcError::invalid("lane has a non-finite point"));
    }
    let mut distinct: Vec<Point> = Vec::with_capacity(points.len());
    for &p in points {
        if distinct.last() != Some(&p) {
            distinct.push(p);
        }
    }
    if distinct.len() < 2 {
        return Err(PlcError::invalid("lane points are all coincident"));
    }
    let mut out = if distinct.len() <= DEGREE {
        linear(&distinct, m)
    } else {
        BSpline::interpolate(&distinct)?.sample(m)
    };
    out[0] = distinct[0];
    out[m - 1] = *distinct.last().expect("non-empty");
    Ok(out)
}

fn cumulative_length(points: &[Point]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(points.len());
    let mut total = 0.0;
    acc.push(0.0);
    for w in points.windows(2) {
        total += distance(w[0], w[1]);
        acc.push(total);
    }
    acc
}

fn linear(points: &[Point], m: usize) -> Vec<Point> {
    let cum = cumulative_length(points);
    let total = *cum.last().expect("non-empty");
    let mut seg = 0;
    (0..m)
        .map(|k| {
            let s = total * k as f64 / (m - 1) as f64;
            while seg + 2 < points.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let span = cum[seg + 1] - cum[seg];
            let t = if span > 0.0 { ((s - cum[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
            let (a, b) = (points[seg], points[seg + 1]);
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect()
}

/// Clamped cubic B-spline curve on `[0, 1]`.
struct BSpline {
    knots: Vec<f64>,
    control: Vec<Point>,
}

impl BSpline {
    /// Curve through every point, at chord-length parameters.
    fn interpolate(points: &[Point]) -> Result<Self> {
        let n = points.len();
        let cum = cumulative_length(points);
        let total = cum[n - 1];
        let params: Vec<f64> = cum.iter().map(|c| c / total).collect();

        // averaging knot vector: p+1 zeros, interior means, p+1 ones
        let mut knots = vec![0.0; DEGREE + 1];
        for j in 1..n - DEGREE {
            knots.push(params[j..j + DEGREE].iter().sum::<f64>() / DEGREE as f64);
        }
        knots.extend([1.0; DEGREE + 1]);

        let mut basis = DMatrix::<f64>::zeros(n, n);
        for (row, &u) in params.iter().enumerate() {
            let span = find_span(&knots, n, u);
            for (i, v) in basis_functions(&knots, span, u).into_iter().enumerate() {
                basis[(row, span - DEGREE + i)] = v;
            }
        }
        let lu = basis.lu();
        let solve = |axis: usize| {
            let rhs = DVector::from_iterator(n, points.iter().map(|p| p[axis]));
            lu.solve(&rhs).ok_or_else(|| PlcError::invalid("singular spline interpolation system"))
        };
        let (xs, ys) = (solve(0)?, solve(1)?);
        Ok(Self {
            knots,
            control: (0..n).map(|i| [xs[i], ys[i]]).collect(),
        })
    }

    fn eval(&self, u: f64) -> Point {
        let n = self.control.len();
        let span = find_span(&self.knots, n, u);
        let mut p = [0.0, 0.0];
        for (i, b) in basis_functions(&self.knots, span, u).into_iter().enumerate() {
            let c = self.control[span - DEGREE + i];
            p[0] += b * c[0];
            p[1] += b * c[1];
        }
        p
    }

    fn sample(&self, m: usize) -> Vec<Point> {
        (0..m).map(|k| self.eval(k as f64 / (m - 1) as f64)).collect()
    }
}

/// Knot span index `s` with `knots[s] <= u < knots[s + 1]`; the last
/// non-empty span for `u = 1`.
fn find_span(knots: &[f64], n_control: usize, u: f64) -> usize {
    let last = n_control - 1;
    if u >= knots[last + 1] {
        return last;
    }
    let (mut lo, mut hi) = (DEGREE, last + 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The `DEGREE + 1` non-zero basis functions at `u` on span `span`
/// (Cox-de Boor triangle).
fn basis_functions(knots: &[f64], span: usize, u: f64) -> [f64; DEGREE + 1] {
    let mut n = [0.0; DEGREE + 1];
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    n[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}
