//! Gauss–Legendre rules and an adaptive tensor-product cubature on
//! rectangles for vector-valued integrands.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use crate::error::{Error, Result};

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi's initial guess, refined by Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (c + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Tensor-product rule over `[a, b] x [c, d]`.
    pub fn integrate_rect<F: FnMut(f64, f64) -> f64>(&self, rect: Rect, mut f: F) -> f64 {
        let mut total = 0.0;
        for (x, wx) in self.mapped(rect.x0, rect.x1) {
            for (y, wy) in self.mapped(rect.y0, rect.y1) {
                total += wx * wy * f(x, y);
            }
        }
        total
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn halves(&self, along_x: bool) -> [Rect; 2] {
        if along_x {
            let m = 0.5 * (self.x0 + self.x1);
            [Rect::new(self.x0, m, self.y0, self.y1), Rect::new(m, self.x1, self.y0, self.y1)]
        } else {
            let m = 0.5 * (self.y0 + self.y1);
            [Rect::new(self.x0, self.x1, self.y0, m), Rect::new(self.x0, self.x1, m, self.y1)]
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CubatureOptions {
    /// Points per axis of the base rule.
    pub order: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_evals: usize,
}

impl Default for CubatureOptions {
    fn default() -> Self {
        CubatureOptions {
            order: 7,
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_evals: 4_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CubatureResult {
    pub value: Vec<f64>,
    /// Estimated absolute error (max over components).
    pub error: f64,
    pub evals: usize,
}

struct Cell {
    rect: Rect,
    /// Sum of the two half estimates along the split axis.
    fine: Vec<f64>,
    /// Half estimates, reused as the children's coarse values on split.
    halves: [Vec<f64>; 2],
    split_x: bool,
    err: f64,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn max_diff(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((x, y), z)| (x + y - z).abs())
        .fold(0.0, f64::max)
}

/// Adaptive cubature of a vector integrand `f(x, y, out)` over `rect`.
///
/// Each cell is integrated with an `order x order` Gauss–Legendre rule and
/// with the same rule on its halves along each axis. The axis whose halving
/// changes the estimate more is the split axis, and that change is the local
/// error. Splitting one axis at a time resolves singularities along an edge
/// without refining the other direction. The cell with the largest error is
/// split until the summed error meets `max(abs_tol, rel_tol * |I|_inf)` or
/// the evaluation budget runs out, in which case `Error::Quadrature`
/// reports the achieved error.
pub fn adaptive_cubature<F>(
    dim: usize,
    rect: Rect,
    opts: &CubatureOptions,
    mut f: F,
) -> Result<CubatureResult>
where
    F: FnMut(f64, f64, &mut [f64]),
{
    if rect.area() == 0.0 {
        return Ok(CubatureResult {
            value: vec![0.0; dim],
            error: 0.0,
            evals: 0,
        });
    }
    let rule = GaussLegendre::new(opts.order);
    let mut scratch = vec![0.0; dim];
    let mut evals = 0usize;
    let mut basic = |r: &Rect, evals: &mut usize| -> Vec<f64> {
        let mut acc = vec![0.0; dim];
        for (x, wx) in rule.mapped(r.x0, r.x1) {
            for (y, wy) in rule.mapped(r.y0, r.y1) {
                scratch.iter_mut().for_each(|s| *s = 0.0);
                f(x, y, &mut scratch);
                let w = wx * wy;
                for (a, s) in acc.iter_mut().zip(&scratch) {
                    *a += w * s;
                }
            }
        }
        *evals += rule.len() * rule.len();
        acc
    };

    let coarse = basic(&rect, &mut evals);
    let mut make_cell = |r: Rect, coarse: Vec<f64>, evals: &mut usize| -> Cell {
        let [xl, xr] = r.halves(true);
        let [yl, yr] = r.halves(false);
        let hx = [basic(&xl, evals), basic(&xr, evals)];
        let hy = [basic(&yl, evals), basic(&yr, evals)];
        let ex = max_diff(&hx[0], &hx[1], &coarse);
        let ey = max_diff(&hy[0], &hy[1], &coarse);
        let (split_x, halves, err) = if ex >= ey { (true, hx, ex) } else { (false, hy, ey) };
        let fine = halves[0].iter().zip(&halves[1]).map(|(a, b)| a + b).collect();
        Cell {
            rect: r,
            fine,
            halves,
            split_x,
            err,
        }
    };

    let root = make_cell(rect, coarse, &mut evals);
    let mut total = root.fine.clone();
    let mut total_err = root.err;
    let mut heap = BinaryHeap::new();
    heap.push(root);

    loop {
        let norm = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = opts.abs_tol.max(opts.rel_tol * norm);
        if total_err <= tol {
            break;
        }
        if evals >= opts.max_evals || !total_err.is_finite() {
            return Err(Error::Quadrature {
                achieved: total_err,
                tolerance: tol,
            });
        }
        let cell = heap.pop().expect("heap never empties");
        for k in 0..dim {
            total[k] -= cell.fine[k];
        }
        total_err -= cell.err;
        let rects = cell.rect.halves(cell.split_x);
        for (q, coarse) in rects.into_iter().zip(cell.halves) {
            let child = make_cell(q, coarse, &mut evals);
            for k in 0..dim {
                total[k] += child.fine[k];
            }
            total_err += child.err;
            heap.push(child);
        }
        if total_err < 0.0 {
            total_err = heap.iter().map(|c| c.err).sum();
        }
    }
    let mut value = vec![0.0; dim];
    let mut error = 0.0;
    for c in heap.iter() {
        for k in 0..dim {
            value[k] += c.fine[k];
        }
        error += c.err;
    }
    Ok(CubatureResult {
        value,
        error,
        evals,
    })
}

/// Scalar convenience wrapper around [`adaptive_cubature`].
pub fn adaptive_cubature_scalar<F>(rect: Rect, opts: &CubatureOptions, mut f: F) -> Result<(f64, f64)>
where
    F: FnMut(f64, f64) -> f64,
{
    let r = adaptive_cubature(1, rect, opts, |x, y, out| out[0] = f(x, y))?;
    Ok((r.value[0], r.error))
}
