//! Uniform square grids and stencil assembly with homogeneous Neumann boundaries.
//!
//! Boundary nodes use mirrored ghost values (`u[-1] = u[1]`), which imposes a
//! zero normal derivative to second order.

use crate::linalg::BandMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2d {
    /// points per axis
    pub n: usize,
    /// side length of the square domain
    pub length: f64,
}

impl Grid2d {
    pub fn new(n: usize, length: f64) -> Self {
        Self { n, length }
    }

    pub fn h(&self) -> f64 {
        self.length / (self.n - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n * j
    }

    /// Coordinates of node `k`.
    #[inline]
    pub fn coords(&self, k: usize) -> (f64, f64) {
        let h = self.h();
        ((k % self.n) as f64 * h, (k / self.n) as f64 * h)
    }

    /// Index of the node closest to `(x, y)`.
    pub fn nearest(&self, x: f64, y: f64) -> usize {
        let h = self.h();
        let clamp = |v: f64| ((v / h).round().max(0.0) as usize).min(self.n - 1);
        self.index(clamp(x), clamp(y))
    }

    #[inline]
    fn reflect(&self, i: isize) -> usize {
        let last = self.n as isize - 1;
        let r = if i < 0 {
            -i
        } else if i > last {
            2 * last - i
        } else {
            i
        };
        r as usize
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let (x, y) = self.coords(k);
                f(x, y)
            })
            .collect()
    }
}

/// Constant coefficients of `L u = -div(D grad u) + b . grad u + c u` with
/// `D = [[dxx, dxy], [dxy, dyy]]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OperatorCoeffs {
    pub dxx: f64,
    pub dyy: f64,
    pub dxy: f64,
    pub bx: f64,
    pub by: f64,
    pub c: f64,
}

/// Assembles `shift * I + L` as a banded matrix. Cross-derivative terms use the
/// centered 9-point stencil and vanish (leaving 5 points) when `dxy == 0`.
pub fn assemble(grid: &Grid2d, coeffs: &OperatorCoeffs, shift: f64) -> BandMatrix {
    let n = grid.n;
    let h = grid.h();
    let h2 = h * h;
    let bw = n + 1;
    let mut a = BandMatrix::zeros(grid.len(), bw, bw);

    let mut stencil: Vec<(isize, isize, f64)> = vec![
        (0, 0, shift + coeffs.c + 2.0 * coeffs.dxx / h2 + 2.0 * coeffs.dyy / h2),
        (-1, 0, -coeffs.dxx / h2 - coeffs.bx / (2.0 * h)),
        (1, 0, -coeffs.dxx / h2 + coeffs.bx / (2.0 * h)),
        (0, -1, -coeffs.dyy / h2 - coeffs.by / (2.0 * h)),
        (0, 1, -coeffs.dyy / h2 + coeffs.by / (2.0 * h)),
    ];
    if coeffs.dxy != 0.0 {
        // -2 dxy u_xy, with u_xy ~ (u[+,+] - u[+,-] - u[-,+] + u[-,-]) / 4h^2
        let w = -2.0 * coeffs.dxy / (4.0 * h2);
        stencil.extend_from_slice(&[(1, 1, w), (-1, -1, w), (1, -1, -w), (-1, 1, -w)]);
    }

    for j in 0..n {
        for i in 0..n {
            let row = grid.index(i, j);
            for &(di, dj, w) in &stencil {
                if w == 0.0 {
                    continue;
                }
                let ii = grid.reflect(i as isize + di);
                let jj = grid.reflect(j as isize + dj);
                a.add(row, grid.index(ii, jj), w);
            }
        }
    }
    a
}
