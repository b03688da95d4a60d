//! Raw numeric kernels. General matrix multiply is delegated to
//! `matrixmultiply` (single-threaded, deterministic); everything else is
//! plain loops.

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides {
    pub rs: isize,
    pub cs: isize,
}

impl Strides {
    /// Row-major `rows × cols` matrix.
    pub fn row_major(cols: usize) -> Self {
        Self {
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Self {
            rs: 1,
            cs: cols as isize,
        }
    }
}

fn extent(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * s.rs as usize + (cols - 1) * s.cs as usize + 1
}

/// `c = alpha * a·b + beta * c` with `a: m×k`, `b: k×n`, `c: m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    assert!(a.len() >= extent(m, k, sa), "gemm: lhs buffer too small");
    assert!(b.len() >= extent(k, n, sb), "gemm: rhs buffer too small");
    assert!(c.len() >= extent(m, n, sc), "gemm: output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.rs,
            sa.cs,
            b.as_ptr(),
            sb.rs,
            sb.cs,
            beta,
            c.as_mut_ptr(),
            sc.rs,
            sc.cs,
        );
    }
}

/// Geometry of one grouped 1-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub padding: usize,
    pub t_out: usize,
}

impl ConvGeom {
    pub fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }
    pub fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }
    pub fn col_rows(&self) -> usize {
        self.cin_g() * self.kernel
    }
}

/// Unfolds group `g` of `x` (`c_in × t_in`) into `(cin_g·K) × t_out` columns.
pub(crate) fn im2col(x: &[f64], geo: &ConvGeom, g: usize, cols: &mut [f64]) {
    let (cin_g, k, t_out) = (geo.cin_g(), geo.kernel, geo.t_out);
    for c in 0..cin_g {
        let src = &x[(g * cin_g + c) * geo.t_in..(g * cin_g + c + 1) * geo.t_in];
        for kk in 0..k {
            let dst = &mut cols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            for (t, d) in dst.iter_mut().enumerate() {
                let pos = t * geo.stride + kk;
                *d = if pos < geo.padding || pos - geo.padding >= geo.t_in {
                    0.0
                } else {
                    src[pos - geo.padding]
                };
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back into `dx`.
pub(crate) fn col2im(dcols: &[f64], geo: &ConvGeom, g: usize, dx: &mut [f64]) {
    let (cin_g, k, t_out) = (geo.cin_g(), geo.kernel, geo.t_out);
    for c in 0..cin_g {
        let row0 = (g * cin_g + c) * geo.t_in;
        for kk in 0..k {
            let src = &dcols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            for (t, v) in src.iter().enumerate() {
                let pos = t * geo.stride + kk;
                if pos >= geo.padding && pos - geo.padding < geo.t_in {
                    dx[row0 + pos - geo.padding] += v;
                }
            }
        }
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_transposed_operands() {
        // a = [[1,2],[3,4]], b^T where b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(
            2,
            2,
            2,
            1.0,
            &a,
            Strides::row_major(2),
            &b,
            Strides::transposed(2),
            0.0,
            &mut c,
            Strides::row_major(2),
        );
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn log_add_matches_naive() {
        let (a, b) = (-1.3_f64, 0.4_f64);
        let naive = (a.exp() + b.exp()).ln();
        assert!((log_add(a, b) - naive).abs() < 1e-14);
        assert_eq!(log_add(f64::NEG_INFINITY, b), b);
        assert!((logsumexp(&[a, b]) - naive).abs() < 1e-14);
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0, -0.7, 0.0, 0.3, 2.2] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
