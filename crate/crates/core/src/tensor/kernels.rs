//! Plain slice kernels shared by the forward and backward passes.

/// Column tile width: a `k × TILE` block of `b` stays cache-resident while
/// every row of `c` consumes it.
const TILE: usize = 128;

/// `c += a · b` with `a: m×k`, `b: k×n`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for j0 in (0..n).step_by(TILE) {
        let j1 = (j0 + TILE).min(n);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            axpy_rows(&mut c[i * n + j0..i * n + j1], |p| arow[p], b, k, n, j0);
        }
    }
}

/// `crow += Σ_p coef(p) · b[p, j0..j0+len]` over the `k` rows of `b: k×n`,
/// four rows per pass so each element of `crow` is loaded and stored k/4 times.
#[inline(always)]
fn axpy_rows(crow: &mut [f64], coef: impl Fn(usize) -> f64, b: &[f64], k: usize, n: usize, j0: usize) {
    let len = crow.len();
    let row = |p: usize| &b[p * n + j0..p * n + j0 + len];
    let mut p = 0;
    while p + 4 <= k {
        let (a0, a1, a2, a3) = (coef(p), coef(p + 1), coef(p + 2), coef(p + 3));
        let (b0, b1, b2, b3) = (row(p), row(p + 1), row(p + 2), row(p + 3));
        for j in 0..len {
            crow[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
        }
        p += 4;
    }
    for p in p..k {
        let av = coef(p);
        for (cv, bv) in crow.iter_mut().zip(row(p)) {
            *cv += av * bv;
        }
    }
}

/// `c += a · bᵀ` with `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    // Tiled over the summed axis so long rows of `b` are reused from cache.
    for p0 in (0..k).step_by(4 * TILE) {
        let p1 = (p0 + 4 * TILE).min(k);
        for i in 0..m {
            let arow = &a[i * k + p0..i * k + p1];
            for j in 0..n {
                c[i * n + j] += dot(arow, &b[j * k + p0..j * k + p1]);
            }
        }
    }
}

/// `c += aᵀ · b` with `a: k×m`, `b: k×n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    for j0 in (0..n).step_by(TILE) {
        let j1 = (j0 + TILE).min(n);
        for i in 0..m {
            axpy_rows(&mut c[i * n + j0..i * n + j1], |p| a[p * m + i], b, k, n, j0);
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

/// `tanh` via one `exp` (within a few ulp of libm, ~2.5× cheaper).
pub(crate) fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a > 19.1 {
        return x.signum();
    }
    let t = if a < 0.5 {
        let e = (2.0 * a).exp_m1();
        e / (e + 2.0)
    } else {
        let e = (2.0 * a).exp();
        (e - 1.0) / (e + 1.0)
    };
    t.copysign(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Geometry of a stride-1, zero-padded ("same") 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// Unfolds `x: c_in×h×w` into `cols: (c_in·kh·kw) × (h·w)`.
pub(crate) fn im2col(x: &[f64], g: ConvGeom) -> Vec<f64> {
    let hw = g.h * g.w;
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let mut cols = vec![0.0; g.patch_len() * hw];
    for ci in 0..g.c_in {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..g.h {
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    let out = &mut dst[y * g.w..(y + 1) * g.w];
                    for (xo, o) in out.iter_mut().enumerate() {
                        let sx = xo as isize + kx as isize - pw as isize;
                        if sx >= 0 && sx < g.w as isize {
                            *o = src[sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters `cols` back onto an image, accumulating into `dx`.
pub(crate) fn col2im(cols: &[f64], g: ConvGeom, dx: &mut [f64]) {
    let hw = g.h * g.w;
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..g.h {
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    for xo in 0..g.w {
                        let sx = xo as isize + kx as isize - pw as isize;
                        if sx >= 0 && sx < g.w as isize {
                            dst[sx as usize] += src[y * g.w + xo];
                        }
                    }
                }
            }
        }
    }
}
