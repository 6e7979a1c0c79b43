//! Raw compute loops shared by the graph ops and the standalone layer paths.
//! All buffers are row-major; image buffers are channels-last.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// `a[m,k] · b[k,n]`.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` for `a[m,k]`, `b[m,n]`, giving `[k,n]`.
pub(crate) fn matmul_at_b<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` for `a[m,k]`, `b[n,k]`, giving `[m,n]`.
pub(crate) fn matmul_a_bt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    matmul(a, &transpose(b, n, k), m, k, n)
}

pub(crate) fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Spatial padding amounts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad2d {
    /// Padding that keeps the spatial size under a `k×k` stride-1 kernel.
    pub fn same(k: usize) -> Self {
        let before = (k - 1) / 2;
        let after = k - 1 - before;
        Pad2d {
            top: before,
            bottom: after,
            left: before,
            right: after,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Pad2d::default()
    }
}

/// Source index of padded coordinate `i` (may be negative) in `0..len`.
/// `None` marks a zero-filled position.
pub(crate) fn reflect_or_zero(i: isize, len: usize, reflect: bool) -> Option<usize> {
    let len_i = len as isize;
    if (0..len_i).contains(&i) {
        return Some(i as usize);
    }
    if !reflect {
        return None;
    }
    let mut j = i;
    // single reflection suffices because pad < len is checked by the caller
    if j < 0 {
        j = -j;
    }
    if j >= len_i {
        j = 2 * (len_i - 1) - j;
    }
    Some(j as usize)
}

/// For each padded spatial position, the source spatial offset (`h*W + w`).
pub(crate) fn pad_map(h: usize, w: usize, pad: Pad2d, reflect: bool) -> Vec<Option<usize>> {
    let hp = h + pad.top + pad.bottom;
    let wp = w + pad.left + pad.right;
    let mut map = Vec::with_capacity(hp * wp);
    for y in 0..hp {
        let sy = reflect_or_zero(y as isize - pad.top as isize, h, reflect);
        for x in 0..wp {
            let sx = reflect_or_zero(x as isize - pad.left as isize, w, reflect);
            map.push(match (sy, sx) {
                (Some(a), Some(b)) => Some(a * w + b),
                _ => None,
            });
        }
    }
    map
}

/// Image-to-column transform for a valid stride-1 `kh×kw` window over
/// `x[n,h,w,c]`. Column order is `(dy, dx, channel)`.
pub(crate) fn im2col<T: Real>(
    x: &[T],
    dims: [usize; 4],
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let [n, h, w, c] = dims;
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let width = kh * kw * c;
    let mut cols = vec![T::zero(); n * ho * wo * width];
    let mut row = 0;
    for b in 0..n {
        for y in 0..ho {
            for xo in 0..wo {
                let dst = &mut cols[row * width..(row + 1) * width];
                for dy in 0..kh {
                    let src = ((b * h + y + dy) * w + xo) * c;
                    let off = dy * kw * c;
                    dst[off..off + kw * c].copy_from_slice(&x[src..src + kw * c]);
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<T: Real>(
    cols: &[T],
    dims: [usize; 4],
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let [n, h, w, c] = dims;
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let width = kh * kw * c;
    let mut x = vec![T::zero(); n * h * w * c];
    let mut row = 0;
    for b in 0..n {
        for y in 0..ho {
            for xo in 0..wo {
                let srcrow = &cols[row * width..(row + 1) * width];
                for dy in 0..kh {
                    let dst = ((b * h + y + dy) * w + xo) * c;
                    let off = dy * kw * c;
                    for (d, &s) in x[dst..dst + kw * c]
                        .iter_mut()
                        .zip(&srcrow[off..off + kw * c])
                    {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
    x
}

/// Per-channel mean-centred `k×k` patches of `x[n,h,w,c]`, one row per
/// (output location, channel) in that order.
pub(crate) fn centered_patches<T: Real>(x: &[T], dims: [usize; 4], k: usize) -> Vec<T> {
    let [n, h, w, c] = dims;
    let (ho, wo) = (h - k + 1, w - k + 1);
    let area = k * k;
    let inv_area = T::one() / T::of_usize(area);
    let mut rows = vec![T::zero(); n * ho * wo * c * area];
    let mut r = 0;
    for b in 0..n {
        for y in 0..ho {
            for xo in 0..wo {
                for ch in 0..c {
                    let dst = &mut rows[r * area..(r + 1) * area];
                    for dy in 0..k {
                        for dx in 0..k {
                            dst[dy * k + dx] = x[((b * h + y + dy) * w + xo + dx) * c + ch];
                        }
                    }
                    let mean = dst.iter().copied().sum::<T>() * inv_area;
                    for v in dst.iter_mut() {
                        *v = *v - mean;
                    }
                    r += 1;
                }
            }
        }
    }
    rows
}

/// Adjoint of [`centered_patches`]: centring is an orthogonal projection, so
/// each row gradient is re-centred before being scattered back.
pub(crate) fn centered_patches_adjoint<T: Real>(
    grad_rows: &[T],
    dims: [usize; 4],
    k: usize,
) -> Vec<T> {
    let [n, h, w, c] = dims;
    let (ho, wo) = (h - k + 1, w - k + 1);
    let area = k * k;
    let inv_area = T::one() / T::of_usize(area);
    let mut x = vec![T::zero(); n * h * w * c];
    let mut r = 0;
    for b in 0..n {
        for y in 0..ho {
            for xo in 0..wo {
                for ch in 0..c {
                    let src = &grad_rows[r * area..(r + 1) * area];
                    let mean = src.iter().copied().sum::<T>() * inv_area;
                    for dy in 0..k {
                        for dx in 0..k {
                            x[((b * h + y + dy) * w + xo + dx) * c + ch] += src[dy * k + dx] - mean;
                        }
                    }
                    r += 1;
                }
            }
        }
    }
    x
}

/// Quantities an edge-detection forward pass keeps for its backward pass.
pub(crate) struct EdgeCache<T> {
    /// centred patches, `[locations·C, k²]`
    pub rows: Vec<T>,
    /// projections `w·(p − p̄)`, `[locations·C, units]`
    pub proj: Vec<T>,
}

/// Edge-detection activations over valid locations of `x[n,h,w,c]`:
/// `o[loc,u] = Σ_c α[u,c]·|w_u·(p_c − mean p_c)| + b[u]`.
pub(crate) fn edge_detect<T: Real>(
    x: &[T],
    dims: [usize; 4],
    k: usize,
    weight: &[T],
    alpha: &[T],
    bias: &[T],
) -> (Vec<T>, EdgeCache<T>) {
    let c = dims[3];
    let units = bias.len();
    let rows = centered_patches(x, dims, k);
    let n_rows = rows.len() / (k * k);
    let proj = matmul_a_bt(&rows, weight, n_rows, k * k, units);
    let locations = n_rows / c;
    let mut out = vec![T::zero(); locations * units];
    for loc in 0..locations {
        let o = &mut out[loc * units..(loc + 1) * units];
        o.copy_from_slice(bias);
        for ch in 0..c {
            let z = &proj[(loc * c + ch) * units..(loc * c + ch + 1) * units];
            for u in 0..units {
                o[u] += alpha[u * c + ch] * z[u].abs();
            }
        }
    }
    (out, EdgeCache { rows, proj })
}

#[inline]
pub(crate) fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).libm_exp())
    } else {
        let e = x.libm_exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).libm_exp().libm_ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5).collect(); // 3x4
        let ab = matmul(&a, &b, 2, 3, 4);
        assert_eq!(ab[0], -2.0 * 0.0 + -1.0 * 2.0 + 0.0 * 4.0);
        let at = transpose(&a, 2, 3); // 3x2
        assert_eq!(matmul_at_b(&at, &b, 3, 2, 4), ab);
        let bt = transpose(&b, 3, 4); // 4x3
        assert_eq!(matmul_a_bt(&a, &bt, 2, 3, 4), ab);
    }

    #[test]
    fn reflect_mapping() {
        assert_eq!(reflect_or_zero(-1, 5, true), Some(1));
        assert_eq!(reflect_or_zero(-2, 5, true), Some(2));
        assert_eq!(reflect_or_zero(5, 5, true), Some(3));
        assert_eq!(reflect_or_zero(6, 5, true), Some(2));
        assert_eq!(reflect_or_zero(-1, 5, false), None);
    }

    #[test]
    fn same_padding_for_even_kernel_is_asymmetric() {
        let p = Pad2d::same(4);
        assert_eq!((p.top, p.bottom), (1, 2));
    }
}
