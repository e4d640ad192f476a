use super::Scalar;

/// `out = op(a) · op(b)` where `op` optionally transposes.
///
/// `a` is stored `m×k` (or `k×m` when `trans_a`), `b` is stored `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn matmul_into<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    trans_a: bool,
    b: &[S],
    trans_b: bool,
    out: &mut [S],
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    S::gemm(m, k, n, a, rsa, csa, b, rsb, csb, S::zero(), out);
}

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds `[N,C,H,W]` into a `[C·kh·kw, N·Ho·Wo]` column matrix (zero padding).
#[allow(clippy::too_many_arguments)]
pub fn im2col<S: Scalar>(
    input: &[S],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<S> {
    let cols = n * ho * wo;
    let mut out = vec![S::zero(); c * kh * kw * cols];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let src = &input[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        let base = (b * ho + oy) * wo;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters-and-adds a column matrix back into `[N,C,H,W]`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<S: Scalar>(
    columns: &[S],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<S> {
    let cols = n * ho * wo;
    let mut out = vec![S::zero(); n * c * h * w];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &columns[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let dst = &mut out[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (b * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute_data<S: Scalar>(data: &[S], shape: &[usize], perm: &[usize]) -> (Vec<S>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return (out, out_shape);
    }
    // Innermost axis handled as a strided run; outer axes walked with a counter.
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    loop {
        for j in 0..inner {
            out.push(data[base + j * inner_stride]);
        }
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return (out, out_shape);
            }
            axis -= 1;
            idx[axis] += 1;
            base += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            base -= strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes_matrix() {
        let data: Vec<f64> = (0..6).map(f64::from).collect();
        let (out, shape) = permute_data(&data, &[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(out, vec![0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn permute_rank3_matches_index_formula() {
        let shape = [2, 3, 4];
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let (out, oshape) = permute_data(&data, &shape, &[2, 0, 1]);
        assert_eq!(oshape, vec![4, 2, 3]);
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..3 {
                    let src = (b * 3 + c) * 4 + a;
                    assert_eq!(out[(a * 2 + b) * 3 + c], data[src]);
                }
            }
        }
    }

    #[test]
    fn conv_sizes() {
        assert_eq!(conv_output_size(8, 3, 2, 1), Some(4));
        assert_eq!(conv_output_size(3, 3, 1, 0), Some(1));
        assert_eq!(conv_output_size(2, 5, 1, 1), None);
        assert_eq!(conv_output_size(4, 3, 0, 0), None);
    }

    #[test]
    fn transposed_matmul_views() {
        // a = [[1,2],[3,4]] stored transposed as [[1,3],[2,4]]
        let at = [1.0f64, 3.0, 2.0, 4.0];
        let b = [1.0f64, 0.0, 0.0, 1.0];
        let mut out = [0.0; 4];
        matmul_into(2, 2, 2, &at, true, &b, false, &mut out);
        assert_eq!(out, [1.0, 2.0, 3.0, 4.0]);
    }
}
