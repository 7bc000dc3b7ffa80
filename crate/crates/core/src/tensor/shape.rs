use super::{numel, Result, TensorError};

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::shape(
                    op,
                    format!("cannot broadcast {a:?} with {b:?}"),
                ))
            }
        };
    }
    Ok(out)
}

pub(crate) fn can_broadcast_to(src: &[usize], dst: &[usize]) -> bool {
    if src.len() > dst.len() {
        return false;
    }
    let off = dst.len() - src.len();
    src.iter()
        .enumerate()
        .all(|(i, &s)| s == 1 || s == dst[i + off])
}

/// Strides of `src` laid out against `dst` axes, zero on broadcast axes.
fn aligned_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let off = dst.len() - src.len();
    let mut strides = vec![0; dst.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + off] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    strides
}

/// Calls `f(dst_index, src_offset)` for every element of `dst` in raster order.
fn for_each_mapped(src: &[usize], dst: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = aligned_strides(src, dst);
    let rank = dst.len();
    let total = numel(dst);
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = dst[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let mut pos = 0usize;
    while pos < total {
        for j in 0..inner {
            f(pos + j, base + j * inner_stride);
        }
        pos += inner;
        // advance the outer multi-index
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < dst[ax] {
                break;
            }
            base -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_data(data: &[f64], src: &[usize], dst: &[usize]) -> Vec<f64> {
    if src == dst {
        return data.to_vec();
    }
    let mut out = vec![0.0; numel(dst)];
    for_each_mapped(src, dst, |i, s| out[i] = data[s]);
    out
}

/// Sums `data` (of shape `src`) down to `dst`, the inverse of broadcasting.
pub(crate) fn sum_to_data(data: &[f64], src: &[usize], dst: &[usize]) -> Vec<f64> {
    if src == dst {
        return data.to_vec();
    }
    let mut out = vec![0.0; numel(dst)];
    for_each_mapped(dst, src, |i, d| out[d] += data[i]);
    out
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes("t", &[2, 1, 3], &[4, 1]).unwrap(), vec![2, 4, 3]);
        assert_eq!(broadcast_shapes("t", &[], &[2, 2]).unwrap(), vec![2, 2]);
        assert!(broadcast_shapes("t", &[2, 3], &[3, 2]).is_err());
    }

    #[test]
    fn sum_to_inverts_broadcast_counts() {
        let src = [2, 1, 3];
        let dst = [2, 4, 3];
        let data: Vec<f64> = (0..6).map(f64::from).collect();
        let b = broadcast_data(&data, &src, &dst);
        assert_eq!(b.len(), 24);
        assert_eq!(&b[0..6], &[0.0, 1.0, 2.0, 0.0, 1.0, 2.0]);
        let s = sum_to_data(&b, &dst, &src);
        let expect: Vec<f64> = data.iter().map(|v| v * 4.0).collect();
        assert_eq!(s, expect);
        assert_eq!(sum_to_data(&b, &dst, &[]), vec![b.iter().sum::<f64>()]);
    }
}
