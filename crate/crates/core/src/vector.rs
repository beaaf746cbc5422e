//! Small dense-vector helpers. Stored vectors are `f32`; anything that
//! accumulates goes through `f64`.

/// Sequential `f32` dot product. Summation order is fixed (index order) so
/// that rankings are reproducible bit for bit.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

pub fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm64(a: &[f64]) -> f64 {
    dot64(a, a).sqrt()
}

pub fn norm(a: &[f32]) -> f64 {
    a.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub fn to_f64(a: &[f32]) -> Vec<f64> {
    a.iter().map(|&x| x as f64).collect()
}

pub fn to_f32(a: &[f64]) -> Vec<f32> {
    a.iter().map(|&x| x as f32).collect()
}

/// Normalizes in place; returns `None` when the norm is too small to divide by.
pub fn normalize64(a: &mut [f64]) -> Option<f64> {
    let n = norm64(a);
    if !n.is_finite() || n < 1e-12 {
        return None;
    }
    for x in a.iter_mut() {
        *x /= n;
    }
    Some(n)
}

/// Unit vector in `f32` computed through `f64`.
pub fn normalized_f32(a: &[f64]) -> Option<Vec<f32>> {
    let mut v = a.to_vec();
    normalize64(&mut v)?;
    Some(to_f32(&v))
}

/// Cosine similarity in `f64`, zero if either side is the zero vector.
pub fn cosine64(a: &[f64], b: &[f64]) -> f64 {
    let na = norm64(a);
    let nb = norm64(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot64(a, b) / (na * nb)
}

/// Mean of a set of `f32` vectors, accumulated in index order.
pub fn mean64<'a>(vecs: impl IntoIterator<Item = &'a [f32]>, dim: usize) -> Option<Vec<f64>> {
    let mut acc = vec![0.0f64; dim];
    let mut n = 0usize;
    for v in vecs {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    for a in acc.iter_mut() {
        *a /= n as f64;
    }
    Some(acc)
}
