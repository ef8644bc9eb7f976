use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner axes differ: lhs axis 1 is {k}, rhs axis 0 is {k2}"
        )));
    }
    Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

pub(crate) fn matmul_raw(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (d, bv) in dst.iter_mut().zip(brow) {
                *d += av * bv;
            }
        }
    }
    out
}

/// `a * b^T` for `a: [m, k]`, `b: [n, k]`.
pub(crate) fn matmul_nt(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T * b` for `a: [k, m]`, `b: [k, n]`.
pub(crate) fn matmul_tn(a: &[Real], b: &[Real], k: usize, m: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let dst = &mut out[i * n..(i + 1) * n];
            for (d, bv) in dst.iter_mut().zip(brow) {
                *d += av * bv;
            }
        }
    }
    out
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    a.expect_rank(2, "transpose")?;
    let (r, c) = (a.shape()[0], a.shape()[1]);
    Tensor::new(vec![c, r], transpose_raw(a.data(), r, c))
}

pub(crate) fn transpose_raw(a: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3, 1], vec![1.0, 0.0, -1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[-2.0, -2.0]);
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn transposed_variants_agree() {
        let a: Vec<Real> = (0..6).map(|v| v as Real).collect();
        let b: Vec<Real> = (0..8).map(|v| (v as Real) * 0.5 - 1.0).collect();
        // a: [2,3] ; b^T with b: [4,... ] use b as [4,2] -> need [n,k]=[?,3]
        let bt = transpose_raw(&b[..6], 2, 3); // [3,2]
        let direct = matmul_raw(&a, &bt, 2, 3, 2);
        assert_eq!(matmul_nt(&a, &b[..6], 2, 3, 2), direct);
        let at = transpose_raw(&a, 2, 3); // [3,2]
        assert_eq!(matmul_tn(&at, &bt, 3, 2, 2), direct);
    }
}
