use crate::Real;

/// Row-major operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a, R> {
    pub data: &'a [R],
    /// Stored as the transpose of its logical shape.
    pub transposed: bool,
}

impl<'a, R> Operand<'a, R> {
    pub fn plain(data: &'a [R]) -> Self {
        Operand {
            data,
            transposed: false,
        }
    }

    pub fn t(data: &'a [R]) -> Self {
        Operand {
            data,
            transposed: true,
        }
    }
}

/// `c (m×n) (+)= a (m×k) · b (k×n)`.
pub(crate) fn gemm<R: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: Operand<'_, R>,
    b: Operand<'_, R>,
    c: &mut [R],
    accumulate: bool,
) {
    assert_eq!(a.data.len(), m * k, "gemm lhs extent");
    assert_eq!(b.data.len(), k * n, "gemm rhs extent");
    assert_eq!(c.len(), m * n, "gemm output extent");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = R::zero());
        }
        return;
    }
    let (rsa, csa) = if a.transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b.transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { R::one() } else { R::zero() };
    // SAFETY: extents asserted above; `c` is uniquely borrowed.
    unsafe {
        R::raw_gemm(
            m,
            k,
            n,
            R::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
