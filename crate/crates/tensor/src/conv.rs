//! 2-D cross-correlation geometry and the patch (im2col) transforms used by
//! the graph's convolution node.
//!
//! Layout is channels-last: inputs are `[T, F, C_in]`, kernels
//! `[C_out, k_t, k_f, C_in]`, outputs `[T', F', C_out]`.

use crate::error::{Result, TensorError};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_t: usize,
    pub in_f: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub k_t: usize,
    pub k_f: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

/// `floor((n + 2p - k) / s) + 1`, or `None` if the kernel does not fit.
pub fn output_len(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = n + 2 * p;
    if k == 0 || s == 0 || k > padded {
        return None;
    }
    Some((padded - k) / s + 1)
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.in_c == 0 || self.out_c == 0 {
            return Err(TensorError::dim("conv2d", "zero channels"));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(TensorError::dim("conv2d", "zero stride"));
        }
        if output_len(self.in_t, self.k_t, self.stride.0, self.padding.0).is_none()
            || output_len(self.in_f, self.k_f, self.stride.1, self.padding.1).is_none()
        {
            return Err(TensorError::dim(
                "conv2d",
                format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    self.k_t,
                    self.k_f,
                    self.in_t + 2 * self.padding.0,
                    self.in_f + 2 * self.padding.1
                ),
            ));
        }
        Ok(())
    }

    pub fn out_t(&self) -> usize {
        output_len(self.in_t, self.k_t, self.stride.0, self.padding.0).unwrap_or(0)
    }

    pub fn out_f(&self) -> usize {
        output_len(self.in_f, self.k_f, self.stride.1, self.padding.1).unwrap_or(0)
    }

    /// Length of one flattened receptive field.
    pub fn patch_len(&self) -> usize {
        self.k_t * self.k_f * self.in_c
    }

    fn source_index(&self, ot: usize, of: usize, dt: usize, df: usize) -> Option<usize> {
        let t = (ot * self.stride.0 + dt).checked_sub(self.padding.0)?;
        let f = (of * self.stride.1 + df).checked_sub(self.padding.1)?;
        if t >= self.in_t || f >= self.in_f {
            return None;
        }
        Some((t * self.in_f + f) * self.in_c)
    }

    /// Gathers every receptive field into a `[T'·F', patch_len]` matrix.
    pub fn im2col<R: Real>(&self, input: &[R]) -> Vec<R> {
        let (ot_n, of_n, pl, c) = (self.out_t(), self.out_f(), self.patch_len(), self.in_c);
        let mut cols = vec![R::zero(); ot_n * of_n * pl];
        for ot in 0..ot_n {
            for of in 0..of_n {
                let row = &mut cols[(ot * of_n + of) * pl..][..pl];
                for dt in 0..self.k_t {
                    for df in 0..self.k_f {
                        if let Some(src) = self.source_index(ot, of, dt, df) {
                            let dst = (dt * self.k_f + df) * c;
                            row[dst..dst + c].copy_from_slice(&input[src..src + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds a patch-matrix gradient back onto the input layout.
    pub fn col2im<R: Real>(&self, cols: &[R], grad_input: &mut [R]) {
        let (ot_n, of_n, pl, c) = (self.out_t(), self.out_f(), self.patch_len(), self.in_c);
        for ot in 0..ot_n {
            for of in 0..of_n {
                let row = &cols[(ot * of_n + of) * pl..][..pl];
                for dt in 0..self.k_t {
                    for df in 0..self.k_f {
                        if let Some(dst) = self.source_index(ot, of, dt, df) {
                            let src = (dt * self.k_f + df) * c;
                            for (g, v) in grad_input[dst..dst + c].iter_mut().zip(&row[src..src + c]) {
                                *g += *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_length_examples() {
        assert_eq!(output_len(100, 7, 2, 3), Some(50));
        assert_eq!(output_len(1, 7, 2, 3), Some(1));
        assert_eq!(output_len(2, 7, 1, 0), None);
    }

    #[test]
    fn output_length_sweep_matches_formula() {
        for n in 1..40usize {
            for k in [1usize, 3, 5, 7] {
                for s in 1..=3usize {
                    for p in 0..=3usize {
                        let got = output_len(n, k, s, p);
                        let padded = n as i64 + 2 * p as i64;
                        if padded < k as i64 {
                            assert_eq!(got, None);
                        } else {
                            let want = ((padded - k as i64) as f64 / s as f64).floor() as usize + 1;
                            assert_eq!(got, Some(want), "n={n} k={k} s={s} p={p}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_oversized_kernel() {
        let g = ConvGeometry {
            in_t: 3,
            in_f: 3,
            in_c: 1,
            out_c: 1,
            k_t: 7,
            k_f: 7,
            stride: (1, 1),
            padding: (1, 1),
        };
        assert!(matches!(g.validate(), Err(TensorError::Dimension { .. })));
    }
}
