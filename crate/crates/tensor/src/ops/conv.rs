//! 3x3 convolution via im2col + GEMM.

use crate::array::NdArray;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    batch: usize,
    in_channels: usize,
    height: usize,
    width: usize,
    out_height: usize,
    out_width: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    fn col_rows(&self) -> usize {
        self.in_channels * KERNEL * KERNEL
    }

    fn col_cols(&self) -> usize {
        self.batch * self.out_plane()
    }
}

/// Output spatial size along one axis for a 3x3 kernel.
pub fn conv_output_size(size: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= KERNEL && stride > 0).then(|| (padded - KERNEL) / stride + 1)
}

/// Output columns `lo..hi` whose tap at kernel offset `k` lands inside an
/// input axis of length `size`.
fn valid_range(k: usize, size: usize, out: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi = if size + padding > k {
        ((size - 1 + padding - k) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds every 3x3 receptive field into a column: rows are `(c, ky, kx)`,
/// columns are `(b, oy, ox)`.
fn im2col<T: Element>(x: &[T], g: &Geometry) -> Vec<T> {
    let plane = g.height * g.width;
    let out_plane = g.out_plane();
    let ncols = g.col_cols();
    let mut cols = vec![T::zero(); g.col_rows() * ncols];
    for c in 0..g.in_channels {
        for ky in 0..KERNEL {
            let (oy_lo, oy_hi) = valid_range(ky, g.height, g.out_height, g.stride, g.padding);
            for kx in 0..KERNEL {
                let (ox_lo, ox_hi) = valid_range(kx, g.width, g.out_width, g.stride, g.padding);
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let src = &x[(b * g.in_channels + c) * plane..][..plane];
                    let dst = &mut dst_row[b * out_plane..(b + 1) * out_plane];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let src_row = &src[iy * g.width..][..g.width];
                        let dst_row = &mut dst[oy * g.out_width..][..g.out_width];
                        let ix0 = ox_lo * g.stride + kx - g.padding;
                        if g.stride == 1 {
                            dst_row[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + ox_hi - ox_lo]);
                        } else {
                            for (j, d) in dst_row[ox_lo..ox_hi].iter_mut().enumerate() {
                                *d = src_row[ix0 + j * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
fn col2im<T: Element>(cols: &[T], g: &Geometry) -> Vec<T> {
    let plane = g.height * g.width;
    let out_plane = g.out_plane();
    let ncols = g.col_cols();
    let mut x = vec![T::zero(); g.batch * g.in_channels * plane];
    for c in 0..g.in_channels {
        for ky in 0..KERNEL {
            let (oy_lo, oy_hi) = valid_range(ky, g.height, g.out_height, g.stride, g.padding);
            for kx in 0..KERNEL {
                let (ox_lo, ox_hi) = valid_range(kx, g.width, g.out_width, g.stride, g.padding);
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let dst = &mut x[(b * g.in_channels + c) * plane..][..plane];
                    let src = &src_row[b * out_plane..(b + 1) * out_plane];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let dst_row = &mut dst[iy * g.width..][..g.width];
                        let src_row = &src[oy * g.out_width..][..g.out_width];
                        let ix0 = ox_lo * g.stride + kx - g.padding;
                        for (j, &s) in src_row[ox_lo..ox_hi].iter().enumerate() {
                            let d = &mut dst_row[ix0 + j * g.stride];
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Below this many im2col rows the weight gradient is computed as row dot
/// products; the blocked GEMM handles long, thin products poorly.
const NARROW_ROWS: usize = 32;

fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (a8, b8) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = a8.remainder().iter().zip(b8.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in a8.zip(b8) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// `[Cout, B*P]` (channel-major) to `[B, Cout, P]` (batch-major), or back.
fn swap_leading<T: Element>(src: &[T], outer: usize, inner: usize, plane: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let s = &src[(o * inner + i) * plane..][..plane];
            dst[(i * outer + o) * plane..][..plane].copy_from_slice(s);
        }
    }
    dst
}

/// Cross-correlation of `input [B,Cin,H,W]` with `weight [Cout,Cin,3,3]` plus `bias [Cout]`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (xs, ws, bs) = (input.shape(), weight.shape(), bias.shape());
    if xs.len() != 4 {
        return Err(TensorError::dim("conv2d", format!("input must be [B,C,H,W], got {xs:?}")));
    }
    if ws.len() != 4 || ws[2] != KERNEL || ws[3] != KERNEL {
        return Err(TensorError::dim(
            "conv2d",
            format!("weight must be [Cout,Cin,3,3], got {ws:?}"),
        ));
    }
    if ws[1] != xs[1] {
        return Err(TensorError::dim(
            "conv2d",
            format!("input channel axis (1) is {} but weight Cin axis (1) is {}", xs[1], ws[1]),
        ));
    }
    if bs != [ws[0]] {
        return Err(TensorError::dim(
            "conv2d",
            format!("bias must be [{}] to match weight Cout axis (0), got {bs:?}", ws[0]),
        ));
    }
    if stride == 0 {
        return Err(TensorError::dim("conv2d", "stride must be at least 1"));
    }
    let (out_height, out_width) = match (
        conv_output_size(xs[2], stride, padding),
        conv_output_size(xs[3], stride, padding),
    ) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(TensorError::dim(
                "conv2d",
                format!("spatial axes (2, 3) of {xs:?} too small for a 3x3 kernel with padding {padding}"),
            ))
        }
    };
    let geo = Geometry {
        batch: xs[0],
        in_channels: xs[1],
        height: xs[2],
        width: xs[3],
        out_height,
        out_width,
        stride,
        padding,
    };
    let out_channels = ws[0];
    let out_plane = geo.out_plane();
    let ncols = geo.col_cols();

    let cols = im2col(input.data(), &geo);
    let mut channel_major = vec![T::zero(); out_channels * ncols];
    T::gemm(
        false,
        false,
        out_channels,
        geo.col_rows(),
        ncols,
        T::one(),
        weight.data(),
        &cols,
        T::zero(),
        &mut channel_major,
    );
    for (o, row) in channel_major.chunks_mut(ncols.max(1)).enumerate().take(out_channels) {
        let b = bias.data()[o];
        row.iter_mut().for_each(|v| *v = *v + b);
    }
    let out = swap_leading(&channel_major, out_channels, geo.batch, out_plane);
    let value = NdArray::new(vec![geo.batch, out_channels, out_height, out_width], out)?;

    let w = weight.clone();
    let need_input_grad = input.requires_grad();
    let need_weight_grad = weight.requires_grad();
    let saved_cols = need_weight_grad.then_some(cols);
    Ok(Tensor::from_op(
        "conv2d",
        value,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |g| {
            let dy = swap_leading(g, geo.batch, out_channels, out_plane);
            let k = geo.col_rows();
            let grad_w = need_weight_grad.then(|| {
                let cols = saved_cols.as_deref().expect("columns saved when weight needs grad");
                let mut dw = vec![T::zero(); out_channels * k];
                if k <= NARROW_ROWS {
                    for (o, dw_row) in dw.chunks_mut(k).enumerate() {
                        let dy_row = &dy[o * ncols..(o + 1) * ncols];
                        for (r, d) in dw_row.iter_mut().enumerate() {
                            *d = dot(dy_row, &cols[r * ncols..(r + 1) * ncols]);
                        }
                    }
                } else {
                    T::gemm(false, true, out_channels, ncols, k, T::one(), &dy, cols, T::zero(), &mut dw);
                }
                dw
            });
            let grad_b = dy
                .chunks(ncols.max(1))
                .take(out_channels)
                .map(|row| row.iter().fold(T::zero(), |a, &v| a + v))
                .collect::<Vec<_>>();
            let grad_x = need_input_grad.then(|| {
                let mut dcols = vec![T::zero(); k * ncols];
                T::gemm(true, false, k, out_channels, ncols, T::one(), w.data(), &dy, T::zero(), &mut dcols);
                col2im(&dcols, &geo)
            });
            vec![grad_x, grad_w, Some(grad_b)]
        }),
    ))
}
