//! 3-D convolution kernels over channels-last `(N, T, H, W, C)` tensors.
//!
//! Convention: cross-correlation (no kernel flip). Weights are laid out as
//! `(C_out, kT, kH, kW, C_in)`. Output extent per axis is
//! `floor((in + 2·pad − k) / stride) + 1`.
//!
//! All three kernels lower to a single GEMM over an im2col buffer:
//!
//! * forward:        `y = cols(x) · Wᵀ`
//! * transposed:     `x = col2im(u · W)` (the adjoint of forward in `x`)
//! * weight grad:    `dW = dyᵀ · cols(x)` (the adjoint of forward in `W`)
//!
//! Samples are processed in chunks so the im2col buffer stays bounded at full
//! resolution. Chunks are visited in order, which keeps every reduction
//! sequential and the results bitwise reproducible.

use super::{gemm, Element, Shape, Strides, Tensor};
use crate::error::{Error, Result};

/// Upper bound on im2col buffer elements per chunk.
const COLS_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeometry {
    pub fn cubic(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            kernel: [kernel; 3],
            stride: [stride; 3],
            pad: [pad; 3],
        }
    }

    /// Forward-convolution output extents for the given input extents.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = input[i] + 2 * self.pad[i];
            if self.stride[i] == 0 || padded < self.kernel[i] {
                return Err(Error::invalid_shape(
                    "conv3d",
                    format!("input extents {input:?} too small for {self:?}"),
                ));
            }
            out[i] = (padded - self.kernel[i]) / self.stride[i] + 1;
        }
        Ok(out)
    }

    /// Extents produced by the transposed convolution:
    /// `(in − 1)·stride − 2·pad + kernel`.
    pub fn transposed_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let full = (input[i] - 1) * self.stride[i] + self.kernel[i];
            if input[i] == 0 || full <= 2 * self.pad[i] {
                return Err(Error::invalid_shape(
                    "conv3d_transposed",
                    format!("input extents {input:?} too small for {self:?}"),
                ));
            }
            out[i] = full - 2 * self.pad[i];
        }
        Ok(out)
    }

    fn patch_len(&self, channels: usize) -> usize {
        self.kernel.iter().product::<usize>() * channels
    }
}

fn video_dims(op: &'static str, t: &[usize]) -> Result<(usize, [usize; 3], usize)> {
    if t.len() != 5 {
        return Err(Error::invalid_shape(op, format!("expected (N,T,H,W,C), got {t:?}")));
    }
    Ok((t[0], [t[1], t[2], t[3]], t[4]))
}

struct Layout {
    batch: usize,
    input: [usize; 3],
    output: [usize; 3],
    cin: usize,
    geom: ConvGeometry,
}

impl Layout {
    fn in_len(&self) -> usize {
        self.input.iter().product::<usize>() * self.cin
    }
    fn positions(&self) -> usize {
        self.output.iter().product()
    }
    fn patch(&self) -> usize {
        self.geom.patch_len(self.cin)
    }
    fn chunk(&self) -> usize {
        (COLS_BUDGET / (self.positions() * self.patch()).max(1)).clamp(1, self.batch)
    }

    /// Calls `f(col_offset, input_offset)` for every in-bounds (output
    /// position, kernel tap) pair of one sample; offsets address `cin`-long
    /// runs.
    fn for_each_tap(&self, mut f: impl FnMut(usize, Option<usize>)) {
        let [kt, kh, kw] = self.geom.kernel;
        let [st, sh, sw] = self.geom.stride;
        let [pt, ph, pw] = self.geom.pad;
        let [it_n, ih_n, iw_n] = self.input;
        let [ot_n, oh_n, ow_n] = self.output;
        let cin = self.cin;
        let patch = self.patch();
        let mut row = 0;
        for ot in 0..ot_n {
            for oh in 0..oh_n {
                for ow in 0..ow_n {
                    let mut col = row;
                    for a in 0..kt {
                        let it = (ot * st + a).checked_sub(pt).filter(|&v| v < it_n);
                        for b in 0..kh {
                            let ih = (oh * sh + b).checked_sub(ph).filter(|&v| v < ih_n);
                            for c in 0..kw {
                                let iw = (ow * sw + c).checked_sub(pw).filter(|&v| v < iw_n);
                                let src = match (it, ih, iw) {
                                    (Some(t), Some(h), Some(w)) => Some(((t * ih_n + h) * iw_n + w) * cin),
                                    _ => None,
                                };
                                f(col, src);
                                col += cin;
                            }
                        }
                    }
                    row += patch;
                }
            }
        }
    }

    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let cin = self.cin;
        self.for_each_tap(|col, src| {
            let dst = &mut cols[col..col + cin];
            match src {
                Some(s) => dst.copy_from_slice(&x[s..s + cin]),
                None => dst.fill(T::zero()),
            }
        });
    }

    fn col2im<T: Element>(&self, cols: &[T], x: &mut [T]) {
        let cin = self.cin;
        self.for_each_tap(|col, src| {
            if let Some(s) = src {
                for (d, &v) in x[s..s + cin].iter_mut().zip(&cols[col..col + cin]) {
                    *d += v;
                }
            }
        });
    }
}

fn check_weight<T: Element>(op: &'static str, w: &Tensor<T>, geom: &ConvGeometry) -> Result<(usize, usize)> {
    let d = w.dims();
    if d.len() != 5 || [d[1], d[2], d[3]] != geom.kernel {
        return Err(Error::invalid_shape(
            op,
            format!("weight {d:?} does not match kernel {:?}", geom.kernel),
        ));
    }
    Ok((d[0], d[4]))
}

/// Strided 3-D cross-correlation without bias.
pub fn conv3d<T: Element>(x: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let (batch, input, cin) = video_dims("conv3d", x.dims())?;
    let (cout, wcin) = check_weight("conv3d", w, geom)?;
    if wcin != cin {
        return Err(Error::shape("conv3d", x.dims(), w.dims()));
    }
    let output = geom.output_extents(input)?;
    let l = Layout {
        batch,
        input,
        output,
        cin,
        geom: *geom,
    };
    let (p, k) = (l.positions(), l.patch());
    let mut out = vec![T::zero(); batch * p * cout];
    let chunk = l.chunk();
    let mut cols = vec![T::zero(); chunk * p * k];
    let xd = x.data();
    for n0 in (0..batch).step_by(chunk) {
        let nb = chunk.min(batch - n0);
        for i in 0..nb {
            let n = n0 + i;
            l.im2col(&xd[n * l.in_len()..(n + 1) * l.in_len()], &mut cols[i * p * k..(i + 1) * p * k]);
        }
        gemm(
            nb * p,
            k,
            cout,
            &cols,
            Strides::row_major(k),
            w.data(),
            Strides::transposed(k),
            T::zero(),
            &mut out[n0 * p * cout..(n0 + nb) * p * cout],
            Strides::row_major(cout),
        );
    }
    Ok(Tensor::from_parts(
        Shape::from(vec![batch, output[0], output[1], output[2], cout]),
        out,
    ))
}

/// Adjoint of [`conv3d`] in its input: maps `(N, T', H', W', C_out)` back to
/// `(N, out_extents, C_in)`.
pub fn conv3d_transposed<T: Element>(
    u: &Tensor<T>,
    w: &Tensor<T>,
    geom: &ConvGeometry,
    out_extents: [usize; 3],
) -> Result<Tensor<T>> {
    let (batch, uext, ucout) = video_dims("conv3d_transposed", u.dims())?;
    let (cout, cin) = check_weight("conv3d_transposed", w, geom)?;
    if ucout != cout {
        return Err(Error::shape("conv3d_transposed", u.dims(), w.dims()));
    }
    let output = geom.output_extents(out_extents)?;
    if output != uext {
        return Err(Error::invalid_shape(
            "conv3d_transposed",
            format!("extents {out_extents:?} do not map onto input extents {uext:?}"),
        ));
    }
    let l = Layout {
        batch,
        input: out_extents,
        output,
        cin,
        geom: *geom,
    };
    let (p, k) = (l.positions(), l.patch());
    let mut out = vec![T::zero(); batch * l.in_len()];
    let chunk = l.chunk();
    let mut cols = vec![T::zero(); chunk * p * k];
    for n0 in (0..batch).step_by(chunk) {
        let nb = chunk.min(batch - n0);
        gemm(
            nb * p,
            cout,
            k,
            &u.data()[n0 * p * cout..(n0 + nb) * p * cout],
            Strides::row_major(cout),
            w.data(),
            Strides::row_major(k),
            T::zero(),
            &mut cols[..nb * p * k],
            Strides::row_major(k),
        );
        for i in 0..nb {
            let n = n0 + i;
            l.col2im(&cols[i * p * k..(i + 1) * p * k], &mut out[n * l.in_len()..(n + 1) * l.in_len()]);
        }
    }
    Ok(Tensor::from_parts(
        Shape::from(vec![batch, out_extents[0], out_extents[1], out_extents[2], cin]),
        out,
    ))
}

/// Gradient of `⟨conv3d(x, W), dy⟩` with respect to `W`.
pub fn conv3d_weight_grad<T: Element>(x: &Tensor<T>, dy: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let (batch, input, cin) = video_dims("conv3d_weight_grad", x.dims())?;
    let (dbatch, dext, cout) = video_dims("conv3d_weight_grad", dy.dims())?;
    let output = geom.output_extents(input)?;
    if dbatch != batch || dext != output {
        return Err(Error::shape("conv3d_weight_grad", x.dims(), dy.dims()));
    }
    let l = Layout {
        batch,
        input,
        output,
        cin,
        geom: *geom,
    };
    let (p, k) = (l.positions(), l.patch());
    let mut dw = vec![T::zero(); cout * k];
    let chunk = l.chunk();
    let mut cols = vec![T::zero(); chunk * p * k];
    let xd = x.data();
    for n0 in (0..batch).step_by(chunk) {
        let nb = chunk.min(batch - n0);
        for i in 0..nb {
            let n = n0 + i;
            l.im2col(&xd[n * l.in_len()..(n + 1) * l.in_len()], &mut cols[i * p * k..(i + 1) * p * k]);
        }
        gemm(
            cout,
            nb * p,
            k,
            &dy.data()[n0 * p * cout..(n0 + nb) * p * cout],
            Strides::transposed(cout),
            &cols,
            Strides::row_major(k),
            if n0 == 0 { T::zero() } else { T::one() },
            &mut dw,
            Strides::row_major(k),
        );
    }
    let [kt, kh, kw] = geom.kernel;
    Ok(Tensor::from_parts(Shape::from(vec![cout, kt, kh, kw, cin]), dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_fill, Distribution};

    /// Direct nested-loop cross-correlation.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, g: &ConvGeometry) -> Tensor<f64> {
        let [n, t, h, wd, cin] = <[usize; 5]>::try_from(x.dims()).unwrap();
        let cout = w.dims()[0];
        let [kt, kh, kw] = g.kernel;
        let o = g.output_extents([t, h, wd]).unwrap();
        let mut out = vec![0.0; n * o[0] * o[1] * o[2] * cout];
        let xi = |b: usize, i: usize, j: usize, k: usize, c: usize| x.data()[(((b * t + i) * h + j) * wd + k) * cin + c];
        let wi = |co: usize, a: usize, b: usize, c: usize, ci: usize| w.data()[(((co * kt + a) * kh + b) * kw + c) * cin + ci];
        for b in 0..n {
            for ot in 0..o[0] {
                for oh in 0..o[1] {
                    for ow in 0..o[2] {
                        for co in 0..cout {
                            let mut s = 0.0;
                            for a in 0..kt {
                                for bb in 0..kh {
                                    for c in 0..kw {
                                        let it = (ot * g.stride[0] + a) as isize - g.pad[0] as isize;
                                        let ih = (oh * g.stride[1] + bb) as isize - g.pad[1] as isize;
                                        let iw = (ow * g.stride[2] + c) as isize - g.pad[2] as isize;
                                        if it < 0 || ih < 0 || iw < 0 || it >= t as isize || ih >= h as isize || iw >= wd as isize {
                                            continue;
                                        }
                                        for ci in 0..cin {
                                            s += xi(b, it as usize, ih as usize, iw as usize, ci) * wi(co, a, bb, c, ci);
                                        }
                                    }
                                }
                            }
                            out[(((b * o[0] + ot) * o[1] + oh) * o[2] + ow) * cout + co] = s;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, o[0], o[1], o[2], cout], out).unwrap()
    }

    #[test]
    fn scalar_kernel_multiplies() {
        let x = Tensor::<f64>::from_f64([1, 1, 1, 1, 1], &[3.0]).unwrap();
        let w = Tensor::<f64>::from_f64([1, 1, 1, 1, 1], &[-2.5]).unwrap();
        let y = conv3d(&x, &w, &ConvGeometry::cubic(1, 1, 0)).unwrap();
        assert_eq!(y.data(), &[-7.5]);
    }

    #[test]
    fn impulse_reproduces_kernel() {
        // impulse in the middle of a zero-padded volume; stride 1, pad k-1
        let k = 3;
        let g = ConvGeometry::cubic(k, 1, k - 1);
        let x = Tensor::<f64>::from_f64([1, 1, 1, 1, 1], &[1.0]).unwrap();
        let w: Tensor<f64> = rng_fill(Distribution::Normal, [1, k, k, k, 1], 1);
        let y = conv3d(&x, &w, &g).unwrap();
        // cross-correlation: output at position p sees tap (k-1-p)
        let mut flipped = w.data().to_vec();
        flipped.reverse();
        assert_eq!(y.data(), &flipped[..]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let g = ConvGeometry::cubic(4, 2, 1);
        let x: Tensor<f64> = rng_fill(Distribution::Normal, [1, 6, 6, 6, 2], 2);
        let w: Tensor<f64> = rng_fill(Distribution::Normal, [2, 4, 4, 4, 2], 3);
        let y = conv3d(&x, &w, &g).unwrap();
        let expect = conv_oracle(&x, &w, &g);
        assert_eq!(y.dims(), &[1, 3, 3, 3, 2]);
        assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn transposed_doubles_extents() {
        let g = ConvGeometry::cubic(4, 2, 1);
        assert_eq!(g.transposed_extents([2, 4, 4]).unwrap(), [4, 8, 8]);
        let u: Tensor<f64> = rng_fill(Distribution::Normal, [1, 2, 4, 4, 3], 4);
        let w: Tensor<f64> = rng_fill(Distribution::Normal, [3, 4, 4, 4, 2], 5);
        let x = conv3d_transposed(&u, &w, &g, [4, 8, 8]).unwrap();
        assert_eq!(x.dims(), &[1, 4, 8, 8, 2]);
    }

    #[test]
    fn adjoint_and_weight_grad_identities() {
        let g = ConvGeometry {
            kernel: [3, 2, 4],
            stride: [1, 2, 2],
            pad: [1, 0, 1],
        };
        let x: Tensor<f64> = rng_fill(Distribution::Normal, [2, 4, 5, 6, 3], 6);
        let w: Tensor<f64> = rng_fill(Distribution::Normal, [2, 3, 2, 4, 3], 7);
        let y = conv3d(&x, &w, &g).unwrap();
        let dy: Tensor<f64> = rng_fill(Distribution::Normal, y.dims(), 8);
        let lhs = y.dot(&dy).unwrap();
        let xt = conv3d_transposed(&dy, &w, &g, [4, 5, 6]).unwrap();
        assert!((lhs - x.dot(&xt).unwrap()).abs() < 1e-10 * lhs.abs().max(1.0));
        let dw = conv3d_weight_grad(&x, &dy, &g).unwrap();
        assert!((lhs - w.dot(&dw).unwrap()).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::<f32>::zeros([1, 4, 4, 4, 2]);
        let w = Tensor::<f32>::zeros([1, 4, 4, 4, 3]);
        assert!(conv3d(&x, &w, &ConvGeometry::cubic(4, 2, 1)).is_err());
    }
}
