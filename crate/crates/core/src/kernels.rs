//! Forward and backward kernels for the graph ops. Convolutions lower to
//! im2col + GEMM one batch item at a time; nothing here allocates per pixel.

use std::ops::Range;

use crate::tensor::{Float, Shape, Tensor};

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn same(kernel: usize) -> Self {
        ConvGeom {
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    /// Output extent for an input extent, `None` if the kernel does not fit.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Patch matrix for output rows `rows`: `kk x (rows.len() * wo)`.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Float>(
    x: &[F],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    rows: Range<usize>,
    wo: usize,
    col: &mut [F],
) {
    let k = g.kernel;
    let p = rows.len() * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[((ci * k + ki) * k + kj) * p..][..p];
                for (r, oy) in rows.clone().enumerate() {
                    let dst = &mut row[r * wo..(r + 1) * wo];
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if g.stride == 1 {
                        let (lo, hi, s0) = stride1_run(kj, g.padding, w, wo);
                        dst[..lo].fill(F::zero());
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        dst[hi..].fill(F::zero());
                    } else {
                        let (lo, hi) = strided_run(kj, g, w, wo);
                        dst[..lo].fill(F::zero());
                        let first = lo * g.stride + kj - g.padding;
                        for (d, &v) in dst[lo..hi]
                            .iter_mut()
                            .zip(src[first..].iter().step_by(g.stride))
                        {
                            *d = v;
                        }
                        dst[hi..].fill(F::zero());
                    }
                }
            }
        }
    }
}

/// For stride 1, output columns `lo..hi` read input columns `s0..`; the
/// rest fall in the padding.
fn stride1_run(kj: usize, padding: usize, w: usize, wo: usize) -> (usize, usize, usize) {
    let shift = kj as isize - padding as isize;
    let lo = ((-shift).max(0) as usize).min(wo);
    let hi = ((w as isize - shift).min(wo as isize)).max(lo as isize) as usize;
    (lo, hi, (lo as isize + shift).max(0) as usize)
}

/// Output columns `lo..hi` whose input column `ox * stride + kj - padding`
/// lies inside `0..w`.
fn strided_run(kj: usize, g: ConvGeom, w: usize, wo: usize) -> (usize, usize) {
    // smallest ox with ox * stride + kj >= padding
    let lo = g.padding.saturating_sub(kj).div_ceil(g.stride).min(wo);
    // largest ox with ox * stride + kj - padding <= w - 1
    let hi = if w + g.padding > kj {
        ((w + g.padding - kj - 1) / g.stride + 1).min(wo)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Adjoint of [`im2col`]: accumulates the patch matrix back into `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Float>(
    col: &[F],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    rows: Range<usize>,
    wo: usize,
    dx: &mut [F],
) {
    let k = g.kernel;
    let p = rows.len() * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[((ci * k + ki) * k + kj) * p..][..p];
                for (r, oy) in rows.clone().enumerate() {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[r * wo..(r + 1) * wo];
                    if g.stride == 1 {
                        let (lo, hi, s0) = stride1_run(kj, g.padding, w, wo);
                        for (d, &v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d = *d + v;
                        }
                    } else {
                        let (lo, hi) = strided_run(kj, g, w, wo);
                        let first = lo * g.stride + kj - g.padding;
                        for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(&src[lo..hi]) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Output rows per im2col tile, keeping a tile around 1 MB of f32.
fn row_tile(kk: usize, wo: usize, ho: usize) -> usize {
    const TILE_ELEMS: usize = 1 << 18;
    (TILE_ELEMS / (kk * wo).max(1)).clamp(1, ho.max(1))
}

fn row_tiles(ho: usize, step: usize) -> impl Iterator<Item = Range<usize>> {
    (0..ho).step_by(step).map(move |r| r..(r + step).min(ho))
}

pub fn conv2d_out_shape(x: Shape, out_channels: usize, g: ConvGeom) -> Option<Shape> {
    Some(Shape::new(
        x.n,
        out_channels,
        g.out_len(x.h)?,
        g.out_len(x.w)?,
    ))
}

/// `weight` is `(out, in, k, k)`, `bias` is `(out, 1, 1, 1)`.
pub fn conv2d_forward<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    g: ConvGeom,
) -> Tensor<F> {
    let xs = x.shape();
    let ws = weight.shape();
    let (cout, cin) = (ws.n, ws.c);
    let os = conv2d_out_shape(xs, cout, g).expect("kernel fits input");
    let p = os.plane();
    let kk = cin * g.kernel * g.kernel;
    let mut out = Tensor::zeros(os);
    let pointwise = g.is_pointwise();
    let tile = if pointwise {
        os.h
    } else {
        row_tile(kk, os.w, os.h)
    };
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![F::zero(); kk * tile * os.w]
    };
    for n in 0..xs.n {
        let dst = out.item_mut(n);
        for (co, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        for rows in row_tiles(os.h, tile) {
            let pt = rows.len() * os.w;
            let src: &[F] = if pointwise {
                x.item(n)
            } else {
                im2col(
                    x.item(n),
                    cin,
                    xs.h,
                    xs.w,
                    g,
                    rows.clone(),
                    os.w,
                    &mut col[..kk * pt],
                );
                &col[..kk * pt]
            };
            let (src, rsb) = if pointwise { (src, p) } else { (src, pt) };
            F::gemm(
                cout,
                kk,
                pt,
                F::one(),
                weight.data(),
                kk as isize,
                1,
                src,
                rsb as isize,
                1,
                F::one(),
                &mut dst[rows.start * os.w..],
                p as isize,
                1,
            );
        }
    }
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    dy: &Tensor<F>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let xs = x.shape();
    let ws = weight.shape();
    let (cout, cin) = (ws.n, ws.c);
    let os = dy.shape();
    let p = os.plane();
    let kk = cin * g.kernel * g.kernel;
    let mut dw = Tensor::zeros(ws);
    let mut db = Tensor::zeros(Shape::new(cout, 1, 1, 1));
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let pointwise = g.is_pointwise();
    let tile = if pointwise {
        os.h
    } else {
        row_tile(kk, os.w, os.h)
    };
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![F::zero(); kk * tile * os.w]
    };
    let mut dcol = if pointwise || !need_dx {
        Vec::new()
    } else {
        vec![F::zero(); kk * tile * os.w]
    };
    for n in 0..xs.n {
        let dyn_ = dy.item(n);
        for (co, chunk) in dyn_.chunks(p).enumerate() {
            let s: F = chunk.iter().copied().sum();
            db.data_mut()[co] = db.data()[co] + s;
        }
        for rows in row_tiles(os.h, tile) {
            let pt = rows.len() * os.w;
            let dy_tile = &dyn_[rows.start * os.w..];
            let (src, csb): (&[F], usize) = if pointwise {
                (x.item(n), p)
            } else {
                im2col(
                    x.item(n),
                    cin,
                    xs.h,
                    xs.w,
                    g,
                    rows.clone(),
                    os.w,
                    &mut col[..kk * pt],
                );
                (&col[..kk * pt], pt)
            };
            // dW += dY (cout x pt) * col^T (pt x kk)
            F::gemm(
                cout,
                pt,
                kk,
                F::one(),
                dy_tile,
                p as isize,
                1,
                src,
                1,
                csb as isize,
                F::one(),
                dw.data_mut(),
                kk as isize,
                1,
            );
            if let Some(dx) = dx.as_mut() {
                // dcol = W^T (kk x cout) * dY (cout x pt)
                let (target, rsc): (&mut [F], usize) = if pointwise {
                    (dx.item_mut(n), p)
                } else {
                    (&mut dcol[..kk * pt], pt)
                };
                F::gemm(
                    kk,
                    cout,
                    pt,
                    F::one(),
                    weight.data(),
                    1,
                    kk as isize,
                    dy_tile,
                    p as isize,
                    1,
                    F::zero(),
                    target,
                    rsc as isize,
                    1,
                );
                if !pointwise {
                    col2im(
                        &dcol[..kk * pt],
                        cin,
                        xs.h,
                        xs.w,
                        g,
                        rows.clone(),
                        os.w,
                        dx.item_mut(n),
                    );
                }
            }
        }
    }
    (dx, dw, db)
}

/// Transposed convolution with kernel == stride == `factor` and no padding,
/// so output tiles never overlap. `weight` is `(in, out, f, f)`.
pub fn conv_transpose_forward<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    factor: usize,
) -> Tensor<F> {
    let xs = x.shape();
    let ws = weight.shape();
    let (cin, cout) = (ws.n, ws.c);
    let p = xs.plane();
    let r = cout * factor * factor;
    let os = Shape::new(xs.n, cout, xs.h * factor, xs.w * factor);
    let mut out = Tensor::zeros(os);
    let mut tmp = vec![F::zero(); r * p];
    for n in 0..xs.n {
        // tmp (r x p) = W^T (r x cin) * X (cin x p)
        F::gemm(
            r,
            cin,
            p,
            F::one(),
            weight.data(),
            1,
            r as isize,
            x.item(n),
            p as isize,
            1,
            F::zero(),
            &mut tmp,
            p as isize,
            1,
        );
        let dst = out.item_mut(n);
        for co in 0..cout {
            let b = bias.data()[co];
            for a in 0..factor {
                for bb in 0..factor {
                    let row = &tmp[((co * factor + a) * factor + bb) * p..][..p];
                    for i in 0..xs.h {
                        let orow = (co * os.h + i * factor + a) * os.w;
                        for j in 0..xs.w {
                            dst[orow + j * factor + bb] = row[i * xs.w + j] + b;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose_backward<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    dy: &Tensor<F>,
    factor: usize,
    need_dx: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let xs = x.shape();
    let ws = weight.shape();
    let (cin, cout) = (ws.n, ws.c);
    let p = xs.plane();
    let r = cout * factor * factor;
    let os = dy.shape();
    let mut dw = Tensor::zeros(ws);
    let mut db = Tensor::zeros(Shape::new(cout, 1, 1, 1));
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut tmp = vec![F::zero(); r * p];
    for n in 0..xs.n {
        let src = dy.item(n);
        for co in 0..cout {
            let mut acc = F::zero();
            for a in 0..factor {
                for bb in 0..factor {
                    let row = &mut tmp[((co * factor + a) * factor + bb) * p..][..p];
                    for i in 0..xs.h {
                        let orow = (co * os.h + i * factor + a) * os.w;
                        for j in 0..xs.w {
                            let v = src[orow + j * factor + bb];
                            row[i * xs.w + j] = v;
                            acc = acc + v;
                        }
                    }
                }
            }
            db.data_mut()[co] = db.data()[co] + acc;
        }
        // dW (cin x r) += X (cin x p) * tmp^T (p x r)
        F::gemm(
            cin,
            p,
            r,
            F::one(),
            x.item(n),
            p as isize,
            1,
            &tmp,
            1,
            p as isize,
            F::one(),
            dw.data_mut(),
            r as isize,
            1,
        );
        if let Some(dx) = dx.as_mut() {
            // dX (cin x p) = W (cin x r) * tmp (r x p)
            F::gemm(
                cin,
                r,
                p,
                F::one(),
                weight.data(),
                r as isize,
                1,
                &tmp,
                p as isize,
                1,
                F::zero(),
                dx.item_mut(n),
                p as isize,
                1,
            );
        }
    }
    (dx, dw, db)
}

/// 2x2 max pooling with stride 2; also returns the winning offset (0..4)
/// of every output cell. Ties go to the first offset in row-major order.
pub fn max_pool2_forward<F: Float>(x: &Tensor<F>) -> (Tensor<F>, Vec<u8>) {
    let s = x.shape();
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(os);
    let mut arg = vec![0u8; os.numel()];
    let xd = x.data();
    let od = out.data_mut();
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.h * s.w;
        for i in 0..os.h {
            for j in 0..os.w {
                let r0 = base + 2 * i * s.w + 2 * j;
                let cand = [xd[r0], xd[r0 + 1], xd[r0 + s.w], xd[r0 + s.w + 1]];
                let mut best = 0;
                for (q, &v) in cand.iter().enumerate().skip(1) {
                    if v > cand[best] {
                        best = q;
                    }
                }
                od[o] = cand[best];
                arg[o] = best as u8;
                o += 1;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<F: Float>(in_shape: Shape, arg: &[u8], dy: &Tensor<F>) -> Tensor<F> {
    let s = in_shape;
    let os = dy.shape();
    let mut dx = Tensor::zeros(s);
    let dd = dx.data_mut();
    let mut o = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.h * s.w;
        for i in 0..os.h {
            for j in 0..os.w {
                let q = arg[o] as usize;
                let idx = base + (2 * i + q / 2) * s.w + 2 * j + q % 2;
                dd[idx] = dy.data()[o];
                o += 1;
            }
        }
    }
    dx
}

pub fn upsample_nearest_forward<F: Float>(x: &Tensor<F>, factor: usize) -> Tensor<F> {
    let s = x.shape();
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut out = Tensor::zeros(os);
    let xd = x.data();
    let od = out.data_mut();
    for nc in 0..s.n * s.c {
        let ib = nc * s.plane();
        let ob = nc * os.plane();
        for oy in 0..os.h {
            let irow = &xd[ib + (oy / factor) * s.w..][..s.w];
            let orow = &mut od[ob + oy * os.w..][..os.w];
            for (ox, v) in orow.iter_mut().enumerate() {
                *v = irow[ox / factor];
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<F: Float>(
    in_shape: Shape,
    dy: &Tensor<F>,
    factor: usize,
) -> Tensor<F> {
    let s = in_shape;
    let os = dy.shape();
    let mut dx = Tensor::zeros(s);
    let dd = dx.data_mut();
    for nc in 0..s.n * s.c {
        let ib = nc * s.plane();
        let ob = nc * os.plane();
        for oy in 0..os.h {
            let orow = &dy.data()[ob + oy * os.w..][..os.w];
            let irow = &mut dd[ib + (oy / factor) * s.w..][..s.w];
            for (ox, &v) in orow.iter().enumerate() {
                irow[ox / factor] = irow[ox / factor] + v;
            }
        }
    }
    dx
}
