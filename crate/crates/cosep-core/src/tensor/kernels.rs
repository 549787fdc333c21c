//! Raw numeric kernels backing the graph ops.
//!
//! Convolutions are lowered to im2col/col2im plus dense accumulation
//! loops whose inner dimension runs over contiguous memory. Every kernel
//! uses a fixed loop order, so results are bitwise reproducible run to
//! run. Inputs are row-major slices with explicit dimensions.

/// Spatial output size of a strided convolution.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Spatial output size of a strided transposed convolution.
pub fn conv_transpose_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + kernel - 2 * pad
}

#[derive(Clone, Copy)]
pub struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        conv_out_dim(self.h, self.kh, self.stride, self.pad)
    }
    pub fn out_w(&self) -> usize {
        conv_out_dim(self.w, self.kw, self.stride, self.pad)
    }
}

/// Patch-gather geometry shared by convolution and its transpose: an
/// image of `c` planes sized `h` x `w` is sampled at `oh` x `ow` window
/// positions, tap (i,j) of window (a,b) reading pixel (a*s+i-p, b*s+j-p).
#[derive(Clone, Copy)]
struct Geom {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    /// Window index range [lo, hi) whose tap `k` lands inside [0, size).
    fn valid(&self, k: usize, size: usize, count: usize) -> (usize, usize) {
        let lo = if self.pad > k { (self.pad - k).div_ceil(self.stride) } else { 0 };
        if size + self.pad <= k {
            return (0, 0);
        }
        let hi = ((size - 1 + self.pad - k) / self.stride + 1).min(count);
        (lo, hi.max(lo))
    }
}

/// cols[(c*kh+i)*kw+j, a*ow+b] = img[c, a*s+i-p, b*s+j-p], zero outside.
fn im2col(img: &[f64], c: usize, g: &Geom, cols: &mut [f64]) {
    let plane = g.h * g.w;
    let patch = g.oh * g.ow;
    cols.fill(0.0);
    for ci in 0..c {
        let img_plane = &img[ci * plane..(ci + 1) * plane];
        for i in 0..g.kh {
            let (a_lo, a_hi) = g.valid(i, g.h, g.oh);
            for j in 0..g.kw {
                let (b_lo, b_hi) = g.valid(j, g.w, g.ow);
                let row = &mut cols[((ci * g.kh + i) * g.kw + j) * patch..][..patch];
                for a in a_lo..a_hi {
                    let ih = a * g.stride + i - g.pad;
                    let src = &img_plane[ih * g.w..(ih + 1) * g.w];
                    let dst = &mut row[a * g.ow..(a + 1) * g.ow];
                    for b in b_lo..b_hi {
                        // b >= b_lo guarantees b*stride + j >= pad
                        dst[b] = src[b * g.stride + j - g.pad];
                    }
                }
            }
        }
    }
}

/// Inverse scatter of [`im2col`]: img[c, a*s+i-p, b*s+j-p] += cols[...].
fn col2im_add(cols: &[f64], c: usize, g: &Geom, img: &mut [f64]) {
    let plane = g.h * g.w;
    let patch = g.oh * g.ow;
    for ci in 0..c {
        let img_plane = &mut img[ci * plane..(ci + 1) * plane];
        for i in 0..g.kh {
            let (a_lo, a_hi) = g.valid(i, g.h, g.oh);
            for j in 0..g.kw {
                let (b_lo, b_hi) = g.valid(j, g.w, g.ow);
                let row = &cols[((ci * g.kh + i) * g.kw + j) * patch..][..patch];
                for a in a_lo..a_hi {
                    let ih = a * g.stride + i - g.pad;
                    let dst = &mut img_plane[ih * g.w..(ih + 1) * g.w];
                    let src = &row[a * g.ow..(a + 1) * g.ow];
                    for b in b_lo..b_hi {
                        dst[b * g.stride + j - g.pad] += src[b];
                    }
                }
            }
        }
    }
}

fn conv_geom(d: &ConvDims) -> Geom {
    Geom {
        h: d.h,
        w: d.w,
        kh: d.kh,
        kw: d.kw,
        stride: d.stride,
        pad: d.pad,
        oh: d.out_h(),
        ow: d.out_w(),
    }
}

/// y[n,co,oh,ow] = b[co] + sum_{ci,kh,kw} x[n,ci,oh*s-p+kh,ow*s-p+kw] * wt[co,ci,kh,kw]
pub fn conv2d_forward(x: &[f64], wt: &[f64], b: &[f64], d: ConvDims, y: &mut [f64]) {
    let g = conv_geom(&d);
    let in_plane = d.h * d.w;
    let patch = g.oh * g.ow;
    let k_len = d.cin * d.kh * d.kw;
    let mut cols = vec![0.0; k_len * patch];
    for n in 0..d.n {
        im2col(&x[n * d.cin * in_plane..], d.cin, &g, &mut cols);
        for co in 0..d.cout {
            let y_row = &mut y[(n * d.cout + co) * patch..][..patch];
            y_row.fill(b[co]);
            let w_row = &wt[co * k_len..(co + 1) * k_len];
            for (k, &wv) in w_row.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let c_row = &cols[k * patch..(k + 1) * patch];
                for (yv, &cv) in y_row.iter_mut().zip(c_row) {
                    *yv += wv * cv;
                }
            }
        }
    }
}

/// Gradients of `conv2d_forward` w.r.t. input, weight, and bias; all
/// grads accumulate into the provided buffers.
pub fn conv2d_backward(
    x: &[f64],
    wt: &[f64],
    dy: &[f64],
    d: ConvDims,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let g = conv_geom(&d);
    let in_plane = d.h * d.w;
    let patch = g.oh * g.ow;
    let k_len = d.cin * d.kh * d.kw;

    if let Some(db) = db {
        for n in 0..d.n {
            for co in 0..d.cout {
                let dy_row = &dy[(n * d.cout + co) * patch..][..patch];
                db[co] += dy_row.iter().sum::<f64>();
            }
        }
    }

    let mut cols = if dw.is_some() { vec![0.0; k_len * patch] } else { Vec::new() };
    let mut dcols = if dx.is_some() { vec![0.0; k_len * patch] } else { Vec::new() };
    for n in 0..d.n {
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[n * d.cin * in_plane..], d.cin, &g, &mut cols);
            for co in 0..d.cout {
                let dy_row = &dy[(n * d.cout + co) * patch..][..patch];
                for k in 0..k_len {
                    let c_row = &cols[k * patch..(k + 1) * patch];
                    let acc: f64 = dy_row.iter().zip(c_row).map(|(&a, &b)| a * b).sum();
                    dw[co * k_len + k] += acc;
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            dcols.fill(0.0);
            for co in 0..d.cout {
                let dy_row = &dy[(n * d.cout + co) * patch..][..patch];
                let w_row = &wt[co * k_len..(co + 1) * k_len];
                for (k, &wv) in w_row.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let dc_row = &mut dcols[k * patch..(k + 1) * patch];
                    for (dcv, &dyv) in dc_row.iter_mut().zip(dy_row) {
                        *dcv += wv * dyv;
                    }
                }
            }
            col2im_add(&dcols, d.cin, &g, &mut dx[n * d.cin * in_plane..]);
        }
    }
}

#[derive(Clone, Copy)]
pub struct ConvTDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTDims {
    pub fn out_h(&self) -> usize {
        conv_transpose_out_dim(self.h, self.kh, self.stride, self.pad)
    }
    pub fn out_w(&self) -> usize {
        conv_transpose_out_dim(self.w, self.kw, self.stride, self.pad)
    }
}

/// The transpose scatters input windows into the (larger) output image,
/// which is exactly the conv patch geometry with image = output and
/// window grid = input.
fn conv_t_geom(d: &ConvTDims) -> Geom {
    Geom {
        h: d.out_h(),
        w: d.out_w(),
        kh: d.kh,
        kw: d.kw,
        stride: d.stride,
        pad: d.pad,
        oh: d.h,
        ow: d.w,
    }
}

/// Transposed convolution; weight layout is [cin, cout, kh, kw].
/// y[n,co,ih*s-p+kh,iw*s-p+kw] += x[n,ci,ih,iw] * wt[ci,co,kh,kw]
pub fn conv_transpose2d_forward(x: &[f64], wt: &[f64], b: &[f64], d: ConvTDims, y: &mut [f64]) {
    let g = conv_t_geom(&d);
    let in_plane = d.h * d.w;
    let out_plane = g.h * g.w;
    let k_len = d.cout * d.kh * d.kw;
    let mut tcols = vec![0.0; k_len * in_plane];
    for n in 0..d.n {
        // tcols[(co,kh,kw), p] = sum_ci wt[ci,(co,kh,kw)] * x[n,ci,p]
        tcols.fill(0.0);
        for ci in 0..d.cin {
            let x_row = &x[(n * d.cin + ci) * in_plane..][..in_plane];
            let w_row = &wt[ci * k_len..(ci + 1) * k_len];
            for (k, &wv) in w_row.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let t_row = &mut tcols[k * in_plane..(k + 1) * in_plane];
                for (tv, &xv) in t_row.iter_mut().zip(x_row) {
                    *tv += wv * xv;
                }
            }
        }
        let y_img = &mut y[n * d.cout * out_plane..][..d.cout * out_plane];
        for co in 0..d.cout {
            y_img[co * out_plane..(co + 1) * out_plane].fill(b[co]);
        }
        col2im_add(&tcols, d.cout, &g, y_img);
    }
}

/// Gradients of `conv_transpose2d_forward`; all grads accumulate.
pub fn conv_transpose2d_backward(
    x: &[f64],
    wt: &[f64],
    dy: &[f64],
    d: ConvTDims,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let g = conv_t_geom(&d);
    let in_plane = d.h * d.w;
    let out_plane = g.h * g.w;
    let k_len = d.cout * d.kh * d.kw;

    if let Some(db) = db {
        for n in 0..d.n {
            for co in 0..d.cout {
                let dy_row = &dy[(n * d.cout + co) * out_plane..][..out_plane];
                db[co] += dy_row.iter().sum::<f64>();
            }
        }
    }

    if dx.is_none() && dw.is_none() {
        return;
    }
    // dy gathered back through the window geometry serves both remaining
    // gradients: dx = wt . cols, dw = x . cols^T
    let mut cols = vec![0.0; k_len * in_plane];
    for n in 0..d.n {
        im2col(&dy[n * d.cout * out_plane..], d.cout, &g, &mut cols);
        if let Some(dx) = dx.as_deref_mut() {
            for ci in 0..d.cin {
                let dx_row = &mut dx[(n * d.cin + ci) * in_plane..][..in_plane];
                let w_row = &wt[ci * k_len..(ci + 1) * k_len];
                for (k, &wv) in w_row.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let c_row = &cols[k * in_plane..(k + 1) * in_plane];
                    for (dxv, &cv) in dx_row.iter_mut().zip(c_row) {
                        *dxv += wv * cv;
                    }
                }
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            for ci in 0..d.cin {
                let x_row = &x[(n * d.cin + ci) * in_plane..][..in_plane];
                for k in 0..k_len {
                    let c_row = &cols[k * in_plane..(k + 1) * in_plane];
                    let acc: f64 = x_row.iter().zip(c_row).map(|(&a, &b)| a * b).sum();
                    dw[ci * k_len + k] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_shape_arithmetic() {
        // (8 + 2*1 - 4) / 2 + 1 = 4
        assert_eq!(conv_out_dim(8, 4, 2, 1), 4);
        // transpose inverts it: (4 - 1) * 2 + 4 - 2 = 8
        assert_eq!(conv_transpose_out_dim(4, 4, 2, 1), 8);
    }

    #[test]
    fn identity_kernel_passes_through() {
        let d = ConvDims {
            n: 1,
            cin: 1,
            h: 3,
            w: 3,
            cout: 1,
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
        };
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let mut y = vec![0.0; 9];
        conv2d_forward(&x, &[1.0], &[0.0], d, &mut y);
        assert_eq!(x, y);
    }

    /// Reference convolution written as the literal definition: walk every
    /// output element and sum the taps that land inside the input.
    fn naive_conv2d(x: &[f64], wt: &[f64], b: &[f64], d: ConvDims) -> Vec<f64> {
        let (oh_n, ow_n) = (d.out_h(), d.out_w());
        let mut y = vec![0.0; d.n * d.cout * oh_n * ow_n];
        for n in 0..d.n {
            for co in 0..d.cout {
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let mut acc = b[co];
                        for ci in 0..d.cin {
                            for kh in 0..d.kh {
                                for kw in 0..d.kw {
                                    let ih = (oh * d.stride + kh) as isize - d.pad as isize;
                                    let iw = (ow * d.stride + kw) as isize - d.pad as isize;
                                    if ih < 0
                                        || iw < 0
                                        || ih >= d.h as isize
                                        || iw >= d.w as isize
                                    {
                                        continue;
                                    }
                                    acc += x[((n * d.cin + ci) * d.h + ih as usize) * d.w
                                        + iw as usize]
                                        * wt[((co * d.cin + ci) * d.kh + kh) * d.kw + kw];
                                }
                            }
                        }
                        y[((n * d.cout + co) * oh_n + oh) * ow_n + ow] = acc;
                    }
                }
            }
        }
        y
    }

    /// Reference transposed convolution: scatter every input element into
    /// the output under the weight taps.
    fn naive_conv_t2d(x: &[f64], wt: &[f64], b: &[f64], d: ConvTDims) -> Vec<f64> {
        let (oh_n, ow_n) = (d.out_h(), d.out_w());
        let mut y = vec![0.0; d.n * d.cout * oh_n * ow_n];
        for n in 0..d.n {
            for co in 0..d.cout {
                for v in
                    &mut y[(n * d.cout + co) * oh_n * ow_n..(n * d.cout + co + 1) * oh_n * ow_n]
                {
                    *v = b[co];
                }
            }
            for ci in 0..d.cin {
                for ih in 0..d.h {
                    for iw in 0..d.w {
                        let xv = x[((n * d.cin + ci) * d.h + ih) * d.w + iw];
                        for co in 0..d.cout {
                            for kh in 0..d.kh {
                                for kw in 0..d.kw {
                                    let oh = (ih * d.stride + kh) as isize - d.pad as isize;
                                    let ow = (iw * d.stride + kw) as isize - d.pad as isize;
                                    if oh < 0
                                        || ow < 0
                                        || oh >= oh_n as isize
                                        || ow >= ow_n as isize
                                    {
                                        continue;
                                    }
                                    y[((n * d.cout + co) * oh_n + oh as usize) * ow_n
                                        + ow as usize] += xv
                                        * wt[((ci * d.cout + co) * d.kh + kh) * d.kw + kw];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() < tol, "mismatch at {i}: {x} vs {y}");
        }
    }

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// The lowered kernels must agree with the literal-definition
    /// references: forward values and, via the adjoint identities, every
    /// gradient buffer. Gradients are checked against finite differences
    /// elsewhere; here the target is the value path the gradcheck cannot
    /// see errors in.
    #[test]
    fn lowered_conv_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let shapes = [
            (2, 3, 7, 6, 4, 3, 3, 1, 1),
            (1, 2, 8, 8, 3, 4, 4, 2, 1),
            (2, 1, 5, 9, 2, 2, 3, 2, 0),
            (1, 4, 6, 6, 5, 3, 2, 1, 2),
        ];
        for &(n, cin, h, w, cout, kh, kw, stride, pad) in &shapes {
            let d = ConvDims { n, cin, h, w, cout, kh, kw, stride, pad };
            let x = randv(&mut rng, n * cin * h * w);
            let wt = randv(&mut rng, cout * cin * kh * kw);
            let b = randv(&mut rng, cout);
            let mut y = vec![0.0; n * cout * d.out_h() * d.out_w()];
            conv2d_forward(&x, &wt, &b, d, &mut y);
            assert_close(&y, &naive_conv2d(&x, &wt, &b, d), 1e-12);

            // adjoint check: for random dy, <dy, conv(x)> gradients match
            // a second naive accumulation through the old-style loops
            let dy = randv(&mut rng, y.len());
            let mut dx = vec![0.0; x.len()];
            let mut dw = vec![0.0; wt.len()];
            let mut db = vec![0.0; b.len()];
            conv2d_backward(&x, &wt, &dy, d, Some(&mut dx), Some(&mut dw), Some(&mut db));
            // dw computed from definition: dw = d<dy,y>/dwt via naive
            // forward on basis perturbations is O(n^2); instead verify the
            // inner-product identity <dy, conv(x; wt)> = <dw_lin, wt> + <db, b>
            // with dw_lin, db from the backward pass (linearity in wt, b).
            let lhs: f64 = dy.iter().zip(&y).map(|(&a, &b)| a * b).sum();
            let rhs: f64 = dw.iter().zip(&wt).map(|(&a, &b)| a * b).sum::<f64>()
                + db.iter().zip(&b).map(|(&a, &b)| a * b).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            // and <dy, conv(x)> - <db,b> = <dx_lin, x> (linearity in x)
            let rhs_x: f64 = dx.iter().zip(&x).map(|(&a, &b)| a * b).sum::<f64>()
                + db.iter().zip(&b).map(|(&a, &b)| a * b).sum::<f64>();
            assert!((lhs - rhs_x).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs_x}");
        }
    }

    #[test]
    fn lowered_conv_transpose_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let shapes = [
            (2, 3, 4, 5, 4, 3, 3, 1, 1),
            (1, 2, 4, 4, 3, 4, 4, 2, 1),
            (2, 4, 3, 6, 2, 2, 3, 2, 0),
            (1, 1, 5, 5, 5, 3, 2, 1, 0),
        ];
        for &(n, cin, h, w, cout, kh, kw, stride, pad) in &shapes {
            let d = ConvTDims { n, cin, h, w, cout, kh, kw, stride, pad };
            let x = randv(&mut rng, n * cin * h * w);
            let wt = randv(&mut rng, cin * cout * kh * kw);
            let b = randv(&mut rng, cout);
            let mut y = vec![0.0; n * cout * d.out_h() * d.out_w()];
            conv_transpose2d_forward(&x, &wt, &b, d, &mut y);
            assert_close(&y, &naive_conv_t2d(&x, &wt, &b, d), 1e-12);

            let dy = randv(&mut rng, y.len());
            let mut dx = vec![0.0; x.len()];
            let mut dw = vec![0.0; wt.len()];
            let mut db = vec![0.0; b.len()];
            conv_transpose2d_backward(
                &x,
                &wt,
                &dy,
                d,
                Some(&mut dx),
                Some(&mut dw),
                Some(&mut db),
            );
            let lhs: f64 = dy.iter().zip(&y).map(|(&a, &b)| a * b).sum();
            let rhs: f64 = dw.iter().zip(&wt).map(|(&a, &b)| a * b).sum::<f64>()
                + db.iter().zip(&b).map(|(&a, &b)| a * b).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            let rhs_x: f64 = dx.iter().zip(&x).map(|(&a, &b)| a * b).sum::<f64>()
                + db.iter().zip(&b).map(|(&a, &b)| a * b).sum::<f64>();
            assert!((lhs - rhs_x).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs_x}");
        }
    }
}
