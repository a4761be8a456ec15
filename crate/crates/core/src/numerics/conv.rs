//! 1-D, transposed 1-D, and 3-D convolution kernels with their adjoints.
//!
//! Layouts are channels-first:
//!
//! * conv1d: `x [C_in, T]`, `w [C_out, C_in/groups, K]`, `y [C_out, T']`
//! * transposed conv1d: `x [C_in, T]`, `w [C_in, C_out/groups, K]`
//! * conv3d: `x [C_in, D0, D1, D2]`, `w [C_out, C_in, K0, K1, K2]`

use crate::error::{config_err, shape_err, Result};
use crate::scalar::{gemm, Scalar};

/// Geometry of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            dilation: 1,
            groups: 1,
            pad_left: 0,
            pad_right: 0,
        }
    }

    /// Kernel-1 channel mixing.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    /// Per-channel filter of odd length with "same" padding.
    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        let p = (kernel - 1) / 2;
        Self::new(channels, channels, kernel)
            .groups(channels)
            .padding(p, kernel - 1 - p)
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn padding(mut self, left: usize, right: usize) -> Self {
        self.pad_left = left;
        self.pad_right = right;
        self
    }

    pub fn pad_total(&self) -> usize {
        self.pad_left + self.pad_right
    }

    pub fn extent(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel == 0
            || self.stride == 0
            || self.dilation == 0
            || self.groups == 0
        {
            return Err(config_err!("conv spec has a zero field: {:?}", self));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(config_err!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels,
                self.out_channels,
                self.groups
            ));
        }
        Ok(())
    }

    pub fn out_len(&self, t: usize) -> Result<usize> {
        let padded = t + self.pad_total();
        if padded < self.extent() {
            return Err(shape_err!(
                "input length {} + padding {} shorter than kernel extent {}",
                t,
                self.pad_total(),
                self.extent()
            ));
        }
        Ok((padded - self.extent()) / self.stride + 1)
    }

    pub fn transposed_out_len(&self, t: usize) -> Result<usize> {
        let full = (t - 1) * self.stride + self.extent();
        if full <= self.pad_total() {
            return Err(shape_err!("transposed conv output would be empty"));
        }
        Ok(full - self.pad_total())
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
        ]
    }

    pub fn transposed_weight_shape(&self) -> [usize; 3] {
        [
            self.in_channels,
            self.out_channels / self.groups,
            self.kernel,
        ]
    }

    pub fn macs(&self, t_out: usize) -> u64 {
        (self.out_channels * t_out * (self.in_channels / self.groups) * self.kernel) as u64
    }

    fn is_plain_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.groups == 1 && self.pad_total() == 0
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    t_in: usize,
    k: usize,
    stride: usize,
    dil: usize,
    pad_left: usize,
    t_out: usize,
    col: &mut [T],
) {
    for c in 0..channels {
        let xr = &x[c * t_in..(c + 1) * t_in];
        for kk in 0..k {
            let row = &mut col[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            let off = (kk * dil) as isize - pad_left as isize;
            for (o, r) in row.iter_mut().enumerate() {
                let src = (o * stride) as isize + off;
                *r = if src >= 0 && (src as usize) < t_in {
                    xr[src as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    t_in: usize,
    k: usize,
    stride: usize,
    dil: usize,
    pad_left: usize,
    t_out: usize,
    x: &mut [T],
) {
    for c in 0..channels {
        let xr = &mut x[c * t_in..(c + 1) * t_in];
        for kk in 0..k {
            let row = &col[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            let off = (kk * dil) as isize - pad_left as isize;
            for (o, &r) in row.iter().enumerate() {
                let src = (o * stride) as isize + off;
                if src >= 0 && (src as usize) < t_in {
                    xr[src as usize] += r;
                }
            }
        }
    }
}

fn check_conv_shapes(
    spec: &ConvSpec,
    x_shape: &[usize],
    w_shape: &[usize],
    b_len: Option<usize>,
    w_expected: [usize; 3],
    x_channels: usize,
) -> Result<usize> {
    spec.validate()?;
    if x_shape.len() != 2 || x_shape[0] != x_channels {
        return Err(shape_err!(
            "conv input {:?} does not have {} channels",
            x_shape,
            x_channels
        ));
    }
    if w_shape != w_expected {
        return Err(shape_err!(
            "conv weight {:?}, expected {:?}",
            w_shape,
            w_expected
        ));
    }
    if let Some(b) = b_len {
        if b != spec.out_channels {
            return Err(shape_err!(
                "conv bias length {} != {}",
                b,
                spec.out_channels
            ));
        }
    }
    Ok(x_shape[1])
}

/// Validates shapes and returns the output length.
pub fn conv1d_out_shape(
    spec: &ConvSpec,
    x_shape: &[usize],
    w_shape: &[usize],
    b_len: Option<usize>,
) -> Result<[usize; 2]> {
    let t = check_conv_shapes(
        spec,
        x_shape,
        w_shape,
        b_len,
        spec.weight_shape(),
        spec.in_channels,
    )?;
    Ok([spec.out_channels, spec.out_len(t)?])
}

pub fn conv1d_forward<T: Scalar>(
    spec: &ConvSpec,
    x: &[T],
    t_in: usize,
    w: &[T],
    b: Option<&[T]>,
    t_out: usize,
) -> Vec<T> {
    let cout = spec.out_channels;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = cout / spec.groups;
    let k = spec.kernel;
    let mut y = vec![T::zero(); cout * t_out];
    if let Some(b) = b {
        for (o, row) in y.chunks_mut(t_out).enumerate() {
            row.fill(b[o]);
        }
    }
    if spec.is_plain_pointwise() {
        gemm(
            cout,
            spec.in_channels,
            t_out,
            w,
            false,
            x,
            false,
            T::one(),
            &mut y,
        );
        return y;
    }
    if cin_g == 1 {
        // Depthwise (optionally with a channel multiplier): direct loops.
        for o in 0..cout {
            let ci = o / cout_g;
            let xr = &x[ci * t_in..(ci + 1) * t_in];
            let yr = &mut y[o * t_out..(o + 1) * t_out];
            let wr = &w[o * k..(o + 1) * k];
            for (kk, &wk) in wr.iter().enumerate() {
                let off = (kk * spec.dilation) as isize - spec.pad_left as isize;
                let (lo, hi) = valid_range(off, spec.stride, t_in, t_out);
                for t in lo..hi {
                    let src = ((t * spec.stride) as isize + off) as usize;
                    yr[t] += wk * xr[src];
                }
            }
        }
        return y;
    }
    let mut col = vec![T::zero(); cin_g * k * t_out];
    for g in 0..spec.groups {
        im2col(
            &x[g * cin_g * t_in..(g + 1) * cin_g * t_in],
            cin_g,
            t_in,
            k,
            spec.stride,
            spec.dilation,
            spec.pad_left,
            t_out,
            &mut col,
        );
        gemm(
            cout_g,
            cin_g * k,
            t_out,
            &w[g * cout_g * cin_g * k..(g + 1) * cout_g * cin_g * k],
            false,
            &col,
            false,
            T::one(),
            &mut y[g * cout_g * t_out..(g + 1) * cout_g * t_out],
        );
    }
    y
}

/// Output positions `t` for which `t*stride + off` lies inside `[0, t_in)`.
#[inline]
fn valid_range(off: isize, stride: usize, t_in: usize, t_out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi_excl = {
        let lim = t_in as isize - off; // need t*s < lim
        if lim <= 0 {
            0
        } else {
            (lim + s - 1) / s
        }
    };
    let lo = (lo.max(0) as usize).min(t_out);
    let hi = (hi_excl.max(0) as usize).min(t_out);
    (lo, hi.max(lo))
}

/// Gradients of conv1d. Returns `(dx, dw, db)`; entries are computed only when requested.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub fn conv1d_backward<T: Scalar>(
    spec: &ConvSpec,
    x: &[T],
    t_in: usize,
    w: &[T],
    dy: &[T],
    t_out: usize,
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let cout = spec.out_channels;
    let cin = spec.in_channels;
    let cin_g = cin / spec.groups;
    let cout_g = cout / spec.groups;
    let k = spec.kernel;
    let db = need[2].then(|| dy.chunks(t_out).map(|r| r.iter().copied().sum()).collect());
    if spec.is_plain_pointwise() {
        let dx = need[0].then(|| {
            let mut dx = vec![T::zero(); cin * t_in];
            gemm(cin, cout, t_in, w, true, dy, false, T::zero(), &mut dx);
            dx
        });
        let dw = need[1].then(|| {
            let mut dw = vec![T::zero(); cout * cin];
            gemm(cout, t_out, cin, dy, false, x, true, T::zero(), &mut dw);
            dw
        });
        return (dx, dw, db);
    }
    if cin_g == 1 {
        let mut dx = need[0].then(|| vec![T::zero(); cin * t_in]);
        let mut dw = need[1].then(|| vec![T::zero(); cout * k]);
        for o in 0..cout {
            let ci = o / cout_g;
            let xr = &x[ci * t_in..(ci + 1) * t_in];
            let dyr = &dy[o * t_out..(o + 1) * t_out];
            for kk in 0..k {
                let off = (kk * spec.dilation) as isize - spec.pad_left as isize;
                let (lo, hi) = valid_range(off, spec.stride, t_in, t_out);
                if let Some(dw) = dw.as_mut() {
                    let mut acc = T::zero();
                    for t in lo..hi {
                        let src = ((t * spec.stride) as isize + off) as usize;
                        acc += dyr[t] * xr[src];
                    }
                    dw[o * k + kk] += acc;
                }
                if let Some(dx) = dx.as_mut() {
                    let wk = w[o * k + kk];
                    let dxr = &mut dx[ci * t_in..(ci + 1) * t_in];
                    for t in lo..hi {
                        let src = ((t * spec.stride) as isize + off) as usize;
                        dxr[src] += wk * dyr[t];
                    }
                }
            }
        }
        return (dx, dw, db);
    }
    let mut dx = need[0].then(|| vec![T::zero(); cin * t_in]);
    let mut dw = need[1].then(|| vec![T::zero(); w.len()]);
    let mut col = vec![T::zero(); cin_g * k * t_out];
    for g in 0..spec.groups {
        let dyg = &dy[g * cout_g * t_out..(g + 1) * cout_g * t_out];
        let wsz = cout_g * cin_g * k;
        if let Some(dw) = dw.as_mut() {
            im2col(
                &x[g * cin_g * t_in..(g + 1) * cin_g * t_in],
                cin_g,
                t_in,
                k,
                spec.stride,
                spec.dilation,
                spec.pad_left,
                t_out,
                &mut col,
            );
            gemm(
                cout_g,
                t_out,
                cin_g * k,
                dyg,
                false,
                &col,
                true,
                T::zero(),
                &mut dw[g * wsz..(g + 1) * wsz],
            );
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                cin_g * k,
                cout_g,
                t_out,
                &w[g * wsz..(g + 1) * wsz],
                true,
                dyg,
                false,
                T::zero(),
                &mut col,
            );
            col2im(
                &col,
                cin_g,
                t_in,
                k,
                spec.stride,
                spec.dilation,
                spec.pad_left,
                t_out,
                &mut dx[g * cin_g * t_in..(g + 1) * cin_g * t_in],
            );
        }
    }
    (dx, dw, db)
}

pub fn conv_transpose1d_out_shape(
    spec: &ConvSpec,
    x_shape: &[usize],
    w_shape: &[usize],
    b_len: Option<usize>,
) -> Result<[usize; 2]> {
    let t = check_conv_shapes(
        spec,
        x_shape,
        w_shape,
        b_len,
        spec.transposed_weight_shape(),
        spec.in_channels,
    )?;
    Ok([spec.out_channels, spec.transposed_out_len(t)?])
}

pub fn conv_transpose1d_forward<T: Scalar>(
    spec: &ConvSpec,
    x: &[T],
    t_in: usize,
    w: &[T],
    b: Option<&[T]>,
    t_out: usize,
) -> Vec<T> {
    let cout = spec.out_channels;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = cout / spec.groups;
    let k = spec.kernel;
    let mut y = vec![T::zero(); cout * t_out];
    let mut col = vec![T::zero(); cout_g * k * t_in];
    for g in 0..spec.groups {
        let wsz = cin_g * cout_g * k;
        gemm(
            cout_g * k,
            cin_g,
            t_in,
            &w[g * wsz..(g + 1) * wsz],
            true,
            &x[g * cin_g * t_in..(g + 1) * cin_g * t_in],
            false,
            T::zero(),
            &mut col,
        );
        col2im(
            &col,
            cout_g,
            t_out,
            k,
            spec.stride,
            spec.dilation,
            spec.pad_left,
            t_in,
            &mut y[g * cout_g * t_out..(g + 1) * cout_g * t_out],
        );
    }
    if let Some(b) = b {
        for (o, row) in y.chunks_mut(t_out).enumerate() {
            for v in row {
                *v += b[o];
            }
        }
    }
    y
}

#[allow(clippy::type_complexity)]
pub fn conv_transpose1d_backward<T: Scalar>(
    spec: &ConvSpec,
    x: &[T],
    t_in: usize,
    w: &[T],
    dy: &[T],
    t_out: usize,
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let cout = spec.out_channels;
    let cin = spec.in_channels;
    let cin_g = cin / spec.groups;
    let cout_g = cout / spec.groups;
    let k = spec.kernel;
    let db = need[2].then(|| dy.chunks(t_out).map(|r| r.iter().copied().sum()).collect());
    let mut dx = need[0].then(|| vec![T::zero(); cin * t_in]);
    let mut dw = need[1].then(|| vec![T::zero(); w.len()]);
    let mut col = vec![T::zero(); cout_g * k * t_in];
    for g in 0..spec.groups {
        let wsz = cin_g * cout_g * k;
        im2col(
            &dy[g * cout_g * t_out..(g + 1) * cout_g * t_out],
            cout_g,
            t_out,
            k,
            spec.stride,
            spec.dilation,
            spec.pad_left,
            t_in,
            &mut col,
        );
        if let Some(dx) = dx.as_mut() {
            gemm(
                cin_g,
                cout_g * k,
                t_in,
                &w[g * wsz..(g + 1) * wsz],
                false,
                &col,
                false,
                T::zero(),
                &mut dx[g * cin_g * t_in..(g + 1) * cin_g * t_in],
            );
        }
        if let Some(dw) = dw.as_mut() {
            gemm(
                cin_g,
                t_in,
                cout_g * k,
                &x[g * cin_g * t_in..(g + 1) * cin_g * t_in],
                false,
                &col,
                true,
                T::zero(),
                &mut dw[g * wsz..(g + 1) * wsz],
            );
        }
    }
    (dx, dw, db)
}

/// Geometry of a dense 3-D convolution over `[C, D0, D1, D2]` volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dSpec {
    /// Stride-1 convolution with "same" zero padding for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: [1, 1, 1],
            padding: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = dims[a] + 2 * self.padding[a];
            if padded < self.kernel[a] || self.stride[a] == 0 {
                return Err(shape_err!(
                    "conv3d axis {} of size {} too small for kernel {}",
                    a,
                    dims[a],
                    self.kernel[a]
                ));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    fn ksize(&self) -> usize {
        self.kernel.iter().product()
    }
}

pub fn conv3d_out_shape(
    spec: &Conv3dSpec,
    x_shape: &[usize],
    w_shape: &[usize],
    b_len: Option<usize>,
) -> Result<[usize; 4]> {
    if x_shape.len() != 4 || x_shape[0] != spec.in_channels {
        return Err(shape_err!(
            "conv3d input {:?} needs {} channels",
            x_shape,
            spec.in_channels
        ));
    }
    if w_shape != spec.weight_shape() {
        return Err(shape_err!(
            "conv3d weight {:?}, expected {:?}",
            w_shape,
            spec.weight_shape()
        ));
    }
    if let Some(b) = b_len {
        if b != spec.out_channels {
            return Err(shape_err!("conv3d bias length {}", b));
        }
    }
    let o = spec.out_dims([x_shape[1], x_shape[2], x_shape[3]])?;
    Ok([spec.out_channels, o[0], o[1], o[2]])
}

fn vol_cols<T: Scalar>(
    spec: &Conv3dSpec,
    x: &[T],
    dims: [usize; 3],
    od: [usize; 3],
    col: &mut [T],
    scatter: bool,
    xgrad: &mut [T],
) {
    let [k0, k1, k2] = spec.kernel;
    let n_out = od[0] * od[1] * od[2];
    let plane = dims[1] * dims[2];
    let vol = dims[0] * plane;
    for c in 0..spec.in_channels {
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let r = ((c * k0 + a) * k1 + b) * k2 + e;
                    let row = r * n_out;
                    let mut o = 0;
                    for i0 in 0..od[0] {
                        let s0 = (i0 * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                        let ok0 = s0 >= 0 && (s0 as usize) < dims[0];
                        for i1 in 0..od[1] {
                            let s1 = (i1 * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                            let ok1 = ok0 && s1 >= 0 && (s1 as usize) < dims[1];
                            for i2 in 0..od[2] {
                                let s2 =
                                    (i2 * spec.stride[2] + e) as isize - spec.padding[2] as isize;
                                let ok = ok1 && s2 >= 0 && (s2 as usize) < dims[2];
                                if ok {
                                    let src = c * vol
                                        + s0 as usize * plane
                                        + s1 as usize * dims[2]
                                        + s2 as usize;
                                    if scatter {
                                        xgrad[src] += col[row + o];
                                    } else {
                                        col[row + o] = x[src];
                                    }
                                } else if !scatter {
                                    col[row + o] = T::zero();
                                }
                                o += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<T: Scalar>(
    spec: &Conv3dSpec,
    x: &[T],
    dims: [usize; 3],
    w: &[T],
    b: Option<&[T]>,
    od: [usize; 3],
) -> Vec<T> {
    let n_out = od[0] * od[1] * od[2];
    let kdim = spec.in_channels * spec.ksize();
    let mut y = vec![T::zero(); spec.out_channels * n_out];
    if let Some(b) = b {
        for (o, row) in y.chunks_mut(n_out).enumerate() {
            row.fill(b[o]);
        }
    }
    if spec.ksize() == 1 && spec.stride == [1, 1, 1] {
        gemm(
            spec.out_channels,
            kdim,
            n_out,
            w,
            false,
            x,
            false,
            T::one(),
            &mut y,
        );
        return y;
    }
    let mut col = vec![T::zero(); kdim * n_out];
    vol_cols(spec, x, dims, od, &mut col, false, &mut []);
    gemm(
        spec.out_channels,
        kdim,
        n_out,
        w,
        false,
        &col,
        false,
        T::one(),
        &mut y,
    );
    y
}

#[allow(clippy::type_complexity)]
pub fn conv3d_backward<T: Scalar>(
    spec: &Conv3dSpec,
    x: &[T],
    dims: [usize; 3],
    w: &[T],
    dy: &[T],
    od: [usize; 3],
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let n_out = od[0] * od[1] * od[2];
    let kdim = spec.in_channels * spec.ksize();
    let n_in = dims[0] * dims[1] * dims[2];
    let db = need[2].then(|| dy.chunks(n_out).map(|r| r.iter().copied().sum()).collect());
    if spec.ksize() == 1 && spec.stride == [1, 1, 1] {
        let dx = need[0].then(|| {
            let mut dx = vec![T::zero(); spec.in_channels * n_in];
            gemm(
                kdim,
                spec.out_channels,
                n_out,
                w,
                true,
                dy,
                false,
                T::zero(),
                &mut dx,
            );
            dx
        });
        let dw = need[1].then(|| {
            let mut dw = vec![T::zero(); w.len()];
            gemm(
                spec.out_channels,
                n_out,
                kdim,
                dy,
                false,
                x,
                true,
                T::zero(),
                &mut dw,
            );
            dw
        });
        return (dx, dw, db);
    }
    let mut col = vec![T::zero(); kdim * n_out];
    let dw = need[1].then(|| {
        vol_cols(spec, x, dims, od, &mut col, false, &mut []);
        let mut dw = vec![T::zero(); w.len()];
        gemm(
            spec.out_channels,
            n_out,
            kdim,
            dy,
            false,
            &col,
            true,
            T::zero(),
            &mut dw,
        );
        dw
    });
    let dx = need[0].then(|| {
        gemm(
            kdim,
            spec.out_channels,
            n_out,
            w,
            true,
            dy,
            false,
            T::zero(),
            &mut col,
        );
        let mut dx = vec![T::zero(); spec.in_channels * n_in];
        vol_cols(spec, &[], dims, od, &mut col, true, &mut dx);
        dx
    });
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv1d(spec: &ConvSpec, x: &[f64], t: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
        let to = spec.out_len(t).unwrap();
        let cin_g = spec.in_channels / spec.groups;
        let cout_g = spec.out_channels / spec.groups;
        let mut y = vec![0.0; spec.out_channels * to];
        for o in 0..spec.out_channels {
            let g = o / cout_g;
            for p in 0..to {
                let mut acc = b[o];
                for ci in 0..cin_g {
                    for kk in 0..spec.kernel {
                        let src = (p * spec.stride + kk * spec.dilation) as isize
                            - spec.pad_left as isize;
                        if src >= 0 && (src as usize) < t {
                            acc += w[(o * cin_g + ci) * spec.kernel + kk]
                                * x[(g * cin_g + ci) * t + src as usize];
                        }
                    }
                }
                y[o * to + p] = acc;
            }
        }
        y
    }

    fn seq(n: usize, a: f64) -> Vec<f64> {
        (0..n)
            .map(|i| ((i as f64 * a).sin() * 1.7).fract())
            .collect()
    }

    #[test]
    fn all_paths_match_naive_loops() {
        let specs = [
            ConvSpec::pointwise(3, 5),
            ConvSpec::depthwise(4, 3),
            ConvSpec::new(4, 8, 1).groups(4),
            ConvSpec::new(2, 3, 4).stride(2).padding(1, 2),
            ConvSpec::new(4, 6, 3).groups(2).dilation(2).padding(2, 2),
            ConvSpec::new(1, 4, 16).stride(4).padding(6, 6),
        ];
        for spec in specs {
            let t = 23;
            let x = seq(spec.in_channels * t, 0.37);
            let w = seq(spec.weight_shape().iter().product(), 0.91);
            let b = seq(spec.out_channels, 1.3);
            let to = spec.out_len(t).unwrap();
            let y = conv1d_forward(&spec, &x, t, &w, Some(&b), to);
            let yn = naive_conv1d(&spec, &x, t, &w, &b);
            for (a, e) in y.iter().zip(&yn) {
                assert!((a - e).abs() < 1e-12, "{:?}", spec);
            }
        }
    }

    #[test]
    fn transposed_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> for the same weights.
        let spec = ConvSpec::new(3, 2, 4).stride(2).padding(1, 1);
        let t = 10;
        let to = spec.out_len(t).unwrap();
        let x = seq(3 * t, 0.3);
        let w = seq(2 * 3 * 4, 0.7);
        let y = seq(2 * to, 1.1);
        let cx = conv1d_forward(&spec, &x, t, &w, None, to);
        // convT with swapped roles: in=2 (conv out), out=3
        let tspec = ConvSpec::new(2, 3, 4).stride(2).padding(1, 1);
        let tout = tspec.transposed_out_len(to).unwrap();
        assert_eq!(tout, t);
        let cty = conv_transpose1d_forward(&tspec, &y, to, &w, None, tout);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&cty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv3d_pointwise_and_general_agree_with_naive() {
        let spec = Conv3dSpec::same(2, 3, [3, 3, 1]).with_stride([2, 2, 1]);
        let dims = [4, 4, 2];
        let x = seq(2 * 32, 0.5);
        let w = seq(3 * 2 * 9, 0.8);
        let od = spec.out_dims(dims).unwrap();
        assert_eq!(od, [2, 2, 2]);
        let y = conv3d_forward(&spec, &x, dims, &w, None, od);
        // naive
        for o in 0..3 {
            for i0 in 0..2 {
                for i1 in 0..2 {
                    for i2 in 0..2 {
                        let mut acc = 0.0;
                        for c in 0..2 {
                            for a in 0..3 {
                                for b in 0..3 {
                                    let s0 = (i0 * 2 + a) as isize - 1;
                                    let s1 = (i1 * 2 + b) as isize - 1;
                                    if s0 < 0 || s1 < 0 || s0 >= 4 || s1 >= 4 {
                                        continue;
                                    }
                                    acc += w[((o * 2 + c) * 3 + a) * 3 + b]
                                        * x[c * 32 + s0 as usize * 8 + s1 as usize * 2 + i2];
                                }
                            }
                        }
                        let got = y[o * 8 + i0 * 4 + i1 * 2 + i2];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
