use super::autograd::{OpKind, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pointwise operation selector for [`Var::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EltwiseKind {
    Add,
    Mul,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Scale(f64),
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

impl<T: Scalar> Var<T> {
    /// Applies a pointwise operation. `Add`/`Mul` take two inputs, the rest one.
    pub fn elementwise(kind: EltwiseKind, inputs: &[Var<T>]) -> Result<Var<T>> {
        let arity = match kind {
            EltwiseKind::Add | EltwiseKind::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::invalid(format!(
                "{kind:?} takes {arity} input(s), got {}",
                inputs.len()
            )));
        }
        let x = &inputs[0];
        Ok(match kind {
            EltwiseKind::Add => x.add(&inputs[1])?,
            EltwiseKind::Mul => x.mul(&inputs[1])?,
            EltwiseKind::Relu => x.relu(),
            EltwiseKind::LeakyRelu(s) => x.leaky_relu(s),
            EltwiseKind::Sigmoid => x.sigmoid(),
            EltwiseKind::Tanh => x.tanh(),
            EltwiseKind::Scale(c) => x.scale(c),
        })
    }

    // ---- binary pointwise -------------------------------------------------

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        binary(self, other, OpKind::Add, |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        binary(self, other, OpKind::Sub, |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        binary(
            self,
            other,
            OpKind::Mul,
            |a, b| a * b,
            |_, b, g| g * b,
            |a, _, g| g * a,
        )
    }

    pub fn div(&self, other: &Var<T>) -> Result<Var<T>> {
        binary(
            self,
            other,
            OpKind::Div,
            |a, b| a / b,
            |_, b, g| g / b,
            |a, b, g| -g * a / (b * b),
        )
    }

    // ---- unary pointwise --------------------------------------------------

    pub fn scale(&self, c: f64) -> Var<T> {
        let c = T::lit(c);
        unary(self, OpKind::Scale, move |x| c * x, move |_| c)
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<T> {
        let c = T::lit(c);
        unary(self, OpKind::AddScalar, move |x| x + c, |_| T::one())
    }

    pub fn relu(&self) -> Var<T> {
        unary(
            self,
            OpKind::Relu,
            |x| if x > T::zero() { x } else { T::zero() },
            |x| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::lit(slope);
        unary(
            self,
            OpKind::LeakyRelu,
            move |x| if x > T::zero() { x } else { s * x },
            move |x| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(&self) -> Var<T> {
        unary(self, OpKind::Sigmoid, sigmoid, |x| {
            let s = sigmoid(x);
            s * (T::one() - s)
        })
    }

    pub fn tanh(&self) -> Var<T> {
        unary(self, OpKind::Tanh, |x| x.tanh(), |x| {
            let t = x.tanh();
            T::one() - t * t
        })
    }

    pub fn exp(&self) -> Var<T> {
        unary(self, OpKind::Exp, |x| x.exp(), |x| x.exp())
    }

    pub fn ln(&self) -> Var<T> {
        unary(self, OpKind::Ln, |x| x.ln(), |x| x.recip())
    }

    pub fn sqrt(&self) -> Var<T> {
        unary(self, OpKind::Sqrt, |x| x.sqrt(), |x| {
            T::lit(0.5) / x.sqrt()
        })
    }

    pub fn square(&self) -> Var<T> {
        unary(self, OpKind::Square, |x| x * x, |x| x + x)
    }

    pub fn abs(&self) -> Var<T> {
        unary(self, OpKind::Abs, |x| x.abs(), |x| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Pointwise smooth-L1 penalty: `0.5·e²` for `|e| < 1`, `|e| − 0.5` otherwise.
    pub fn smooth_l1(&self) -> Var<T> {
        unary(self, OpKind::SmoothL1, smooth_l1_value, smooth_l1_slope)
    }

    /// `sign(x)·|x|^p`, defined for negative inputs. Gradient at 0 is taken as 0.
    pub fn signed_pow(&self, p: f64) -> Var<T> {
        let p = T::lit(p);
        unary(
            self,
            OpKind::SignedPow,
            move |x| {
                let m = x.abs().powf(p);
                if x < T::zero() {
                    -m
                } else {
                    m
                }
            },
            move |x| {
                if x == T::zero() {
                    T::zero()
                } else {
                    p * x.abs().powf(p - T::one())
                }
            },
        )
    }

    pub fn clamp_min(&self, floor: f64) -> Var<T> {
        let f = T::lit(floor);
        unary(
            self,
            OpKind::ClampMin,
            move |x| if x > f { x } else { f },
            move |x| if x > f { T::one() } else { T::zero() },
        )
    }

    // ---- reductions and shape ---------------------------------------------

    pub fn sum(&self) -> Var<T> {
        let value = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        Var::from_op(
            value,
            OpKind::Sum,
            vec![self.clone()],
            Box::new(move |g| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean(&self) -> Var<T> {
        let n = T::from_usize_lossy(self.value().numel());
        let value = Tensor::scalar(self.value().sum() / n);
        let shape = self.shape().to_vec();
        Var::from_op(
            value,
            OpKind::Mean,
            vec![self.clone()],
            Box::new(move |g| vec![Some(Tensor::full(&shape, g.item() / n))]),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value().reshape(shape)?;
        let orig = self.shape().to_vec();
        Ok(Var::from_op(
            value,
            OpKind::Reshape,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.reshape(&orig).expect("same numel"))]),
        ))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<T>]) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let (b, _, h, w) = first.value().dims4()?;
        let mut chans = Vec::with_capacity(parts.len());
        for p in parts {
            let (pb, pc, ph, pw) = p.value().dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::shape(format!(
                    "concat: {:?} incompatible with {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            chans.push(pc);
        }
        let total: usize = chans.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for (p, &pc) in parts.iter().zip(&chans) {
                let off = bi * pc * plane;
                data.extend_from_slice(&p.value().data()[off..off + pc * plane]);
            }
        }
        let value = Tensor::new(&[b, total, h, w], data)?;
        Ok(Var::from_op(
            value,
            OpKind::Concat,
            parts.to_vec(),
            Box::new(move |g| {
                let mut start = 0;
                chans
                    .iter()
                    .map(|&pc| {
                        let s = g.channels(start, pc).expect("concat layout");
                        start += pc;
                        Some(s)
                    })
                    .collect()
            }),
        ))
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Var<T>> {
        let value = self.value().channels(start, len)?;
        let (b, c, h, w) = self.value().dims4()?;
        Ok(Var::from_op(
            value,
            OpKind::Slice,
            vec![self.clone()],
            Box::new(move |g| {
                let plane = h * w;
                let mut out = Tensor::zeros(&[b, c, h, w]);
                for bi in 0..b {
                    let dst = (bi * c + start) * plane;
                    let src = bi * len * plane;
                    out.data_mut()[dst..dst + len * plane]
                        .copy_from_slice(&g.data()[src..src + len * plane]);
                }
                vec![Some(out)]
            }),
        ))
    }

    // ---- convolution ------------------------------------------------------

    /// 2-D cross-correlation of a `B×Cin×H×W` input with a `Cout×Cin×kh×kw`
    /// kernel, zero padding `padding` on every side.
    ///
    /// Output extent is `⌊(H + 2·padding − kh)/stride⌋ + 1` (same for width).
    pub fn conv2d(&self, kernel: &Var<T>, stride: usize, padding: usize) -> Result<Var<T>> {
        let (b, cin, h, w) = self.value().dims4()?;
        let (cout, kcin, kh, kw) = kernel.value().dims4().map_err(|_| {
            Error::shape(format!(
                "conv2d kernel must be rank 4 (out, in, kh, kw), got {:?}",
                kernel.shape()
            ))
        })?;
        if kcin != cin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels, kernel expects {kcin}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let geom = ConvGeom::new(cin, h, w, kh, kw, stride, padding)?;
        let (ho, wo) = (geom.ho, geom.wo);
        let k = geom.k();
        let p = ho * wo;
        let mut out = vec![T::zero(); b * cout * p];
        let mut cols = vec![T::zero(); k * p];
        let xd = self.value().data();
        let wd = kernel.value().data();
        for bi in 0..b {
            geom.im2col(&xd[bi * cin * h * w..(bi + 1) * cin * h * w], &mut cols);
            gemm_acc(cout, p, k, wd, &cols, &mut out[bi * cout * p..(bi + 1) * cout * p]);
        }
        let value = Tensor::new(&[b, cout, ho, wo], out)?;
        let (xin, kin) = (self.clone(), kernel.clone());
        Ok(Var::from_op(
            value,
            OpKind::Conv2d,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g| {
                let xd = xin.value().data();
                let wd = kin.value().data();
                let gd = g.data();
                let mut cols = vec![T::zero(); k * p];
                let mut cols_t = vec![T::zero(); p * k];
                let dx = xin.requires_grad().then(|| {
                    let mut w_t = vec![T::zero(); k * cout];
                    transpose(wd, cout, k, &mut w_t);
                    let mut dx = vec![T::zero(); b * cin * h * w];
                    for bi in 0..b {
                        cols.iter_mut().for_each(|v| *v = T::zero());
                        gemm_acc(k, p, cout, &w_t, &gd[bi * cout * p..(bi + 1) * cout * p], &mut cols);
                        geom.col2im(&cols, &mut dx[bi * cin * h * w..(bi + 1) * cin * h * w]);
                    }
                    Tensor::new(&[b, cin, h, w], dx).expect("dx shape")
                });
                let dw = kin.requires_grad().then(|| {
                    let mut dw = vec![T::zero(); cout * k];
                    for bi in 0..b {
                        geom.im2col(&xd[bi * cin * h * w..(bi + 1) * cin * h * w], &mut cols);
                        transpose(&cols, k, p, &mut cols_t);
                        gemm_acc(cout, k, p, &gd[bi * cout * p..(bi + 1) * cout * p], &cols_t, &mut dw);
                    }
                    Tensor::new(&[cout, cin, kh, kw], dw).expect("dw shape")
                });
                vec![dx, dw]
            }),
        ))
    }

    /// Adds a per-channel bias of shape `[C]` to a rank-4 tensor.
    pub fn bias_add(&self, bias: &Var<T>) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        if bias.shape() != [c] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {c} channels",
                bias.shape()
            )));
        }
        let plane = h * w;
        let bd = bias.value().data();
        let mut out = self.value().data().to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * plane;
                out[off..off + plane].iter_mut().for_each(|v| *v += bd[ci]);
            }
        }
        let value = Tensor::new(&[b, c, h, w], out)?;
        Ok(Var::from_op(
            value,
            OpKind::BiasAdd,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                let mut db = vec![T::zero(); c];
                for bi in 0..b {
                    for (ci, d) in db.iter_mut().enumerate() {
                        let off = (bi * c + ci) * plane;
                        *d += g.data()[off..off + plane].iter().copied().sum::<T>();
                    }
                }
                vec![Some(g.clone()), Some(Tensor::new(&[c], db).expect("bias"))]
            }),
        ))
    }

    /// Applies one fixed `kh×kw` kernel to every channel independently.
    ///
    /// Taps are accumulated in row-major kernel order starting from zero.
    pub fn depthwise_conv2d(&self, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        let (kh, kw) = kernel_dims(kernel)?;
        if stride == 0 {
            return Err(Error::invalid("depthwise_conv2d stride must be positive"));
        }
        let geom = ConvGeom::new(1, h, w, kh, kw, stride, padding)?;
        let value = Tensor::new(
            &[b, c, geom.ho, geom.wo],
            depthwise_forward(self.value().data(), b * c, &geom, kernel.data()),
        )?;
        let kernel = kernel.clone();
        Ok(Var::from_op(
            value,
            OpKind::DepthwiseConv2d,
            vec![self.clone()],
            Box::new(move |g| {
                let dx = depthwise_adjoint(g.data(), b * c, &geom, kernel.data());
                vec![Some(Tensor::new(&[b, c, h, w], dx).expect("dx shape"))]
            }),
        ))
    }

    /// Adjoint of [`Var::depthwise_conv2d`] with zero padding: each input value
    /// is spread over a `kh×kw` output window placed every `stride` pixels.
    pub fn depthwise_conv_transpose2d(&self, kernel: &Tensor<T>, stride: usize) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        let (kh, kw) = kernel_dims(kernel)?;
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        let ho = (h - 1) * stride + kh;
        let wo = (w - 1) * stride + kw;
        let geom = ConvGeom::new(1, ho, wo, kh, kw, stride, 0)?;
        debug_assert_eq!((geom.ho, geom.wo), (h, w));
        let value = Tensor::new(
            &[b, c, ho, wo],
            depthwise_adjoint(self.value().data(), b * c, &geom, kernel.data()),
        )?;
        let kernel = kernel.clone();
        Ok(Var::from_op(
            value,
            OpKind::DepthwiseConvTranspose2d,
            vec![self.clone()],
            Box::new(move |g| {
                let dx = depthwise_forward(g.data(), b * c, &geom, kernel.data());
                vec![Some(Tensor::new(&[b, c, h, w], dx).expect("dx shape"))]
            }),
        ))
    }

    // ---- rearrangements ---------------------------------------------------

    /// Depth-to-space: `B×(C·r²)×H×W → B×C×(H·r)×(W·r)` with
    /// `out[b, c, y·r + i, x·r + j] = in[b, c·r² + i·r + j, y, x]`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::shape(format!(
                "pixel_shuffle: {c} channels not divisible by r²={}",
                r * r
            )));
        }
        let oc = c / (r * r);
        let src = shuffle_index(b, oc, h, w, r);
        Ok(permute(self, &[b, oc, h * r, w * r], src, OpKind::PixelShuffle))
    }

    /// Space-to-depth, the exact inverse of [`Var::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::shape(format!(
                "pixel_unshuffle: {h}×{w} not divisible by {r}"
            )));
        }
        let fwd = shuffle_index(b, c, h / r, w / r, r);
        // fwd maps shuffled position → source; invert it.
        let mut src = vec![0; fwd.len()];
        for (out_pos, &in_pos) in fwd.iter().enumerate() {
            src[in_pos] = out_pos;
        }
        Ok(permute(self, &[b, c * r * r, h / r, w / r], src, OpKind::PixelUnshuffle))
    }

    // ---- pooling and gating -----------------------------------------------

    /// Spatial mean: `B×C×H×W → B×C×1×1`.
    pub fn global_avg_pool(&self) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        let plane = h * w;
        let n = T::from_usize_lossy(plane);
        let data: Vec<T> = self
            .value()
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().copied().sum::<T>() / n)
            .collect();
        let value = Tensor::new(&[b, c, 1, 1], data)?;
        Ok(Var::from_op(
            value,
            OpKind::GlobalAvgPool,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(b * c * plane);
                for &gv in g.data() {
                    dx.extend(std::iter::repeat(gv / n).take(plane));
                }
                vec![Some(Tensor::new(&[b, c, h, w], dx).expect("pool"))]
            }),
        ))
    }

    /// `x · gate` with a `B×C×1×1` gate broadcast over pixels.
    pub fn scale_channels(&self, gate: &Var<T>) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        if gate.shape() != [b, c, 1, 1] {
            return Err(Error::shape(format!(
                "channel gate {:?} does not match {:?}",
                gate.shape(),
                self.shape()
            )));
        }
        let plane = h * w;
        let xd = self.value().data();
        let gd = gate.value().data();
        let out: Vec<T> = xd
            .iter()
            .enumerate()
            .map(|(i, &v)| v * gd[i / plane])
            .collect();
        let value = Tensor::new(&[b, c, h, w], out)?;
        let (xv, gv) = (self.clone(), gate.clone());
        Ok(Var::from_op(
            value,
            OpKind::ScaleChannels,
            vec![self.clone(), gate.clone()],
            Box::new(move |g| {
                let xd = xv.value().data();
                let gd = gv.value().data();
                let dx: Vec<T> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &o)| o * gd[i / plane])
                    .collect();
                let dg: Vec<T> = g
                    .data()
                    .chunks(plane)
                    .zip(xd.chunks(plane))
                    .map(|(o, x)| o.iter().zip(x).map(|(&o, &x)| o * x).sum())
                    .collect();
                vec![
                    Some(Tensor::new(&[b, c, h, w], dx).expect("dx")),
                    Some(Tensor::new(&[b, c, 1, 1], dg).expect("dg")),
                ]
            }),
        ))
    }

    /// `x · gate` with a `B×1×H×W` gate broadcast over channels.
    pub fn scale_pixels(&self, gate: &Var<T>) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        if gate.shape() != [b, 1, h, w] {
            return Err(Error::shape(format!(
                "pixel gate {:?} does not match {:?}",
                gate.shape(),
                self.shape()
            )));
        }
        let plane = h * w;
        let gidx = move |i: usize| (i / (c * plane)) * plane + i % plane;
        let xd = self.value().data();
        let gd = gate.value().data();
        let out: Vec<T> = xd.iter().enumerate().map(|(i, &v)| v * gd[gidx(i)]).collect();
        let value = Tensor::new(&[b, c, h, w], out)?;
        let (xv, gv) = (self.clone(), gate.clone());
        Ok(Var::from_op(
            value,
            OpKind::ScalePixels,
            vec![self.clone(), gate.clone()],
            Box::new(move |g| {
                let xd = xv.value().data();
                let gd = gv.value().data();
                let mut dg = vec![T::zero(); b * plane];
                let dx: Vec<T> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &o)| {
                        dg[gidx(i)] += o * xd[i];
                        o * gd[gidx(i)]
                    })
                    .collect();
                vec![
                    Some(Tensor::new(&[b, c, h, w], dx).expect("dx")),
                    Some(Tensor::new(&[b, 1, h, w], dg).expect("dg")),
                ]
            }),
        ))
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn smooth_l1_value<T: Scalar>(e: T) -> T {
    let a = e.abs();
    if a < T::one() {
        T::lit(0.5) * e * e
    } else {
        a - T::lit(0.5)
    }
}

#[inline]
pub fn smooth_l1_slope<T: Scalar>(e: T) -> T {
    if e.abs() < T::one() {
        e
    } else if e > T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

fn unary<T: Scalar>(
    x: &Var<T>,
    kind: OpKind,
    f: impl Fn(T) -> T,
    df: impl Fn(T) -> T + 'static,
) -> Var<T> {
    let value = x.value().map(&f);
    let xin = x.clone();
    Var::from_op(
        value,
        kind,
        vec![x.clone()],
        Box::new(move |g| {
            let d = xin
                .value()
                .zip_map(g, |xv, gv| gv * df(xv))
                .expect("same shape");
            vec![Some(d)]
        }),
    )
}

/// Pointwise binary op with scalar broadcasting on either side.
fn binary<T: Scalar>(
    a: &Var<T>,
    b: &Var<T>,
    kind: OpKind,
    f: impl Fn(T, T) -> T,
    da: impl Fn(T, T, T) -> T + 'static,
    db: impl Fn(T, T, T) -> T + 'static,
) -> Result<Var<T>> {
    let (an, bn) = (a.value().numel(), b.value().numel());
    let out_shape = if a.shape() == b.shape() || bn == 1 {
        a.shape().to_vec()
    } else if an == 1 {
        b.shape().to_vec()
    } else {
        return Err(Error::shape(format!(
            "{kind:?}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    };
    let n: usize = out_shape.iter().product();
    let ad = a.value().data();
    let bd = b.value().data();
    let ai = move |i: usize| if an == 1 { 0 } else { i };
    let bi = move |i: usize| if bn == 1 { 0 } else { i };
    let data: Vec<T> = (0..n).map(|i| f(ad[ai(i)], bd[bi(i)])).collect();
    let value = Tensor::new(&out_shape, data)?;
    let (av, bv) = (a.clone(), b.clone());
    Ok(Var::from_op(
        value,
        kind,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ad = av.value().data();
            let bd = bv.value().data();
            let mut ga = vec![T::zero(); an];
            let mut gb = vec![T::zero(); bn];
            for (i, &gv) in g.data().iter().enumerate() {
                let (x, y) = (ad[ai(i)], bd[bi(i)]);
                ga[ai(i)] += da(x, y, gv);
                gb[bi(i)] += db(x, y, gv);
            }
            vec![
                Some(Tensor::new(av.shape(), ga).expect("ga")),
                Some(Tensor::new(bv.shape(), gb).expect("gb")),
            ]
        }),
    ))
}

/// Gather by `src[out_pos] = in_pos` where `src` is a permutation.
fn permute<T: Scalar>(x: &Var<T>, shape: &[usize], src: Vec<usize>, kind: OpKind) -> Var<T> {
    let xd = x.value().data();
    let data: Vec<T> = src.iter().map(|&s| xd[s]).collect();
    let value = Tensor::new(shape, data).expect("permutation keeps numel");
    let in_shape = x.shape().to_vec();
    Var::from_op(
        value,
        kind,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); src.len()];
            for (o, &s) in src.iter().enumerate() {
                dx[s] = g.data()[o];
            }
            vec![Some(Tensor::new(&in_shape, dx).expect("dx"))]
        }),
    )
}

/// For a shuffled `b×c×(h·r)×(w·r)` output, the flat source index of each
/// element in the `b×(c·r²)×h×w` input.
fn shuffle_index(b: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<usize> {
    let (oh, ow) = (h * r, w * r);
    let ic = c * r * r;
    let mut src = Vec::with_capacity(b * c * oh * ow);
    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y, i) = (oy / r, oy % r);
                    let (x, j) = (ox / r, ox % r);
                    let ch = ci * r * r + i * r + j;
                    src.push(((bi * ic + ch) * h + y) * w + x);
                }
            }
        }
    }
    src
}

fn kernel_dims<T: Scalar>(k: &Tensor<T>) -> Result<(usize, usize)> {
    match k.shape() {
        [kh, kw] => Ok((*kh, *kw)),
        s => Err(Error::shape(format!("fixed kernel must be rank 2, got {s:?}"))),
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(cin: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(format!(
                "kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(Self {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Input coordinate for output coordinate `o` and tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let v = (o * self.stride + t) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < extent).then_some(v as usize)
    }

    /// Unfolds one `cin×h×w` item into a `(cin·kh·kw) × (ho·wo)` matrix.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.ho * self.wo;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let d = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        match self.src(oy, ky, self.h) {
                            None => d.iter_mut().for_each(|v| *v = T::zero()),
                            Some(iy) => {
                                let srow = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in d.iter_mut().enumerate() {
                                    *v = match self.src(ox, kx, self.w) {
                                        Some(ix) => srow[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: accumulates columns back into an image.
    fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let p = self.ho * self.wo;
        for ci in 0..self.cin {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        for ox in 0..self.wo {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Scalar>(x: &[T], planes: usize, g: &ConvGeom, k: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(planes * g.ho * g.wo);
    for pl in 0..planes {
        let src = &x[pl * g.h * g.w..(pl + 1) * g.h * g.w];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut s = T::zero();
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for kx in 0..g.kw {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            s += k[ky * g.kw + kx] * src[iy * g.w + ix];
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

/// Transpose of `depthwise_forward`: maps `ho×wo` planes back to `h×w`.
fn depthwise_adjoint<T: Scalar>(y: &[T], planes: usize, g: &ConvGeom, k: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); planes * g.h * g.w];
    for pl in 0..planes {
        let dst = &mut out[pl * g.h * g.w..(pl + 1) * g.h * g.w];
        let src = &y[pl * g.ho * g.wo..(pl + 1) * g.ho * g.wo];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let v = src[oy * g.wo + ox];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for kx in 0..g.kw {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            dst[iy * g.w + ix] += k[ky * g.kw + kx] * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
fn gemm_acc<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Normalized `size×size` Gaussian window (outer product of a 1-D kernel).
pub fn gaussian_kernel<T: Scalar>(size: usize, sigma: f64) -> Tensor<T> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let g: Vec<f64> = raw.iter().map(|v| v / total).collect();
    Tensor::from_fn(&[size, size], |i| T::lit(g[i / size] * g[i % size]))
}
