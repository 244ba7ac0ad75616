use crate::error::{shape_err, AutodiffError, Result};
use crate::graph::{accumulate, Graph, Node, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reduction used by [`Graph::pool_over_positions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1, stride 1, no padding: the im2col matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    Concat(Vec<Var>),
    Conv {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    ChannelBias(Var, Var),
    Upsample {
        input: Var,
        factor: usize,
    },
    Gather {
        map: Var,
        points: Vec<(f64, f64)>,
    },
    Pool {
        input: Var,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    ScaleRows(Var, Var),
    FocalLoss {
        logits: Var,
        positive: Vec<bool>,
        alpha: f64,
        gamma: f64,
    },
    SmoothL1 {
        pred: Var,
        target: Vec<T>,
    },
}

impl<T> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::Transpose(a) => vec![*a],
            Op::Concat(vs) => vs.clone(),
            Op::Conv { input, kernel, .. } => vec![*input, *kernel],
            Op::ChannelBias(x, b) => vec![*x, *b],
            Op::Upsample { input, .. } => vec![*input],
            Op::Gather { map, .. } => vec![*map],
            Op::Pool { input, .. } => vec![*input],
            Op::ScaleRows(x, w) => vec![*x, *w],
            Op::FocalLoss { logits, .. } => vec![*logits],
            Op::SmoothL1 { pred, .. } => vec![*pred],
        }
    }
}

/// Logistic function, kept strictly inside (0, 1) even where the
/// exact value rounds to 0 or 1 in `T`.
fn sigmoid<T: Scalar>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let half_ulp = T::epsilon() / T::from_f64_lossy(2.0);
    y.max(T::min_positive_value()).min(T::one() - half_ulp)
}

/// Lays the receptive field of every output pixel out as a column:
/// row `(c·kh + i)·kw + j`, column `oy·out_w + ox`. Padding reads as zero.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let out_len = g.out_len();
    let mut col = vec![T::zero(); g.patch_len() * out_len];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut col[row * out_len..(row + 1) * out_len];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + i) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + j) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.out_w + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let out_len = g.out_len();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &col[row * out_len..(row + 1) * out_len];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + i) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + j) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Source index pair and weight of the second index for bilinear
/// up-sampling along one axis.
///
/// Pixel-center convention with aligned outer corners: output index `o`
/// sits at source coordinate `(o + 0.5) / factor - 0.5`, clamped to the
/// first/last source pixel.
fn upsample_table(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Corner indices and weights for bilinear sampling at `(x, y)`.
struct Bilinear {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: f64,
    wy: f64,
}

impl Bilinear {
    fn at(x: f64, y: f64, w: usize, h: usize) -> Self {
        let x0 = (x.floor() as usize).min(w - 1);
        let y0 = (y.floor() as usize).min(h - 1);
        Self {
            x0,
            x1: (x0 + 1).min(w - 1),
            y0,
            y1: (y0 + 1).min(h - 1),
            wx: x - x0 as f64,
            wy: y - y0 as f64,
        }
    }

    /// `(flat offset within a plane, weight)` for the four corners.
    fn taps(&self, w: usize) -> [(usize, f64); 4] {
        [
            (self.y0 * w + self.x0, (1.0 - self.wx) * (1.0 - self.wy)),
            (self.y0 * w + self.x1, self.wx * (1.0 - self.wy)),
            (self.y1 * w + self.x0, (1.0 - self.wx) * self.wy),
            (self.y1 * w + self.x1, self.wx * self.wy),
        ]
    }
}

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn map_unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("shape preserved");
        self.push(value, op)
    }

    fn zip_binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_binary(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_binary(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_binary(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        self.map_unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_usize(v.numel()).expect("count fits");
        let total: T = v.data().iter().copied().sum();
        self.push(Tensor::scalar(total / n), Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Transpose of a 2D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let &[rows, cols] = v.shape() else {
            return Err(shape_err("transpose", format!("need 2D, got {:?}", v.shape())));
        };
        let src = v.data();
        let mut data = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let value = Tensor::new(vec![cols, rows], data)?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let tail = self.shape(*first)[1..].to_vec();
        if self.shape(*first).is_empty() {
            return Err(shape_err("concat", "scalar input"));
        }
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.ndim() == 0 || v.shape()[1..] != tail[..] {
                return Err(shape_err(
                    "concat",
                    format!("{:?} does not stack onto [_, {tail:?}]", v.shape()),
                ));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// 2D cross-correlation of `input [C_in, H, W]` with `kernel [C_out, C_in, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (&[c_in, h, w], &[c_out, k_in, kh, kw]) = (self.shape(input), self.shape(kernel)) else {
            return Err(shape_err(
                "conv2d",
                format!("input {:?}, kernel {:?}", self.shape(input), self.shape(kernel)),
            ));
        };
        self.conv_generic("conv2d", input, kernel, [c_in, h, w], [c_out, k_in, kh, kw], stride, [padding, padding], vec![c_out])
    }

    /// 1D cross-correlation of `input [C_in, L]` with `kernel [C_out, C_in, k]`, stride 1.
    pub fn conv1d(&mut self, input: Var, kernel: Var, padding: usize) -> Result<Var> {
        let (&[c_in, len], &[c_out, k_in, k]) = (self.shape(input), self.shape(kernel)) else {
            return Err(shape_err(
                "conv1d",
                format!("input {:?}, kernel {:?}", self.shape(input), self.shape(kernel)),
            ));
        };
        self.conv_generic("conv1d", input, kernel, [c_in, 1, len], [c_out, k_in, 1, k], 1, [0, padding], vec![c_out])
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_generic(
        &mut self,
        op: &'static str,
        input: Var,
        kernel: Var,
        [c_in, h, w]: [usize; 3],
        [c_out, k_in, kh, kw]: [usize; 4],
        stride: usize,
        [pad_h, pad_w]: [usize; 2],
        lead_shape: Vec<usize>,
    ) -> Result<Var> {
        if k_in != c_in {
            return Err(shape_err(
                op,
                format!("kernel expects {k_in} input channels, input has {c_in}"),
            ));
        }
        if stride == 0 {
            return Err(AutodiffError::InvalidArgument {
                op,
                detail: "stride must be positive".into(),
            });
        }
        if h + 2 * pad_h < kh || w + 2 * pad_w < kw {
            return Err(shape_err(
                op,
                format!("{kh}x{kw} kernel larger than padded {h}x{w} input"),
            ));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
            out_h: (h + 2 * pad_h - kh) / stride + 1,
            out_w: (w + 2 * pad_w - kw) / stride + 1,
        };
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let mut out = vec![T::zero(); c_out * geom.out_len()];
        if geom.is_pointwise() {
            T::gemm(c_out, c_in, geom.out_len(), k, false, x, false, &mut out, false);
        } else {
            let col = im2col(x, &geom);
            T::gemm(c_out, geom.patch_len(), geom.out_len(), k, false, &col, false, &mut out, false);
        }
        let mut shape = lead_shape;
        if op == "conv2d" {
            shape.extend([geom.out_h, geom.out_w]);
        } else {
            shape.push(geom.out_w);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Conv { input, kernel, geom }))
    }

    /// Adds `bias[c]` to every element of channel `c` of `x [C, ...]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let channels = *xs.first().ok_or_else(|| shape_err("bias", "scalar input"))?;
        if self.value(bias).numel() != channels {
            return Err(shape_err(
                "bias",
                format!("{} biases for {channels} channels", self.value(bias).numel()),
            ));
        }
        let plane = self.value(x).numel() / channels;
        let b = self.value(bias).data().to_vec();
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i / plane])
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ChannelBias(x, bias)))
    }

    /// Bilinear up-sampling of `[C, H, W]` by an integer factor to `[C, f·H, f·W]`.
    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        let &[c, h, w] = self.shape(input) else {
            return Err(shape_err("upsample", format!("need [C,H,W], got {:?}", self.shape(input))));
        };
        if factor == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "upsample",
                detail: "factor must be positive".into(),
            });
        }
        let (oh, ow) = (h * factor, w * factor);
        let ty = upsample_table(h, factor);
        let tx = upsample_table(w, factor);
        let src = self.value(input).data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                let wy = T::from_f64_lossy(wy);
                let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let wx = T::from_f64_lossy(wx);
                    let top = r0[x0] + (r0[x1] - r0[x0]) * wx;
                    let bottom = r1[x0] + (r1[x1] - r1[x0]) * wx;
                    dst[oy * ow + ox] = top + (bottom - top) * wy;
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(value, Op::Upsample { input, factor }))
    }

    /// Bilinear samples of `map [C, H, W]` at each `(x, y)`, returned as
    /// `[N, C]` (one row per point). `x` indexes columns, `y` rows; integer
    /// coordinates land on pixel centers. Points must lie in
    /// `[0, W-1] × [0, H-1]`.
    pub fn bilinear_gather(&mut self, map: Var, points: &[(f64, f64)]) -> Result<Var> {
        let &[c, h, w] = self.shape(map) else {
            return Err(shape_err("bilinear_sample", format!("need [C,H,W], got {:?}", self.shape(map))));
        };
        if points.is_empty() {
            return Err(shape_err("bilinear_sample", "no sample points"));
        }
        for &(x, y) in points {
            let inside = x.is_finite()
                && y.is_finite()
                && (0.0..=(w - 1) as f64).contains(&x)
                && (0.0..=(h - 1) as f64).contains(&y);
            if !inside {
                return Err(AutodiffError::PointOutOfRange {
                    op: "bilinear_sample",
                    x,
                    y,
                    width: w,
                    height: h,
                });
            }
        }
        let src = self.value(map).data();
        let plane = h * w;
        let mut out = Vec::with_capacity(points.len() * c);
        for &(x, y) in points {
            let taps = Bilinear::at(x, y, w, h).taps(w);
            for ch in 0..c {
                let base = &src[ch * plane..(ch + 1) * plane];
                let v: f64 = taps
                    .iter()
                    .map(|&(off, wt)| base[off].to_f64_lossy() * wt)
                    .sum();
                out.push(T::from_f64_lossy(v));
            }
        }
        let value = Tensor::new(vec![points.len(), c], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                map,
                points: points.to_vec(),
            },
        ))
    }

    /// Single-point bilinear sample, shape `[C]`.
    pub fn bilinear_sample(&mut self, map: Var, point: (f64, f64)) -> Result<Var> {
        let rows = self.bilinear_gather(map, &[point])?;
        let c = self.shape(rows)[1];
        self.reshape(rows, vec![c])
    }

    /// Row-wise max or mean of `[K, M]` over the M axis, giving `[K, 1]`.
    /// Max routes its gradient to the first maximal index.
    pub fn pool_over_positions(&mut self, input: Var, mode: PoolMode) -> Result<Var> {
        let &[k, m] = self.shape(input) else {
            return Err(shape_err("pool", format!("need [K,M], got {:?}", self.shape(input))));
        };
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(k);
        let mut argmax = Vec::new();
        let inv_m = T::one() / T::from_usize(m).expect("count fits");
        for row in src.chunks(m) {
            match mode {
                PoolMode::Max => {
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    argmax.push(best);
                    out.push(row[best]);
                }
                PoolMode::Mean => out.push(row.iter().copied().sum::<T>() * inv_m),
            }
        }
        let value = Tensor::new(vec![k, 1], out)?;
        Ok(self.push(value, Op::Pool { input, mode, argmax }))
    }

    /// `out[r, c] = x[r, c] · weights[r]` for `x [R, C]` and `R` weights.
    pub fn scale_rows(&mut self, x: Var, weights: Var) -> Result<Var> {
        let &[rows, cols] = self.shape(x) else {
            return Err(shape_err("scale_rows", format!("need 2D, got {:?}", self.shape(x))));
        };
        if self.value(weights).numel() != rows {
            return Err(shape_err(
                "scale_rows",
                format!("{} weights for {rows} rows", self.value(weights).numel()),
            ));
        }
        let wv = self.value(weights).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * wv[i / cols])
            .collect();
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(value, Op::ScaleRows(x, weights)))
    }

    /// Mean binary focal loss over all elements of `logits`, with
    /// `p = sigmoid(logit)`: `-α(1-p)^γ ln p` on positives and
    /// `-(1-α)p^γ ln(1-p)` on negatives. Log arguments are clamped at 1e-12.
    pub fn focal_loss(&mut self, logits: Var, positive: &[bool], alpha: f64, gamma: f64) -> Result<Var> {
        let z = self.value(logits);
        if z.numel() != positive.len() {
            return Err(shape_err(
                "focal_loss",
                format!("{} logits vs {} labels", z.numel(), positive.len()),
            ));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(positive)
            .map(|(&zi, &pos)| focal_terms(zi.to_f64_lossy(), pos, alpha, gamma).0)
            .sum();
        let value = Tensor::scalar(T::from_f64_lossy(total / positive.len() as f64));
        Ok(self.push(
            value,
            Op::FocalLoss {
                logits,
                positive: positive.to_vec(),
                alpha,
                gamma,
            },
        ))
    }

    /// Smooth-L1 between `pred [D, M]` and `target` (same layout), applied
    /// per column to the L1 norm `s` of the D-vector residual:
    /// `0.5·s²` when `s < 1`, else `s - 0.5`. Averaged over the M columns.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.ndim() != 2 {
            return Err(shape_err(
                "smooth_l1",
                format!("pred {:?} vs target {:?}", p.shape(), target.shape()),
            ));
        }
        let (d, m) = (p.shape()[0], p.shape()[1]);
        let mut total = T::zero();
        for col in 0..m {
            let s: T = (0..d)
                .map(|r| (p.data()[r * m + col] - target.data()[r * m + col]).abs())
                .sum();
            total += smooth_l1_scalar(s);
        }
        let value = Tensor::scalar(total / T::from_usize(m).expect("count fits"));
        Ok(self.push(
            value,
            Op::SmoothL1 {
                pred,
                target: target.data().to_vec(),
            },
        ))
    }
}

pub(crate) fn smooth_l1_scalar<T: Scalar>(s: T) -> T {
    let half = T::from_f64_lossy(0.5);
    if s < T::one() {
        half * s * s
    } else {
        s - half
    }
}

/// `(loss, dloss/dlogit)` for one focal-loss element.
fn focal_terms(z: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    const EPS: f64 = 1e-12;
    let p = sigmoid(z);
    let q = sigmoid(-z);
    if positive {
        let lp = p.max(EPS).ln();
        let dlp = if p > EPS { q } else { 0.0 };
        let loss = -alpha * q.powf(gamma) * lp;
        let grad = alpha * gamma * q.powf(gamma) * p * lp - alpha * q.powf(gamma) * dlp;
        (loss, grad)
    } else {
        let lq = q.max(EPS).ln();
        let dlq = if q > EPS { -p } else { 0.0 };
        let loss = -(1.0 - alpha) * p.powf(gamma) * lq;
        let grad = -(1.0 - alpha) * (gamma * p.powf(gamma) * q * lq + p.powf(gamma) * dlq);
        (loss, grad)
    }
}

pub(crate) fn backward_node<T: Scalar>(
    nodes: &[Node<T>],
    idx: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let node = &nodes[idx];
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, |d| add_into(d, g));
            accumulate(grads, nodes, *b, |d| add_into(d, g));
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, |d| add_into(d, g));
            accumulate(grads, nodes, *b, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d - g));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * vb[i];
                }
            });
            accumulate(grads, nodes, *b, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * va[i];
                }
            });
        }
        Op::Scale(a, f) => accumulate(grads, nodes, *a, |d| {
            d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *f)
        }),
        Op::Relu(a) => {
            let x = val(*a);
            accumulate(grads, nodes, *a, |d| {
                for i in 0..d.len() {
                    if x[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            accumulate(grads, nodes, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            });
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
        Op::Mean(a) => {
            let n = T::from_usize(nodes[a.0].value.numel()).expect("count fits");
            accumulate(grads, nodes, *a, |d| d.iter_mut().for_each(|d| *d += g[0] / n));
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, |d| add_into(d, g)),
        Op::Transpose(a) => {
            let (rows, cols) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
            accumulate(grads, nodes, *a, |d| {
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] += g[c * rows + r];
                    }
                }
            });
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p.0].value.numel();
                accumulate(grads, nodes, p, |d| add_into(d, &g[offset..offset + n]));
                offset += n;
            }
        }
        Op::Conv { input, kernel, geom } => {
            let x = val(*input);
            let k = val(*kernel);
            let col_owned;
            let col: &[T] = if geom.is_pointwise() {
                x
            } else {
                col_owned = im2col(x, geom);
                &col_owned
            };
            accumulate(grads, nodes, *kernel, |dk| {
                T::gemm(geom.c_out, geom.out_len(), geom.patch_len(), g, false, col, true, dk, true);
            });
            if nodes[input.0].requires_grad {
                if geom.is_pointwise() {
                    accumulate(grads, nodes, *input, |dx| {
                        T::gemm(geom.c_in, geom.c_out, geom.out_len(), k, true, g, false, dx, true);
                    });
                } else {
                    let mut dcol = vec![T::zero(); geom.patch_len() * geom.out_len()];
                    T::gemm(geom.patch_len(), geom.c_out, geom.out_len(), k, true, g, false, &mut dcol, false);
                    accumulate(grads, nodes, *input, |dx| col2im_add(&dcol, geom, dx));
                }
            }
        }
        Op::ChannelBias(x, b) => {
            accumulate(grads, nodes, *x, |d| add_into(d, g));
            let channels = nodes[b.0].value.numel();
            let plane = g.len() / channels;
            accumulate(grads, nodes, *b, |d| {
                for (c, chunk) in g.chunks(plane).enumerate() {
                    d[c] += chunk.iter().copied().sum();
                }
            });
        }
        Op::Upsample { input, factor } => {
            let (c, h, w) = {
                let s = nodes[input.0].value.shape();
                (s[0], s[1], s[2])
            };
            let (oh, ow) = (h * factor, w * factor);
            let ty = upsample_table(h, *factor);
            let tx = upsample_table(w, *factor);
            accumulate(grads, nodes, *input, |d| {
                for ch in 0..c {
                    let src = &g[ch * oh * ow..(ch + 1) * oh * ow];
                    let dst = &mut d[ch * h * w..(ch + 1) * h * w];
                    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                        let wy = T::from_f64_lossy(wy);
                        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let wx = T::from_f64_lossy(wx);
                            let gv = src[oy * ow + ox];
                            let top = gv * (T::one() - wy);
                            let bottom = gv * wy;
                            dst[y0 * w + x0] += top * (T::one() - wx);
                            dst[y0 * w + x1] += top * wx;
                            dst[y1 * w + x0] += bottom * (T::one() - wx);
                            dst[y1 * w + x1] += bottom * wx;
                        }
                    }
                }
            });
        }
        Op::Gather { map, points } => {
            let (c, h, w) = {
                let s = nodes[map.0].value.shape();
                (s[0], s[1], s[2])
            };
            let plane = h * w;
            accumulate(grads, nodes, *map, |d| {
                for (n, &(x, y)) in points.iter().enumerate() {
                    let taps = Bilinear::at(x, y, w, h).taps(w);
                    for ch in 0..c {
                        let gv = g[n * c + ch];
                        for &(off, wt) in &taps {
                            d[ch * plane + off] += gv * T::from_f64_lossy(wt);
                        }
                    }
                }
            });
        }
        Op::Pool {
            input,
            mode,
            argmax,
        } => {
            let m = nodes[input.0].value.shape()[1];
            accumulate(grads, nodes, *input, |d| match mode {
                PoolMode::Max => {
                    for (r, &j) in argmax.iter().enumerate() {
                        d[r * m + j] += g[r];
                    }
                }
                PoolMode::Mean => {
                    let inv = T::one() / T::from_usize(m).expect("count fits");
                    for (r, row) in d.chunks_mut(m).enumerate() {
                        row.iter_mut().for_each(|v| *v += g[r] * inv);
                    }
                }
            });
        }
        Op::ScaleRows(x, wts) => {
            let xv = val(*x);
            let wv = val(*wts);
            let cols = nodes[x.0].value.shape()[1];
            accumulate(grads, nodes, *x, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * wv[i / cols];
                }
            });
            accumulate(grads, nodes, *wts, |d| {
                for (r, dr) in d.iter_mut().enumerate() {
                    for c in 0..cols {
                        *dr += g[r * cols + c] * xv[r * cols + c];
                    }
                }
            });
        }
        Op::FocalLoss {
            logits,
            positive,
            alpha,
            gamma,
        } => {
            let z = val(*logits);
            let scale = g[0].to_f64_lossy() / positive.len() as f64;
            accumulate(grads, nodes, *logits, |d| {
                for i in 0..d.len() {
                    let (_, dz) = focal_terms(z[i].to_f64_lossy(), positive[i], *alpha, *gamma);
                    d[i] += T::from_f64_lossy(dz * scale);
                }
            });
        }
        Op::SmoothL1 { pred, target } => {
            let p = val(*pred);
            let shape = nodes[pred.0].value.shape();
            let (rows, m) = (shape[0], shape[1]);
            let inv_m = g[0] / T::from_usize(m).expect("count fits");
            accumulate(grads, nodes, *pred, |d| {
                for col in 0..m {
                    let s: T = (0..rows)
                        .map(|r| (p[r * m + col] - target[r * m + col]).abs())
                        .sum();
                    let slope = if s < T::one() { s } else { T::one() };
                    for r in 0..rows {
                        let diff = p[r * m + col] - target[r * m + col];
                        let sign = if diff > T::zero() {
                            T::one()
                        } else if diff < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        d[r * m + col] += inv_m * slope * sign;
                    }
                }
            });
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}
