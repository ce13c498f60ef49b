//! 2-D cross-correlation kernels: standard, depthwise and pointwise.
//!
//! Standard and pointwise convolutions lower to im2col + GEMM; depthwise
//! convolution runs tap by tap over a zero-padded copy of each plane. Both
//! paths execute every kernel tap, padding included, so the instrumented MAC
//! count is exactly `k·k·m·n·h_out·w_out` (standard) or `k·k·m·h_out·w_out`
//! (depthwise).

use serde::Serialize;

use super::macs::{self, MacKind};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Standard,
    Depthwise,
    Pointwise,
}

/// Geometry of a convolution. Weights are passed separately, laid out as
/// `(out_channels, in_channels / groups, kernel, kernel)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn standard(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvSpec {
            kind: ConvKind::Standard,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias: false,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            kind: ConvKind::Depthwise,
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride,
            padding,
            bias: false,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kind: ConvKind::Pointwise,
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            padding: 0,
            bias: false,
        }
    }

    pub fn with_bias(self) -> Self {
        ConvSpec { bias: true, ..self }
    }

    pub fn with_stride(self, stride: usize) -> Self {
        ConvSpec { stride, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config(format!(
                "convolution channels must be positive (in={}, out={})",
                self.in_channels, self.out_channels
            )));
        }
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::config(format!(
                "convolution kernel and stride must be positive (kernel={}, stride={})",
                self.kernel, self.stride
            )));
        }
        match self.kind {
            ConvKind::Depthwise if self.out_channels != self.in_channels => {
                Err(Error::config(format!(
                    "depthwise convolution needs out_channels == in_channels, got {} != {}",
                    self.out_channels, self.in_channels
                )))
            }
            ConvKind::Pointwise if self.kernel != 1 => Err(Error::config(format!(
                "pointwise convolution needs kernel 1, got {}",
                self.kernel
            ))),
            _ => Ok(()),
        }
    }

    /// Input channels seen by each filter.
    pub fn filter_depth(&self) -> usize {
        match self.kind {
            ConvKind::Depthwise => 1,
            _ => self.in_channels,
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.filter_depth(),
            self.kernel,
            self.kernel,
        ]
    }

    pub fn weight_len(&self) -> usize {
        self.weight_dims().iter().product()
    }

    pub fn mac_kind(&self) -> MacKind {
        match self.kind {
            ConvKind::Standard => MacKind::Standard,
            ConvKind::Depthwise => MacKind::Depthwise,
            ConvKind::Pointwise => MacKind::Pointwise,
        }
    }

    fn output_extent(&self, extent: usize, axis: &str) -> Result<usize> {
        let padded = extent + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::config(format!(
                "kernel {} does not fit padded input {axis} {padded}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.channels != self.in_channels {
            return Err(Error::config(format!(
                "input channels {} != convolution in_channels {}",
                input.channels, self.in_channels
            )));
        }
        Ok(Shape::new(
            input.batch,
            self.out_channels,
            self.output_extent(input.height, "height")?,
            self.output_extent(input.width, "width")?,
        ))
    }

    fn check_params<T>(&self, weight: &[T], bias: Option<&[T]>) -> Result<()> {
        if weight.len() != self.weight_len() {
            return Err(Error::config(format!(
                "weight length {} != expected {} for dims {:?}",
                weight.len(),
                self.weight_len(),
                self.weight_dims()
            )));
        }
        match (self.bias, bias) {
            (true, Some(b)) if b.len() != self.out_channels => Err(Error::config(format!(
                "bias length {} != out_channels {}",
                b.len(),
                self.out_channels
            ))),
            (true, None) => Err(Error::config("convolution declares a bias but none was given")),
            (false, Some(_)) => Err(Error::config("bias given to a convolution without bias")),
            _ => Ok(()),
        }
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads<T: Element> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

fn expect_kind(spec: &ConvSpec, kind: ConvKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::config(format!(
            "expected a {kind:?} convolution spec, got {:?}",
            spec.kind
        )));
    }
    Ok(())
}

pub fn conv2d_standard<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    expect_kind(spec, ConvKind::Standard)?;
    conv2d(input, spec, weight, bias)
}

pub fn depthwise_conv<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    expect_kind(spec, ConvKind::Depthwise)?;
    conv2d(input, spec, weight, bias)
}

pub fn pointwise_conv<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    expect_kind(spec, ConvKind::Pointwise)?;
    conv2d(input, spec, weight, bias)
}

/// Forward pass for any [`ConvKind`].
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let out_shape = spec.output_shape(input.shape())?;
    spec.check_params(weight, bias)?;
    let mut out = Tensor::zeros(out_shape);
    match spec.kind {
        ConvKind::Depthwise => depthwise_forward(input, spec, weight, &mut out),
        ConvKind::Standard | ConvKind::Pointwise => gemm_forward(input, spec, weight, &mut out),
    }
    if let Some(bias) = bias {
        for b in 0..out_shape.batch {
            for (c, &bc) in bias.iter().enumerate() {
                out.plane_mut(b, c).iter_mut().for_each(|v| *v = *v + bc);
            }
        }
    }
    Ok(out)
}

/// Backward pass. `input` and `weight` are the forward operands.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = spec.output_shape(input.shape())?;
    if grad_out.shape() != out_shape {
        return Err(Error::config(format!(
            "upstream gradient shape {} != convolution output shape {out_shape}",
            grad_out.shape()
        )));
    }
    if weight.len() != spec.weight_len() {
        return Err(Error::config(format!(
            "weight length {} != expected {}",
            weight.len(),
            spec.weight_len()
        )));
    }
    let mut grads = ConvGrads {
        input: Tensor::zeros(input.shape()),
        weight: vec![T::zero(); weight.len()],
        bias: spec.bias.then(|| vec![T::zero(); spec.out_channels]),
    };
    match spec.kind {
        ConvKind::Depthwise => depthwise_backward(input, spec, weight, grad_out, &mut grads),
        ConvKind::Standard | ConvKind::Pointwise => {
            gemm_backward(input, spec, weight, grad_out, &mut grads)
        }
    }
    if let Some(db) = grads.bias.as_mut() {
        for b in 0..out_shape.batch {
            for (c, slot) in db.iter_mut().enumerate() {
                *slot = grad_out.plane(b, c).iter().fold(*slot, |acc, &g| acc + g);
            }
        }
    }
    Ok(grads)
}

fn is_direct_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel == 1 && spec.stride == 1 && spec.padding == 0
}

/// Unfold one batch item into a `(m·k·k) × (h_out·w_out)` column matrix,
/// writing zeros for padded taps.
fn im2col<T: Element>(item: &[T], in_shape: Shape, spec: &ConvSpec, out_hw: (usize, usize)) -> Vec<T> {
    let (ho, wo) = out_hw;
    let k = spec.kernel;
    let (h, w) = (in_shape.height as isize, in_shape.width as isize);
    let pad = spec.padding as isize;
    let mut cols = vec![T::zero(); spec.in_channels * k * k * ho * wo];
    for c in 0..spec.in_channels {
        let plane = &item[c * in_shape.plane()..(c + 1) * in_shape.plane()];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oi in 0..ho {
                    let i = (oi * spec.stride + ki) as isize - pad;
                    if i < 0 || i >= h {
                        continue;
                    }
                    for oj in 0..wo {
                        let j = (oj * spec.stride + kj) as isize - pad;
                        if j >= 0 && j < w {
                            dst[oi * wo + oj] = plane[(i * w + j) as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold column-matrix gradients back onto an input item (adjoint of [`im2col`]).
fn col2im<T: Element>(
    cols: &[T],
    item: &mut [T],
    in_shape: Shape,
    spec: &ConvSpec,
    out_hw: (usize, usize),
) {
    let (ho, wo) = out_hw;
    let k = spec.kernel;
    let (h, w) = (in_shape.height as isize, in_shape.width as isize);
    let pad = spec.padding as isize;
    for c in 0..spec.in_channels {
        let plane = &mut item[c * in_shape.plane()..(c + 1) * in_shape.plane()];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oi in 0..ho {
                    let i = (oi * spec.stride + ki) as isize - pad;
                    if i < 0 || i >= h {
                        continue;
                    }
                    for oj in 0..wo {
                        let j = (oj * spec.stride + kj) as isize - pad;
                        if j >= 0 && j < w {
                            let slot = &mut plane[(i * w + j) as usize];
                            *slot = *slot + src[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// `c += a · b` with `a: m×k`, `b: k×n`, all row-major. Records `m·k·n` MACs.
pub(crate) fn gemm_acc<T: Element>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    kind: MacKind,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aip * bv;
            }
        }
        macs::record(kind, (k * n) as u64);
    }
}

/// `c += a · bᵀ` with `a: m×k`, `b: n×k`.
fn gemm_a_bt<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let dot = arow
                .iter()
                .zip(brow)
                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            c[i * n + j] = c[i * n + j] + dot;
        }
    }
}

/// `c += aᵀ · b` with `a: k×m`, `b: k×n`.
fn gemm_at_b<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + api * bv;
            }
        }
    }
}

fn gemm_forward<T: Element>(input: &Tensor<T>, spec: &ConvSpec, weight: &[T], out: &mut Tensor<T>) {
    let in_shape = input.shape();
    let out_shape = out.shape();
    let hw = (out_shape.height, out_shape.width);
    let rows = spec.in_channels * spec.kernel * spec.kernel;
    let cols_n = out_shape.plane();
    for b in 0..in_shape.batch {
        let out_item = out.item_mut(b);
        if is_direct_pointwise(spec) {
            gemm_acc(weight, input.item(b), out_item, spec.out_channels, rows, cols_n, spec.mac_kind());
        } else {
            let cols = im2col(input.item(b), in_shape, spec, hw);
            gemm_acc(weight, &cols, out_item, spec.out_channels, rows, cols_n, spec.mac_kind());
        }
    }
}

fn gemm_backward<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    grad_out: &Tensor<T>,
    grads: &mut ConvGrads<T>,
) {
    let in_shape = input.shape();
    let out_shape = grad_out.shape();
    let hw = (out_shape.height, out_shape.width);
    let rows = spec.in_channels * spec.kernel * spec.kernel;
    let cols_n = out_shape.plane();
    for b in 0..in_shape.batch {
        let g = grad_out.item(b);
        if is_direct_pointwise(spec) {
            gemm_a_bt(g, input.item(b), &mut grads.weight, spec.out_channels, cols_n, rows);
            gemm_at_b(weight, g, grads.input.item_mut(b), rows, spec.out_channels, cols_n);
        } else {
            let cols = im2col(input.item(b), in_shape, spec, hw);
            gemm_a_bt(g, &cols, &mut grads.weight, spec.out_channels, cols_n, rows);
            let mut dcols = vec![T::zero(); rows * cols_n];
            gemm_at_b(weight, g, &mut dcols, rows, spec.out_channels, cols_n);
            col2im(&dcols, grads.input.item_mut(b), in_shape, spec, hw);
        }
    }
}

fn padded_plane<T: Element>(plane: &[T], h: usize, w: usize, pad: usize) -> Vec<T> {
    let pw = w + 2 * pad;
    let mut out = vec![T::zero(); (h + 2 * pad) * pw];
    for i in 0..h {
        out[(i + pad) * pw + pad..(i + pad) * pw + pad + w].copy_from_slice(&plane[i * w..(i + 1) * w]);
    }
    out
}

fn depthwise_forward<T: Element>(input: &Tensor<T>, spec: &ConvSpec, weight: &[T], out: &mut Tensor<T>) {
    let s = input.shape();
    let o = out.shape();
    let k = spec.kernel;
    let pw = s.width + 2 * spec.padding;
    for b in 0..s.batch {
        for c in 0..s.channels {
            let padded = padded_plane(input.plane(b, c), s.height, s.width, spec.padding);
            let kern = &weight[c * k * k..(c + 1) * k * k];
            let dst = out.plane_mut(b, c);
            for oi in 0..o.height {
                for oj in 0..o.width {
                    let mut acc = T::zero();
                    for ki in 0..k {
                        let row = &padded[(oi * spec.stride + ki) * pw + oj * spec.stride..];
                        for kj in 0..k {
                            acc = acc + kern[ki * k + kj] * row[kj];
                        }
                    }
                    dst[oi * o.width + oj] = acc;
                }
            }
            macs::record(MacKind::Depthwise, (k * k * o.plane()) as u64);
        }
    }
}

fn depthwise_backward<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    grad_out: &Tensor<T>,
    grads: &mut ConvGrads<T>,
) {
    let s = input.shape();
    let o = grad_out.shape();
    let k = spec.kernel;
    let pad = spec.padding;
    let pw = s.width + 2 * pad;
    for b in 0..s.batch {
        for c in 0..s.channels {
            let padded = padded_plane(input.plane(b, c), s.height, s.width, pad);
            let mut dpadded = vec![T::zero(); padded.len()];
            let kern = &weight[c * k * k..(c + 1) * k * k];
            let dkern = &mut grads.weight[c * k * k..(c + 1) * k * k];
            let g = grad_out.plane(b, c);
            for oi in 0..o.height {
                for oj in 0..o.width {
                    let go = g[oi * o.width + oj];
                    for ki in 0..k {
                        let base = (oi * spec.stride + ki) * pw + oj * spec.stride;
                        for kj in 0..k {
                            dkern[ki * k + kj] = dkern[ki * k + kj] + go * padded[base + kj];
                            dpadded[base + kj] = dpadded[base + kj] + go * kern[ki * k + kj];
                        }
                    }
                }
            }
            let dst = grads.input.plane_mut(b, c);
            for i in 0..s.height {
                dst[i * s.width..(i + 1) * s.width]
                    .copy_from_slice(&dpadded[(i + pad) * pw + pad..(i + pad) * pw + pad + s.width]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::macs::count_macs;

    fn ones(shape: Shape) -> Tensor<f64> {
        Tensor::full(shape, 1.0)
    }

    #[test]
    fn all_ones_3x3_sums_to_nine() {
        let spec = ConvSpec::standard(1, 1, 3, 1, 0);
        let out = conv2d_standard(&ones(Shape::new(1, 1, 3, 3)), &spec, &[1.0; 9], None).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn unit_1x1_kernel_is_identity() {
        let x = Tensor::from_vec(Shape::new(2, 1, 2, 3), (0..12).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
        let spec = ConvSpec::standard(1, 1, 1, 1, 0);
        let y = conv2d_standard(&x, &spec, &[1.0], None).unwrap();
        assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn output_extent_formula() {
        let spec = ConvSpec::standard(3, 8, 3, 2, 1);
        let s = spec.output_shape(Shape::new(2, 3, 224, 224)).unwrap();
        assert_eq!(s, Shape::new(2, 8, 112, 112));
        let s = spec.output_shape(Shape::new(1, 3, 7, 5)).unwrap();
        assert_eq!((s.height, s.width), (4, 3));
    }

    #[test]
    fn shape_errors_name_the_extent() {
        let spec = ConvSpec::standard(3, 2, 3, 1, 0);
        let err = conv2d(&ones(Shape::new(1, 4, 5, 5)), &spec, &[0.0; 54], None).unwrap_err();
        assert!(err.to_string().contains("input channels 4"), "{err}");
        let err = conv2d(&ones(Shape::new(1, 3, 2, 5)), &spec, &[0.0; 54], None).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
        let err = conv2d(&ones(Shape::new(1, 3, 5, 5)), &spec, &[0.0; 53], None).unwrap_err();
        assert!(err.to_string().contains("weight length"), "{err}");
    }

    #[test]
    fn depthwise_scales_each_channel() {
        let x = Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = ConvSpec::depthwise(2, 1, 1, 0);
        let y = depthwise_conv(&x, &spec, &[2.0, 3.0], None).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 9.0, 12.0]);
    }

    #[test]
    fn depthwise_all_ones_sum() {
        let spec = ConvSpec::depthwise(2, 3, 1, 0);
        let y = depthwise_conv(&ones(Shape::new(1, 2, 3, 3)), &spec, &[1.0; 18], None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 1, 1));
        assert_eq!(y.data(), &[9.0, 9.0]);
    }

    #[test]
    fn depthwise_rejects_channel_change() {
        let mut spec = ConvSpec::depthwise(2, 3, 1, 1);
        spec.out_channels = 4;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        assert!(depthwise_conv(&ones(Shape::new(1, 2, 3, 3)), &spec, &[1.0; 36], None).is_err());
    }

    #[test]
    fn pointwise_summation_and_identity() {
        let x = Tensor::from_vec(Shape::new(1, 3, 1, 2), vec![1.0, 2.0, 10.0, 20.0, 100.0, 200.0]).unwrap();
        let sum = pointwise_conv(&x, &ConvSpec::pointwise(3, 1), &[1.0; 3], None).unwrap();
        assert_eq!(sum.data(), &[111.0, 222.0]);
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let id = pointwise_conv(&x, &ConvSpec::pointwise(3, 3), &eye, None).unwrap();
        assert_eq!(id, x);
    }

    #[test]
    fn bias_is_added_per_output_channel() {
        let spec = ConvSpec::pointwise(1, 2).with_bias();
        let y = conv2d(&ones(Shape::new(1, 1, 1, 2)), &spec, &[1.0, 2.0], Some(&[0.5, -1.0])).unwrap();
        assert_eq!(y.data(), &[1.5, 1.5, 1.0, 1.0]);
        assert!(conv2d(&ones(Shape::new(1, 1, 1, 2)), &spec, &[1.0, 2.0], None).is_err());
    }

    #[test]
    fn instrumented_macs_match_formula() {
        let x = ones(Shape::new(2, 3, 9, 7));
        let spec = ConvSpec::standard(3, 5, 3, 2, 1);
        let (y, t) = count_macs(|| conv2d(&x, &spec, &[0.1; 135], None).unwrap());
        let o = y.shape();
        assert_eq!(t.standard, (2 * 9 * 3 * 5 * o.height * o.width) as u64);

        let spec = ConvSpec::depthwise(3, 3, 2, 1);
        let (y, t) = count_macs(|| conv2d(&x, &spec, &[0.1; 27], None).unwrap());
        assert_eq!(t.depthwise, (2 * 9 * 3 * y.shape().plane()) as u64);

        let spec = ConvSpec::pointwise(3, 4);
        let (_, t) = count_macs(|| conv2d(&x, &spec, &[0.1; 12], None).unwrap());
        assert_eq!(t.pointwise, (2 * 3 * 4 * 9 * 7) as u64);
    }
}
