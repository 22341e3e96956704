//! Convolution and transposed convolution as gathered GEMMs.
//!
//! Both kinds are lowered to a set of "phases": a phase is a regular grid of
//! output positions that all see the same kernel taps. A strided conv has a
//! single phase; a stride-2 transposed conv has four (one per output parity),
//! which turns the scatter of a transposed conv into a gather with no
//! overlapping writes. Each phase is cut into row bands whose size depends
//! only on the shapes, so the arithmetic performed per output element is the
//! same whatever the thread count.

use rayon::prelude::*;

use super::{Activation, LayerKind, LayerSpec, Tensor, TensorError};

/// Soft cap on the im2col buffer of a single band, in elements.
const BAND_ELEMS: usize = 1 << 20;
/// Bands computed per parallel wave; bounds peak scratch memory.
const WAVE: usize = 16;

/// Output spatial size of a layer.
pub fn output_hw(kind: LayerKind, h: usize, w: usize, stride: usize) -> (usize, usize) {
    match kind {
        LayerKind::Conv => (h.div_ceil(stride), w.div_ceil(stride)),
        LayerKind::Deconv => (h * stride, w * stride),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AxisPhase {
    out_step: usize,
    out_offset: usize,
    count: usize,
    in_step: usize,
    /// (input offset, kernel index)
    taps: Vec<(isize, usize)>,
}

pub(crate) fn axis_phases(kind: LayerKind, n_in: usize, k: usize, s: usize) -> Vec<AxisPhase> {
    let p = ((k - 1) / 2) as isize;
    match kind {
        LayerKind::Conv => vec![AxisPhase {
            out_step: 1,
            out_offset: 0,
            count: n_in.div_ceil(s),
            in_step: s,
            taps: (0..k).map(|ky| (ky as isize - p, ky)).collect(),
        }],
        LayerKind::Deconv => (0..s)
            .map(|r| {
                // out = s*i + ky - p; for out = s*q + r the taps are
                // ky = s*j + r + p reading input q - j.
                let s_i = s as isize;
                let base = r as isize + p;
                let taps = (-(k as isize)..=(k as isize))
                    .filter_map(|j| {
                        let ky = s_i * j + base;
                        (0..k as isize).contains(&ky).then_some((-j, ky as usize))
                    })
                    .collect();
                AxisPhase {
                    out_step: s,
                    out_offset: r,
                    count: n_in,
                    in_step: 1,
                    taps,
                }
            })
            .collect(),
    }
}

/// Check the shapes shared by the float and integer paths; returns output dims.
pub(crate) fn check_shapes(
    x_dims: [usize; 4],
    w_dims: [usize; 4],
    bias_len: usize,
    spec: &LayerSpec,
) -> Result<[usize; 4], TensorError> {
    if spec.kernel == 0 || spec.stride == 0 {
        return Err(spec.shape_error(
            "kernel and stride must be positive",
            &[spec.kernel, spec.stride],
            &[1, 1],
        ));
    }
    if x_dims[1] != spec.in_channels {
        return Err(spec.shape_error("input channels", &[x_dims[1]], &[spec.in_channels]));
    }
    if w_dims != spec.weight_dims() {
        return Err(spec.shape_error("weight dims", &w_dims, &spec.weight_dims()));
    }
    if bias_len != spec.out_channels {
        return Err(spec.shape_error("bias length", &[bias_len], &[spec.out_channels]));
    }
    let (oh, ow) = output_hw(spec.kind, x_dims[2], x_dims[3], spec.stride);
    Ok([x_dims[0], spec.out_channels, oh, ow])
}

/// One unit of work: a band of rows of one phase of one batch element.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Task {
    batch: usize,
    phase_y: usize,
    phase_x: usize,
    row_start: usize,
    rows: usize,
}

pub(crate) struct Plan {
    pub(crate) py: Vec<AxisPhase>,
    pub(crate) px: Vec<AxisPhase>,
    pub(crate) tasks: Vec<Task>,
    pub(crate) in_dims: [usize; 4],
    pub(crate) out_dims: [usize; 4],
}

impl Plan {
    pub(crate) fn new(in_dims: [usize; 4], out_dims: [usize; 4], spec: &LayerSpec) -> Plan {
        let py = axis_phases(spec.kind, in_dims[2], spec.kernel, spec.stride);
        let px = axis_phases(spec.kind, in_dims[3], spec.kernel, spec.stride);
        let mut tasks = Vec::new();
        for batch in 0..in_dims[0] {
            for (iy, ay) in py.iter().enumerate() {
                for (ix, ax) in px.iter().enumerate() {
                    let k = spec.in_channels * ay.taps.len() * ax.taps.len();
                    let per_row = (k * ax.count).max(1);
                    let band = (BAND_ELEMS / per_row).clamp(1, ay.count.max(1));
                    let mut row_start = 0;
                    while row_start < ay.count {
                        let rows = band.min(ay.count - row_start);
                        tasks.push(Task {
                            batch,
                            phase_y: iy,
                            phase_x: ix,
                            row_start,
                            rows,
                        });
                        row_start += rows;
                    }
                }
            }
        }
        Plan {
            py,
            px,
            tasks,
            in_dims,
            out_dims,
        }
    }

    /// Gathers kernel taps of `w` (out, in, k, k) into a row-major
    /// (out, in * ty * tx) matrix for one phase.
    pub(crate) fn gather_weights<T: Copy>(&self, w: &[T], spec: &LayerSpec, task: &Task) -> Vec<T> {
        let ay = &self.py[task.phase_y];
        let ax = &self.px[task.phase_x];
        let k = spec.kernel;
        let mut out = Vec::with_capacity(
            spec.out_channels * spec.in_channels * ay.taps.len() * ax.taps.len(),
        );
        for oc in 0..spec.out_channels {
            for ic in 0..spec.in_channels {
                let base = (oc * spec.in_channels + ic) * k * k;
                for &(_, ky) in &ay.taps {
                    for &(_, kx) in &ax.taps {
                        out.push(w[base + ky * k + kx]);
                    }
                }
            }
        }
        out
    }

    /// im2col for one band: (in * ty * tx) rows, (rows * count_x) columns.
    pub(crate) fn gather_input<T: Copy + Default>(&self, x: &[T], task: &Task) -> (Vec<T>, usize) {
        let ay = &self.py[task.phase_y];
        let ax = &self.px[task.phase_x];
        let [_, c, h, w] = self.in_dims;
        let ncols = task.rows * ax.count;
        let krows = c * ay.taps.len() * ax.taps.len();
        let mut col = vec![T::default(); krows * ncols];
        let plane = h * w;
        let mut r = 0;
        for ic in 0..c {
            let src = &x[(task.batch * c + ic) * plane..(task.batch * c + ic + 1) * plane];
            for &(oy, _) in &ay.taps {
                for &(ox, _) in &ax.taps {
                    let dst = &mut col[r * ncols..(r + 1) * ncols];
                    for qy in 0..task.rows {
                        let iy = ((task.row_start + qy) * ay.in_step) as isize + oy;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let d = &mut dst[qy * ax.count..(qy + 1) * ax.count];
                        if ax.in_step == 1 {
                            // Contiguous run with clipped ends.
                            let lo = (-ox).max(0) as usize;
                            let hi = ((w as isize - ox).min(ax.count as isize)).max(lo as isize)
                                as usize;
                            if hi > lo {
                                let s0 = (lo as isize + ox) as usize;
                                d[lo..hi].copy_from_slice(&row[s0..s0 + (hi - lo)]);
                            }
                        } else {
                            for (qx, v) in d.iter_mut().enumerate() {
                                let ix = (qx * ax.in_step) as isize + ox;
                                if ix >= 0 && ix < w as isize {
                                    *v = row[ix as usize];
                                }
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        (col, ncols)
    }

    /// Visits every output element of a band as (flat output index, column).
    pub(crate) fn for_each_output(&self, task: &Task, oc: usize, mut f: impl FnMut(usize, usize)) {
        let ay = &self.py[task.phase_y];
        let ax = &self.px[task.phase_x];
        let [_, c, oh, ow] = self.out_dims;
        let base = (task.batch * c + oc) * oh * ow;
        for qy in 0..task.rows {
            let oy = (task.row_start + qy) * ay.out_step + ay.out_offset;
            for qx in 0..ax.count {
                let ox = qx * ax.out_step + ax.out_offset;
                f(base + oy * ow + ox, qy * ax.count + qx);
            }
        }
    }
}

/// Runs `work` over the plan's tasks in fixed-size parallel waves and hands
/// each finished band to `commit` in task order.
pub(crate) fn run_tasks<R: Send>(
    plan: &Plan,
    work: impl Fn(&Task) -> R + Sync,
    mut commit: impl FnMut(&Task, R),
) {
    for wave in plan.tasks.chunks(WAVE) {
        let results: Vec<R> = wave.par_iter().map(&work).collect();
        for (task, r) in wave.iter().zip(results) {
            commit(task, r);
        }
    }
}

#[inline]
fn activate(v: f32, act: Activation) -> f32 {
    match act {
        Activation::None => v,
        Activation::Relu => v.max(0.0),
        Activation::Relu6 => v.clamp(0.0, 6.0),
    }
}

fn float_layer(
    x: &Tensor,
    w: &Tensor,
    b: &[f32],
    spec: &LayerSpec,
    kind: LayerKind,
) -> Result<Tensor, TensorError> {
    if spec.kind != kind {
        return Err(spec.shape_error("layer kind", &[spec.kind as usize], &[kind as usize]));
    }
    let out_dims = check_shapes(x.dims(), w.dims(), b.len(), spec)?;
    let mut out = Tensor::zeros(out_dims);
    if out.is_empty() {
        return Ok(out);
    }
    let plan = Plan::new(x.dims(), out_dims, spec);
    let m = spec.out_channels;
    let xd = x.data();
    let wd = w.data();
    let out_data = out.data_mut();
    run_tasks(
        &plan,
        |task| {
            let a = plan.gather_weights(wd, spec, task);
            let (col, n) = plan.gather_input(xd, task);
            let k = col.len() / n.max(1);
            let mut c = vec![0.0f32; m * n];
            if k > 0 && n > 0 {
                // SAFETY: a is m*k row-major, col is k*n row-major, c is m*n
                // row-major; all strides are within the allocations.
                unsafe {
                    matrixmultiply::sgemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        k as isize,
                        1,
                        col.as_ptr(),
                        n as isize,
                        1,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
            (c, n)
        },
        |task, (c, n)| {
            for (oc, &bias) in b.iter().enumerate() {
                let row = &c[oc * n..(oc + 1) * n];
                plan.for_each_output(task, oc, |idx, col| {
                    out_data[idx] = activate(row[col] + bias, spec.activation);
                });
            }
        },
    );
    if !out.all_finite() {
        return Err(TensorError::NonFinite("convolution"));
    }
    Ok(out)
}

/// "Same"-padded strided convolution: zero padding of (k-1)/2 on each side,
/// output size ceil(h/stride) x ceil(w/stride). `w` is (out, in, k, k).
pub fn conv2d(x: &Tensor, w: &Tensor, b: &[f32], spec: &LayerSpec) -> Result<Tensor, TensorError> {
    float_layer(x, w, b, spec, LayerKind::Conv)
}

/// Transposed convolution cropped to exactly `stride` times the input size.
/// `w` uses the same (out, in, k, k) layout as [`conv2d`].
pub fn deconv2d(
    x: &Tensor,
    w: &Tensor,
    b: &[f32],
    spec: &LayerSpec,
) -> Result<Tensor, TensorError> {
    float_layer(x, w, b, spec, LayerKind::Deconv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(dims: [usize; 4], rng: &mut SplitMix64) -> Tensor {
        Tensor::from_fn(dims, |_| rng.next_gaussian() as f32)
    }

    /// Direct nested-loop reference with the same padding conventions.
    fn naive(x: &Tensor, w: &Tensor, b: &[f32], spec: &LayerSpec) -> Tensor {
        let [n, ci, h, wd] = x.dims();
        let k = spec.kernel;
        let s = spec.stride;
        let p = (k - 1) / 2;
        let (oh, ow) = output_hw(spec.kind, h, wd, s);
        let mut out = Tensor::zeros([n, spec.out_channels, oh, ow]);
        for b_ in 0..n {
            for oc in 0..spec.out_channels {
                for ic in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = w.at(oc, ic, ky, kx);
                            match spec.kind {
                                LayerKind::Conv => {
                                    for oy in 0..oh {
                                        for ox in 0..ow {
                                            let iy = (oy * s + ky) as isize - p as isize;
                                            let ix = (ox * s + kx) as isize - p as isize;
                                            if iy >= 0
                                                && ix >= 0
                                                && (iy as usize) < h
                                                && (ix as usize) < wd
                                            {
                                                let o = out.index(b_, oc, oy, ox);
                                                out.data_mut()[o] +=
                                                    wv * x.at(b_, ic, iy as usize, ix as usize);
                                            }
                                        }
                                    }
                                }
                                LayerKind::Deconv => {
                                    for iy in 0..h {
                                        for ix in 0..wd {
                                            let oy = (iy * s + ky) as isize - p as isize;
                                            let ox = (ix * s + kx) as isize - p as isize;
                                            if oy >= 0
                                                && ox >= 0
                                                && (oy as usize) < oh
                                                && (ox as usize) < ow
                                            {
                                                let o = out.index(b_, oc, oy as usize, ox as usize);
                                                out.data_mut()[o] += wv * x.at(b_, ic, iy, ix);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                for oy in 0..oh {
                    for ox in 0..ow {
                        let o = out.index(b_, oc, oy, ox);
                        out.data_mut()[o] = activate(out.data()[o] + b[oc], spec.activation);
                    }
                }
            }
        }
        out
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f32) {
        assert_eq!(a.dims(), b.dims());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::new([1, 1, 4, 4], vec![1.0; 16]).unwrap();
        let w = Tensor::new([1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let out = conv2d(&x, &w, &[0.0], &LayerSpec::conv("t", 1, 1, 3, 1)).unwrap();
        assert_eq!(out.at(0, 0, 0, 0), 4.0);
        assert_eq!(out.at(0, 0, 0, 3), 4.0);
        assert_eq!(out.at(0, 0, 1, 1), 9.0);
        assert_eq!(out.at(0, 0, 2, 2), 9.0);
        assert_eq!(out.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn zero_input_gives_zero_or_bias() {
        let mut rng = SplitMix64::new(1);
        let x = Tensor::zeros([1, 3, 8, 8]);
        let w = random([4, 3, 5, 5], &mut rng);
        let out = conv2d(&x, &w, &[0.0; 4], &LayerSpec::conv("t", 3, 4, 5, 2)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let out = deconv2d(
            &x,
            &w,
            &[0.5, 1.0, 1.5, 2.0],
            &LayerSpec::deconv("t", 3, 4, 5, 2),
        )
        .unwrap();
        assert_eq!(out.dims(), [1, 4, 16, 16]);
        for c in 0..4 {
            assert!(out.plane(0, c).iter().all(|&v| v == 0.5 * (c + 1) as f32));
        }
    }

    #[test]
    fn identity_kernel() {
        let mut rng = SplitMix64::new(2);
        let x = random([1, 1, 7, 5], &mut rng);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let out = conv2d(&x, &w, &[0.0], &LayerSpec::conv("t", 1, 1, 3, 1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn deconv_single_pixel_expansion() {
        let x = Tensor::new([1, 1, 1, 1], vec![2.5]).unwrap();
        let w = Tensor::new([1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let out = deconv2d(&x, &w, &[0.0], &LayerSpec::deconv("t", 1, 1, 2, 2)).unwrap();
        assert_eq!(out.dims(), [1, 1, 2, 2]);
        assert_eq!(out.data(), &[2.5; 4]);
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = SplitMix64::new(3);
        for &(kind, k, s, h, w) in &[
            (LayerKind::Conv, 5, 2, 9, 12),
            (LayerKind::Conv, 3, 1, 6, 5),
            (LayerKind::Conv, 5, 2, 1, 1),
            (LayerKind::Deconv, 5, 2, 4, 7),
            (LayerKind::Deconv, 3, 1, 5, 3),
            (LayerKind::Deconv, 3, 2, 3, 3),
        ] {
            let spec = LayerSpec {
                name: "t".into(),
                kind,
                in_channels: 3,
                out_channels: 4,
                kernel: k,
                stride: s,
                activation: Activation::Relu,
            };
            let x = random([2, 3, h, w], &mut rng);
            let wt = random(spec.weight_dims(), &mut rng);
            let b: Vec<f32> = (0..4).map(|_| rng.next_gaussian() as f32).collect();
            let got = float_layer(&x, &wt, &b, &spec, kind).unwrap();
            assert_close(&got, &naive(&x, &wt, &b, &spec), 1e-5);
        }
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        let err = conv2d(&x, &w, &[0.0], &LayerSpec::conv("ga.0", 3, 1, 3, 1)).unwrap_err();
        match err {
            TensorError::Shape {
                layer,
                got,
                expected,
                ..
            } => {
                assert_eq!(layer, "ga.0");
                assert_eq!((got, expected), (vec![2], vec![3]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn output_dims_rules() {
        for h in 1..=128 {
            for w in [1, 2, 3, 17, 64, 127, 128] {
                assert_eq!(
                    output_hw(LayerKind::Conv, h, w, 2),
                    (h.div_ceil(2), w.div_ceil(2))
                );
                assert_eq!(output_hw(LayerKind::Conv, h, w, 1), (h, w));
                assert_eq!(output_hw(LayerKind::Deconv, h, w, 2), (2 * h, 2 * w));
            }
        }
        let mut rng = SplitMix64::new(4);
        let w1 = random([2, 1, 5, 5], &mut rng);
        let w2 = random([1, 2, 5, 5], &mut rng);
        for (h, w) in [(2, 2), (8, 6), (16, 32)] {
            let x = random([1, 1, h, w], &mut rng);
            let y = conv2d(&x, &w1, &[0.0; 2], &LayerSpec::conv("a", 1, 2, 5, 2)).unwrap();
            let z = deconv2d(&y, &w2, &[0.0], &LayerSpec::deconv("b", 2, 1, 5, 2)).unwrap();
            assert_eq!((z.height(), z.width()), (h, w));
        }
    }
}
