//! Forward and backward passes for the blink CNN.
//!
//! Layer sequence: three `conv3×3(same) → ReLU → maxpool2×2` stages, flatten,
//! `dense → ReLU → dropout`, `dense(1)` logit. All parameters live in one
//! flat `f32` buffer described by [`Layout`]; convolutions run as im2col
//! followed by a single GEMM.

use rand::Rng;

use super::ModelConfig;

/// One named parameter tensor inside the flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvStage {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub weight: usize,
    pub bias: usize,
}

impl ConvStage {
    pub fn k(&self, kernel: usize) -> usize {
        self.c_in * kernel * kernel
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn pooled(&self, pool: usize) -> (usize, usize) {
        (self.h / pool, self.w / pool)
    }
}

/// Shapes and parameter offsets derived from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub(crate) kernel: usize,
    pub(crate) pool: usize,
    pub(crate) stages: Vec<ConvStage>,
    pub(crate) flat: usize,
    pub(crate) units: usize,
    pub(crate) hidden_w: usize,
    pub(crate) hidden_b: usize,
    pub(crate) out_w: usize,
    pub(crate) out_b: usize,
    pub(crate) total: usize,
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let [h0, w0, c0] = config.input_size;
        let kernel = config.kernel;
        let pool = config.pool;
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let seg = Segment {
                name,
                offset,
                shape,
            };
            offset += seg.len();
            let start = seg.offset;
            segments.push(seg);
            start
        };

        let (mut c, mut h, mut w) = (c0, h0, w0);
        let mut stages = Vec::new();
        for (i, &filters) in config.conv_filters.iter().enumerate() {
            let weight = push(
                format!("conv{}.weight", i + 1),
                vec![filters, c, kernel, kernel],
            );
            let bias = push(format!("conv{}.bias", i + 1), vec![filters]);
            stages.push(ConvStage {
                c_in: c,
                c_out: filters,
                h,
                w,
                weight,
                bias,
            });
            c = filters;
            h /= pool;
            w /= pool;
        }
        let flat = c * h * w;
        let units = config.dense_units;
        let hidden_w = push("dense.weight".into(), vec![units, flat]);
        let hidden_b = push("dense.bias".into(), vec![units]);
        let out_w = push("output.weight".into(), vec![1, units]);
        let out_b = push("output.bias".into(), vec![1]);
        Self {
            kernel,
            pool,
            stages,
            flat,
            units,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
            total: offset,
            segments,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    pub fn input_len(&self) -> usize {
        let s = &self.stages[0];
        s.c_in * s.h * s.w
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f32> {
        let mut params = vec![0.0f32; self.total];
        let k2 = self.kernel * self.kernel;
        for s in &self.stages {
            let limit = (6.0 / ((s.c_in * k2 + s.c_out * k2) as f64)).sqrt() as f32;
            let n = s.c_out * s.k(self.kernel);
            for p in &mut params[s.weight..s.weight + n] {
                *p = rng.gen_range(-limit..limit);
            }
        }
        let limit = (6.0 / ((self.flat + self.units) as f64)).sqrt() as f32;
        for p in &mut params[self.hidden_w..self.hidden_w + self.units * self.flat] {
            *p = rng.gen_range(-limit..limit);
        }
        let limit = (6.0 / ((self.units + 1) as f64)).sqrt() as f32;
        for p in &mut params[self.out_w..self.out_w + self.units] {
            *p = rng.gen_range(-limit..limit);
        }
        params
    }
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct Workspace {
    cols: Vec<Vec<f32>>,
    conv_out: Vec<Vec<f32>>,
    pooled: Vec<Vec<f32>>,
    argmax: Vec<Vec<u32>>,
    hidden: Vec<f32>,
    dropped: Vec<f32>,
    mask: Vec<f32>,
    // backward scratch
    d_conv: Vec<f32>,
    d_col: Vec<f32>,
    d_in: Vec<f32>,
    d_hidden: Vec<f32>,
}

impl Workspace {
    pub fn new(layout: &Layout) -> Self {
        let k = layout.kernel;
        let max_col = layout
            .stages
            .iter()
            .map(|s| s.k(k) * s.hw())
            .max()
            .unwrap_or(0);
        let max_conv = layout
            .stages
            .iter()
            .map(|s| s.c_out * s.hw())
            .max()
            .unwrap_or(0);
        let max_in = layout
            .stages
            .iter()
            .map(|s| s.c_in * s.hw())
            .max()
            .unwrap_or(0)
            .max(layout.flat);
        Self {
            cols: layout
                .stages
                .iter()
                .map(|s| vec![0.0; s.k(k) * s.hw()])
                .collect(),
            conv_out: layout
                .stages
                .iter()
                .map(|s| vec![0.0; s.c_out * s.hw()])
                .collect(),
            pooled: layout
                .stages
                .iter()
                .map(|s| {
                    let (ph, pw) = s.pooled(layout.pool);
                    vec![0.0; s.c_out * ph * pw]
                })
                .collect(),
            argmax: layout
                .stages
                .iter()
                .map(|s| {
                    let (ph, pw) = s.pooled(layout.pool);
                    vec![0; s.c_out * ph * pw]
                })
                .collect(),
            hidden: vec![0.0; layout.units],
            dropped: vec![0.0; layout.units],
            mask: vec![1.0; layout.units],
            d_conv: vec![0.0; max_conv],
            d_col: vec![0.0; max_col],
            d_in: vec![0.0; max_in],
            d_hidden: vec![0.0; layout.units],
        }
    }

    /// Buffers for [`infer`] only.
    pub fn inference(layout: &Layout) -> Self {
        let mut ws = Self::new_empty();
        for s in &layout.stages {
            let (ph, pw) = s.pooled(layout.pool);
            ws.conv_out.push(vec![0.0; s.c_out * s.hw()]);
            ws.pooled.push(vec![0.0; s.c_out * ph * pw]);
            ws.argmax.push(vec![0; s.c_out * ph * pw]);
        }
        ws
    }

    fn new_empty() -> Self {
        Self {
            cols: Vec::new(),
            conv_out: Vec::new(),
            pooled: Vec::new(),
            argmax: Vec::new(),
            hidden: Vec::new(),
            dropped: Vec::new(),
            mask: Vec::new(),
            d_conv: Vec::new(),
            d_col: Vec::new(),
            d_in: Vec::new(),
            d_hidden: Vec::new(),
        }
    }
}

/// `c[m×n] = beta·c + a[m×k] · b[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
) {
    // SAFETY: the asserts below bound every index sgemm touches.
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m == 0 || n == 0 || (m - 1) * rsc + n - 1 < c.len());
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn im2col(input: &[f32], c: usize, h: usize, w: usize, kernel: usize, col: &mut [f32]) {
    let r = (kernel / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ci * kernel + ky) * kernel + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], c: usize, h: usize, w: usize, kernel: usize, out: &mut [f32]) {
    let r = (kernel / 2) as isize;
    let hw = h * w;
    out[..c * hw].fill(0.0);
    for ci in 0..c {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ci * kernel + ky) * kernel + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut out[ci * hw + sy as usize * w..ci * hw + (sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn max_pool(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    pool: usize,
    out: &mut [f32],
    argmax: &mut [u32],
) {
    let (ph, pw) = (h / pool, w / pool);
    for ci in 0..c {
        let base = ci * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..pool {
                    for dx in 0..pool {
                        let i = base + (py * pool + dy) * w + px * pool + dx;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                let o = (ci * ph + py) * pw + px;
                out[o] = best;
                argmax[o] = best_i as u32;
            }
        }
    }
}

/// Dropout applied during a training forward pass.
pub(crate) struct Dropout<'a, R: Rng> {
    pub rate: f32,
    pub rng: &'a mut R,
}

/// Runs the network on one CHW input and returns the output logit.
pub(crate) fn forward<R: Rng>(
    layout: &Layout,
    params: &[f32],
    input: &[f32],
    ws: &mut Workspace,
    dropout: Option<Dropout<'_, R>>,
) -> f32 {
    let k = layout.kernel;
    for (i, s) in layout.stages.iter().enumerate() {
        let src: &[f32] = if i == 0 { input } else { &ws.pooled[i - 1] };
        let kk = s.k(k);
        conv_gemm(
            src,
            s,
            k,
            &params[s.weight..s.weight + s.c_out * kk],
            &params[s.bias..s.bias + s.c_out],
            &mut ws.cols[i],
            &mut ws.conv_out[i],
        );
        max_pool(
            &ws.conv_out[i],
            s.c_out,
            s.h,
            s.w,
            layout.pool,
            &mut ws.pooled[i],
            &mut ws.argmax[i],
        );
    }

    let flat = &ws.pooled[layout.stages.len() - 1];
    ws.hidden
        .copy_from_slice(&params[layout.hidden_b..layout.hidden_b + layout.units]);
    gemm(
        layout.units,
        layout.flat,
        1,
        &params[layout.hidden_w..layout.hidden_w + layout.units * layout.flat],
        layout.flat,
        1,
        flat,
        1,
        1,
        1.0,
        &mut ws.hidden,
        1,
    );
    for v in ws.hidden.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    match dropout {
        Some(Dropout { rate, rng }) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            for (m, (d, h)) in ws
                .mask
                .iter_mut()
                .zip(ws.dropped.iter_mut().zip(&ws.hidden))
            {
                *m = if rng.gen::<f32>() < rate { 0.0 } else { keep };
                *d = h * *m;
            }
        }
        _ => {
            ws.mask.fill(1.0);
            ws.dropped.copy_from_slice(&ws.hidden);
        }
    }
    let w = &params[layout.out_w..layout.out_w + layout.units];
    params[layout.out_b] + w.iter().zip(&ws.dropped).map(|(a, b)| a * b).sum::<f32>()
}

/// Convolution + ReLU for inference, accumulated row by row without im2col.
/// Matches the im2col path up to float summation order.
fn conv_direct(
    input: &[f32],
    s: &ConvStage,
    kernel: usize,
    weight: &[f32],
    bias: &[f32],
    out: &mut [f32],
) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected at runtime.
        unsafe { conv_direct_fma(input, s, kernel, weight, bias, out) };
        return;
    }
    conv_direct_body::<false>(input, s, kernel, weight, bias, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn conv_direct_fma(
    input: &[f32],
    s: &ConvStage,
    kernel: usize,
    weight: &[f32],
    bias: &[f32],
    out: &mut [f32],
) {
    conv_direct_body::<true>(input, s, kernel, weight, bias, out);
}

#[inline(always)]
fn conv_direct_body<const FUSED: bool>(
    input: &[f32],
    s: &ConvStage,
    kernel: usize,
    weight: &[f32],
    bias: &[f32],
    out: &mut [f32],
) {
    let (h, w) = (s.h, s.w);
    let hw = h * w;
    let r = kernel / 2;
    // Zero-padded planes turn every kernel tap into one long contiguous axpy.
    // Accumulators use the padded row stride; columns w.. of each row are junk.
    let pw = w + 2 * r;
    let plen = (h + 2 * r) * pw;
    let mut padded = vec![0.0f32; s.c_in * plen];
    for ci in 0..s.c_in {
        for y in 0..h {
            let dst = ci * plen + (y + r) * pw + r;
            padded[dst..dst + w].copy_from_slice(&input[ci * hw + y * w..ci * hw + (y + 1) * w]);
        }
    }
    let n = (h - 1) * pw + w;
    let mut acc = vec![0.0f32; n];
    for (co, plane_out) in out[..s.c_out * hw].chunks_exact_mut(hw).enumerate() {
        acc.fill(bias[co]);
        for ci in 0..s.c_in {
            let plane = &padded[ci * plen..(ci + 1) * plen];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wt = weight[((co * s.c_in + ci) * kernel + ky) * kernel + kx];
                    let off = ky * pw + kx;
                    for (d, v) in acc.iter_mut().zip(&plane[off..off + n]) {
                        *d = if FUSED {
                            wt.mul_add(*v, *d)
                        } else {
                            *d + wt * v
                        };
                    }
                }
            }
        }
        for (y, row) in plane_out.chunks_exact_mut(w).enumerate() {
            for (o, v) in row.iter_mut().zip(&acc[y * pw..y * pw + w]) {
                *o = v.max(0.0);
            }
        }
    }
}

fn conv_gemm(
    input: &[f32],
    s: &ConvStage,
    kernel: usize,
    weight: &[f32],
    bias: &[f32],
    cols: &mut [f32],
    out: &mut [f32],
) {
    im2col(input, s.c_in, s.h, s.w, kernel, cols);
    let kk = s.k(kernel);
    let hw = s.hw();
    for (co, row) in out.chunks_exact_mut(hw).enumerate() {
        row.fill(bias[co]);
    }
    gemm(s.c_out, kk, hw, weight, kk, 1, cols, hw, 1, 1.0, out, hw);
    for v in out.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Inference-only forward pass: no dropout, no activations kept for backprop.
pub(crate) fn infer(layout: &Layout, params: &[f32], input: &[f32], ws: &mut Workspace) -> f32 {
    let k = layout.kernel;
    for (i, s) in layout.stages.iter().enumerate() {
        let src: &[f32] = if i == 0 { input } else { &ws.pooled[i - 1] };
        let kk = s.k(k);
        let weight = &params[s.weight..s.weight + s.c_out * kk];
        let bias = &params[s.bias..s.bias + s.c_out];
        conv_direct(src, s, k, weight, bias, &mut ws.conv_out[i]);
        max_pool(
            &ws.conv_out[i],
            s.c_out,
            s.h,
            s.w,
            layout.pool,
            &mut ws.pooled[i],
            &mut ws.argmax[i],
        );
    }
    let flat = &ws.pooled[layout.stages.len() - 1];
    let dense_w = &params[layout.hidden_w..layout.hidden_w + layout.units * layout.flat];
    let w = &params[layout.out_w..layout.out_w + layout.units];
    let mut logit = params[layout.out_b];
    for (u, row) in dense_w.chunks_exact(layout.flat).enumerate() {
        let h = params[layout.hidden_b + u] + row.iter().zip(flat).map(|(a, b)| a * b).sum::<f32>();
        logit += w[u] * h.max(0.0);
    }
    logit
}

/// Accumulates `d_logit`-scaled gradients of the last forward pass into `grads`.
pub(crate) fn backward(
    layout: &Layout,
    params: &[f32],
    ws: &mut Workspace,
    d_logit: f32,
    grads: &mut [f32],
) {
    let units = layout.units;
    grads[layout.out_b] += d_logit;
    for j in 0..units {
        grads[layout.out_w + j] += d_logit * ws.dropped[j];
        let d = d_logit * params[layout.out_w + j] * ws.mask[j];
        ws.d_hidden[j] = if ws.hidden[j] > 0.0 { d } else { 0.0 };
    }

    let last = layout.stages.len() - 1;
    let flat_in = &ws.pooled[last];
    for j in 0..units {
        let g = ws.d_hidden[j];
        if g == 0.0 {
            continue;
        }
        grads[layout.hidden_b + j] += g;
        let row =
            &mut grads[layout.hidden_w + j * layout.flat..layout.hidden_w + (j + 1) * layout.flat];
        for (r, x) in row.iter_mut().zip(flat_in) {
            *r += g * x;
        }
    }
    // d_flat = W_hᵀ · d_hidden
    gemm(
        layout.flat,
        units,
        1,
        &params[layout.hidden_w..layout.hidden_w + units * layout.flat],
        1,
        layout.flat,
        &ws.d_hidden,
        1,
        1,
        0.0,
        &mut ws.d_in[..layout.flat],
        1,
    );

    let k = layout.kernel;
    for i in (0..layout.stages.len()).rev() {
        let s = layout.stages[i];
        let hw = s.hw();
        let kk = s.k(k);
        let n_out = s.c_out * hw;
        // unpool through argmax, then the ReLU mask
        let d_conv = &mut ws.d_conv[..n_out];
        d_conv.fill(0.0);
        for (o, &src) in ws.argmax[i].iter().enumerate() {
            d_conv[src as usize] += ws.d_in[o];
        }
        for (d, &y) in d_conv.iter_mut().zip(&ws.conv_out[i]) {
            if y <= 0.0 {
                *d = 0.0;
            }
        }
        for (co, row) in d_conv.chunks_exact(hw).enumerate() {
            grads[s.bias + co] += row.iter().sum::<f32>();
        }
        // dW += d_conv · colᵀ
        gemm(
            s.c_out,
            hw,
            kk,
            d_conv,
            hw,
            1,
            &ws.cols[i],
            1,
            hw,
            1.0,
            &mut grads[s.weight..s.weight + s.c_out * kk],
            kk,
        );
        if i == 0 {
            break;
        }
        // d_col = Wᵀ · d_conv
        let d_col = &mut ws.d_col[..kk * hw];
        gemm(
            kk,
            s.c_out,
            hw,
            &params[s.weight..s.weight + s.c_out * kk],
            1,
            kk,
            d_conv,
            hw,
            1,
            0.0,
            d_col,
            hw,
        );
        col2im(d_col, s.c_in, s.h, s.w, k, &mut ws.d_in);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_size: [10, 10, 2],
            conv_filters: vec![3, 4, 2],
            kernel: 3,
            pool: 2,
            dense_units: 5,
            dropout_rate: 0.0,
        }
    }

    fn logit(layout: &Layout, params: &[f32], input: &[f32]) -> f64 {
        let mut ws = Workspace::new(layout);
        forward::<ChaCha8Rng>(layout, params, input, &mut ws, None) as f64
    }

    #[test]
    fn shapes_of_default_model() {
        let layout = Layout::new(&ModelConfig::default());
        let dims: Vec<_> = layout.stages.iter().map(|s| (s.h, s.w)).collect();
        assert_eq!(dims, vec![(50, 50), (25, 25), (12, 12)]);
        assert_eq!(layout.flat, 64 * 6 * 6);
        assert_eq!(
            layout.param_count(),
            (32 * 27 + 32) + (32 * 288 + 32) + (64 * 288 + 64) + (64 * 2304 + 64) + 65
        );
    }

    /// Direct convolution, written independently of im2col.
    fn naive_conv(
        input: &[f32],
        c_in: usize,
        h: usize,
        w: usize,
        weight: &[f32],
        bias: &[f32],
    ) -> Vec<f32> {
        let c_out = bias.len();
        let mut out = vec![0.0f32; c_out * h * w];
        for co in 0..c_out {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias[co];
                    for ci in 0..c_in {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                    acc += weight
                                        [((co * c_in + ci) * 3 + ky as usize) * 3 + kx as usize]
                                        * input[(ci * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[(co * h + y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn inference_path_matches_training_forward() {
        for cfg in [
            tiny_config(),
            ModelConfig {
                conv_filters: vec![4, 4, 8],
                dense_units: 8,
                ..ModelConfig::default()
            },
            ModelConfig {
                conv_filters: vec![8, 16, 4],
                dense_units: 8,
                ..ModelConfig::default()
            },
        ] {
            let layout = Layout::new(&cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let params: Vec<f32> = (0..layout.total)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect();
            for _ in 0..5 {
                let input: Vec<f32> = (0..layout.input_len())
                    .map(|_| rng.gen_range(0.0..1.0))
                    .collect();
                let mut ws = Workspace::new(&layout);
                let a = forward::<ChaCha8Rng>(&layout, &params, &input, &mut ws, None);
                let b = infer(&layout, &params, &input, &mut Workspace::inference(&layout));
                assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let layout = Layout::new(&tiny_config());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params: Vec<f32> = (0..layout.total)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let input: Vec<f32> = (0..layout.input_len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let mut ws = Workspace::new(&layout);
        forward::<ChaCha8Rng>(&layout, &params, &input, &mut ws, None);
        let s = layout.stages[0];
        let expected = naive_conv(
            &input,
            s.c_in,
            s.h,
            s.w,
            &params[s.weight..s.weight + s.c_out * s.k(3)],
            &params[s.bias..s.bias + s.c_out],
        );
        for (got, want) in ws.conv_out[0].iter().zip(&expected) {
            assert!((got - want.max(0.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let layout = Layout::new(&tiny_config());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params: Vec<f32> = (0..layout.total)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let input: Vec<f32> = (0..layout.input_len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let mut ws = Workspace::new(&layout);
        forward::<ChaCha8Rng>(&layout, &params, &input, &mut ws, None);
        let mut grads = vec![0.0f32; layout.total];
        backward(&layout, &params, &mut ws, 1.0, &mut grads);

        let eps = 1e-2f32;
        let mut checked = 0;
        for idx in (0..layout.total).step_by(3) {
            let mut p = params.clone();
            p[idx] += eps;
            let up = logit(&layout, &p, &input);
            p[idx] -= 2.0 * eps;
            let down = logit(&layout, &p, &input);
            let numeric = (up - down) / (2.0 * eps as f64);
            let analytic = grads[idx] as f64;
            // ReLU kinks can break central differences; skip points that straddle one
            let tol = 1e-3 + 1e-2 * numeric.abs().max(analytic.abs());
            if (numeric - analytic).abs() > tol {
                let mut p2 = params.clone();
                p2[idx] += eps / 10.0;
                let fine = (logit(&layout, &p2, &input) - logit(&layout, &params, &input))
                    / (eps as f64 / 10.0);
                assert!(
                    (fine - analytic).abs() < 5e-3 + 2e-2 * analytic.abs(),
                    "param {idx}: numeric {numeric} fine {fine} analytic {analytic}"
                );
            }
            checked += 1;
        }
        assert!(checked > 50);
    }
}
