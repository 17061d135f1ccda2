//! Per-sample layer kernels on `[C, H, W]` planes.

/// 3×3 convolution, stride 1, zero padding 1.
///
/// `weight` is `[c_out, c_in, 3, 3]`, `bias` is `[c_out]`.
pub fn conv3x3_forward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; c_out * plane];
    for co in 0..c_out {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..c_in {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let wgt = weight[((co * c_in + ci) * 3 + ky) * 3 + kx];
                    let (x0, x1) = valid_range(kx, w);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (o, i) in d.iter_mut().zip(s) {
                            *o += wgt * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output rows (or columns) whose tap `k` lands inside `0..n`.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    let lo = 1usize.saturating_sub(k);
    let hi = (n + 1).saturating_sub(k).min(n);
    (lo, hi)
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let plane = h * w;
    let mut din = vec![0.0; c_in * plane];
    for co in 0..c_out {
        let g = &dout[co * plane..(co + 1) * plane];
        dbias[co] += g.iter().sum::<f64>();
        for ci in 0..c_in {
            let src = &input[ci * plane..(ci + 1) * plane];
            let dsrc = &mut din[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let widx = ((co * c_in + ci) * 3 + ky) * 3 + kx;
                    let wgt = weight[widx];
                    let (x0, x1) = valid_range(kx, w);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let gs = &g[y * w + x0..y * w + x1];
                        let off = sy * w + x0 + kx - 1;
                        let s = &src[off..off + (x1 - x0)];
                        for (gv, sv) in gs.iter().zip(s) {
                            acc += gv * sv;
                        }
                        let ds = &mut dsrc[off..off + (x1 - x0)];
                        for (d, gv) in ds.iter_mut().zip(gs) {
                            *d += wgt * gv;
                        }
                    }
                    dweight[widx] += acc;
                }
            }
        }
    }
    din
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Zeroes gradient entries where the pre-activation was not positive.
pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 2×2 average pooling, stride 2. `h` and `w` must be even.
pub fn avgpool2_forward(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..];
        for y in 0..oh {
            for x in 0..ow {
                let (r0, r1) = ((2 * y) * w + 2 * x, (2 * y + 1) * w + 2 * x);
                out[(ch * oh + y) * ow + x] = 0.25 * (src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1]);
            }
        }
    }
    out
}

pub fn avgpool2_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut din = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let g = 0.25 * dout[(ch * oh + y) * ow + x];
                let base = ch * h * w;
                din[base + 2 * y * w + 2 * x] = g;
                din[base + 2 * y * w + 2 * x + 1] = g;
                din[base + (2 * y + 1) * w + 2 * x] = g;
                din[base + (2 * y + 1) * w + 2 * x + 1] = g;
            }
        }
    }
    din
}

/// Mean of each channel plane.
pub fn channel_means(input: &[f64], c: usize, plane: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| input[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect()
}

/// Intermediate values of one squeeze-and-excitation application.
#[derive(Debug, Clone)]
pub struct SeTrace {
    pub squeezed: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub gate: Vec<f64>,
}

/// Squeeze (spatial mean), excite (`sigmoid(expand · relu(reduce · z))`),
/// and rescale each channel by its gate.
///
/// `reduce` is `[c, c/ρ]`, `expand` is `[c/ρ, c]`.
pub fn se_forward(input: &[f64], c: usize, plane: usize, reduce: &[f64], expand: &[f64]) -> (Vec<f64>, SeTrace) {
    let r = reduce.len() / c;
    let squeezed = channel_means(input, c, plane);
    let mut hidden_pre = vec![0.0; r];
    for (ch, &z) in squeezed.iter().enumerate() {
        for j in 0..r {
            hidden_pre[j] += z * reduce[ch * r + j];
        }
    }
    let hidden = relu(&hidden_pre);
    let mut gate = vec![0.0; c];
    for (j, &hv) in hidden.iter().enumerate() {
        for ch in 0..c {
            gate[ch] += hv * expand[j * c + ch];
        }
    }
    gate.iter_mut().for_each(|g| *g = sigmoid(*g));
    let mut out = input.to_vec();
    for ch in 0..c {
        out[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v *= gate[ch]);
    }
    (
        out,
        SeTrace {
            squeezed,
            hidden_pre,
            hidden,
            gate,
        },
    )
}

/// Backward through [`se_forward`]; returns the input gradient.
///
/// With `drop_gate_derivative` the sigmoid derivative is skipped. That is a
/// deliberately wrong gradient used only to show the gradient checker
/// catches a broken layer.
#[allow(clippy::too_many_arguments)]
pub fn se_backward(
    input: &[f64],
    c: usize,
    plane: usize,
    reduce: &[f64],
    expand: &[f64],
    trace: &SeTrace,
    dout: &[f64],
    dreduce: &mut [f64],
    dexpand: &mut [f64],
    drop_gate_derivative: bool,
) -> Vec<f64> {
    let r = reduce.len() / c;
    let mut din = vec![0.0; c * plane];
    let mut dgate_pre = vec![0.0; c];
    for ch in 0..c {
        let span = ch * plane..(ch + 1) * plane;
        let (x, g) = (&input[span.clone()], &dout[span.clone()]);
        let dg: f64 = x.iter().zip(g).map(|(a, b)| a * b).sum();
        let s = trace.gate[ch];
        dgate_pre[ch] = if drop_gate_derivative { dg } else { dg * s * (1.0 - s) };
        for (d, gv) in din[span].iter_mut().zip(g) {
            *d = s * gv;
        }
    }
    let mut dhidden = vec![0.0; r];
    for j in 0..r {
        for ch in 0..c {
            dexpand[j * c + ch] += trace.hidden[j] * dgate_pre[ch];
            dhidden[j] += expand[j * c + ch] * dgate_pre[ch];
        }
    }
    relu_backward(&trace.hidden_pre, &mut dhidden);
    for ch in 0..c {
        let mut dz = 0.0;
        for j in 0..r {
            dreduce[ch * r + j] += trace.squeezed[ch] * dhidden[j];
            dz += reduce[ch * r + j] * dhidden[j];
        }
        let share = dz / plane as f64;
        din[ch * plane..(ch + 1) * plane].iter_mut().for_each(|d| *d += share);
    }
    din
}
