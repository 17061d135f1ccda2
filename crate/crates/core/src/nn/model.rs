//! Toy squeeze-and-excitation CNN.
//!
//! Each stage is `conv3x3 → ReLU → SE → 2×2 average pool`; the head is a
//! global average pool followed by a fully-connected layer to 7 logits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{self, SeTrace};
use super::tensor::{ParamSet, Tensor};
use crate::imagedata::{Image, CHANNELS, CLASS_COUNT};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub input_size: usize,
    pub widths: Vec<usize>,
    pub se_reduction: usize,
    pub class_count: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_size: 32,
            widths: vec![8, 16, 32],
            se_reduction: 4,
            class_count: CLASS_COUNT,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::config("model.widths", "need at least two conv stages"));
        }
        if self.se_reduction == 0 {
            return Err(Error::config("model.se_reduction", "must be >= 1"));
        }
        for (i, &w) in self.widths.iter().enumerate() {
            if w == 0 || w % self.se_reduction != 0 {
                return Err(Error::config(
                    "model.widths",
                    format!("stage {i} width {w} is not a positive multiple of se_reduction {}", self.se_reduction),
                ));
            }
        }
        let scale = 1usize << self.widths.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(scale) {
            return Err(Error::config(
                "model.input_size",
                format!("{} must be a positive multiple of {scale}", self.input_size),
            ));
        }
        if self.class_count != CLASS_COUNT {
            return Err(Error::config("model.class_count", format!("must be {CLASS_COUNT}")));
        }
        Ok(())
    }

    fn stage_in(&self, i: usize) -> usize {
        if i == 0 {
            CHANNELS
        } else {
            self.widths[i - 1]
        }
    }

    /// Expected parameter shapes, in name order of construction.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, &c) in self.widths.iter().enumerate() {
            let r = c / self.se_reduction;
            out.push((conv_w(i), vec![c, self.stage_in(i), 3, 3]));
            out.push((conv_b(i), vec![c]));
            out.push((se_reduce(i), vec![c, r]));
            out.push((se_expand(i), vec![r, c]));
        }
        let last = *self.widths.last().expect("validated");
        out.push((FC_W.into(), vec![self.class_count, last]));
        out.push((FC_B.into(), vec![self.class_count]));
        out
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let shapes = self.param_shapes();
        for (name, shape) in &shapes {
            match params.get(name) {
                None => return Err(Error::shape(name.clone(), "parameter missing")),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::shape(
                        name.clone(),
                        format!("expected {shape:?}, got {:?}", t.shape()),
                    ))
                }
                _ => {}
            }
        }
        if params.len() != shapes.len() {
            let extra = params
                .names()
                .find(|n| !shapes.iter().any(|(s, _)| s == n))
                .unwrap_or("?");
            return Err(Error::shape(extra.to_string(), "unexpected parameter"));
        }
        Ok(())
    }
}

fn conv_w(i: usize) -> String {
    format!("stage{i}.conv.weight")
}
fn conv_b(i: usize) -> String {
    format!("stage{i}.conv.bias")
}
fn se_reduce(i: usize) -> String {
    format!("stage{i}.se.reduce")
}
fn se_expand(i: usize) -> String {
    format!("stage{i}.se.expand")
}
const FC_W: &str = "head.fc.weight";
const FC_B: &str = "head.fc.bias";

/// He-uniform conv kernels, Glorot-uniform dense weights, zero biases;
/// deterministic in `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut params = ParamSet::new();
    for (idx, (name, shape)) in spec.param_shapes().into_iter().enumerate() {
        let n: usize = shape.iter().product();
        let data = if shape.len() == 1 {
            vec![0.0; n]
        } else {
            let (fan_in, fan_out) = fans(&name, &shape);
            let bound = if shape.len() == 4 {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let mut rng = RngStream::derive(seed, &[idx as u64]);
            (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
        };
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

fn fans(name: &str, shape: &[usize]) -> (usize, usize) {
    match shape {
        [co, ci, kh, kw] => (ci * kh * kw, co * kh * kw),
        // fc weight is [out, in]; SE matrices are [in, out]
        [a, b] if name == FC_W => (*b, *a),
        [a, b] => (*a, *b),
        _ => (1, 1),
    }
}

/// Converts HWC images into an `[N, 3, H, W]` batch.
pub fn images_to_batch(images: &[Image]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::shape("batch", "empty batch"));
    };
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let mut data = vec![0.0; images.len() * CHANNELS * plane];
    for (n, im) in images.iter().enumerate() {
        if !im.same_dims(first) {
            return Err(Error::shape(
                "batch",
                format!("image {n} is {}x{}, expected {h}x{w}", im.height(), im.width()),
            ));
        }
        let base = n * CHANNELS * plane;
        for (p, px) in im.data().chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                data[base + c * plane + p] = px[c];
            }
        }
    }
    Tensor::new(vec![images.len(), CHANNELS, h, w], data)
}

#[derive(Debug, Clone)]
struct StageTrace {
    input: Vec<f64>,
    conv_pre: Vec<f64>,
    activated: Vec<f64>,
    se: SeTrace,
}

#[derive(Debug, Clone)]
struct SampleTrace {
    stages: Vec<StageTrace>,
    pooled_features: Vec<f64>,
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    spec: ModelSpec,
    fingerprint: u64,
    samples: Vec<SampleTrace>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    /// Digest of which ReLU units were active. Two forward passes with the
    /// same signature took the same branch at every ReLU.
    pub fn activation_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut bit = |on: bool| {
            h ^= on as u64 + 1;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for s in &self.samples {
            for st in &s.stages {
                st.conv_pre.iter().for_each(|&v| bit(v > 0.0));
                st.se.hidden_pre.iter().for_each(|&v| bit(v > 0.0));
            }
        }
        h
    }
}

fn param<'a>(params: &'a ParamSet, name: &str) -> &'a [f64] {
    params.get(name).expect("checked by ModelSpec::check_params").data()
}

fn forward_sample(params: &ParamSet, spec: &ModelSpec, image: &[f64]) -> (Vec<f64>, SampleTrace) {
    let mut size = spec.input_size;
    let mut x = image.to_vec();
    let mut stages = Vec::with_capacity(spec.widths.len());
    for (i, &c) in spec.widths.iter().enumerate() {
        let c_in = spec.stage_in(i);
        let plane = size * size;
        let conv_pre = layers::conv3x3_forward(&x, c_in, size, size, param(params, &conv_w(i)), param(params, &conv_b(i)), c);
        let activated = layers::relu(&conv_pre);
        let (gated, se) = layers::se_forward(&activated, c, plane, param(params, &se_reduce(i)), param(params, &se_expand(i)));
        let pooled = layers::avgpool2_forward(&gated, c, size, size);
        stages.push(StageTrace {
            input: std::mem::replace(&mut x, pooled),
            conv_pre,
            activated,
            se,
        });
        size /= 2;
    }
    let last = *spec.widths.last().expect("validated");
    let features = layers::channel_means(&x, last, size * size);
    let (fw, fb) = (param(params, FC_W), param(params, FC_B));
    let logits: Vec<f64> = (0..spec.class_count)
        .map(|k| fb[k] + fw[k * last..(k + 1) * last].iter().zip(&features).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    (
        logits,
        SampleTrace {
            stages,
            pooled_features: features,
        },
    )
}

/// Logits `[N, 7]` for an `[N, 3, S, S]` batch.
///
/// Samples are processed independently (in parallel), so each row depends
/// only on its own image and the parameters.
pub fn forward(params: &ParamSet, spec: &ModelSpec, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
    spec.validate()?;
    spec.check_params(params)?;
    let s = spec.input_size;
    match batch.shape() {
        [n, c, h, w] if *n > 0 && *c == CHANNELS && *h == s && *w == s => {}
        other => {
            return Err(Error::shape(
                "input",
                format!("expected [N, {CHANNELS}, {s}, {s}] with N >= 1, got {other:?}"),
            ))
        }
    }
    if !batch.is_finite() {
        return Err(Error::Data("non-finite value in input batch".into()));
    }
    let per = CHANNELS * s * s;
    let results: Vec<(Vec<f64>, SampleTrace)> = batch
        .data()
        .par_chunks(per)
        .map(|img| forward_sample(params, spec, img))
        .collect();
    let n = results.len();
    let mut logits = Vec::with_capacity(n * spec.class_count);
    let mut samples = Vec::with_capacity(n);
    for (l, t) in results {
        logits.extend(l);
        samples.push(t);
    }
    Ok((
        Tensor::new(vec![n, spec.class_count], logits)?,
        ForwardCache {
            spec: spec.clone(),
            fingerprint: params.fingerprint(),
            samples,
        },
    ))
}

/// Logits only.
pub fn predict_logits(params: &ParamSet, spec: &ModelSpec, batch: &Tensor) -> Result<Tensor> {
    forward(params, spec, batch).map(|(l, _)| l)
}

/// Deliberate gradient defects, used to show the gradient checker fails
/// on a broken backward pass.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardFault {
    #[default]
    None,
    /// Drops the sigmoid derivative inside every SE block.
    SeGateDerivative,
}

fn backward_sample(
    params: &ParamSet,
    spec: &ModelSpec,
    trace: &SampleTrace,
    dlogits: &[f64],
    fault: BackwardFault,
) -> ParamSet {
    let mut grads = params.zeros_like();
    let last = *spec.widths.last().expect("validated");
    let fw = param(params, FC_W);
    {
        let dfw = grads.get_mut(FC_W).expect("present").data_mut();
        for k in 0..spec.class_count {
            for j in 0..last {
                dfw[k * last + j] += dlogits[k] * trace.pooled_features[j];
            }
        }
    }
    grads.get_mut(FC_B).expect("present").data_mut().copy_from_slice(dlogits);
    let mut dfeat = vec![0.0; last];
    for k in 0..spec.class_count {
        for j in 0..last {
            dfeat[j] += fw[k * last + j] * dlogits[k];
        }
    }
    let n_stages = spec.widths.len();
    let mut size = spec.input_size >> n_stages;
    let plane = size * size;
    // global average pool
    let mut dx: Vec<f64> = dfeat
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
        .collect();
    for i in (0..n_stages).rev() {
        let st = &trace.stages[i];
        let c = spec.widths[i];
        size *= 2;
        let plane = size * size;
        let dgated = layers::avgpool2_backward(&dx, c, size, size);
        let mut dact = {
            let mut dred = vec![0.0; c * (c / spec.se_reduction)];
            let mut dexp = vec![0.0; dred.len()];
            let d = layers::se_backward(
                &st.activated,
                c,
                plane,
                param(params, &se_reduce(i)),
                param(params, &se_expand(i)),
                &st.se,
                &dgated,
                &mut dred,
                &mut dexp,
                fault == BackwardFault::SeGateDerivative,
            );
            grads.get_mut(&se_reduce(i)).expect("present").data_mut().copy_from_slice(&dred);
            grads.get_mut(&se_expand(i)).expect("present").data_mut().copy_from_slice(&dexp);
            d
        };
        layers::relu_backward(&st.conv_pre, &mut dact);
        let c_in = spec.stage_in(i);
        let mut dw = vec![0.0; c * c_in * 9];
        let mut db = vec![0.0; c];
        dx = layers::conv3x3_backward(&st.input, c_in, size, size, param(params, &conv_w(i)), c, &dact, &mut dw, &mut db);
        grads.get_mut(&conv_w(i)).expect("present").data_mut().copy_from_slice(&dw);
        grads.get_mut(&conv_b(i)).expect("present").data_mut().copy_from_slice(&db);
    }
    grads
}

/// Exact parameter gradients given `dL/dlogits`.
///
/// `params` must be the set the cache was built from; a cache from any other
/// parameter values is rejected as stale. Per-sample gradients are summed in
/// batch order, so the result is deterministic regardless of threading.
pub fn backward(params: &ParamSet, cache: &ForwardCache, dlogits: &Tensor) -> Result<ParamSet> {
    backward_with_fault(params, cache, dlogits, BackwardFault::None)
}

#[doc(hidden)]
pub fn backward_with_fault(
    params: &ParamSet,
    cache: &ForwardCache,
    dlogits: &Tensor,
    fault: BackwardFault,
) -> Result<ParamSet> {
    if params.fingerprint() != cache.fingerprint {
        return Err(Error::Invariant(
            "stale forward cache: parameters changed since the forward pass".into(),
        ));
    }
    let spec = &cache.spec;
    let n = cache.samples.len();
    if dlogits.shape() != [n, spec.class_count] {
        return Err(Error::shape(
            "dlogits",
            format!("expected [{n}, {}], got {:?}", spec.class_count, dlogits.shape()),
        ));
    }
    let per_sample: Vec<ParamSet> = cache
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, t)| backward_sample(params, spec, t, dlogits.row(i), fault))
        .collect();
    let mut total = params.zeros_like();
    for g in &per_sample {
        for ((_, acc), (_, part)) in total.iter_mut().zip(g.iter()) {
            for (a, p) in acc.data_mut().iter_mut().zip(part.data()) {
                *a += p;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::softmax_cross_entropy;
    use crate::imagedata::{Class, SoftLabel};

    fn small_spec() -> ModelSpec {
        ModelSpec {
            input_size: 8,
            widths: vec![4, 8],
            se_reduction: 2,
            class_count: 7,
        }
    }

    fn random_batch(n: usize, size: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed, 0);
        let data = (0..n * 3 * size * size).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        Tensor::new(vec![n, 3, size, size], data).unwrap()
    }

    #[test]
    fn default_spec_is_valid() {
        ModelSpec::default().validate().unwrap();
        let p = init_params(&ModelSpec::default(), 0).unwrap();
        assert_eq!(p.len(), 14);
    }

    #[test]
    fn invalid_specs() {
        let one_stage = ModelSpec { widths: vec![8], ..ModelSpec::default() };
        assert!(one_stage.validate().is_err());
        let bad_rho = ModelSpec { se_reduction: 3, ..ModelSpec::default() };
        assert!(bad_rho.validate().is_err());
        let odd = ModelSpec { input_size: 30, ..ModelSpec::default() };
        assert!(odd.validate().is_err());
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = small_spec();
        let params = init_params(&spec, 0).unwrap().zeros_like();
        let (logits, _) = forward(&params, &spec, &random_batch(3, 8, 1)).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_duplicates_logits() {
        let spec = small_spec();
        let params = init_params(&spec, 4).unwrap();
        let b = random_batch(3, 8, 2);
        let mut doubled = b.data().to_vec();
        doubled.extend_from_slice(b.data());
        let bb = Tensor::new(vec![6, 3, 8, 8], doubled).unwrap();
        let (l1, _) = forward(&params, &spec, &b).unwrap();
        let (l2, _) = forward(&params, &spec, &bb).unwrap();
        assert_eq!(&l2.data()[..21], l1.data());
        assert_eq!(&l2.data()[21..], l1.data());
    }

    #[test]
    fn identical_images_identical_rows() {
        let spec = small_spec();
        let params = init_params(&spec, 5).unwrap();
        let one = random_batch(1, 8, 3);
        let rep = Tensor::new(vec![4, 3, 8, 8], one.data().repeat(4)).unwrap();
        let (l, _) = forward(&params, &spec, &rep).unwrap();
        for i in 1..4 {
            assert_eq!(l.row(i), l.row(0));
        }
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let spec = small_spec();
        let mut params = init_params(&spec, 0).unwrap();
        params.insert("stage1.se.expand", Tensor::zeros(&[3, 8]));
        let err = forward(&params, &spec, &random_batch(1, 8, 0)).unwrap_err();
        assert!(err.to_string().contains("stage1.se.expand"), "{err}");
        let params = init_params(&spec, 0).unwrap();
        assert!(forward(&params, &spec, &random_batch(1, 16, 0)).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let spec = small_spec();
        let params = init_params(&spec, 1).unwrap();
        let (_, cache) = forward(&params, &spec, &random_batch(2, 8, 0)).unwrap();
        let g = backward(&params, &cache, &Tensor::zeros(&[2, 7])).unwrap();
        assert!(g.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let spec = small_spec();
        let mut params = init_params(&spec, 1).unwrap();
        let (_, cache) = forward(&params, &spec, &random_batch(2, 8, 0)).unwrap();
        params.get_mut("head.fc.bias").unwrap().data_mut()[0] = 1.0;
        assert!(matches!(
            backward(&params, &cache, &Tensor::zeros(&[2, 7])),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn duplicated_batch_gives_same_mean_gradient() {
        let spec = small_spec();
        let params = init_params(&spec, 2).unwrap();
        let b = random_batch(2, 8, 9);
        let targets = vec![SoftLabel::one_hot(Class::Mel), SoftLabel::one_hot(Class::Df)];
        let grad_of = |batch: &Tensor, t: &[SoftLabel]| {
            let (logits, cache) = forward(&params, &spec, batch).unwrap();
            let (_, d) = softmax_cross_entropy(&logits, t).unwrap();
            backward(&params, &cache, &d).unwrap()
        };
        let g1 = grad_of(&b, &targets);
        let bb = Tensor::new(vec![4, 3, 8, 8], b.data().repeat(2)).unwrap();
        let g2 = grad_of(&bb, &targets.repeat(2));
        for ((_, a), (_, c)) in g1.iter().zip(g2.iter()) {
            for (x, y) in a.data().iter().zip(c.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }
}
