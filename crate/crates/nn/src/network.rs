//! Actor-critic network: a Conv3D feature extractor followed by a policy head
//! (softmax over meta-actions) and a value head.

use crate::conv::{col2im_add, conv_backward_from_col, conv_from_col, im2col, ConvGeometry};
use crate::error::{NnError, NnResult};
use crate::scalar::{axpy, dot, Scalar};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    /// (depth, height, width)
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvLayerSpec {
    pub fn new(out_channels: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    /// Observation shape (C, D, H, W).
    pub input: [usize; 4],
    pub convs: Vec<ConvLayerSpec>,
    pub feature_dim: usize,
    pub head_hidden: usize,
    pub n_actions: usize,
    /// One extractor feeding both heads; `false` gives actor and critic their own.
    pub shared_extractor: bool,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetworkSpec {
    fn table1(input: [usize; 4], strides: [[usize; 3]; 3], pads: [[usize; 3]; 3]) -> Self {
        let kernels = [(32, [1, 8, 8]), (64, [3, 4, 4]), (64, [3, 3, 3])];
        Self {
            input,
            convs: (0..3).map(|i| ConvLayerSpec::new(kernels[i].0, kernels[i].1, strides[i], pads[i])).collect(),
            feature_dim: 512,
            head_hidden: 256,
            n_actions: 5,
            shared_extractor: true,
        }
    }

    /// Full-size input (4, 10, 64, 512).
    pub fn paper() -> Self {
        Self::table1([4, 10, 64, 512], [[1, 4, 4], [2, 2, 2], [1, 2, 2]], [[0; 3]; 3])
    }

    /// Reduced input (4, 4, 16, 128); strides shrink the grid fast enough for CPU training.
    pub fn desk() -> Self {
        Self::table1([4, 4, 16, 128], [[1, 8, 8], [1, 2, 2], [1, 1, 2]], [[0, 0, 0], [0, 1, 0], [1, 1, 0]])
    }

    pub fn with_input(mut self, input: [usize; 4]) -> Self {
        self.input = input;
        self
    }

    /// Output shape (C, D, H, W) of every convolution, or an error naming the failing layer and axis.
    pub fn propagate(&self) -> NnResult<Vec<ConvGeometry>> {
        if self.input.iter().any(|&d| d == 0) {
            return Err(NnError::Shape(format!("input shape {:?} has an empty axis", self.input)));
        }
        if self.n_actions == 0 || self.feature_dim == 0 || self.head_hidden == 0 {
            return Err(NnError::Shape("dense layer widths must be >= 1".into()));
        }
        if self.convs.is_empty() {
            return Err(NnError::Shape("at least one convolution is required".into()));
        }
        let [mut c, d, h, w] = self.input;
        let mut dims = [d, h, w];
        let mut out = Vec::with_capacity(self.convs.len());
        for (i, l) in self.convs.iter().enumerate() {
            let g = ConvGeometry::new(c, dims, l.out_channels, l.kernel, l.stride, l.padding)
                .map_err(|e| NnError::Shape(format!("conv layer {}: {}", i + 1, e.to_string().trim_start_matches("shape error: "))))?;
            c = g.c_out;
            dims = g.out_dims;
            out.push(g);
        }
        Ok(out)
    }

    pub fn flat_dim(&self) -> NnResult<usize> {
        Ok(self.propagate()?.last().map(|g| g.output_len()).unwrap_or(0))
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// SHA-256 of the canonical JSON form of the layer layout.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_string(self).expect("specs always serialise");
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(json.as_bytes()));
        out
    }

    /// Multiply-accumulates of one forward pass.
    pub fn forward_macs(&self) -> NnResult<usize> {
        let geoms = self.propagate()?;
        let flat = geoms.last().unwrap().output_len();
        let trunk = geoms.iter().map(|g| g.macs()).sum::<usize>() + flat * self.feature_dim;
        let heads = self.feature_dim * self.head_hidden * 2 + self.head_hidden * (self.n_actions + 1);
        let n = if self.shared_extractor { 1 } else { 2 };
        Ok(trunk * n + heads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    /// (out, in), row-major.
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> Dense<S> {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Tensor::zeros(&[out, inp]),
            b: Tensor::zeros(&[out]),
        }
    }

    fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    fn forward(&self, x: &[S], y: &mut Vec<S>) {
        let n = self.in_dim();
        y.clear();
        y.extend(self.w.data().chunks_exact(n).zip(self.b.data()).map(|(row, b)| *b + dot(row, x)));
    }

    fn backward(&self, x: &[S], dy: &[S], grad: &mut Dense<S>, dx: Option<&mut [S]>) {
        let n = self.in_dim();
        for (o, &g) in dy.iter().enumerate() {
            if g == S::zero() {
                continue;
            }
            grad.b.data_mut()[o] += g;
            axpy(g, x, &mut grad.w.data_mut()[o * n..(o + 1) * n]);
        }
        if let Some(dx) = dx {
            dx.fill(S::zero());
            for (o, &g) in dy.iter().enumerate() {
                if g != S::zero() {
                    axpy(g, &self.w.data()[o * n..(o + 1) * n], dx);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<S> {
    /// (C_out, C_in, kD, kH, kW)
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extractor<S> {
    pub convs: Vec<Conv<S>>,
    pub fc: Dense<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head<S> {
    pub hidden: Dense<S>,
    pub out: Dense<S>,
}

/// All weights and biases, in declaration order: extractor(s) conv layers then FC,
/// actor head, critic head. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<S> {
    pub extractors: Vec<Extractor<S>>,
    pub actor: Head<S>,
    pub critic: Head<S>,
}

impl<S: Scalar> NetworkParams<S> {
    pub fn zeros(spec: &NetworkSpec) -> NnResult<Self> {
        let geoms = spec.propagate()?;
        let flat = geoms.last().unwrap().output_len();
        let extractor = || Extractor {
            convs: geoms
                .iter()
                .map(|g| Conv {
                    w: Tensor::zeros(&[g.c_out, g.c_in, g.kernel[0], g.kernel[1], g.kernel[2]]),
                    b: Tensor::zeros(&[g.c_out]),
                })
                .collect(),
            fc: Dense::zeros(spec.feature_dim, flat),
        };
        let n = if spec.shared_extractor { 1 } else { 2 };
        Ok(Self {
            extractors: (0..n).map(|_| extractor()).collect(),
            actor: Head {
                hidden: Dense::zeros(spec.head_hidden, spec.feature_dim),
                out: Dense::zeros(spec.n_actions, spec.head_hidden),
            },
            critic: Head {
                hidden: Dense::zeros(spec.head_hidden, spec.feature_dim),
                out: Dense::zeros(1, spec.head_hidden),
            },
        })
    }

    /// He-uniform weights (ReLU layers), a near-zero policy output layer and zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> NnResult<Self> {
        let mut p = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut Tensor<S>, gain: f64| {
            let fan_in: usize = t.shape()[1..].iter().product();
            let bound = gain * (6.0 / fan_in as f64).sqrt();
            for v in t.data_mut() {
                *v = S::from_f64_lossy(rng.random_range(-bound..bound));
            }
        };
        for e in &mut p.extractors {
            for c in &mut e.convs {
                fill(&mut c.w, 1.0);
            }
            fill(&mut e.fc.w, 1.0);
        }
        fill(&mut p.actor.hidden.w, 1.0);
        fill(&mut p.actor.out.w, 0.01);
        fill(&mut p.critic.hidden.w, 1.0);
        fill(&mut p.critic.out.w, 0.5);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(S::zero()));
        z
    }

    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for e in &self.extractors {
            for c in &e.convs {
                out.push(&c.w);
                out.push(&c.b);
            }
            out.push(&e.fc.w);
            out.push(&e.fc.b);
        }
        for h in [&self.actor, &self.critic] {
            out.extend([&h.hidden.w, &h.hidden.b, &h.out.w, &h.out.b]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for e in &mut self.extractors {
            for c in &mut e.convs {
                out.push(&mut c.w);
                out.push(&mut c.b);
            }
            out.push(&mut e.fc.w);
            out.push(&mut e.fc.b);
        }
        for h in [&mut self.actor, &mut self.critic] {
            out.extend([&mut h.hidden.w, &mut h.hidden.b, &mut h.out.w, &mut h.out.b]);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat parameter `i` in declaration order.
    pub fn get(&self, mut i: usize) -> S {
        for t in self.tensors() {
            if i < t.len() {
                return t.data()[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, v: S) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t.data_mut()[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn cast<T: Scalar>(&self) -> NetworkParams<T> {
        let cast_dense = |d: &Dense<S>| Dense { w: d.w.cast(), b: d.b.cast() };
        NetworkParams {
            extractors: self
                .extractors
                .iter()
                .map(|e| Extractor {
                    convs: e.convs.iter().map(|c| Conv { w: c.w.cast(), b: c.b.cast() }).collect(),
                    fc: cast_dense(&e.fc),
                })
                .collect(),
            actor: Head {
                hidden: cast_dense(&self.actor.hidden),
                out: cast_dense(&self.actor.out),
            },
            critic: Head {
                hidden: cast_dense(&self.critic.hidden),
                out: cast_dense(&self.critic.out),
            },
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.data()).map(|v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

#[derive(Debug, Clone)]
struct ExtractorCache<S> {
    cols: Vec<Vec<S>>,
    /// Post-ReLU output of every convolution.
    acts: Vec<Vec<S>>,
    /// Post-ReLU FC features.
    features: Vec<S>,
}

/// Activations of one forward pass, needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    extractors: Vec<ExtractorCache<S>>,
    actor_hidden: Vec<S>,
    critic_hidden: Vec<S>,
    pub logits: Vec<S>,
    pub probs: Vec<S>,
    pub value: S,
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let m = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z = e.iter().copied().sum::<S>();
    e.into_iter().map(|v| v / z).collect()
}

fn relu_in_place<S: Scalar>(v: &mut [S]) {
    v.iter_mut().for_each(|x| {
        if !(*x > S::zero()) {
            *x = S::zero()
        }
    });
}

fn mask_relu<S: Scalar>(grad: &mut [S], act: &[S]) {
    for (g, a) in grad.iter_mut().zip(act) {
        if !(*a > S::zero()) {
            *g = S::zero();
        }
    }
}

fn check_finite<S: Scalar>(v: &[S], layer: &str) -> NnResult<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite { layer: layer.to_string() })
    }
}

/// Architecture with precomputed layer geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    geoms: Vec<ConvGeometry>,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> NnResult<Self> {
        let geoms = spec.propagate()?;
        Ok(Self { spec, geoms })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn geometries(&self) -> &[ConvGeometry] {
        &self.geoms
    }

    fn check_params<S: Scalar>(&self, params: &NetworkParams<S>) -> NnResult<()> {
        let want = NetworkParams::<S>::zeros(&self.spec)?;
        let (a, b) = (want.tensors(), params.tensors());
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.shape() != y.shape()) {
            return Err(NnError::Protocol("parameter shapes do not match the network layout".into()));
        }
        Ok(())
    }

    fn extractor_forward<S: Scalar>(&self, e: &Extractor<S>, input: &[S], tag: &str) -> NnResult<ExtractorCache<S>> {
        let mut cols = Vec::with_capacity(self.geoms.len());
        let mut acts: Vec<Vec<S>> = Vec::with_capacity(self.geoms.len());
        for (l, (g, conv)) in self.geoms.iter().zip(&e.convs).enumerate() {
            let x = if l == 0 { input } else { &acts[l - 1] };
            let mut col = vec![S::zero(); g.patch_len() * g.positions()];
            im2col(g, x, &mut col);
            let mut y = vec![S::zero(); g.output_len()];
            conv_from_col(g, &col, conv.w.data(), conv.b.data(), &mut y);
            check_finite(&y, &format!("{tag}conv{}", l + 1))?;
            relu_in_place(&mut y);
            cols.push(col);
            acts.push(y);
        }
        let mut features = Vec::with_capacity(self.spec.feature_dim);
        e.fc.forward(acts.last().unwrap(), &mut features);
        check_finite(&features, &format!("{tag}fc"))?;
        relu_in_place(&mut features);
        Ok(ExtractorCache { cols, acts, features })
    }

    /// Action probabilities, value and the activation cache for `obs` laid out as (C, D, H, W).
    pub fn forward<S: Scalar>(&self, params: &NetworkParams<S>, obs: &[S]) -> NnResult<ForwardCache<S>> {
        if obs.len() != self.spec.input_len() {
            return Err(NnError::Shape(format!(
                "observation has {} values, network expects {:?} = {}",
                obs.len(),
                self.spec.input,
                self.spec.input_len()
            )));
        }
        if params.extractors.len() != if self.spec.shared_extractor { 1 } else { 2 } {
            return Err(NnError::Protocol("extractor count does not match the network layout".into()));
        }
        let extractors = params
            .extractors
            .iter()
            .enumerate()
            .map(|(i, e)| self.extractor_forward(e, obs, if params.extractors.len() == 1 { "" } else if i == 0 { "actor." } else { "critic." }))
            .collect::<NnResult<Vec<_>>>()?;
        let actor_in = &extractors[0].features;
        let critic_in = &extractors[extractors.len() - 1].features;
        let mut actor_hidden = Vec::new();
        params.actor.hidden.forward(actor_in, &mut actor_hidden);
        check_finite(&actor_hidden, "actor.hidden")?;
        relu_in_place(&mut actor_hidden);
        let mut logits = Vec::new();
        params.actor.out.forward(&actor_hidden, &mut logits);
        check_finite(&logits, "actor.out")?;
        let mut critic_hidden = Vec::new();
        params.critic.hidden.forward(critic_in, &mut critic_hidden);
        check_finite(&critic_hidden, "critic.hidden")?;
        relu_in_place(&mut critic_hidden);
        let mut value = Vec::new();
        params.critic.out.forward(&critic_hidden, &mut value);
        check_finite(&value, "critic.out")?;
        let probs = softmax(&logits);
        Ok(ForwardCache {
            extractors,
            actor_hidden,
            critic_hidden,
            logits,
            probs,
            value: value[0],
        })
    }

    fn extractor_backward<S: Scalar>(&self, e: &Extractor<S>, cache: &ExtractorCache<S>, dfeat: &[S], grad: &mut Extractor<S>) {
        let mut d = dfeat.to_vec();
        mask_relu(&mut d, &cache.features);
        let last = cache.acts.last().unwrap();
        let mut dact = vec![S::zero(); last.len()];
        e.fc.backward(last, &d, &mut grad.fc, Some(&mut dact));
        for l in (0..self.geoms.len()).rev() {
            let g = &self.geoms[l];
            mask_relu(&mut dact, &cache.acts[l]);
            let conv = &e.convs[l];
            let gc = &mut grad.convs[l];
            if l == 0 {
                conv_backward_from_col(g, &cache.cols[0], conv.w.data(), &dact, gc.w.data_mut(), gc.b.data_mut(), None);
            } else {
                let mut dcol = vec![S::zero(); cache.cols[l].len()];
                conv_backward_from_col(g, &cache.cols[l], conv.w.data(), &dact, gc.w.data_mut(), gc.b.data_mut(), Some(&mut dcol));
                let mut dprev = vec![S::zero(); g.input_len()];
                col2im_add(g, &dcol, &mut dprev);
                dact = dprev;
            }
        }
    }

    /// Accumulates into `grads` the gradient of a loss whose derivatives with respect to
    /// the logits and the value are `dlogits` and `dvalue`.
    pub fn backward<S: Scalar>(&self, params: &NetworkParams<S>, cache: &ForwardCache<S>, dlogits: &[S], dvalue: S, grads: &mut NetworkParams<S>) -> NnResult<()> {
        if dlogits.len() != self.spec.n_actions || cache.logits.len() != self.spec.n_actions {
            return Err(NnError::Protocol("logit gradient does not match the action count".into()));
        }
        if cache.extractors.len() != params.extractors.len() || grads.extractors.len() != params.extractors.len() {
            return Err(NnError::Protocol("cache was produced by a different network layout".into()));
        }
        if cache.extractors.iter().any(|c| c.cols.len() != self.geoms.len() || c.cols.iter().zip(&self.geoms).any(|(col, g)| col.len() != g.patch_len() * g.positions())) {
            return Err(NnError::Protocol("cache was produced by a different network layout".into()));
        }
        let fd = self.spec.feature_dim;
        let mut dh = vec![S::zero(); self.spec.head_hidden];
        let mut dfeat_actor = vec![S::zero(); fd];
        params.actor.out.backward(&cache.actor_hidden, dlogits, &mut grads.actor.out, Some(&mut dh));
        mask_relu(&mut dh, &cache.actor_hidden);
        params.actor.hidden.backward(&cache.extractors[0].features, &dh, &mut grads.actor.hidden, Some(&mut dfeat_actor));

        let critic_x = &cache.extractors[cache.extractors.len() - 1].features;
        let mut dfeat_critic = vec![S::zero(); fd];
        params.critic.out.backward(&cache.critic_hidden, &[dvalue], &mut grads.critic.out, Some(&mut dh));
        mask_relu(&mut dh, &cache.critic_hidden);
        params.critic.hidden.backward(critic_x, &dh, &mut grads.critic.hidden, Some(&mut dfeat_critic));

        if params.extractors.len() == 1 {
            for (a, c) in dfeat_actor.iter_mut().zip(&dfeat_critic) {
                *a += *c;
            }
            self.extractor_backward(&params.extractors[0], &cache.extractors[0], &dfeat_actor, &mut grads.extractors[0]);
        } else {
            let (ga, gc) = grads.extractors.split_at_mut(1);
            self.extractor_backward(&params.extractors[0], &cache.extractors[0], &dfeat_actor, &mut ga[0]);
            self.extractor_backward(&params.extractors[1], &cache.extractors[1], &dfeat_critic, &mut gc[0]);
        }
        Ok(())
    }

    /// Forward pass that also validates the parameter layout.
    pub fn forward_checked<S: Scalar>(&self, params: &NetworkParams<S>, obs: &[S]) -> NnResult<ForwardCache<S>> {
        self.check_params(params)?;
        self.forward(params, obs)
    }
}
