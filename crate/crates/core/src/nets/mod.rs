//! Siamese probabilistic encoder, transformation decoder and classifier head.

mod checkpoint;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use params::{BoundParams, ParamStore};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::warp::ImageTensor;
use crate::xform::TransformSpec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 4.0;
pub const LOGVAR_BIAS_INIT: f64 = -4.0;
pub const DEFAULT_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub input_channels: usize,
    /// Side length of the square input.
    pub input_size: usize,
    /// Channel widths of the two trunk blocks.
    pub widths: [usize; 2],
    /// Side of the pooled grid the representation is read from.
    pub pool_grid: usize,
    pub decoder_hidden: usize,
    pub classifier_width: usize,
    /// Samples averaged by [`Model::downstream_rep`].
    pub n_samples: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_size: 32,
            widths: [32, 64],
            pool_grid: 1,
            decoder_hidden: 128,
            classifier_width: 64,
            n_samples: DEFAULT_SAMPLES,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("input_size", self.input_size),
            ("widths[0]", self.widths[0]),
            ("widths[1]", self.widths[1]),
            ("pool_grid", self.pool_grid),
            ("decoder_hidden", self.decoder_hidden),
            ("classifier_width", self.classifier_width),
            ("n_samples", self.n_samples),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("nets.{name} must be positive")));
        }
        if self.input_size % 4 != 0 || (self.input_size / 4) % self.pool_grid != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a multiple of 4 whose quarter is divisible by pool_grid {}",
                self.input_size, self.pool_grid
            )));
        }
        Ok(())
    }

    pub fn rep_dim(&self) -> usize {
        self.widths[1] * self.pool_grid * self.pool_grid
    }

    fn trunk_side(&self) -> usize {
        self.input_size / 4
    }
}

/// What the transformation decoder predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DecoderHead {
    /// Mean and log-variance of a diagonal normal over `dim` target entries.
    Gaussian {
        dim: usize,
    },
    Categorical {
        classes: usize,
    },
}

impl DecoderHead {
    pub fn for_spec(spec: &TransformSpec) -> Self {
        match spec {
            TransformSpec::Categorical(c) => DecoderHead::Categorical { classes: c.len() },
            other => DecoderHead::Gaussian { dim: other.target_dim() },
        }
    }

    pub fn out_width(&self) -> usize {
        match *self {
            DecoderHead::Gaussian { dim } => 2 * dim,
            DecoderHead::Categorical { classes } => classes,
        }
    }
}

/// Values of one probabilistic encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbRep {
    pub mean: Tensor,
    pub logvar: Tensor,
    pub sample: Tensor,
    pub eps: Tensor,
}

/// Graph handles of one probabilistic encoding.
#[derive(Debug, Clone)]
pub struct ProbVars {
    pub mean: Var,
    pub logvar: Var,
    pub sample: Var,
    pub eps: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub enum DecoderVars {
    Gaussian { mean: Var, logvar: Var },
    Categorical { logits: Var },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderOut {
    Gaussian { mean: Tensor, logvar: Tensor },
    Categorical { logits: Tensor },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Affine {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    trunk: [Affine; 4],
    logvar: Affine,
    dec_hidden: Affine,
    dec_out: Affine,
    cls_conv: Affine,
    cls_out: Affine,
}

/// Encoder, decoder and classifier parameters with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    pub head: DecoderHead,
    pub label_classes: usize,
    pub params: ParamStore,
    layout: Layout,
}

/// Uniform initialization on `±bound·sqrt(1/fan_in)`.
pub(crate) fn init_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
    let bound = gain * (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).expect("shape matches")
}

fn push_layer<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    w_shape: &[usize],
    gain: f64,
    bias: f64,
) -> Result<Affine> {
    // Conv weights are [out, in, kh, kw]; linear weights are [in, out].
    let (fan_in, out) =
        if w_shape.len() == 4 { (w_shape[1..].iter().product(), w_shape[0]) } else { (w_shape[0], w_shape[1]) };
    let w = store.push(format!("{name}.w"), init_uniform(rng, w_shape, fan_in, gain))?;
    let b = store.push(format!("{name}.b"), Tensor::full(&[out], bias))?;
    Ok(Affine { w, b })
}

pub(crate) const RELU_GAIN: f64 = 2.449_489_742_783_178; // sqrt(6)
pub(crate) const LINEAR_GAIN: f64 = 1.732_050_807_568_877_2; // sqrt(3)

impl Model {
    /// Fresh parameters drawn from `rng` in the fixed order encoder,
    /// decoder, classifier.
    pub fn new<R: Rng + ?Sized>(
        config: NetConfig,
        head: DecoderHead,
        label_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if head.out_width() == 0 || label_classes == 0 {
            return Err(Error::Config("decoder and classifier need at least one output".into()));
        }
        let [c1, c2] = config.widths;
        let c0 = config.input_channels;
        let d = config.rep_dim();
        let mut s = ParamStore::new();
        let trunk = [
            push_layer(&mut s, rng, "enc.conv1", &[c1, c0, 3, 3], RELU_GAIN, 0.0)?,
            push_layer(&mut s, rng, "enc.conv2", &[c1, c1, 3, 3], RELU_GAIN, 0.0)?,
            push_layer(&mut s, rng, "enc.conv3", &[c2, c1, 3, 3], RELU_GAIN, 0.0)?,
            push_layer(&mut s, rng, "enc.conv4", &[c2, c2, 3, 3], RELU_GAIN, 0.0)?,
        ];
        let logvar = push_layer(&mut s, rng, "enc.logvar", &[c2, c2, 1, 1], 0.1 * LINEAR_GAIN, LOGVAR_BIAS_INIT)?;
        let dec_hidden = push_layer(&mut s, rng, "dec.hidden", &[2 * d, config.decoder_hidden], RELU_GAIN, 0.0)?;
        let dec_out = push_layer(&mut s, rng, "dec.out", &[config.decoder_hidden, head.out_width()], LINEAR_GAIN, 0.0)?;
        let cls_conv = push_layer(&mut s, rng, "cls.conv", &[config.classifier_width, c2, 3, 3], RELU_GAIN, 0.0)?;
        let cls_out = push_layer(&mut s, rng, "cls.out", &[config.classifier_width, label_classes], LINEAR_GAIN, 0.0)?;
        Ok(Self {
            config,
            head,
            label_classes,
            params: s,
            layout: Layout { trunk, logvar, dec_hidden, dec_out, cls_conv, cls_out },
        })
    }

    pub fn rep_dim(&self) -> usize {
        self.config.rep_dim()
    }

    /// Copies every model parameter from `archive`, which may hold extra
    /// entries such as optimizer buffers.
    pub fn load_tensors(&mut self, archive: &ParamStore) -> Result<()> {
        let mut values = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.iter() {
            let src =
                archive.get(name).ok_or_else(|| Error::format(0, format!("checkpoint lacks parameter '{name}'")))?;
            if src.shape() != t.shape() {
                return Err(Error::format(
                    0,
                    format!("parameter '{name}' has shape {:?}, model expects {:?}", src.shape(), t.shape()),
                ));
            }
            values.push(src.clone());
        }
        self.params.tensors_mut().clone_from_slice(&values);
        Ok(())
    }

    /// Digest of the encoder parameters only.
    pub fn encoder_digest(&self) -> String {
        self.params.digest_where(|n| n.starts_with("enc."))
    }

    pub fn check_input(&self, dims: [usize; 4]) -> Result<()> {
        let want = [self.config.input_channels, self.config.input_size, self.config.input_size];
        if dims[1..] != want {
            return Err(Error::shape("encoder input", &want, &dims[1..]));
        }
        Ok(())
    }

    fn conv(g: &mut Graph, p: &BoundParams, x: Var, layer: Affine, stride: usize, pad: usize) -> Result<Var> {
        let y = g.conv2d(x, p.get(layer.w), stride, pad)?;
        let shape = g.shape(y).to_vec();
        let c = shape[1];
        let b = g.reshape(p.get(layer.b), &[1, c, 1, 1])?;
        let b = g.broadcast(b, &shape)?;
        g.add(y, b)
    }

    /// `x · W + b` for `x` of shape `[N, in]` and `W` of shape `[in, out]`.
    fn linear(g: &mut Graph, p: &BoundParams, x: Var, layer: Affine) -> Result<Var> {
        let y = g.matmul(x, p.get(layer.w))?;
        let shape = g.shape(y).to_vec();
        let b = g.reshape(p.get(layer.b), &[1, shape[1]])?;
        let b = g.broadcast(b, &shape)?;
        g.add(y, b)
    }

    /// Trunk features `[N, C2, S, S]` with `S = input_size / 4`.
    fn trunk(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let t = &self.layout.trunk;
        let mut h = x;
        for (layer, stride) in [(t[0], 2), (t[1], 1), (t[2], 2), (t[3], 1)] {
            let y = Self::conv(g, p, h, layer, stride, 1)?;
            h = g.relu(y);
        }
        Ok(h)
    }

    /// Mean and clamped log-variance, each `[N, D]`.
    pub fn encoder_forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<(Var, Var)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape("encoder input", &[0, 0, 0, 0], &shape));
        }
        self.check_input([shape[0], shape[1], shape[2], shape[3]])?;
        let n = shape[0];
        let d = self.rep_dim();
        let k = self.config.trunk_side() / self.config.pool_grid;
        let h = self.trunk(g, p, x)?;
        let pooled = g.avgpool2d(h, k)?;
        let mean = g.reshape(pooled, &[n, d])?;
        let lv = Self::conv(g, p, h, self.layout.logvar, 1, 0)?;
        let lv = g.avgpool2d(lv, k)?;
        let lv = g.reshape(lv, &[n, d])?;
        let logvar = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        Ok((mean, logvar))
    }

    /// `mean + exp(logvar / 2) ∘ eps`.
    pub fn reparameterize(g: &mut Graph, mean: Var, logvar: Var, eps: &Tensor) -> Result<Var> {
        if g.shape(mean) != eps.shape() {
            return Err(Error::shape("reparameterize", g.shape(mean), eps.shape()));
        }
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let e = g.constant(eps.clone());
        let noise = g.mul(std, e)?;
        g.add(mean, noise)
    }

    /// Standard normal draws of the representation shape for `n` images.
    pub fn draw_eps<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        let d = self.rep_dim();
        let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(&[n, d], data).expect("shape matches")
    }

    /// One encoder branch on the tape. `eps = None` draws fresh noise.
    pub fn encode_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        x: Var,
        eps: Option<Tensor>,
        rng: &mut R,
    ) -> Result<ProbVars> {
        let (mean, logvar) = self.encoder_forward(g, p, x)?;
        let n = g.shape(mean)[0];
        let eps = match eps {
            Some(e) => e,
            None => self.draw_eps(n, rng),
        };
        let sample = Self::reparameterize(g, mean, logvar, &eps)?;
        Ok(ProbVars { mean, logvar, sample, eps })
    }

    /// Decoder over `concat(z_tilde, z)`, original representation first.
    pub fn decode_graph(&self, g: &mut Graph, p: &BoundParams, z: Var, z_tilde: Var) -> Result<DecoderVars> {
        let d = self.rep_dim();
        for v in [z, z_tilde] {
            let s = g.shape(v);
            if s.len() != 2 || s[1] != d {
                return Err(Error::shape("decoder input", &[s.first().copied().unwrap_or(0), d], s));
            }
        }
        if g.shape(z)[0] != g.shape(z_tilde)[0] {
            return Err(Error::shape("decoder input", g.shape(z_tilde), g.shape(z)));
        }
        let x = g.concat(&[z_tilde, z], 1)?;
        let h = Self::linear(g, p, x, self.layout.dec_hidden)?;
        let h = g.relu(h);
        let out = Self::linear(g, p, h, self.layout.dec_out)?;
        Ok(match self.head {
            DecoderHead::Gaussian { dim } => {
                let mean = g.narrow(out, 1, 0, dim)?;
                let lv = g.narrow(out, 1, dim, dim)?;
                DecoderVars::Gaussian { mean, logvar: g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX) }
            }
            DecoderHead::Categorical { .. } => DecoderVars::Categorical { logits: out },
        })
    }

    /// Label log-probabilities `[N, classes]` from the original-image
    /// representation.
    pub fn classify_graph(&self, g: &mut Graph, p: &BoundParams, z_tilde: Var) -> Result<Var> {
        let s = g.shape(z_tilde).to_vec();
        if s.len() != 2 || s[1] != self.rep_dim() {
            return Err(Error::shape("classifier input", &[s.first().copied().unwrap_or(0), self.rep_dim()], &s));
        }
        let grid = self.config.pool_grid;
        let x = g.reshape(z_tilde, &[s[0], self.config.widths[1], grid, grid])?;
        let h = Self::conv(g, p, x, self.layout.cls_conv, 1, 1)?;
        let h = g.relu(h);
        let h = g.avgpool2d(h, grid)?;
        let h = g.reshape(h, &[s[0], self.config.classifier_width])?;
        let logits = Self::linear(g, p, h, self.layout.cls_out)?;
        g.log_softmax(logits)
    }

    pub fn encode<R: Rng + ?Sized>(&self, img: &ImageTensor, eps: Option<&Tensor>, rng: &mut R) -> Result<ProbRep> {
        self.check_input(img.dims())?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(img.to_tensor());
        let v = self.encode_graph(&mut g, &p, x, eps.cloned(), rng)?;
        Ok(ProbRep {
            mean: g.value(v.mean).clone(),
            logvar: g.value(v.logvar).clone(),
            sample: g.value(v.sample).clone(),
            eps: v.eps,
        })
    }

    pub fn decode_transformation(&self, z: &Tensor, z_tilde: &Tensor) -> Result<DecoderOut> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let (zv, ztv) = (g.constant(z.clone()), g.constant(z_tilde.clone()));
        Ok(match self.decode_graph(&mut g, &p, zv, ztv)? {
            DecoderVars::Gaussian { mean, logvar } => {
                DecoderOut::Gaussian { mean: g.value(mean).clone(), logvar: g.value(logvar).clone() }
            }
            DecoderVars::Categorical { logits } => DecoderOut::Categorical { logits: g.value(logits).clone() },
        })
    }

    pub fn classify(&self, z_tilde: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let z = g.constant(z_tilde.clone());
        let out = self.classify_graph(&mut g, &p, z)?;
        Ok(g.value(out).clone())
    }

    /// Average of `n_samples` reparameterized samples per image, `[N, D]`.
    pub fn downstream_rep<R: Rng + ?Sized>(&self, img: &ImageTensor, n_samples: usize, rng: &mut R) -> Result<Tensor> {
        if n_samples == 0 {
            return Err(Error::Contract("downstream_rep needs at least one sample".into()));
        }
        self.check_input(img.dims())?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(img.to_tensor());
        let (mean, logvar) = self.encoder_forward(&mut g, &p, x)?;
        let (mean, logvar) = (g.value(mean), g.value(logvar));
        let n = mean.shape()[0];
        let std: Vec<f64> = logvar.data().iter().map(|lv| (0.5 * lv).exp()).collect();
        let mut acc = vec![0.0; mean.len()];
        for _ in 0..n_samples {
            let eps = self.draw_eps(n, rng);
            for (i, a) in acc.iter_mut().enumerate() {
                *a += mean.data()[i] + std[i] * eps.data()[i];
            }
        }
        let inv = 1.0 / n_samples as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Tensor::new(mean.shape(), acc)
    }
}
