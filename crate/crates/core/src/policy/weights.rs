//! Network dimensions, parameter containers, initialization, and the `.fwt`
//! weight file mapping.

use crate::error::{Error, Result};
use crate::io::{expect_kind, f64_exact, Container};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

/// Architecture constants shared by the policy and the reconstruction
/// baselines: 3 stride-2 "same" 3x3 convolutions, a flattened feature map,
/// and two latent heads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub latent: usize,
    pub conv: [usize; 3],
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: 1,
            height: 48,
            width: 64,
            latent: 32,
            conv: [8, 16, 32],
            hidden: 64,
        }
    }
}

impl NetConfig {
    /// Spatial size of the last conv layer's feature maps: three stride-2
    /// halvings with ceil rounding (48x64 -> 6x8).
    pub fn feat_hw(&self) -> (usize, usize) {
        let half3 = |d: usize| d.div_ceil(2).div_ceil(2).div_ceil(2);
        (half3(self.height), half3(self.width))
    }

    pub fn flat_dim(&self) -> usize {
        let (fh, fw) = self.feat_hw();
        self.conv[2] * fh * fw
    }

    pub fn obs_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// One weight matrix/kernel and its bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPair {
    pub w: Tensor,
    pub b: Tensor,
}

impl LayerPair {
    pub(crate) fn zeros(w_shape: &[usize], out: usize) -> LayerPair {
        LayerPair {
            w: Tensor::zeros(w_shape),
            b: Tensor::zeros(&[out]),
        }
    }

    /// Gaussian weights with the given standard deviation, zero bias.
    pub(crate) fn init(rng: &mut ChaCha20Rng, w_shape: &[usize], out: usize, std: f64) -> LayerPair {
        let n: usize = w_shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                std * g
            })
            .collect();
        LayerPair {
            w: Tensor::new(w_shape.to_vec(), data).expect("shape matches count"),
            b: Tensor::zeros(&[out]),
        }
    }
}

/// Encoder parameters: conv stack plus mean/log-variance heads.  The same
/// structure backs the policy and the (variational) autoencoder baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub conv: [LayerPair; 3],
    pub mu: LayerPair,
    pub logvar: LayerPair,
}

impl EncoderWeights {
    pub fn zeros(net: &NetConfig) -> EncoderWeights {
        let [c1, c2, c3] = net.conv;
        EncoderWeights {
            conv: [
                LayerPair::zeros(&[c1, net.channels, 3, 3], c1),
                LayerPair::zeros(&[c2, c1, 3, 3], c2),
                LayerPair::zeros(&[c3, c2, 3, 3], c3),
            ],
            mu: LayerPair::zeros(&[net.latent, net.flat_dim()], net.latent),
            logvar: LayerPair::zeros(&[net.latent, net.flat_dim()], net.latent),
        }
    }

    /// He initialization for the ReLU conv stack, 1/sqrt(fan_in) for the
    /// linear heads, biases zero.
    pub fn init(net: &NetConfig, rng: &mut ChaCha20Rng) -> EncoderWeights {
        let [c1, c2, c3] = net.conv;
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let head = (1.0 / net.flat_dim() as f64).sqrt();
        EncoderWeights {
            conv: [
                LayerPair::init(rng, &[c1, net.channels, 3, 3], c1, he(net.channels * 9)),
                LayerPair::init(rng, &[c2, c1, 3, 3], c2, he(c1 * 9)),
                LayerPair::init(rng, &[c3, c2, 3, 3], c3, he(c2 * 9)),
            ],
            mu: LayerPair::init(rng, &[net.latent, net.flat_dim()], net.latent, head),
            logvar: LayerPair::init(rng, &[net.latent, net.flat_dim()], net.latent, head),
        }
    }

    pub(crate) fn layers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(10);
        for (i, lp) in self.conv.iter().enumerate() {
            out.push((format!("conv{}.w", i + 1), &lp.w));
            out.push((format!("conv{}.b", i + 1), &lp.b));
        }
        out.push(("mu.w".into(), &self.mu.w));
        out.push(("mu.b".into(), &self.mu.b));
        out.push(("logvar.w".into(), &self.logvar.w));
        out.push(("logvar.b".into(), &self.logvar.b));
        out
    }

    pub(crate) fn layers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::with_capacity(10);
        for (i, lp) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{}.w", i + 1), &mut lp.w));
            out.push((format!("conv{}.b", i + 1), &mut lp.b));
        }
        out.push(("mu.w".into(), &mut self.mu.w));
        out.push(("mu.b".into(), &mut self.mu.b));
        out.push(("logvar.w".into(), &mut self.logvar.w));
        out.push(("logvar.b".into(), &mut self.logvar.b));
        out
    }
}

/// Full policy parameters: encoder plus the two-layer action decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyWeights {
    pub net: NetConfig,
    pub beta: f64,
    pub seed: u64,
    pub enc: EncoderWeights,
    pub dec_hidden: LayerPair,
    pub dec_out: LayerPair,
}

impl PolicyWeights {
    pub fn zeros(net: NetConfig) -> PolicyWeights {
        let (dh, dl) = (net.hidden, net.latent);
        PolicyWeights {
            enc: EncoderWeights::zeros(&net),
            dec_hidden: LayerPair::zeros(&[dh, dl], dh),
            dec_out: LayerPair::zeros(&[2, dh], 2),
            net,
            beta: 0.0,
            seed: 0,
        }
    }

    pub fn init(net: NetConfig, beta: f64, seed: u64) -> PolicyWeights {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let enc = EncoderWeights::init(&net, &mut rng);
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let dec_hidden = LayerPair::init(&mut rng, &[net.hidden, net.latent], net.hidden, he(net.latent));
        let dec_out = LayerPair::init(
            &mut rng,
            &[2, net.hidden],
            2,
            (1.0 / net.hidden as f64).sqrt(),
        );
        PolicyWeights {
            net,
            beta,
            seed,
            enc,
            dec_hidden,
            dec_out,
        }
    }

    pub fn layers(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.enc.layers();
        out.push(("dec1.w".into(), &self.dec_hidden.w));
        out.push(("dec1.b".into(), &self.dec_hidden.b));
        out.push(("dec2.w".into(), &self.dec_out.w));
        out.push(("dec2.b".into(), &self.dec_out.b));
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.enc.layers_mut();
        out.push(("dec1.w".into(), &mut self.dec_hidden.w));
        out.push(("dec1.b".into(), &mut self.dec_hidden.b));
        out.push(("dec2.w".into(), &mut self.dec_out.w));
        out.push(("dec2.b".into(), &mut self.dec_out.b));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        c.push("version", 1);
        c.push("kind", "policy");
        push_net(&mut c, &self.net);
        c.push("beta", f64_exact(self.beta));
        c.push("seed", self.seed);
        push_layers(&mut c, &self.layers());
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<PolicyWeights> {
        let c = Container::read(path)?;
        expect_kind(&c, path, "policy")?;
        let net = read_net(&c, path)?;
        let mut out = PolicyWeights::zeros(net);
        out.beta = c.require_parsed(path, "beta")?;
        out.seed = c.require_parsed(path, "seed")?;
        read_layers(&c, path, &mut out.layers_mut())?;
        Ok(out)
    }
}

pub(crate) fn push_net(c: &mut Container, net: &NetConfig) {
    c.push("c", net.channels);
    c.push("h", net.height);
    c.push("w", net.width);
    c.push("d", net.latent);
    c.push(
        "conv",
        format!("{}/{}/{}", net.conv[0], net.conv[1], net.conv[2]),
    );
    c.push("hidden", net.hidden);
}

pub(crate) fn read_net(c: &Container, path: &Path) -> Result<NetConfig> {
    let conv_str = c.require(path, "conv")?;
    let parts: Vec<usize> = conv_str
        .split('/')
        .map(|p| p.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, format!("bad conv spec: {conv_str}")))?;
    if parts.len() != 3 {
        return Err(Error::format(path, "conv spec must have three stages"));
    }
    Ok(NetConfig {
        channels: c.require_parsed(path, "c")?,
        height: c.require_parsed(path, "h")?,
        width: c.require_parsed(path, "w")?,
        latent: c.require_parsed(path, "d")?,
        conv: [parts[0], parts[1], parts[2]],
        hidden: c.require_parsed(path, "hidden")?,
    })
}

/// Appends a `layers` manifest entry (name:dims, comma-separated) and the
/// tensors' values to the blob in declared order.
pub(crate) fn push_layers(c: &mut Container, layers: &[(String, &Tensor)]) {
    let spec = layers
        .iter()
        .map(|(name, t)| {
            let dims = t
                .shape()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("x");
            format!("{name}:{dims}")
        })
        .collect::<Vec<_>>()
        .join(",");
    c.push("layers", spec);
    for (_, t) in layers {
        c.blob.extend(t.data().iter().map(|&v| v as f32));
    }
}

/// Validates the declared layer list against the expected names/shapes and
/// fills the tensors from the blob.
pub(crate) fn read_layers(c: &Container, path: &Path, expected: &mut [(String, &mut Tensor)]) -> Result<()> {
    let spec = c.require(path, "layers")?;
    let declared: Vec<&str> = spec.split(',').collect();
    if declared.len() != expected.len() {
        return Err(Error::format(
            path,
            format!(
                "file declares {} layers, model needs {}",
                declared.len(),
                expected.len()
            ),
        ));
    }
    let mut offset = 0;
    for (decl, (name, tensor)) in declared.iter().zip(expected.iter_mut()) {
        let (dname, dims) = decl
            .split_once(':')
            .ok_or_else(|| Error::format(path, format!("bad layer spec: {decl}")))?;
        let shape: Vec<usize> = dims
            .split('x')
            .map(|p| p.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, format!("bad layer dims: {decl}")))?;
        if dname != name || shape != tensor.shape() {
            return Err(Error::format(
                path,
                format!(
                    "layer mismatch: file has {decl}, model expects {name}:{:?}",
                    tensor.shape()
                ),
            ));
        }
        let n = tensor.numel();
        let src = c
            .blob
            .get(offset..offset + n)
            .ok_or_else(|| Error::format(path, "blob shorter than declared layers"))?;
        for (dst, &v) in tensor.data_mut().iter_mut().zip(src) {
            *dst = v as f64;
        }
        offset += n;
    }
    if offset != c.blob.len() {
        return Err(Error::format(
            path,
            format!("blob has {} values, layers declare {offset}", c.blob.len()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_map_dims_follow_ceil_halving() {
        let net = NetConfig::default();
        assert_eq!(net.feat_hw(), (6, 8));
        assert_eq!(net.flat_dim(), 32 * 6 * 8);
        let odd = NetConfig {
            height: 50,
            width: 30,
            ..NetConfig::default()
        };
        assert_eq!(odd.feat_hw(), (7, 4));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = PolicyWeights::init(NetConfig::default(), 1e-3, 42);
        let b = PolicyWeights::init(NetConfig::default(), 1e-3, 42);
        assert_eq!(a, b);
        let c = PolicyWeights::init(NetConfig::default(), 1e-3, 43);
        assert_ne!(a.enc.conv[0].w, c.enc.conv[0].w);
    }

    #[test]
    fn fwt_round_trip_is_value_stable() {
        let w = PolicyWeights::init(NetConfig::default(), 1e-3, 9);
        let dir = std::env::temp_dir().join("fare-weights-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.fwt");
        w.save(&path).unwrap();
        let back = PolicyWeights::load(&path).unwrap();
        assert_eq!(back.net, w.net);
        assert_eq!(back.beta, w.beta);
        // Values pass through f32 storage; a second save is byte-identical.
        back.save(&path).unwrap();
        let twice = PolicyWeights::load(&path).unwrap();
        assert_eq!(back, twice);
        for ((_, a), (_, b)) in w.layers().iter().zip(twice.layers().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= x.abs() * 1e-6 + 1e-9);
            }
        }
    }

    #[test]
    fn load_rejects_wrong_kind() {
        let w = PolicyWeights::init(NetConfig::default(), 1e-3, 9);
        let dir = std::env::temp_dir().join("fare-weights-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("kind.fwt");
        let mut c = Container::new();
        c.push("version", 1);
        c.push("kind", "ae");
        push_net(&mut c, &w.net);
        c.push("beta", "0");
        c.push("seed", "0");
        push_layers(&mut c, &w.layers());
        c.write(&path).unwrap();
        assert!(PolicyWeights::load(&path).is_err());
    }
}
