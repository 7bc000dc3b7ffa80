//! The disentanglement model: content and style encoders per domain, decoders
//! conditioned on both codes, Wasserstein critics, a content discriminator,
//! and a densely connected segmentation head.
//!
//! Every network is a plain function of its [`ParamGroup`] and inputs; the
//! [`ModelBundle`] owns all groups and implements the [`Translator`],
//! [`Critic`] and [`ContentDiscriminator`] traits that the losses consume.

mod bundle;
pub mod checkpoint;
mod critic;
mod decoder;
mod encoders;
mod layers;
mod segment;

use std::fmt;
use std::str::FromStr;

pub use bundle::{Group, ModelBundle, ParamGroup};
pub use critic::{LinearCritic, MlpCritic};
pub use segment::dense_block_channels;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::X => "x",
            Domain::Y => "y",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Domain::X),
            "y" => Ok(Domain::Y),
            other => Err(Error::invalid(format!("unknown domain `{other}` (expected x or y)"))),
        }
    }
}

/// What the segmentation head consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegInput {
    /// The spatial content code straight from the content encoder.
    #[default]
    ContentCode,
    /// The content-only image decoded with a zero style vector.
    ContentImage,
}

impl FromStr for SegInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content_code" => Ok(SegInput::ContentCode),
            "content_image" => Ok(SegInput::ContentImage),
            other => Err(Error::invalid(format!("unknown seg input `{other}`"))),
        }
    }
}

impl fmt::Display for SegInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SegInput::ContentCode => "content_code",
            SegInput::ContentImage => "content_image",
        })
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Patch extents `(D, H, W)`; H and W must be divisible by 4.
    pub patch: [usize; 3],
    pub content_channels: usize,
    pub style_dim: usize,
    /// Base channel width; inner encoder/decoder layers use twice this.
    pub width: usize,
    pub res_blocks: usize,
    pub style_hidden: usize,
    pub growth: usize,
    pub dense_layers: usize,
    /// Channels after each dense-block transition.
    pub seg_transition: usize,
    /// Decoder output is `output_scale * tanh(h)`.
    pub output_scale: f64,
    pub leaky_slope: f64,
    pub norm_eps: f64,
    pub init_std: f64,
    pub seg_input: SegInput,
    pub dtype: DType,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            patch: [5, 32, 32],
            content_channels: 8,
            style_dim: 8,
            width: 8,
            res_blocks: 2,
            style_hidden: 32,
            growth: 4,
            dense_layers: 3,
            seg_transition: 8,
            output_scale: 4.0,
            leaky_slope: 0.2,
            norm_eps: 1e-5,
            init_std: 0.02,
            seg_input: SegInput::ContentCode,
            dtype: DType::F64,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let [d, h, w] = self.patch;
        if d == 0 || h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!(
                "patch {:?} must be positive with H and W divisible by 4",
                self.patch
            )));
        }
        let positive = [
            ("content_channels", self.content_channels),
            ("style_dim", self.style_dim),
            ("width", self.width),
            ("style_hidden", self.style_hidden),
            ("growth", self.growth),
            ("seg_transition", self.seg_transition),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.output_scale > 0.0) || !(self.init_std > 0.0) || !(self.norm_eps > 0.0) {
            return Err(Error::Config("output_scale, init_std and norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Shape of one batch of input patches.
    pub fn patch_shape(&self, n: usize) -> [usize; 5] {
        [n, 1, self.patch[0], self.patch[1], self.patch[2]]
    }

    /// Shape of the content code for a batch of `n` patches.
    pub fn content_shape(&self, n: usize) -> [usize; 5] {
        [
            n,
            self.content_channels,
            self.patch[0],
            self.patch[1] / 4,
            self.patch[2] / 4,
        ]
    }
}

/// Content code and style code of one batch.
#[derive(Debug, Clone)]
pub struct LatentPair {
    pub content: Tensor,
    pub style: Tensor,
}

/// Encoders and decoders of the two domains.
pub trait Translator {
    fn encode_content(&self, domain: Domain, x: &Tensor) -> Result<Tensor>;
    fn encode_style(&self, domain: Domain, x: &Tensor) -> Result<Tensor>;
    fn decode(&self, domain: Domain, content: &Tensor, style: &Tensor) -> Result<Tensor>;

    fn encode(&self, domain: Domain, x: &Tensor) -> Result<LatentPair> {
        Ok(LatentPair {
            content: self.encode_content(domain, x)?,
            style: self.encode_style(domain, x)?,
        })
    }
}

/// A per-domain Wasserstein critic returning one unbounded score per sample.
pub trait Critic {
    fn critic(&self, domain: Domain, image: &Tensor) -> Result<Tensor>;
}

/// Probability per sample that a content code came from domain X.
pub trait ContentDiscriminator {
    fn content_discriminate(&self, content: &Tensor) -> Result<Tensor>;
}

impl Translator for ModelBundle {
    fn encode_content(&self, domain: Domain, x: &Tensor) -> Result<Tensor> {
        let x = self.cast_input(x);
        self.check_patch(&x, "encode_content")?;
        encoders::content(self.group(Group::content_encoder(domain)), &self.config, &x)
    }

    fn encode_style(&self, domain: Domain, x: &Tensor) -> Result<Tensor> {
        let x = self.cast_input(x);
        self.check_patch(&x, "encode_style")?;
        encoders::style(self.group(Group::style_encoder(domain)), &x)
    }

    fn decode(&self, domain: Domain, content: &Tensor, style: &Tensor) -> Result<Tensor> {
        let n = content.shape().first().copied().unwrap_or(0);
        if content.shape() != self.config.content_shape(n) {
            return Err(Error::invalid(format!(
                "decode: content {:?} does not match {:?}",
                content.shape(),
                self.config.content_shape(n)
            )));
        }
        if style.shape() != [n, self.config.style_dim] {
            return Err(Error::invalid(format!(
                "decode: style {:?} does not match [{n}, {}]",
                style.shape(),
                self.config.style_dim
            )));
        }
        decoder::decode(
            self.group(Group::decoder(domain)),
            &self.config,
            &self.cast_input(content),
            &self.cast_input(style),
        )
    }
}

impl Critic for ModelBundle {
    fn critic(&self, domain: Domain, image: &Tensor) -> Result<Tensor> {
        let x = self.cast_input(image);
        self.check_patch(&x, "critic")?;
        critic::critic(self.group(Group::critic(domain)), &self.config, &x)
    }
}

impl ContentDiscriminator for ModelBundle {
    fn content_discriminate(&self, content: &Tensor) -> Result<Tensor> {
        let n = content.shape().first().copied().unwrap_or(0);
        if content.shape() != self.config.content_shape(n) {
            return Err(Error::invalid(format!(
                "content_discriminate: content {:?} does not match {:?}",
                content.shape(),
                self.config.content_shape(n)
            )));
        }
        critic::content_disc(self.group(Group::ContentDisc), &self.config, &self.cast_input(content))
    }
}

impl ModelBundle {
    fn check_patch(&self, x: &Tensor, op: &str) -> Result<()> {
        let n = x.shape().first().copied().unwrap_or(0);
        if x.rank() != 5 || n == 0 || x.shape() != self.config.patch_shape(n) {
            return Err(Error::invalid(format!(
                "{op}: input {:?} does not match patch shape [N, 1, {}, {}, {}]",
                x.shape(),
                self.config.patch[0],
                self.config.patch[1],
                self.config.patch[2]
            )));
        }
        Ok(())
    }

    /// Decodes a content code with the zero style vector through the
    /// domain-X decoder, giving the content-only image.
    pub fn content_only_image(&self, content: &Tensor) -> Result<Tensor> {
        let n = content.shape()[0];
        let zero = Tensor::zeros(&[n, self.config.style_dim]);
        self.decode(Domain::X, content, &zero)
    }

    /// Segmentation logits `[N, 2, D, H, W]` from a content code (or, with
    /// [`SegInput::ContentImage`], from the content-only image it decodes to).
    pub fn segment(&self, content: &Tensor) -> Result<Tensor> {
        let n = content.shape().first().copied().unwrap_or(0);
        if content.shape() != self.config.content_shape(n) {
            return Err(Error::invalid(format!(
                "segment: content {:?} does not match {:?}",
                content.shape(),
                self.config.content_shape(n)
            )));
        }
        let input = match self.config.seg_input {
            SegInput::ContentCode => self.cast_input(content),
            SegInput::ContentImage => self.content_only_image(content)?,
        };
        segment::segment(self.group(Group::SegHead), &self.config, &input)
    }
}
