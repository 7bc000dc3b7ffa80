use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Domain, NetConfig, SegInput};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

/// Named parameter groups of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    EncContentX,
    EncContentY,
    EncStyleX,
    EncStyleY,
    DecX,
    DecY,
    CriticX,
    CriticY,
    ContentDisc,
    SegHead,
}

impl Group {
    pub const ALL: [Group; 10] = [
        Group::EncContentX,
        Group::EncContentY,
        Group::EncStyleX,
        Group::EncStyleY,
        Group::DecX,
        Group::DecY,
        Group::CriticX,
        Group::CriticY,
        Group::ContentDisc,
        Group::SegHead,
    ];

    /// Encoders and decoders, the groups updated on the total objective.
    pub const GENERATORS: [Group; 6] = [
        Group::EncContentX,
        Group::EncContentY,
        Group::EncStyleX,
        Group::EncStyleY,
        Group::DecX,
        Group::DecY,
    ];

    pub const CRITICS: [Group; 2] = [Group::CriticX, Group::CriticY];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::EncContentX => "enc_content_X",
            Group::EncContentY => "enc_content_Y",
            Group::EncStyleX => "enc_style_X",
            Group::EncStyleY => "enc_style_Y",
            Group::DecX => "dec_X",
            Group::DecY => "dec_Y",
            Group::CriticX => "critic_X",
            Group::CriticY => "critic_Y",
            Group::ContentDisc => "content_disc",
            Group::SegHead => "seg_head",
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.as_str() == s)
    }

    pub fn content_encoder(d: Domain) -> Group {
        match d {
            Domain::X => Group::EncContentX,
            Domain::Y => Group::EncContentY,
        }
    }

    pub fn style_encoder(d: Domain) -> Group {
        match d {
            Domain::X => Group::EncStyleX,
            Domain::Y => Group::EncStyleY,
        }
    }

    pub fn decoder(d: Domain) -> Group {
        match d {
            Domain::X => Group::DecX,
            Domain::Y => Group::DecY,
        }
    }

    pub fn critic(d: Domain) -> Group {
        match d {
            Domain::X => Group::CriticX,
            Domain::Y => Group::CriticY,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of one network, keyed by layer-qualified name.
#[derive(Debug, Clone, Default)]
pub struct ParamGroup {
    params: BTreeMap<String, Tensor>,
}

impl ParamGroup {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }
}

/// Truncated normal (cut at two standard deviations) parameter initializer.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    std: f64,
    dtype: DType,
}

impl Init {
    pub(crate) fn new(seed: u64, std: f64, dtype: DType) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("positive std"),
            std,
            dtype,
        }
    }

    fn sample(&mut self) -> f64 {
        loop {
            let v = self.normal.sample(&mut self.rng);
            if v.abs() <= 2.0 * self.std {
                return v;
            }
        }
    }

    pub(crate) fn normal(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.sample()).collect();
        Tensor::parameter(data, shape, self.dtype).expect("valid shape")
    }

    pub(crate) fn constant(&self, shape: &[usize], v: f64) -> Tensor {
        Tensor::parameter(vec![v; shape.iter().product()], shape, self.dtype).expect("valid shape")
    }
}

/// Builder helpers that register layer parameters under a prefix.
pub(crate) struct GroupBuilder<'a> {
    pub(crate) group: ParamGroup,
    pub(crate) init: &'a mut Init,
}

impl GroupBuilder<'_> {
    pub(crate) fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) {
        let w = self.init.normal(&[c_out, c_in, k, k, k]);
        let b = self.init.constant(&[c_out], 0.0);
        self.group.insert(format!("{name}.weight"), w);
        self.group.insert(format!("{name}.bias"), b);
    }

    pub(crate) fn linear(&mut self, name: &str, d_in: usize, d_out: usize) {
        let w = self.init.normal(&[d_in, d_out]);
        let b = self.init.constant(&[d_out], 0.0);
        self.group.insert(format!("{name}.weight"), w);
        self.group.insert(format!("{name}.bias"), b);
    }
}

/// The full parameter set: six translation networks, two domain critics,
/// the content discriminator and the segmentation head.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: NetConfig,
    groups: BTreeMap<Group, ParamGroup>,
}

impl ModelBundle {
    /// Deterministically initializes every group from `seed`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut groups = BTreeMap::new();
        for (i, g) in Group::ALL.into_iter().enumerate() {
            let mut init = Init::new(
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1),
                config.init_std,
                config.dtype,
            );
            let mut b = GroupBuilder {
                group: ParamGroup::default(),
                init: &mut init,
            };
            match g {
                Group::EncContentX | Group::EncContentY => super::encoders::build_content(&mut b, &config),
                Group::EncStyleX | Group::EncStyleY => super::encoders::build_style(&mut b, &config),
                Group::DecX | Group::DecY => super::decoder::build(&mut b, &config),
                Group::CriticX | Group::CriticY => super::critic::build_critic(&mut b, &config),
                Group::ContentDisc => super::critic::build_content_disc(&mut b, &config),
                Group::SegHead => {
                    let c_in = match config.seg_input {
                        SegInput::ContentCode => config.content_channels,
                        SegInput::ContentImage => 1,
                    };
                    super::segment::build(&mut b, &config, c_in)
                }
            }
            groups.insert(g, b.group);
        }
        Ok(ModelBundle { config, groups })
    }

    pub fn group(&self, g: Group) -> &ParamGroup {
        &self.groups[&g]
    }

    pub fn set_group(&mut self, g: Group, params: ParamGroup) {
        self.groups.insert(g, params);
    }

    /// All parameters with bundle-unique names `group/param`.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.groups
            .iter()
            .flat_map(|(g, p)| p.iter().map(move |(n, t)| (format!("{g}/{n}"), t.clone())))
            .collect()
    }

    pub fn parameters_of(&self, groups: &[Group]) -> Vec<(String, Tensor)> {
        groups
            .iter()
            .flat_map(|g| {
                self.group(*g)
                    .iter()
                    .map(move |(n, t)| (format!("{g}/{n}"), t.clone()))
            })
            .collect()
    }

    /// Replaces a parameter addressed by its `group/param` name.
    pub fn set_parameter(&mut self, full_name: &str, t: Tensor) -> Result<()> {
        let (g, name) = split_name(full_name)?;
        let group = self.groups.get_mut(&g).expect("all groups exist");
        group.get(name)?;
        group.insert(name, t);
        Ok(())
    }

    pub fn parameter(&self, full_name: &str) -> Result<&Tensor> {
        let (g, name) = split_name(full_name)?;
        self.group(g).get(name)
    }

    pub fn all_finite(&self) -> bool {
        self.groups.values().all(|p| p.iter().all(|(_, t)| t.is_finite()))
    }

    /// Bitwise equality of one group between two bundles.
    pub fn group_bit_eq(&self, other: &ModelBundle, g: Group) -> bool {
        let (a, b) = (self.group(g), other.group(g));
        a.len() == b.len()
            && a.iter().zip(b.iter()).all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }

    pub fn dtype(&self) -> DType {
        self.config.dtype
    }

    /// Casts constant input data to the model precision.
    pub(crate) fn cast_input(&self, x: &Tensor) -> Tensor {
        if x.dtype() == self.config.dtype || x.requires_grad() {
            x.clone()
        } else {
            x.to_dtype(self.config.dtype)
        }
    }
}

pub(crate) fn split_name(full: &str) -> Result<(Group, &str)> {
    let (g, name) = full
        .split_once('/')
        .ok_or_else(|| Error::MissingParameter(full.to_string()))?;
    let g = Group::parse(g).ok_or_else(|| Error::MissingParameter(full.to_string()))?;
    Ok((g, name))
}
