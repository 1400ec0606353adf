//! Layered choice spaces, architecture encoding, and analytic cost profiles.
//!
//! A [`SearchSpace`] has `L` searchable layers with `m` interchangeable
//! choice blocks each. Every choice block is a two-sublayer dense block
//! `d_in -> h -> d_out` where the hidden width is `h = ceil(r * d_out)` for the
//! block's hidden multiplier `r`. An optional dense stem maps the input
//! features to `widths[0]` and an optional dense head maps `widths[L]` to the
//! class logits; both are shared by every path. A space may add identity
//! skip connections around every block whose input and output widths match.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Elementwise nonlinearity applied to a block's hidden units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

/// A positive rational hidden-width multiplier, e.g. `3`, `1.5` or `3/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Multiplier(Ratio<u64>);

impl Multiplier {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if numer == 0 || denom == 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden multiplier must be positive, got {numer}/{denom}"
            )));
        }
        Ok(Multiplier(Ratio::new(numer, denom)))
    }

    pub fn integer(value: u64) -> Result<Self> {
        Self::new(value, 1)
    }

    /// `ceil(r * width)` computed exactly.
    pub fn hidden_width(self, width: usize) -> usize {
        let num = *self.0.numer() as u128 * width as u128;
        let den = *self.0.denom() as u128;
        num.div_ceil(den) as usize
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Multiplier {
    type Err = Error;

    /// Parses integers, fractions (`3/2`) and plain decimals (`1.5`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse multiplier `{s}`"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            return Self::new(n, d);
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 12 {
                return Err(bad());
            }
            let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
            let scale = 10u64.pow(frac.len() as u32);
            let frac: u64 = frac.parse().map_err(|_| bad())?;
            return Self::new(int * scale + frac, scale);
        }
        Self::integer(s.parse().map_err(|_| bad())?)
    }
}

impl Serialize for Multiplier {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Multiplier {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let text = match Raw::deserialize(deserializer)? {
            Raw::Int(v) => v.to_string(),
            // `{}` on f64 prints the shortest round-tripping decimal, so 1.1 stays 11/10.
            Raw::Float(v) => format!("{v}"),
            Raw::Text(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One choice block's operation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpDescriptor {
    pub id: usize,
    #[serde(rename = "mult")]
    pub hidden_multiplier: Multiplier,
    #[serde(rename = "act")]
    pub activation: Activation,
    #[serde(rename = "bn", default)]
    pub uses_batchnorm: bool,
}

impl OpDescriptor {
    pub fn new(id: usize, hidden_multiplier: Multiplier, activation: Activation, uses_batchnorm: bool) -> Self {
        OpDescriptor {
            id,
            hidden_multiplier,
            activation,
            uses_batchnorm,
        }
    }
}

/// The layered choice space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchSpace {
    input_dim: usize,
    num_classes: usize,
    widths: Vec<usize>,
    ops: Vec<Vec<OpDescriptor>>,
    stem: bool,
    head: bool,
    #[serde(default)]
    residual: bool,
}

/// Shape of one choice block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub batchnorm: bool,
    /// Output is `x + block(x)`.
    pub residual: bool,
}

impl BlockShape {
    pub fn params(&self) -> u64 {
        let (i, h, o) = (self.d_in as u64, self.hidden as u64, self.d_out as u64);
        let bn = if self.batchnorm { 2 * h } else { 0 };
        i * h + h + h * o + o + bn
    }

    pub fn mult_adds(&self) -> u64 {
        let (i, h, o) = (self.d_in as u64, self.hidden as u64, self.d_out as u64);
        i * h + h * o
    }
}

/// Analytic per-example cost of one path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Profile {
    pub params: u64,
    pub mult_adds: u64,
}

impl SearchSpace {
    /// Builds and validates a space.
    ///
    /// Without a stem the input dimension must equal `widths[0]`; without a
    /// head the class count must equal `widths[L]`.
    pub fn new(
        input_dim: usize,
        num_classes: usize,
        widths: Vec<usize>,
        ops: Vec<Vec<OpDescriptor>>,
        stem: bool,
        head: bool,
    ) -> Result<Self> {
        let space = SearchSpace {
            input_dim,
            num_classes,
            widths,
            ops,
            stem,
            head,
            residual: false,
        };
        space.check()?;
        Ok(space)
    }

    /// Adds identity skip connections around blocks with `d_in == d_out`.
    /// Skips carry no parameters and no multiply-adds.
    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    /// A space whose layers all offer the same list of operations.
    pub fn uniform(
        input_dim: usize,
        num_classes: usize,
        widths: Vec<usize>,
        layer_ops: &[(Multiplier, Activation, bool)],
    ) -> Result<Self> {
        let layers = widths.len().saturating_sub(1);
        let row: Vec<OpDescriptor> = layer_ops
            .iter()
            .enumerate()
            .map(|(j, &(r, act, bn))| OpDescriptor::new(j, r, act, bn))
            .collect();
        Self::new(input_dim, num_classes, widths, vec![row; layers], true, true)
    }

    fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpace(msg));
        if self.widths.is_empty() {
            return fail("widths must hold L+1 entries".into());
        }
        if self.widths.len() != self.ops.len() + 1 {
            return fail(format!(
                "widths has {} entries but there are {} layers",
                self.widths.len(),
                self.ops.len()
            ));
        }
        if self.widths.contains(&0) || self.input_dim == 0 || self.num_classes == 0 {
            return fail("all dimensions must be positive".into());
        }
        let m = self.ops.first().map_or(0, Vec::len);
        if !self.ops.is_empty() && m == 0 {
            return fail("each layer needs at least one choice".into());
        }
        for (l, row) in self.ops.iter().enumerate() {
            if row.len() != m {
                return fail(format!("layer {l} has {} choices, expected {m}", row.len()));
            }
            let mut ids: Vec<usize> = row.iter().map(|op| op.id).collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() != row.len() {
                return fail(format!("layer {l} has duplicate op ids"));
            }
        }
        if !self.stem && self.input_dim != self.widths[0] {
            return fail("without a stem, input_dim must equal widths[0]".into());
        }
        if !self.head && self.num_classes != *self.widths.last().unwrap() {
            return fail("without a head, classes must equal widths[L]".into());
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.ops.len()
    }

    /// Choices per layer; zero for a space without searchable layers.
    pub fn choices(&self) -> usize {
        self.ops.first().map_or(0, Vec::len)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn has_stem(&self) -> bool {
        self.stem
    }

    pub fn has_head(&self) -> bool {
        self.head
    }

    pub fn op(&self, layer: usize, choice: usize) -> &OpDescriptor {
        &self.ops[layer][choice]
    }

    pub fn op_table(&self) -> &[Vec<OpDescriptor>] {
        &self.ops
    }

    pub fn block_shape(&self, layer: usize, choice: usize) -> BlockShape {
        let op = self.op(layer, choice);
        let d_out = self.widths[layer + 1];
        BlockShape {
            d_in: self.widths[layer],
            hidden: op.hidden_multiplier.hidden_width(d_out),
            d_out,
            activation: op.activation,
            batchnorm: op.uses_batchnorm,
            residual: self.residual && self.widths[layer] == d_out,
        }
    }

    /// `(fan_in, fan_out)` of the stem, when present.
    pub fn stem_shape(&self) -> Option<(usize, usize)> {
        self.stem.then(|| (self.input_dim, self.widths[0]))
    }

    /// `(fan_in, fan_out)` of the head, when present.
    pub fn head_shape(&self) -> Option<(usize, usize)> {
        self.head.then(|| (*self.widths.last().unwrap(), self.num_classes))
    }

    pub fn uses_batchnorm(&self) -> bool {
        self.ops.iter().flatten().any(|op| op.uses_batchnorm)
    }

    /// Number of distinct architectures, `m^L`.
    pub fn count_architectures(&self) -> BigUint {
        BigUint::from(self.choices()).pow(self.num_layers() as u32)
    }

    /// Number of distinct unordered groups of `m` models that one strictly
    /// fair step can draw: `(m!)^(L-1)`.
    pub fn count_step_configurations(&self) -> BigUint {
        if self.num_layers() == 0 {
            return BigUint::one();
        }
        let m_fact: BigUint = (1..=self.choices() as u64).map(BigUint::from).product();
        m_fact.pow(self.num_layers() as u32 - 1)
    }

    /// True iff `arch` has length `L` and every index is below `m`.
    pub fn validate(&self, arch: &Architecture) -> bool {
        arch.len() == self.num_layers() && arch.iter().all(|c| c < self.choices())
    }

    pub fn check_arch(&self, arch: &Architecture) -> Result<()> {
        if arch.len() != self.num_layers() {
            return Err(Error::InvalidArchitecture {
                arch: arch.to_string(),
                reason: format!("expected {} layers, got {}", self.num_layers(), arch.len()),
            });
        }
        if let Some((l, c)) = arch.iter().enumerate().find(|&(_, c)| c >= self.choices()) {
            return Err(Error::InvalidArchitecture {
                arch: arch.to_string(),
                reason: format!("layer {l} choice {c} is not below {}", self.choices()),
            });
        }
        Ok(())
    }

    /// Parameters and per-example multiply-adds of the dense realization of
    /// `arch`, stem and head included. Activations are free; batch-norm adds
    /// its scale and shift to the parameter count only.
    pub fn profile(&self, arch: &Architecture) -> Result<Profile> {
        self.check_arch(arch)?;
        let mut p = Profile::default();
        for (fan_in, fan_out) in self.stem_shape().into_iter().chain(self.head_shape()) {
            p.params += (fan_in * fan_out + fan_out) as u64;
            p.mult_adds += (fan_in * fan_out) as u64;
        }
        for (l, c) in arch.iter().enumerate() {
            let shape = self.block_shape(l, c);
            p.params += shape.params();
            p.mult_adds += shape.mult_adds();
        }
        Ok(p)
    }

    /// Stable content hash, used to pair checkpoints with configurations.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("search space serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// The structured-text form of a search space.
///
/// `ops` may hold a single row, which is then shared by every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub layers: usize,
    pub choices: usize,
    pub widths: Vec<usize>,
    pub input_dim: usize,
    pub classes: usize,
    #[serde(default = "default_true")]
    pub stem: bool,
    #[serde(default = "default_true")]
    pub head: bool,
    #[serde(default)]
    pub residual: bool,
    pub ops: Vec<Vec<OpConfig>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpConfig {
    pub mult: Multiplier,
    pub act: Activation,
    #[serde(default)]
    pub bn: bool,
}

fn default_true() -> bool {
    true
}

impl TryFrom<&SpaceConfig> for SearchSpace {
    type Error = Error;

    fn try_from(cfg: &SpaceConfig) -> Result<Self> {
        let rows: Vec<&Vec<OpConfig>> = match cfg.ops.len() {
            1 => vec![&cfg.ops[0]; cfg.layers],
            n if n == cfg.layers => cfg.ops.iter().collect(),
            n => {
                return Err(Error::config(
                    "space.ops",
                    format!("expected 1 or {} rows, found {n}", cfg.layers),
                ))
            }
        };
        let mut ops = Vec::with_capacity(cfg.layers);
        for (l, row) in rows.into_iter().enumerate() {
            if row.len() != cfg.choices {
                return Err(Error::config(
                    format!("space.ops[{l}]"),
                    format!("expected {} choices, found {}", cfg.choices, row.len()),
                ));
            }
            ops.push(
                row.iter()
                    .enumerate()
                    .map(|(j, op)| OpDescriptor::new(j, op.mult, op.act, op.bn))
                    .collect(),
            );
        }
        if cfg.widths.len() != cfg.layers + 1 {
            return Err(Error::config(
                "space.widths",
                format!("expected {} entries, found {}", cfg.layers + 1, cfg.widths.len()),
            ));
        }
        SearchSpace::new(cfg.input_dim, cfg.classes, cfg.widths.clone(), ops, cfg.stem, cfg.head)
            .map(|s| s.with_residual(cfg.residual))
            .map_err(|e| Error::config("space", e.to_string()))
    }
}

impl From<&SearchSpace> for SpaceConfig {
    fn from(space: &SearchSpace) -> Self {
        SpaceConfig {
            layers: space.num_layers(),
            choices: space.choices(),
            widths: space.widths.clone(),
            input_dim: space.input_dim,
            classes: space.num_classes,
            stem: space.stem,
            head: space.head,
            residual: space.residual,
            ops: space
                .ops
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|op| OpConfig {
                            mult: op.hidden_multiplier,
                            act: op.activation,
                            bn: op.uses_batchnorm,
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// A path through the space: one choice index per layer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Architecture(Vec<usize>);

impl Architecture {
    pub fn new(choices: Vec<usize>) -> Self {
        Architecture(choices)
    }

    pub fn zeros(layers: usize) -> Self {
        Architecture(vec![0; layers])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn choice(&self, layer: usize) -> usize {
        self.0[layer]
    }

    pub fn set(&mut self, layer: usize, choice: usize) {
        self.0[layer] = choice;
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Number of layers where `self` and `other` differ.
    pub fn hamming(&self, other: &Architecture) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
            + self.0.len().abs_diff(other.0.len())
    }
}

impl From<Vec<usize>> for Architecture {
    fn from(v: Vec<usize>) -> Self {
        Architecture(v)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// Parses a comma-separated index list such as `0,1,0,2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Architecture(Vec::new()));
        }
        s.split(',')
            .map(|tok| {
                tok.trim().parse::<usize>().map_err(|_| Error::InvalidArchitecture {
                    arch: s.to_string(),
                    reason: format!("`{tok}` is not a choice index"),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Architecture)
    }
}

/// Iterates every architecture of an `m^L` space in lexicographic order.
pub fn enumerate_architectures(layers: usize, choices: usize) -> impl Iterator<Item = Architecture> {
    let total = if choices == 0 && layers > 0 {
        0
    } else {
        (choices as u128).pow(layers as u32)
    };
    (0..total).map(move |mut idx| {
        let mut v = vec![0; layers];
        for slot in v.iter_mut().rev() {
            *slot = (idx % choices as u128) as usize;
            idx /= choices as u128;
        }
        Architecture(v)
    })
}
