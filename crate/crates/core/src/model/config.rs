//! Model configs, their defaults, and seeded parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::LocationAttentionConfig;
use crate::error::{Error, Result};
use crate::nn::{init_param, Init, ParamStore, Scalar};

fn c1() -> usize {
    1
}
fn c2() -> usize {
    2
}
fn c3() -> usize {
    3
}
fn c4() -> usize {
    4
}
fn c5() -> usize {
    5
}
fn c64() -> usize {
    64
}
fn c128() -> usize {
    128
}
fn half() -> f64 {
    0.5
}
fn tenth() -> f64 {
    0.1
}

/// Attention flavor for the recurrent decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    #[default]
    Location,
    Forward,
    ForwardTa,
}

/// A per-utterance speaker vector (x-vector style), consumed as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub data: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty speaker embedding".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("speaker embedding".into()));
        }
        Ok(SpeakerEmbedding { data })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tacotron2Config {
    pub vocab_size: usize,
    pub n_mels: usize,
    #[serde(default = "c64")]
    pub embedding_dim: usize,
    #[serde(default = "c1")]
    pub encoder_layers: usize,
    /// Per-direction BLSTM width; encoder output is twice this.
    #[serde(default = "c64")]
    pub encoder_units: usize,
    #[serde(default = "c2")]
    pub decoder_layers: usize,
    #[serde(default = "c64")]
    pub decoder_units: usize,
    #[serde(default = "c2")]
    pub prenet_layers: usize,
    #[serde(default = "c64")]
    pub prenet_units: usize,
    #[serde(default = "half")]
    pub prenet_dropout: f64,
    #[serde(default = "c3")]
    pub postnet_layers: usize,
    #[serde(default = "c64")]
    pub postnet_channels: usize,
    #[serde(default = "c5")]
    pub postnet_kernel: usize,
    #[serde(default = "c64")]
    pub attention_dim: usize,
    #[serde(default)]
    pub attention: AttentionKind,
    #[serde(default)]
    pub location: LocationAttentionConfig,
    /// Frames emitted per decoder step.
    #[serde(default = "c1")]
    pub reduction: usize,
    #[serde(default)]
    pub spk_dim: Option<usize>,
}

impl Tacotron2Config {
    /// Encoder output width.
    pub fn enc_dim(&self) -> usize {
        2 * self.encoder_units
    }

    /// What the decoder consumes per step next to the context vector.
    pub(crate) fn prenet_out(&self) -> usize {
        if self.prenet_layers == 0 {
            self.n_mels
        } else {
            self.prenet_units
        }
    }

    /// A few thousand parameters; fits a finite-difference gradient check.
    pub fn micro(vocab_size: usize, n_mels: usize) -> Self {
        Tacotron2Config {
            vocab_size,
            n_mels,
            embedding_dim: 8,
            encoder_layers: 1,
            encoder_units: 8,
            decoder_layers: 1,
            decoder_units: 12,
            prenet_layers: 1,
            prenet_units: 8,
            prenet_dropout: 0.5,
            postnet_layers: 2,
            postnet_channels: 6,
            postnet_kernel: 3,
            attention_dim: 8,
            attention: AttentionKind::Location,
            location: LocationAttentionConfig {
                conv_channels: 2,
                kernel_width: 3,
            },
            reduction: 1,
            spk_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.n_mels,
            self.embedding_dim,
            self.encoder_layers,
            self.encoder_units,
            self.decoder_layers,
            self.decoder_units,
            self.attention_dim,
            self.reduction,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("tacotron2: size fields must be nonzero".into()));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::Config(format!(
                "tacotron2: prenet_dropout {} outside [0,1)",
                self.prenet_dropout
            )));
        }
        if self.prenet_layers > 0 && self.prenet_units == 0 {
            return Err(Error::Config("tacotron2: prenet_units must be nonzero".into()));
        }
        if self.postnet_layers > 0 {
            if self.postnet_channels == 0 {
                return Err(Error::Config("tacotron2: postnet_channels must be nonzero".into()));
            }
            if self.postnet_kernel % 2 == 0 {
                return Err(Error::Config(format!(
                    "tacotron2: postnet_kernel {} must be odd",
                    self.postnet_kernel
                )));
            }
        }
        if self.spk_dim == Some(0) {
            return Err(Error::Config("tacotron2: spk_dim must be nonzero".into()));
        }
        self.location.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerTtsConfig {
    pub vocab_size: usize,
    pub n_mels: usize,
    #[serde(default = "c3")]
    pub encoder_layers: usize,
    #[serde(default = "c3")]
    pub decoder_layers: usize,
    #[serde(default = "c64")]
    pub model_dim: usize,
    #[serde(default = "c4")]
    pub heads: usize,
    #[serde(default = "c128")]
    pub ff_dim: usize,
    #[serde(default = "tenth")]
    pub dropout: f64,
    #[serde(default = "c2")]
    pub prenet_layers: usize,
    #[serde(default = "c64")]
    pub prenet_units: usize,
    #[serde(default = "half")]
    pub prenet_dropout: f64,
    #[serde(default = "c3")]
    pub postnet_layers: usize,
    #[serde(default = "c64")]
    pub postnet_channels: usize,
    #[serde(default = "c5")]
    pub postnet_kernel: usize,
    #[serde(default = "c1")]
    pub reduction: usize,
    #[serde(default)]
    pub spk_dim: Option<usize>,
}

impl TransformerTtsConfig {
    pub(crate) fn prenet_out(&self) -> usize {
        if self.prenet_layers == 0 {
            self.n_mels
        } else {
            self.prenet_units
        }
    }

    pub fn micro(vocab_size: usize, n_mels: usize) -> Self {
        TransformerTtsConfig {
            vocab_size,
            n_mels,
            encoder_layers: 1,
            decoder_layers: 1,
            model_dim: 12,
            heads: 2,
            ff_dim: 24,
            dropout: 0.1,
            prenet_layers: 1,
            prenet_units: 12,
            prenet_dropout: 0.5,
            postnet_layers: 1,
            postnet_channels: 6,
            postnet_kernel: 3,
            reduction: 1,
            spk_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.n_mels,
            self.encoder_layers,
            self.decoder_layers,
            self.model_dim,
            self.heads,
            self.ff_dim,
            self.reduction,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("transformer: size fields must be nonzero".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "transformer: heads {} must divide model_dim {}",
                self.heads, self.model_dim
            )));
        }
        for (what, p) in [("dropout", self.dropout), ("prenet_dropout", self.prenet_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "transformer: {} {} outside [0,1)",
                    what, p
                )));
            }
        }
        if self.prenet_layers > 0 && self.prenet_units == 0 {
            return Err(Error::Config("transformer: prenet_units must be nonzero".into()));
        }
        if self.postnet_layers > 0 && self.postnet_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "transformer: postnet_kernel {} must be odd",
                self.postnet_kernel
            )));
        }
        if self.postnet_layers > 0 && self.postnet_channels == 0 {
            return Err(Error::Config("transformer: postnet_channels must be nonzero".into()));
        }
        if self.spk_dim == Some(0) {
            return Err(Error::Config("transformer: spk_dim must be nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastSpeechConfig {
    pub vocab_size: usize,
    pub n_mels: usize,
    #[serde(default = "c2")]
    pub encoder_blocks: usize,
    #[serde(default = "c2")]
    pub decoder_blocks: usize,
    #[serde(default = "c64")]
    pub model_dim: usize,
    #[serde(default = "c2")]
    pub heads: usize,
    /// Kernel of the conv feed-forward inside each FFT block.
    #[serde(default = "c3")]
    pub ff_kernel: usize,
    #[serde(default = "c128")]
    pub ff_dim: usize,
    #[serde(default = "c2")]
    pub duration_layers: usize,
    #[serde(default = "c3")]
    pub duration_kernel: usize,
    #[serde(default = "c64")]
    pub duration_channels: usize,
    #[serde(default = "tenth")]
    pub dropout: f64,
    #[serde(default)]
    pub postnet: bool,
    #[serde(default = "c3")]
    pub postnet_layers: usize,
    #[serde(default = "c64")]
    pub postnet_channels: usize,
    #[serde(default = "c5")]
    pub postnet_kernel: usize,
    #[serde(default)]
    pub spk_dim: Option<usize>,
}

impl FastSpeechConfig {
    pub fn micro(vocab_size: usize, n_mels: usize) -> Self {
        FastSpeechConfig {
            vocab_size,
            n_mels,
            encoder_blocks: 1,
            decoder_blocks: 1,
            model_dim: 12,
            heads: 2,
            ff_kernel: 3,
            ff_dim: 12,
            duration_layers: 1,
            duration_kernel: 3,
            duration_channels: 8,
            dropout: 0.1,
            postnet: false,
            postnet_layers: 0,
            postnet_channels: 0,
            postnet_kernel: 3,
            spk_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.n_mels,
            self.encoder_blocks,
            self.decoder_blocks,
            self.model_dim,
            self.heads,
            self.ff_dim,
            self.duration_layers,
            self.duration_channels,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("fastspeech: size fields must be nonzero".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "fastspeech: heads {} must divide model_dim {}",
                self.heads, self.model_dim
            )));
        }
        for (what, k) in [("ff_kernel", self.ff_kernel), ("duration_kernel", self.duration_kernel)]
        {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!(
                    "fastspeech: {} {} must be odd",
                    what, k
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "fastspeech: dropout {} outside [0,1)",
                self.dropout
            )));
        }
        if self.postnet {
            if self.postnet_layers == 0 || self.postnet_channels == 0 {
                return Err(Error::Config(
                    "fastspeech: postnet enabled but layers/channels are zero".into(),
                ));
            }
            if self.postnet_kernel % 2 == 0 {
                return Err(Error::Config(format!(
                    "fastspeech: postnet_kernel {} must be odd",
                    self.postnet_kernel
                )));
            }
        }
        if self.spk_dim == Some(0) {
            return Err(Error::Config("fastspeech: spk_dim must be nonzero".into()));
        }
        Ok(())
    }
}

/// Which architecture a [`super::Model`] carries; serializes with a `model`
/// tag so checkpoints are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum ModelConfig {
    #[serde(rename = "tacotron2")]
    Tacotron2(Tacotron2Config),
    #[serde(rename = "transformer")]
    Transformer(TransformerTtsConfig),
    #[serde(rename = "fastspeech")]
    FastSpeech(FastSpeechConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Tacotron2(_) => "tacotron2",
            ModelConfig::Transformer(_) => "transformer",
            ModelConfig::FastSpeech(_) => "fastspeech",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Tacotron2(c) => c.validate(),
            ModelConfig::Transformer(c) => c.validate(),
            ModelConfig::FastSpeech(c) => c.validate(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            ModelConfig::Tacotron2(c) => c.vocab_size,
            ModelConfig::Transformer(c) => c.vocab_size,
            ModelConfig::FastSpeech(c) => c.vocab_size,
        }
    }

    pub fn n_mels(&self) -> usize {
        match self {
            ModelConfig::Tacotron2(c) => c.n_mels,
            ModelConfig::Transformer(c) => c.n_mels,
            ModelConfig::FastSpeech(c) => c.n_mels,
        }
    }

    pub fn reduction(&self) -> usize {
        match self {
            ModelConfig::Tacotron2(c) => c.reduction,
            ModelConfig::Transformer(c) => c.reduction,
            ModelConfig::FastSpeech(_) => 1,
        }
    }

    pub fn spk_dim(&self) -> Option<usize> {
        match self {
            ModelConfig::Tacotron2(c) => c.spk_dim,
            ModelConfig::Transformer(c) => c.spk_dim,
            ModelConfig::FastSpeech(c) => c.spk_dim,
        }
    }
}

/// One parameter's name, shape, and how to fill it.
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub(crate) fn glorot(name: impl Into<String>, shape: Vec<usize>) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            init: Init::Glorot,
        }
    }

    pub(crate) fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            init: Init::Zeros,
        }
    }

    pub(crate) fn ones(name: impl Into<String>, shape: Vec<usize>) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            init: Init::Ones,
        }
    }

    pub(crate) fn uniform(name: impl Into<String>, shape: Vec<usize>, limit: f64) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            init: Init::Uniform(limit),
        }
    }
}

/// The full parameter inventory a config implies. Doubles as the checkpoint
/// shape contract.
pub(crate) fn manifest(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    Ok(match config {
        ModelConfig::Tacotron2(c) => super::tacotron2::manifest(c),
        ModelConfig::Transformer(c) => super::transformer::manifest(c),
        ModelConfig::FastSpeech(c) => super::fastspeech::manifest(c),
    })
}

pub(crate) fn init_params<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParamStore<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in manifest(config)? {
        init_param(&mut store, &mut rng, &spec.name, spec.shape, spec.init)?;
    }
    Ok(store)
}

/// Shared layer-norm pair.
pub(crate) fn ln_specs(prefix: &str, dim: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::ones(format!("{prefix}.gain"), vec![1, dim]),
        ParamSpec::zeros(format!("{prefix}.bias"), vec![1, dim]),
    ]
}

/// Shared postnet conv stack: `layers` convs mapping n_mels→ch→…→n_mels.
pub(crate) fn postnet_specs(
    prefix: &str,
    layers: usize,
    channels: usize,
    kernel: usize,
    n_mels: usize,
) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for l in 0..layers {
        let cin = if l == 0 { n_mels } else { channels };
        let cout = if l + 1 == layers { n_mels } else { channels };
        out.push(ParamSpec::glorot(
            format!("{prefix}.{l}.conv"),
            vec![kernel * cin, cout],
        ));
        out.push(ParamSpec::zeros(format!("{prefix}.{l}.b"), vec![1, cout]));
    }
    out
}
