use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Conv kernel side length for `conv-lite-classifier`.
pub const CONV_KERNEL: usize = 3;
/// Zero padding around each conv plane (keeps spatial size).
pub const CONV_PADDING: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// flatten → (dense → relu)* → dense
    MlpClassifier,
    /// 3×3 conv → relu → flatten → (dense → relu)* → dense
    ConvLiteClassifier,
    /// frozen embedding → mean-pool → (dense → relu)* → dense
    EmbedClassifier,
    /// frozen embedding → zero-padded causal prefix window → (dense → relu)* → dense, per position
    EmbedLm,
}

impl ModelKind {
    pub fn is_text(self) -> bool {
        matches!(self, ModelKind::EmbedClassifier | ModelKind::EmbedLm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum InputShape {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Tokens {
        seq_len: usize,
        vocab: usize,
    },
}

impl InputShape {
    /// Number of scalars in one input: pixels, or token positions.
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            InputShape::Tokens { seq_len, .. } => seq_len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Frozen token embedding, drawn from `N(0, 1/dim)` with its own seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub dim: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetModelSpec {
    pub kind: ModelKind,
    /// Hidden dense widths; for `conv-lite-classifier` the first entry is the
    /// number of conv output channels.
    pub layer_dims: Vec<usize>,
    pub input: InputShape,
    /// Output classes; equals the vocabulary size for `embed-lm`.
    pub num_classes: usize,
    pub embedding: Option<EmbeddingSpec>,
}

impl TargetModelSpec {
    pub fn mlp(hidden: Vec<usize>, channels: usize, height: usize, width: usize, num_classes: usize) -> Self {
        TargetModelSpec {
            kind: ModelKind::MlpClassifier,
            layer_dims: hidden,
            input: InputShape::Image {
                channels,
                height,
                width,
            },
            num_classes,
            embedding: None,
        }
    }

    pub fn conv_lite(conv_channels: usize, channels: usize, height: usize, width: usize, num_classes: usize) -> Self {
        TargetModelSpec {
            kind: ModelKind::ConvLiteClassifier,
            layer_dims: vec![conv_channels],
            input: InputShape::Image {
                channels,
                height,
                width,
            },
            num_classes,
            embedding: None,
        }
    }

    pub fn embed_classifier(
        hidden: Vec<usize>,
        seq_len: usize,
        vocab: usize,
        embedding: EmbeddingSpec,
        num_classes: usize,
    ) -> Self {
        TargetModelSpec {
            kind: ModelKind::EmbedClassifier,
            layer_dims: hidden,
            input: InputShape::Tokens { seq_len, vocab },
            num_classes,
            embedding: Some(embedding),
        }
    }

    pub fn embed_lm(hidden: Vec<usize>, seq_len: usize, vocab: usize, embedding: EmbeddingSpec) -> Self {
        TargetModelSpec {
            kind: ModelKind::EmbedLm,
            layer_dims: hidden,
            input: InputShape::Tokens { seq_len, vocab },
            num_classes: vocab,
            embedding: Some(embedding),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("model spec: {m}")));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.layer_dims.contains(&0) {
            return bad("layer dims must be positive");
        }
        if self.input.is_empty() {
            return bad("input shape must be non-empty");
        }
        match (self.kind, self.input) {
            (ModelKind::MlpClassifier | ModelKind::ConvLiteClassifier, InputShape::Image { .. }) => {
                if self.embedding.is_some() {
                    return bad("vision models take no embedding table");
                }
            }
            (ModelKind::EmbedClassifier | ModelKind::EmbedLm, InputShape::Tokens { vocab, .. }) => {
                match self.embedding {
                    Some(e) if e.dim > 0 => {}
                    _ => return bad("text models need an embedding table with dim > 0"),
                }
                if vocab == 0 {
                    return bad("vocab must be positive");
                }
                if self.kind == ModelKind::EmbedLm && self.num_classes != vocab {
                    return bad("embed-lm predicts over the vocabulary: num_classes must equal vocab");
                }
            }
            _ => return bad("input shape does not match model kind"),
        }
        if self.kind == ModelKind::ConvLiteClassifier && self.layer_dims.is_empty() {
            return bad("conv-lite needs the conv channel count as first layer dim");
        }
        if matches!(self.kind, ModelKind::EmbedClassifier | ModelKind::EmbedLm) && self.layer_dims.is_empty() {
            return bad("text models need at least one hidden layer");
        }
        Ok(())
    }
}

/// Location of one dense layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct DenseBlock {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub weight: usize,
    pub bias: usize,
}

impl ConvBlock {
    pub fn outputs(&self) -> usize {
        self.out_channels * self.height * self.width
    }
}

/// A validated model spec with its parameter layout and materialized embedding.
#[derive(Clone, Debug)]
pub struct TargetModel {
    spec: TargetModelSpec,
    pub(crate) conv: Option<ConvBlock>,
    pub(crate) dense: Vec<DenseBlock>,
    pub(crate) embedding: Option<Vec<f64>>,
    num_params: usize,
}

impl TargetModel {
    pub fn new(spec: TargetModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut offset = 0;
        let mut conv = None;
        let mut hidden: &[usize] = &spec.layer_dims;
        let features = match (spec.kind, spec.input) {
            (ModelKind::MlpClassifier, shape) => shape.len(),
            (
                ModelKind::ConvLiteClassifier,
                InputShape::Image {
                    channels,
                    height,
                    width,
                },
            ) => {
                let block = ConvBlock {
                    in_channels: channels,
                    out_channels: hidden[0],
                    height,
                    width,
                    weight: 0,
                    bias: hidden[0] * channels * CONV_KERNEL * CONV_KERNEL,
                };
                offset = block.bias + block.out_channels;
                hidden = &hidden[1..];
                conv = Some(block);
                block.outputs()
            }
            (ModelKind::EmbedClassifier, _) => spec.embedding.map(|e| e.dim).unwrap_or(0),
            (ModelKind::EmbedLm, InputShape::Tokens { seq_len, .. }) => {
                seq_len * spec.embedding.map(|e| e.dim).unwrap_or(0)
            }
            _ => unreachable!("validated above"),
        };
        let mut dense = Vec::with_capacity(hidden.len() + 1);
        let mut inputs = features;
        for &outputs in hidden.iter().chain(std::iter::once(&spec.num_classes)) {
            let weight = offset;
            let bias = weight + outputs * inputs;
            offset = bias + outputs;
            dense.push(DenseBlock {
                inputs,
                outputs,
                weight,
                bias,
            });
            inputs = outputs;
        }
        let embedding = match (spec.embedding, spec.input) {
            (Some(e), InputShape::Tokens { vocab, .. }) => Some(random_embedding(vocab, e.dim, e.seed)),
            _ => None,
        };
        Ok(TargetModel {
            spec,
            conv,
            dense,
            embedding,
            num_params: offset,
        })
    }

    pub fn spec(&self) -> &TargetModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    /// Trainable parameter count m. The frozen embedding is not included.
    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding.map(|e| e.dim).unwrap_or(0)
    }

    /// Frozen embedding table, `vocab × dim` row-major.
    pub fn embedding_table(&self) -> Option<&[f64]> {
        self.embedding.as_deref()
    }

    pub fn seq_len(&self) -> Option<usize> {
        match self.spec.input {
            InputShape::Tokens { seq_len, .. } => Some(seq_len),
            InputShape::Image { .. } => None,
        }
    }

    pub fn vocab(&self) -> Option<usize> {
        match self.spec.input {
            InputShape::Tokens { vocab, .. } => Some(vocab),
            InputShape::Image { .. } => None,
        }
    }

    /// Logits per forward: `num_classes`, or `seq_len × vocab` for `embed-lm`.
    pub fn logits_len(&self) -> usize {
        match self.spec.kind {
            ModelKind::EmbedLm => self.seq_len().unwrap_or(0) * self.spec.num_classes,
            _ => self.spec.num_classes,
        }
    }

    /// Indices of all bias entries in the flat parameter vector.
    pub fn bias_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        if let Some(c) = self.conv {
            out.push(c.bias..c.bias + c.out_channels);
        }
        for d in &self.dense {
            out.push(d.bias..d.bias + d.outputs);
        }
        out
    }

    /// Checks that `example` fits this model's input shape and label space.
    pub fn check_example(&self, example: &Example) -> Result<()> {
        match (&example.input, self.spec.input) {
            (Input::Pixels(px), InputShape::Image { .. }) => {
                if px.len() != self.spec.input.len() {
                    return Err(Error::Shape(format!(
                        "expected {} pixels, got {}",
                        self.spec.input.len(),
                        px.len()
                    )));
                }
            }
            (Input::Tokens(ids), InputShape::Tokens { seq_len, vocab }) => {
                if ids.len() != seq_len {
                    return Err(Error::Shape(format!("expected {seq_len} tokens, got {}", ids.len())));
                }
                if let Some(&t) = ids.iter().find(|&&t| t as usize >= vocab) {
                    return Err(Error::Shape(format!("token id {t} outside vocab {vocab}")));
                }
            }
            _ => return Err(Error::Shape("input modality does not match model".into())),
        }
        match (self.spec.kind, example.label) {
            (ModelKind::EmbedLm, _) => Ok(()),
            (_, Some(c)) if c < self.spec.num_classes => Ok(()),
            (_, Some(c)) => Err(Error::Shape(format!(
                "label {c} outside {} classes",
                self.spec.num_classes
            ))),
            (_, None) => Err(Error::Shape("classifier example needs a label".into())),
        }
    }
}

fn random_embedding(vocab: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    (0..vocab * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Input {
    /// CHW pixels in `[0, 1]`.
    Pixels(Vec<f64>),
    Tokens(Vec<u32>),
}

impl Input {
    pub fn len(&self) -> usize {
        match self {
            Input::Pixels(p) => p.len(),
            Input::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> Option<&[f64]> {
        match self {
            Input::Pixels(p) => Some(p),
            Input::Tokens(_) => None,
        }
    }

    pub fn tokens(&self) -> Option<&[u32]> {
        match self {
            Input::Tokens(t) => Some(t),
            Input::Pixels(_) => None,
        }
    }
}

/// One client sample. `label` is `None` for language-model data, whose
/// targets are the input tokens themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub input: Input,
    pub label: Option<usize>,
}

impl Example {
    pub fn image(id: u64, pixels: Vec<f64>, label: usize) -> Self {
        Example {
            id,
            input: Input::Pixels(pixels),
            label: Some(label),
        }
    }

    pub fn text(id: u64, tokens: Vec<u32>, label: Option<usize>) -> Self {
        Example {
            id,
            input: Input::Tokens(tokens),
            label,
        }
    }
}

macro_rules! flat_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                $name(vec![0.0; len])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                $name(v)
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }
    };
}

flat_vector!(
    /// Trainable weights w of the target model, length m.
    ParamVector
);
flat_vector!(
    /// A per-sample or aggregated gradient with respect to w, length m.
    GradientVector
);

impl GradientVector {
    pub fn add_assign(&mut self, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += b;
        }
    }
}
