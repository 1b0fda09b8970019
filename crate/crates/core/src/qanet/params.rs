use rand::Rng;
use rerank_tensor::Tensor;

use super::ModelConfig;
use crate::corpus::PAD_ID;

/// Positions of every parameter tensor inside the model's flat parameter
/// list. The layout is a pure function of the configuration and the
/// vocabulary size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub embedding: usize,
    pub question: SideLayout,
    pub answer: SideLayout,
    /// `1 × 3d` trilinear similarity weights `[w_a; w_q; w_m]`.
    pub similarity: usize,
    /// `4d × d` projection of the fused attention features.
    pub fusion: usize,
    pub model: Vec<BlockLayout>,
    /// `(model_blocks · d) × 1` output weights over the pooled model-block
    /// outputs.
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SideLayout {
    pub highway: Vec<HighwayLayout>,
    /// `word_dim × d` width-1 convolution.
    pub projection: usize,
    pub encoder: Vec<BlockLayout>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HighwayLayout {
    pub gate_w: usize,
    pub gate_b: usize,
    pub transform_w: usize,
    pub transform_b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub convs: Vec<ConvLayout>,
    pub attention: AttentionLayout,
    pub ffn: FfnLayout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayout {
    pub ln_gain: usize,
    pub ln_bias: usize,
    pub kernel: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionLayout {
    pub ln_gain: usize,
    pub ln_bias: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfnLayout {
    pub ln_gain: usize,
    pub ln_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Embedding,
}

pub(crate) struct Spec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Default)]
struct Builder {
    specs: Vec<Spec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(Spec { name, shape, init });
        self.specs.len() - 1
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.add(name, vec![rows, cols], Init::Glorot { fan_in: rows, fan_out: cols })
    }

    fn row(&mut self, name: String, d: usize, init: Init) -> usize {
        self.add(name, vec![1, d], init)
    }

    fn block(&mut self, prefix: &str, c: &ModelConfig) -> BlockLayout {
        let d = c.d_model;
        let convs = (0..c.convs_per_block)
            .map(|i| ConvLayout {
                ln_gain: self.row(format!("{prefix}.conv{i}.ln_gain"), d, Init::Ones),
                ln_bias: self.row(format!("{prefix}.conv{i}.ln_bias"), d, Init::Zeros),
                kernel: self.add(
                    format!("{prefix}.conv{i}.kernel"),
                    vec![c.conv_kernel, d, d],
                    Init::Glorot {
                        fan_in: c.conv_kernel * d,
                        fan_out: d,
                    },
                ),
                bias: self.row(format!("{prefix}.conv{i}.bias"), d, Init::Zeros),
            })
            .collect();
        let attention = AttentionLayout {
            ln_gain: self.row(format!("{prefix}.attn.ln_gain"), d, Init::Ones),
            ln_bias: self.row(format!("{prefix}.attn.ln_bias"), d, Init::Zeros),
            wq: self.matrix(format!("{prefix}.attn.wq"), d, d),
            wk: self.matrix(format!("{prefix}.attn.wk"), d, d),
            wv: self.matrix(format!("{prefix}.attn.wv"), d, d),
            wo: self.matrix(format!("{prefix}.attn.wo"), d, d),
        };
        let ffn = FfnLayout {
            ln_gain: self.row(format!("{prefix}.ffn.ln_gain"), d, Init::Ones),
            ln_bias: self.row(format!("{prefix}.ffn.ln_bias"), d, Init::Zeros),
            w1: self.matrix(format!("{prefix}.ffn.w1"), d, d),
            b1: self.row(format!("{prefix}.ffn.b1"), d, Init::Zeros),
            w2: self.matrix(format!("{prefix}.ffn.w2"), d, d),
            b2: self.row(format!("{prefix}.ffn.b2"), d, Init::Zeros),
        };
        BlockLayout { convs, attention, ffn }
    }

    fn side(&mut self, prefix: &str, c: &ModelConfig) -> SideLayout {
        let w = c.word_dim;
        let highway = (0..2)
            .map(|i| HighwayLayout {
                gate_w: self.matrix(format!("{prefix}.highway{i}.gate_w"), w, w),
                gate_b: self.row(format!("{prefix}.highway{i}.gate_b"), w, Init::Zeros),
                transform_w: self.matrix(format!("{prefix}.highway{i}.transform_w"), w, w),
                transform_b: self.row(format!("{prefix}.highway{i}.transform_b"), w, Init::Zeros),
            })
            .collect();
        let projection = self.matrix(format!("{prefix}.projection"), w, c.d_model);
        let encoder = (0..c.encoder_blocks)
            .map(|i| self.block(&format!("{prefix}.encoder{i}"), c))
            .collect();
        SideLayout {
            highway,
            projection,
            encoder,
        }
    }
}

impl Layout {
    pub(crate) fn new(config: &ModelConfig, vocab_size: usize) -> (Self, Vec<Spec>) {
        let d = config.d_model;
        let mut b = Builder::default();
        let embedding = b.add("embedding".into(), vec![vocab_size, config.word_dim], Init::Embedding);
        let question = b.side("question", config);
        let answer = b.side("answer", config);
        let similarity = b.row("similarity".into(), 3 * d, Init::Glorot { fan_in: 3 * d, fan_out: 1 });
        let fusion = b.matrix("fusion".into(), 4 * d, d);
        let model = (0..config.model_blocks)
            .map(|i| b.block(&format!("model{i}"), config))
            .collect();
        let output = b.matrix("output".into(), config.model_blocks * d, 1);
        let layout = Self {
            embedding,
            question,
            answer,
            similarity,
            fusion,
            model,
            output,
        };
        (layout, b.specs)
    }
}

pub(crate) fn initialize(specs: &[Spec], rng: &mut impl Rng) -> Vec<Tensor> {
    specs
        .iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let data: Vec<f64> = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
                }
                Init::Embedding => {
                    let dim = s.shape[1];
                    (0..n)
                        .map(|i| if i / dim == PAD_ID { 0.0 } else { rng.random_range(-0.1..0.1) })
                        .collect()
                }
            };
            Tensor::new(s.shape.clone(), data)
                .expect("parameter shapes are positive")
                .requires_grad(true)
        })
        .collect()
}
