//! Network description, parameter layout and the [`Seq2Seq`] model
//! container shared by the coarse and fine networks.

use hseq_numcore::{check_compatible, LstmCellParams, ParamId, ParamStore, Scalar};
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{HseqError, Result};

/// Uniform init half-width for fresh models.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkRole {
    Coarse,
    Fine,
}

impl NetworkRole {
    pub fn name(self) -> &'static str {
        match self {
            NetworkRole::Coarse => "coarse",
            NetworkRole::Fine => "fine",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub bidirectional_first: bool,
    /// 0-based indices of layers whose block input is added to their output.
    pub residual_layers: Vec<usize>,
    pub max_source_len: usize,
}

impl EncoderConfig {
    /// Four layers, bidirectional bottom layer, residual top two.
    pub fn coarse(hidden_dim: usize) -> Self {
        Self {
            num_layers: 4,
            hidden_dim,
            embed_dim: hidden_dim,
            bidirectional_first: true,
            residual_layers: vec![2, 3],
            max_source_len: 256,
        }
    }

    /// Three plain unidirectional layers.
    pub fn fine(hidden_dim: usize) -> Self {
        Self {
            num_layers: 3,
            hidden_dim,
            embed_dim: hidden_dim,
            bidirectional_first: false,
            residual_layers: Vec::new(),
            max_source_len: 256,
        }
    }

    /// Input width of layer `layer`.
    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(HseqError::Config("encoder needs layers, hidden_dim and embed_dim >= 1".into()));
        }
        for &l in &self.residual_layers {
            if l >= self.num_layers {
                return Err(HseqError::Config(format!(
                    "residual layer {l} out of range for {} layers",
                    self.num_layers
                )));
            }
            if self.layer_input_dim(l) != self.hidden_dim {
                return Err(HseqError::Config(format!(
                    "residual layer {l} needs input dim {} == hidden dim {}",
                    self.layer_input_dim(l),
                    self.hidden_dim
                )));
            }
        }
        if self.max_source_len == 0 {
            return Err(HseqError::Config("max_source_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub max_decode_len: usize,
}

impl DecoderConfig {
    pub fn new(num_layers: usize, hidden_dim: usize) -> Self {
        Self {
            num_layers,
            hidden_dim,
            embed_dim: hidden_dim,
            max_decode_len: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(HseqError::Config("decoder needs layers, hidden_dim and embed_dim >= 1".into()));
        }
        if self.max_decode_len == 0 {
            return Err(HseqError::Config("max_decode_len must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to build one network: its role, shapes and the two
/// vocabularies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: NetworkRole,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
}

impl NetworkSpec {
    /// 4+4 layers, bidirectional first encoder layer, residual top two.
    pub fn coarse(source_vocab: Vocabulary, target_vocab: Vocabulary, hidden_dim: usize) -> Self {
        Self {
            role: NetworkRole::Coarse,
            encoder: EncoderConfig::coarse(hidden_dim),
            decoder: DecoderConfig::new(4, hidden_dim),
            source_vocab,
            target_vocab,
        }
    }

    /// Monolingual 3+3 layer correction network.
    pub fn fine(target_vocab: Vocabulary, hidden_dim: usize) -> Self {
        Self {
            role: NetworkRole::Fine,
            encoder: EncoderConfig::fine(hidden_dim),
            decoder: DecoderConfig::new(3, hidden_dim),
            source_vocab: target_vocab.clone(),
            target_vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.role == NetworkRole::Fine && self.source_vocab != self.target_vocab {
            return Err(HseqError::Config(
                "fine network must use the same vocabulary on both sides".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    pub fwd: LstmCellParams,
    pub bwd: Option<LstmCellParams>,
    /// `[2H, H]` weight and `[H]` bias folding both directions back to H.
    pub proj: Option<(ParamId, ParamId)>,
    pub residual: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayout {
    pub embedding: ParamId,
    pub layers: Vec<EncoderLayer>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttentionParams {
    pub p_a: ParamId,
    pub v_a: ParamId,
    pub w_a: ParamId,
    pub u_a: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayout {
    pub embedding: ParamId,
    pub layers: Vec<LstmCellParams>,
    pub attn: AttentionParams,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub encoder: EncoderLayout,
    pub decoder: DecoderLayout,
}

impl Layout {
    fn register<T: Scalar>(spec: &NetworkSpec, store: &mut ParamStore<T>) -> Result<Self> {
        let root = spec.role.name();
        let enc = &spec.encoder;
        let dec = &spec.decoder;
        let embedding = store.add_zeros(
            format!("{root}/encoder/embedding"),
            &[spec.source_vocab.len(), enc.embed_dim],
        )?;
        let mut layers = Vec::with_capacity(enc.num_layers);
        for l in 0..enc.num_layers {
            let input = enc.layer_input_dim(l);
            let residual = enc.residual_layers.contains(&l);
            if l == 0 && enc.bidirectional_first {
                let p = format!("{root}/encoder/layer0");
                let fwd = LstmCellParams::register(store, &format!("{p}/fwd"), input, enc.hidden_dim)?;
                let bwd = LstmCellParams::register(store, &format!("{p}/bwd"), input, enc.hidden_dim)?;
                let w = store.add_zeros(format!("{p}/proj/W"), &[2 * enc.hidden_dim, enc.hidden_dim])?;
                let b = store.add_zeros(format!("{p}/proj/b"), &[enc.hidden_dim])?;
                layers.push(EncoderLayer {
                    fwd,
                    bwd: Some(bwd),
                    proj: Some((w, b)),
                    residual,
                });
            } else {
                let fwd = LstmCellParams::register(
                    store,
                    &format!("{root}/encoder/layer{l}/fwd"),
                    input,
                    enc.hidden_dim,
                )?;
                layers.push(EncoderLayer {
                    fwd,
                    bwd: None,
                    proj: None,
                    residual,
                });
            }
        }
        let encoder = EncoderLayout { embedding, layers };

        let embedding = store.add_zeros(
            format!("{root}/decoder/embedding"),
            &[spec.target_vocab.len(), dec.embed_dim],
        )?;
        let mut layers = Vec::with_capacity(dec.num_layers);
        for l in 0..dec.num_layers {
            let input = if l == 0 { dec.embed_dim } else { dec.hidden_dim };
            layers.push(LstmCellParams::register(
                store,
                &format!("{root}/decoder/layer{l}"),
                input,
                dec.hidden_dim,
            )?);
        }
        let a = format!("{root}/decoder/attn");
        let attn_dim = dec.hidden_dim;
        let attn = AttentionParams {
            p_a: store.add_zeros(format!("{a}/p_a"), &[attn_dim])?,
            v_a: store.add_zeros(format!("{a}/V_a"), &[dec.hidden_dim, attn_dim])?,
            w_a: store.add_zeros(format!("{a}/W_a"), &[enc.hidden_dim, attn_dim])?,
            u_a: store.add_zeros(format!("{a}/U_a"), &[enc.embed_dim, attn_dim])?,
        };
        let out_w = store.add_zeros(
            format!("{root}/decoder/out/W"),
            &[dec.hidden_dim + enc.hidden_dim, spec.target_vocab.len()],
        )?;
        let out_b = store.add_zeros(format!("{root}/decoder/out/b"), &[spec.target_vocab.len()])?;
        let decoder = DecoderLayout {
            embedding,
            layers,
            attn,
            out_w,
            out_b,
        };
        Ok(Self { encoder, decoder })
    }
}

/// One encoder-decoder network with its parameters.
#[derive(Clone, Debug)]
pub struct Seq2Seq<T> {
    pub(crate) spec: NetworkSpec,
    pub(crate) layout: Layout,
    pub(crate) store: ParamStore<T>,
}

impl<T: Scalar> Seq2Seq<T> {
    /// All-zero parameters.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let layout = Layout::register(&spec, &mut store)?;
        Ok(Self {
            spec,
            layout,
            store,
        })
    }

    /// Fresh model with weights uniform in `[-scale, scale]`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        Self::with_init_scale(spec, seed, INIT_SCALE)
    }

    pub fn with_init_scale(spec: NetworkSpec, seed: u64, scale: f64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        model.store.init_uniform(scale, seed);
        Ok(model)
    }

    /// Wraps an existing parameter store, which must match the layout the
    /// spec implies (names, shapes and order).
    pub fn from_store(spec: NetworkSpec, store: ParamStore<T>) -> Result<Self> {
        let template = Self::zeros(spec)?;
        check_compatible(&template.store, &store).map_err(|e| HseqError::Incompatible(e.to_string()))?;
        Ok(Self {
            spec: template.spec,
            layout: template.layout,
            store,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.store
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Seq2Seq<U> {
        Seq2Seq {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            store: self.store.cast(),
        }
    }

    /// Sets the named parameter to a constant.
    pub fn fill_param(&mut self, name: &str, value: T) -> Result<()> {
        let id = self.store.id(name)?;
        self.store.get_mut(id).value.fill(value);
        Ok(())
    }

    pub(crate) fn check_source_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(HseqError::Empty("source sequence".into()));
        }
        if ids.len() > self.spec.encoder.max_source_len {
            return Err(HseqError::TooLong {
                len: ids.len(),
                max: self.spec.encoder.max_source_len,
            });
        }
        let size = self.spec.source_vocab.len();
        if let Some(&id) = ids.iter().find(|&&i| i >= size) {
            return Err(HseqError::TokenOutOfRange { id, size });
        }
        Ok(())
    }

    pub(crate) fn check_target_ids(&self, ids: &[usize]) -> Result<()> {
        let size = self.spec.target_vocab.len();
        if let Some(&id) = ids.iter().find(|&&i| i >= size) {
            return Err(HseqError::TokenOutOfRange { id, size });
        }
        Ok(())
    }
}
