//! The operator transformer: an attention encoder for (function values,
//! problem parameters), a fully connected embedding for query coordinates,
//! and a cross-attention decoder with GeGELU feed-forward blocks.
//!
//! The encoder ingests a [`TokenSequence`] of per-point features
//! (coordinate, function value, broadcast parameters) and refines it with
//! Fourier-type linear attention. Query coordinates are embedded separately
//! and attend to the encoded tokens; a final linear projection produces one
//! output row per query, so the forward map is pointwise in the queries.

mod ops;

pub use ops::{cross_attention, fourier_attention, gegelu_ffn};

use crate::tensor::{Graph, Tensor, TensorError, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("empty token sequence passed to {op}")]
    EmptySequence { op: &'static str },
    #[error("non-finite activation in {layer}")]
    NonFiniteActivation { layer: String },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture hyperparameters. The defaults reproduce the baseline:
/// embedding dimension 96, 4 encoder attention layers, decoding depth 3.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub decoder_depth: usize,
    pub ffn_expansion: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    pub eps: f64,
    pub seed: u64,
    /// Pre-norm residual blocks (the default); set false for post-norm.
    pub pre_norm: bool,
}

impl ModelConfig {
    pub fn new(input_channels: usize, output_channels: usize) -> Self {
        Self {
            embed_dim: 96,
            encoder_layers: 4,
            decoder_depth: 3,
            ffn_expansion: 2,
            input_channels,
            output_channels,
            eps: 1e-5,
            seed: 0,
            pre_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_depth", self.decoder_depth),
            ("ffn_expansion", self.ffn_expansion),
            ("input_channels", self.input_channels),
            ("output_channels", self.output_channels),
        ] {
            if v == 0 {
                return Err(NnError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(NnError::InvalidConfig("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Min-max normalization statistics computed on a training split and stored
/// with the model. Degenerate spans (max == min) normalize to zero offset
/// with unit scale.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub coord_min: f64,
    pub coord_max: f64,
    pub value_min: f64,
    pub value_max: f64,
    /// Apply log10 to raw values before min-max (used for the extreme
    /// pressure-ratio inputs).
    pub value_log10: bool,
    pub param_min: Vec<f64>,
    pub param_max: Vec<f64>,
    pub target_min: Vec<f64>,
    pub target_max: Vec<f64>,
}

fn span(min: f64, max: f64) -> f64 {
    if max > min {
        max - min
    } else {
        1.0
    }
}

impl NormStats {
    /// Pass-through statistics (unit spans, no offsets).
    pub fn identity(n_params: usize, n_fields: usize) -> Self {
        Self {
            coord_min: 0.0,
            coord_max: 1.0,
            value_min: 0.0,
            value_max: 1.0,
            value_log10: false,
            param_min: vec![0.0; n_params],
            param_max: vec![1.0; n_params],
            target_min: vec![0.0; n_fields],
            target_max: vec![1.0; n_fields],
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_min.len()
    }

    pub fn n_fields(&self) -> usize {
        self.target_min.len()
    }

    pub fn norm_coord(&self, x: f64) -> f64 {
        (x - self.coord_min) / span(self.coord_min, self.coord_max)
    }

    pub fn norm_value(&self, v: f64) -> f64 {
        let v = if self.value_log10 { v.log10() } else { v };
        (v - self.value_min) / span(self.value_min, self.value_max)
    }

    pub fn norm_param(&self, i: usize, v: f64) -> f64 {
        (v - self.param_min[i]) / span(self.param_min[i], self.param_max[i])
    }

    pub fn norm_target(&self, field: usize, v: f64) -> f64 {
        (v - self.target_min[field]) / span(self.target_min[field], self.target_max[field])
    }

    pub fn denorm_target(&self, field: usize, v: f64) -> f64 {
        v * span(self.target_min[field], self.target_max[field]) + self.target_min[field]
    }
}

/// Input tokens: one feature row per sensor point, laid out as
/// [coordinate, function value, parameters...].
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    coords: Vec<f64>,
    features: Vec<f64>,
    width: usize,
}

impl TokenSequence {
    pub fn build(coords: &[f64], values: &[f64], params: &[f64]) -> Result<Self> {
        if coords.is_empty() {
            return Err(NnError::InvalidInput("token sequence is empty".into()));
        }
        if coords.len() != values.len() {
            return Err(NnError::InvalidInput(format!(
                "{} coordinates but {} values",
                coords.len(),
                values.len()
            )));
        }
        if coords.len() > 1 && coords.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NnError::InvalidInput(
                "token coordinates must be strictly increasing".into(),
            ));
        }
        let width = 2 + params.len();
        let mut features = Vec::with_capacity(coords.len() * width);
        for (&x, &v) in coords.iter().zip(values) {
            features.push(x);
            features.push(v);
            features.extend_from_slice(params);
        }
        Ok(Self {
            coords: coords.to_vec(),
            features,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

// Parameter indices for one encoder layer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct FfnIdx {
    w: usize,
    b: usize,
    wg: usize,
    bg: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct EncoderLayerIdx {
    ln_attn_g: usize,
    ln_attn_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    ln_ffn_g: usize,
    ln_ffn_b: usize,
    ffn: FfnIdx,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct DecoderBlockIdx {
    ln_query_g: usize,
    ln_query_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    ln_latent_g: usize,
    ln_latent_b: usize,
    latent_w: usize,
    latent_b: usize,
    ln_ffn_g: usize,
    ln_ffn_b: usize,
    ffn: FfnIdx,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Layout {
    input_w: usize,
    input_b: usize,
    encoder: Vec<EncoderLayerIdx>,
    enc_final_g: usize,
    enc_final_b: usize,
    query_w1: usize,
    query_b1: usize,
    query_w2: usize,
    query_b2: usize,
    decoder: Vec<DecoderBlockIdx>,
    out_w: usize,
    out_b: usize,
}

struct ParamBuilder {
    params: Vec<Tensor>,
    names: Vec<String>,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            names: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.params.push(t.with_grad());
        self.names.push(name);
        self.params.len() - 1
    }

    /// Weight of shape [fan_in, fan_out], uniform in +-sqrt(1/fan_in).
    fn weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize) -> usize {
        let bound = (1.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.push(name.into(), Tensor::new(vec![fan_in, fan_out], data).expect("shape"))
    }

    /// Linear bias, uniform in +-sqrt(1/fan_in). A zero bias would leave the
    /// zero query coordinate with an exactly constant embedding row, which
    /// sits on a razor edge of the layer-norm landscape.
    fn bias(&mut self, name: impl Into<String>, len: usize, fan_in: usize) -> usize {
        let bound = (1.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..len).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.push(name.into(), Tensor::new(vec![len], data).expect("shape"))
    }

    fn zeros(&mut self, name: impl Into<String>, len: usize) -> usize {
        self.push(name.into(), Tensor::zeros(vec![len]))
    }

    fn ones(&mut self, name: impl Into<String>, len: usize) -> usize {
        self.push(name.into(), Tensor::full(vec![len], 1.0))
    }

    fn ffn(&mut self, prefix: &str, d: usize, h: usize) -> FfnIdx {
        FfnIdx {
            w: self.weight(format!("{prefix}.ffn.w"), d, h),
            b: self.bias(format!("{prefix}.ffn.b"), h, d),
            wg: self.weight(format!("{prefix}.ffn.wg"), d, h),
            bg: self.bias(format!("{prefix}.ffn.bg"), h, d),
            wo: self.weight(format!("{prefix}.ffn.wo"), h, d),
            bo: self.bias(format!("{prefix}.ffn.bo"), d, h),
        }
    }
}

/// Full parameter set and architecture of the encoder-decoder operator
/// model, plus the normalization statistics it was trained with.
#[derive(Debug, Clone)]
pub struct OperatorTransformer {
    config: ModelConfig,
    norm: NormStats,
    params: Vec<Tensor>,
    names: Vec<String>,
    layout: Layout,
}

impl OperatorTransformer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let h = config.ffn_expansion * d;
        let mut b = ParamBuilder::new(config.seed);

        let input_w = b.weight("input.w", config.input_channels, d);
        let input_b = b.bias("input.b", d, config.input_channels);

        let mut encoder = Vec::with_capacity(config.encoder_layers);
        for i in 0..config.encoder_layers {
            let p = format!("encoder.{i}");
            encoder.push(EncoderLayerIdx {
                ln_attn_g: b.ones(format!("{p}.ln_attn.gamma"), d),
                ln_attn_b: b.zeros(format!("{p}.ln_attn.beta"), d),
                wq: b.weight(format!("{p}.wq"), d, d),
                wk: b.weight(format!("{p}.wk"), d, d),
                wv: b.weight(format!("{p}.wv"), d, d),
                ln_ffn_g: b.ones(format!("{p}.ln_ffn.gamma"), d),
                ln_ffn_b: b.zeros(format!("{p}.ln_ffn.beta"), d),
                ffn: b.ffn(&p, d, h),
            });
        }
        let enc_final_g = b.ones("encoder.final_ln.gamma", d);
        let enc_final_b = b.zeros("encoder.final_ln.beta", d);

        let query_w1 = b.weight("query.w1", 1, d);
        let query_b1 = b.bias("query.b1", d, 1);
        let query_w2 = b.weight("query.w2", d, d);
        let query_b2 = b.bias("query.b2", d, d);

        let mut decoder = Vec::with_capacity(config.decoder_depth);
        for i in 0..config.decoder_depth {
            let p = format!("decoder.{i}");
            decoder.push(DecoderBlockIdx {
                ln_query_g: b.ones(format!("{p}.ln_query.gamma"), d),
                ln_query_b: b.zeros(format!("{p}.ln_query.beta"), d),
                wq: b.weight(format!("{p}.wq"), d, d),
                wk: b.weight(format!("{p}.wk"), d, d),
                wv: b.weight(format!("{p}.wv"), d, d),
                ln_latent_g: b.ones(format!("{p}.ln_latent.gamma"), d),
                ln_latent_b: b.zeros(format!("{p}.ln_latent.beta"), d),
                latent_w: b.weight(format!("{p}.latent.w"), d, d),
                latent_b: b.bias(format!("{p}.latent.b"), d, d),
                ln_ffn_g: b.ones(format!("{p}.ln_ffn.gamma"), d),
                ln_ffn_b: b.zeros(format!("{p}.ln_ffn.beta"), d),
                ffn: b.ffn(&p, d, h),
            });
        }

        let out_w = b.weight("output.w", d, config.output_channels);
        let out_b = b.bias("output.b", config.output_channels, d);

        let norm = NormStats::identity(
            config.input_channels.saturating_sub(2),
            config.output_channels,
        );
        Ok(Self {
            layout: Layout {
                input_w,
                input_b,
                encoder,
                enc_final_g,
                enc_final_b,
                query_w1,
                query_b1,
                query_w2,
                query_b2,
                decoder,
                out_w,
                out_b,
            },
            config,
            norm,
            params: b.params,
            names: b.names,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = norm;
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Overwrites parameter buffers (e.g. from a checkpoint); shapes must
    /// match the layout implied by the configuration.
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(NnError::InvalidInput(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                named.len()
            )));
        }
        for ((name, tensor), (own_name, own)) in
            named.iter().zip(self.names.iter().zip(&self.params))
        {
            if name != own_name || tensor.shape() != own.shape() {
                return Err(NnError::InvalidInput(format!(
                    "parameter {name} {:?} does not match architecture slot {own_name} {:?}",
                    tensor.shape(),
                    own.shape()
                )));
            }
        }
        for (p, (_, tensor)) in self.params.iter_mut().zip(named) {
            p.data_mut().copy_from_slice(tensor.data());
        }
        Ok(())
    }

    /// Registers every parameter as a graph leaf, in layout order.
    pub fn push_params(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p)).collect()
    }

    /// Builds normalized tokens from physical coordinates, function values,
    /// and problem parameters using the stored statistics.
    pub fn normalized_tokens(
        &self,
        coords: &[f64],
        values: &[f64],
        params: &[f64],
    ) -> Result<TokenSequence> {
        if 2 + params.len() != self.config.input_channels {
            return Err(NnError::InvalidInput(format!(
                "{} parameters imply {} input channels, model expects {}",
                params.len(),
                2 + params.len(),
                self.config.input_channels
            )));
        }
        let cn: Vec<f64> = coords.iter().map(|&x| self.norm.norm_coord(x)).collect();
        let vn: Vec<f64> = values.iter().map(|&v| self.norm.norm_value(v)).collect();
        let pn: Vec<f64> = params
            .iter()
            .enumerate()
            .map(|(i, &p)| self.norm.norm_param(i, p))
            .collect();
        TokenSequence::build(&cn, &vn, &pn)
    }

    /// Forward pass on an existing graph with already-registered parameter
    /// leaves. `tokens` must already be normalized; `queries` are normalized
    /// output-domain coordinates. Returns an [m, output_channels] node.
    pub fn forward_on(
        &self,
        g: &mut Graph,
        pv: &[Var],
        tokens: &TokenSequence,
        queries: &[f64],
    ) -> Result<Var> {
        if tokens.width() != self.config.input_channels {
            return Err(NnError::InvalidInput(format!(
                "token width {} does not match input_channels {}",
                tokens.width(),
                self.config.input_channels
            )));
        }
        let n = tokens.len();
        let m = queries.len();
        let eps = self.config.eps;
        let pre = self.config.pre_norm;
        let lay = &self.layout;

        let finite = |g: &Graph, v: Var, layer: String| -> Result<()> {
            g.check_finite(v, &layer)
                .map_err(|_| NnError::NonFiniteActivation { layer })
        };

        // Encoder: token embedding then attention + feed-forward blocks.
        let feat = g.constant(vec![n, tokens.width()], tokens.features().to_vec())?;
        let mut x = g.matmul(feat, pv[lay.input_w])?;
        x = g.add(x, pv[lay.input_b])?;
        finite(g, x, "input embedding".into())?;

        for (i, l) in lay.encoder.iter().enumerate() {
            let attn_in = if pre {
                g.layer_norm(x, Some(pv[l.ln_attn_g]), Some(pv[l.ln_attn_b]), eps)?
            } else {
                x
            };
            let q = g.matmul(attn_in, pv[l.wq])?;
            let k = g.matmul(attn_in, pv[l.wk])?;
            let v = g.matmul(attn_in, pv[l.wv])?;
            let a = fourier_attention(g, q, k, v, eps)?;
            x = g.add(x, a)?;
            if !pre {
                x = g.layer_norm(x, Some(pv[l.ln_attn_g]), Some(pv[l.ln_attn_b]), eps)?;
            }
            finite(g, x, format!("encoder layer {i} attention"))?;

            let ffn_in = if pre {
                g.layer_norm(x, Some(pv[l.ln_ffn_g]), Some(pv[l.ln_ffn_b]), eps)?
            } else {
                x
            };
            let f = gegelu_ffn(
                g,
                ffn_in,
                pv[l.ffn.w],
                pv[l.ffn.b],
                pv[l.ffn.wg],
                pv[l.ffn.bg],
                pv[l.ffn.wo],
                pv[l.ffn.bo],
            )?;
            x = g.add(x, f)?;
            if !pre {
                x = g.layer_norm(x, Some(pv[l.ln_ffn_g]), Some(pv[l.ln_ffn_b]), eps)?;
            }
            finite(g, x, format!("encoder layer {i} feed-forward"))?;
        }
        let enc_out = if pre {
            g.layer_norm(x, Some(pv[lay.enc_final_g]), Some(pv[lay.enc_final_b]), eps)?
        } else {
            x
        };

        // Query path: pointwise fully connected embedding of each y_k.
        let y = g.constant(vec![m, 1], queries.to_vec())?;
        let mut z = g.matmul(y, pv[lay.query_w1])?;
        z = g.add(z, pv[lay.query_b1])?;
        z = g.gelu(z);
        z = g.matmul(z, pv[lay.query_w2])?;
        z = g.add(z, pv[lay.query_b2])?;
        finite(g, z, "query embedding".into())?;

        // Decoder: cross-attention against the encoded tokens, a pointwise
        // latent embedding, and a GeGELU feed-forward, all with residuals.
        for (i, blk) in lay.decoder.iter().enumerate() {
            let q_in = if pre {
                g.layer_norm(z, Some(pv[blk.ln_query_g]), Some(pv[blk.ln_query_b]), eps)?
            } else {
                z
            };
            let q = g.matmul(q_in, pv[blk.wq])?;
            let k = g.matmul(enc_out, pv[blk.wk])?;
            let v = g.matmul(enc_out, pv[blk.wv])?;
            let c = cross_attention(g, q, k, v)?;
            z = g.add(z, c)?;
            if !pre {
                z = g.layer_norm(z, Some(pv[blk.ln_query_g]), Some(pv[blk.ln_query_b]), eps)?;
            }
            finite(g, z, format!("decoder block {i} cross-attention"))?;

            let lat_in = if pre {
                g.layer_norm(z, Some(pv[blk.ln_latent_g]), Some(pv[blk.ln_latent_b]), eps)?
            } else {
                z
            };
            let mut lat = g.matmul(lat_in, pv[blk.latent_w])?;
            lat = g.add(lat, pv[blk.latent_b])?;
            lat = g.gelu(lat);
            z = g.add(z, lat)?;
            if !pre {
                z = g.layer_norm(z, Some(pv[blk.ln_latent_g]), Some(pv[blk.ln_latent_b]), eps)?;
            }
            finite(g, z, format!("decoder block {i} latent embedding"))?;

            let ffn_in = if pre {
                g.layer_norm(z, Some(pv[blk.ln_ffn_g]), Some(pv[blk.ln_ffn_b]), eps)?
            } else {
                z
            };
            let f = gegelu_ffn(
                g,
                ffn_in,
                pv[blk.ffn.w],
                pv[blk.ffn.b],
                pv[blk.ffn.wg],
                pv[blk.ffn.bg],
                pv[blk.ffn.wo],
                pv[blk.ffn.bo],
            )?;
            z = g.add(z, f)?;
            if !pre {
                z = g.layer_norm(z, Some(pv[blk.ln_ffn_g]), Some(pv[blk.ln_ffn_b]), eps)?;
            }
            finite(g, z, format!("decoder block {i} feed-forward"))?;
        }

        let mut out = g.matmul(z, pv[lay.out_w])?;
        out = g.add(out, pv[lay.out_b])?;
        finite(g, out, "output projection".into())?;
        Ok(out)
    }

    /// Standalone forward pass; returns the [m, output_channels] prediction
    /// in normalized target space.
    pub fn forward(&self, tokens: &TokenSequence, queries: &[f64]) -> Result<Tensor> {
        let mut g = Graph::with_capacity(self.params.len() + 64);
        let pv = self.push_params(&mut g);
        let out = self.forward_on(&mut g, &pv, tokens, queries)?;
        Ok(g.to_tensor(out))
    }

    /// Physical-space prediction: normalizes inputs with the stored
    /// statistics, runs the model, and denormalizes per output field.
    pub fn predict(
        &self,
        coords: &[f64],
        values: &[f64],
        params: &[f64],
        query_coords: &[f64],
    ) -> Result<Tensor> {
        let tokens = self.normalized_tokens(coords, values, params)?;
        let queries: Vec<f64> = query_coords.iter().map(|&x| self.norm.norm_coord(x)).collect();
        let mut out = self.forward(&tokens, &queries)?;
        let c = self.config.output_channels;
        let data = out.data_mut();
        for row in 0..query_coords.len() {
            for field in 0..c {
                let v = &mut data[row * c + field];
                *v = self.norm.denorm_target(field, *v);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            encoder_layers: 2,
            decoder_depth: 2,
            ffn_expansion: 2,
            eps: 1e-5,
            seed: 7,
            pre_norm: true,
            ..ModelConfig::new(3, 1)
        }
    }

    fn tiny_inputs(n: usize, m: usize) -> (TokenSequence, Vec<f64>) {
        let coords: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let values: Vec<f64> = coords.iter().map(|&x| (3.0 * x).sin()).collect();
        let tokens = TokenSequence::build(&coords, &values, &[0.4]).unwrap();
        let queries: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
        (tokens, queries)
    }

    #[test]
    fn output_shape_is_queries_by_channels() {
        let model = OperatorTransformer::new(tiny_config()).unwrap();
        let (tokens, queries) = tiny_inputs(6, 5);
        let out = model.forward(&tokens, &queries).unwrap();
        assert_eq!(out.shape(), &[5, 1]);
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let model = OperatorTransformer::new(tiny_config()).unwrap();
        let (tokens, queries) = tiny_inputs(6, 5);
        let a = model.forward(&tokens, &queries).unwrap();
        let b = model.forward(&tokens, &queries).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn two_constructions_from_one_config_are_identical() {
        let a = OperatorTransformer::new(tiny_config()).unwrap();
        let b = OperatorTransformer::new(tiny_config()).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.data(), pb.data());
        }
    }

    #[test]
    fn different_seeds_give_different_weights() {
        let a = OperatorTransformer::new(tiny_config()).unwrap();
        let b = OperatorTransformer::new(ModelConfig {
            seed: 8,
            ..tiny_config()
        })
        .unwrap();
        assert!(a
            .params()
            .iter()
            .zip(b.params())
            .any(|(x, y)| x.data() != y.data()));
    }

    #[test]
    fn permuting_queries_permutes_output_rows() {
        let model = OperatorTransformer::new(tiny_config()).unwrap();
        let (tokens, queries) = tiny_inputs(6, 5);
        let base = model.forward(&tokens, &queries).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let shuffled: Vec<f64> = perm.iter().map(|&i| queries[i]).collect();
        let out = model.forward(&tokens, &shuffled).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            let got = out.data()[row];
            let want = base.data()[src];
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn output_rows_are_pointwise_in_queries() {
        let model = OperatorTransformer::new(tiny_config()).unwrap();
        let (tokens, queries) = tiny_inputs(6, 5);
        let full = model.forward(&tokens, &queries).unwrap();
        for (i, &qy) in queries.iter().enumerate() {
            let solo = model.forward(&tokens, &[qy]).unwrap();
            assert!((solo.data()[0] - full.data()[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn nan_parameter_is_reported_with_layer_name() {
        let mut model = OperatorTransformer::new(tiny_config()).unwrap();
        // Poison an encoder FFN weight.
        let idx = model
            .param_names()
            .iter()
            .position(|n| n == "encoder.1.ffn.w")
            .unwrap();
        model.params_mut()[idx].data_mut()[0] = f64::NAN;
        let (tokens, queries) = tiny_inputs(6, 5);
        match model.forward(&tokens, &queries) {
            Err(NnError::NonFiniteActivation { layer }) => {
                assert!(layer.contains("encoder layer 1"), "layer was {layer}");
            }
            other => panic!("expected NaN diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn token_sequence_rejects_unsorted_coordinates() {
        assert!(TokenSequence::build(&[0.0, 0.5, 0.4], &[1.0, 2.0, 3.0], &[]).is_err());
        assert!(TokenSequence::build(&[], &[], &[]).is_err());
        assert!(TokenSequence::build(&[0.0, 1.0], &[1.0], &[]).is_err());
    }

    #[test]
    fn token_features_interleave_params() {
        let t = TokenSequence::build(&[0.0, 1.0], &[5.0, 6.0], &[0.25, 0.75]).unwrap();
        assert_eq!(t.width(), 4);
        assert_eq!(
            t.features(),
            &[0.0, 5.0, 0.25, 0.75, 1.0, 6.0, 0.25, 0.75]
        );
    }

    #[test]
    fn norm_stats_map_extremes_to_unit_interval() {
        let stats = NormStats {
            coord_min: -1.0,
            coord_max: 2.0,
            value_min: 0.5,
            value_max: 1.5,
            value_log10: false,
            param_min: vec![0.11],
            param_max: vec![0.99],
            target_min: vec![-70.0],
            target_max: vec![-50.0],
        };
        assert_eq!(stats.norm_coord(-1.0), 0.0);
        assert_eq!(stats.norm_coord(2.0), 1.0);
        assert_eq!(stats.norm_value(1.5), 1.0);
        assert_eq!(stats.norm_param(0, 0.11), 0.0);
        assert_eq!(stats.denorm_target(0, stats.norm_target(0, -63.2)), -63.2);
    }

    #[test]
    fn log10_value_normalization() {
        let stats = NormStats {
            value_min: 9.0,
            value_max: 10.0,
            value_log10: true,
            ..NormStats::identity(0, 1)
        };
        assert_eq!(stats.norm_value(1e9), 0.0);
        assert_eq!(stats.norm_value(1e10), 1.0);
    }

    #[test]
    fn predict_uses_identity_stats_by_default() {
        let model = OperatorTransformer::new(tiny_config()).unwrap();
        let (tokens, queries) = tiny_inputs(6, 5);
        let coords: Vec<f64> = tokens.coords().to_vec();
        let values: Vec<f64> = (0..6).map(|i| tokens.features()[i * 3 + 1]).collect();
        let direct = model.forward(&tokens, &queries).unwrap();
        let predicted = model.predict(&coords, &values, &[0.4], &queries).unwrap();
        assert_eq!(direct.data(), predicted.data());
    }
}
