//! Model hyperparameters, presets, and the parameter plan.
//!
//! The plan enumerates every parameter tensor (name, shape, init, scope)
//! as pure metadata. Desk-scale construction materializes the plan into
//! buffers; at larger presets the same plan drives closed-form parameter
//! accounting without allocating gigabytes.

use serde::{Deserialize, Serialize};

use crate::error::{AmpsError, Result};

/// Architecture hyperparameters for the speech/text encoder–decoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of one input speech frame.
    pub frame_dim: usize,
    /// Model (residual stream) width D1.
    pub d_model: usize,
    /// Adapter bottleneck width D2.
    pub adapter_dim: usize,
    /// Hidden width of the position-wise feed-forward blocks.
    pub ffn_dim: usize,
    pub n_heads: usize,
    pub n_speech_layers: usize,
    pub n_text_layers: usize,
    pub n_decoder_layers: usize,
    /// Depthwise convolution width in speech encoder layers (odd).
    pub conv_width: usize,
    pub vocab_size: usize,
    /// Longest supported sequence (frames or tokens).
    pub max_seq_len: usize,
    /// Default train partition: adapters only vs. all parameters.
    pub adapter_only: bool,
}

impl ModelConfig {
    /// Small configuration that trains from scratch in seconds on a CPU.
    pub fn desk() -> Self {
        ModelConfig {
            frame_dim: 16,
            d_model: 64,
            adapter_dim: 32,
            ffn_dim: 128,
            n_heads: 4,
            n_speech_layers: 2,
            n_text_layers: 2,
            n_decoder_layers: 2,
            conv_width: 3,
            vocab_size: 200,
            max_seq_len: 160,
            adapter_only: false,
        }
    }

    /// Production-scale shape with the wide (2048) adapter bottleneck; this
    /// is the variant whose adapter stack lands at roughly 1e8 trainable
    /// parameters. Vocabulary size here is nominal.
    pub fn paper_scale_2048() -> Self {
        ModelConfig {
            frame_dim: 80,
            d_model: 1024,
            adapter_dim: 2048,
            ffn_dim: 4096,
            n_heads: 16,
            n_speech_layers: 12,
            n_text_layers: 12,
            n_decoder_layers: 12,
            conv_width: 31,
            vocab_size: 8192,
            max_seq_len: 1024,
            adapter_only: true,
        }
    }

    /// Production-scale shape with the narrow bottleneck (D2 = D1 / 2).
    pub fn paper_scale_512() -> Self {
        ModelConfig {
            adapter_dim: 512,
            ..Self::paper_scale_2048()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(AmpsError::config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.conv_width % 2 == 0 {
            return Err(AmpsError::config(format!(
                "conv_width must be odd, got {}",
                self.conv_width
            )));
        }
        if self.vocab_size < 5 {
            return Err(AmpsError::config(format!(
                "vocab_size must cover the 4 special tokens plus content, got {}",
                self.vocab_size
            )));
        }
        for (name, v) in [
            ("frame_dim", self.frame_dim),
            ("adapter_dim", self.adapter_dim),
            ("ffn_dim", self.ffn_dim),
            ("n_speech_layers", self.n_speech_layers),
            ("n_text_layers", self.n_text_layers),
            ("n_decoder_layers", self.n_decoder_layers),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(AmpsError::config(format!("{name} must be positive")));
            }
        }
        if self.max_seq_len < 2 {
            return Err(AmpsError::config("max_seq_len must be at least 2"));
        }
        Ok(())
    }

    /// Full parameter plan in registration order.
    pub fn plan(&self) -> Vec<ParamSpec> {
        let d = self.d_model;
        let mut specs: Vec<ParamSpec> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, kind: ParamKind, scope: Scope, init: Init| {
            specs.push(ParamSpec {
                name,
                shape,
                kind,
                scope,
                init,
            });
        };

        let xavier = |fan_in: usize, fan_out: usize| {
            Init::Normal((2.0 / (fan_in + fan_out) as f64).sqrt())
        };

        // Attention / FFN / adapter / layer-norm sub-plans shared by stacks.
        let attn = |push: &mut dyn FnMut(String, Vec<usize>, ParamKind, Scope, Init),
                    prefix: &str,
                    scope: Scope| {
            for w in ["wq", "wk", "wv", "wo"] {
                push(
                    format!("{prefix}.{w}"),
                    vec![d, d],
                    ParamKind::Core,
                    scope,
                    xavier(d, d),
                );
            }
            for b in ["bq", "bk", "bv", "bo"] {
                push(
                    format!("{prefix}.{b}"),
                    vec![d],
                    ParamKind::Core,
                    scope,
                    Init::Zeros,
                );
            }
        };
        let ffn = |push: &mut dyn FnMut(String, Vec<usize>, ParamKind, Scope, Init),
                   prefix: &str,
                   scope: Scope| {
            push(
                format!("{prefix}.w1"),
                vec![d, self.ffn_dim],
                ParamKind::Core,
                scope,
                xavier(d, self.ffn_dim),
            );
            push(
                format!("{prefix}.b1"),
                vec![self.ffn_dim],
                ParamKind::Core,
                scope,
                Init::Zeros,
            );
            push(
                format!("{prefix}.w2"),
                vec![self.ffn_dim, d],
                ParamKind::Core,
                scope,
                xavier(self.ffn_dim, d),
            );
            push(
                format!("{prefix}.b2"),
                vec![d],
                ParamKind::Core,
                scope,
                Init::Zeros,
            );
        };
        let adapter = |push: &mut dyn FnMut(String, Vec<usize>, ParamKind, Scope, Init),
                       prefix: &str,
                       scope: Scope| {
            push(
                format!("{prefix}.down_w"),
                vec![d, self.adapter_dim],
                ParamKind::Adapter,
                scope,
                xavier(d, self.adapter_dim),
            );
            push(
                format!("{prefix}.down_b"),
                vec![self.adapter_dim],
                ParamKind::Adapter,
                scope,
                Init::Zeros,
            );
            // Zero-initialized up-projection makes a fresh adapter an exact
            // identity around its residual.
            push(
                format!("{prefix}.up_w"),
                vec![self.adapter_dim, d],
                ParamKind::Adapter,
                scope,
                Init::Zeros,
            );
            push(
                format!("{prefix}.up_b"),
                vec![d],
                ParamKind::Adapter,
                scope,
                Init::Zeros,
            );
        };
        let ln = |push: &mut dyn FnMut(String, Vec<usize>, ParamKind, Scope, Init),
                  prefix: &str,
                  scope: Scope| {
            push(
                format!("{prefix}.gain"),
                vec![d],
                ParamKind::Core,
                scope,
                Init::Ones,
            );
            push(
                format!("{prefix}.bias"),
                vec![d],
                ParamKind::Core,
                scope,
                Init::Zeros,
            );
        };

        // Speech pathway.
        push(
            "speech.proj_w".into(),
            vec![self.frame_dim, d],
            ParamKind::Core,
            Scope::Speech,
            xavier(self.frame_dim, d),
        );
        push(
            "speech.proj_b".into(),
            vec![d],
            ParamKind::Core,
            Scope::Speech,
            Init::Zeros,
        );
        for i in 0..self.n_speech_layers {
            let p = format!("speech.layer{i}");
            ln(&mut push, &format!("{p}.ln_attn"), Scope::Speech);
            attn(&mut push, &format!("{p}.attn"), Scope::Speech);
            ln(&mut push, &format!("{p}.ln_conv"), Scope::Speech);
            push(
                format!("{p}.conv_k"),
                vec![self.conv_width, d],
                ParamKind::Core,
                Scope::Speech,
                Init::Normal((1.0 / self.conv_width as f64).sqrt()),
            );
            push(
                format!("{p}.conv_b"),
                vec![d],
                ParamKind::Core,
                Scope::Speech,
                Init::Zeros,
            );
            ln(&mut push, &format!("{p}.ln_ffn"), Scope::Speech);
            ffn(&mut push, &format!("{p}.ffn"), Scope::Speech);
            adapter(&mut push, &format!("{p}.adapter"), Scope::Speech);
        }
        ln(&mut push, "speech.ln_final", Scope::Speech);

        // Text encoder pathway (no adapters here; adapters live in the
        // speech encoder and the shared decoder).
        push(
            "text.embed".into(),
            vec![self.vocab_size, d],
            ParamKind::Core,
            Scope::Text,
            Init::Normal(0.02),
        );
        for i in 0..self.n_text_layers {
            let p = format!("text.layer{i}");
            ln(&mut push, &format!("{p}.ln_attn"), Scope::Text);
            attn(&mut push, &format!("{p}.attn"), Scope::Text);
            ln(&mut push, &format!("{p}.ln_ffn"), Scope::Text);
            ffn(&mut push, &format!("{p}.ffn"), Scope::Text);
        }
        ln(&mut push, "text.ln_final", Scope::Text);

        // Shared decoder.
        push(
            "decoder.embed".into(),
            vec![self.vocab_size, d],
            ParamKind::Core,
            Scope::Decoder,
            Init::Normal(0.02),
        );
        for i in 0..self.n_decoder_layers {
            let p = format!("decoder.layer{i}");
            ln(&mut push, &format!("{p}.ln_self"), Scope::Decoder);
            attn(&mut push, &format!("{p}.self_attn"), Scope::Decoder);
            ln(&mut push, &format!("{p}.ln_cross"), Scope::Decoder);
            attn(&mut push, &format!("{p}.cross_attn"), Scope::Decoder);
            ln(&mut push, &format!("{p}.ln_ffn"), Scope::Decoder);
            ffn(&mut push, &format!("{p}.ffn"), Scope::Decoder);
            adapter(&mut push, &format!("{p}.adapter"), Scope::Decoder);
        }
        ln(&mut push, "decoder.ln_final", Scope::Decoder);
        // The output head starts at embedding scale rather than xavier so a
        // fresh model's predictive distribution is near uniform (per-token
        // NLL ≈ ln V), which calibrated loss thresholds rely on.
        push(
            "decoder.out_w".into(),
            vec![d, self.vocab_size],
            ParamKind::Core,
            Scope::Decoder,
            Init::Normal(0.02),
        );
        push(
            "decoder.out_b".into(),
            vec![self.vocab_size],
            ParamKind::Core,
            Scope::Decoder,
            Init::Zeros,
        );

        specs
    }

    /// Total parameter count (closed form over the plan).
    pub fn param_count(&self) -> usize {
        self.plan().iter().map(|s| s.numel()).sum()
    }

    /// Parameters in adapter blocks only.
    pub fn adapter_param_count(&self) -> usize {
        self.plan()
            .iter()
            .filter(|s| s.kind == ParamKind::Adapter)
            .map(|s| s.numel())
            .sum()
    }
}

/// Which training partition a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Core,
    Adapter,
}

/// Which pathway owns a parameter (the decoder is shared by both).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Speech,
    Text,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

/// One planned parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub scope: Scope,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}
