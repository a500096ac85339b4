//! The seq2seq policy/value network, its gradients and optimizer.

pub mod adam;
pub mod checkpoint;
pub mod lstm;
pub mod params;
pub mod seq2seq;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::Adam;
pub use params::{ParamLayout, PolicyParams};
pub use seq2seq::{
    backward, decode, decode_step, encode, forward, greedy_action, greedy_decode, sample_action, DecoderState,
    Encoded, ForwardTrace, HeadGrads, StepCache,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Width of a task embedding, `4 + 2p`.
    pub input_width: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Width of the previous-action embedding fed to the decoder.
    pub action_embed: usize,
    /// Hidden width of the attention score network.
    pub attention_hidden: usize,
    /// Hidden width of the policy and value heads.
    pub head_hidden: usize,
    pub layer_norm: bool,
    /// Also feed `e_j`, the encoder output of the task being decided, to
    /// the decoder at step `j`.
    #[serde(default)]
    pub aligned_input: bool,
}

impl NetConfig {
    /// Two 256-unit LSTM layers with layer norm on both sides.
    pub fn standard(input_width: usize) -> Self {
        NetConfig {
            input_width,
            hidden: 256,
            layers: 2,
            action_embed: 16,
            attention_hidden: 256,
            head_hidden: 256,
            layer_norm: true,
            aligned_input: true,
        }
    }

    /// Same topology with every width set to `hidden`.
    pub fn small(input_width: usize, hidden: usize) -> Self {
        NetConfig {
            input_width,
            hidden,
            layers: 2,
            action_embed: hidden.clamp(1, 16),
            attention_hidden: hidden,
            head_hidden: hidden,
            layer_norm: true,
            aligned_input: true,
        }
    }

    /// Width of the decoder's first-layer input.
    pub fn decoder_input(&self) -> usize {
        self.action_embed + self.hidden * if self.aligned_input { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_width,
            self.hidden,
            self.layers,
            self.action_embed,
            self.attention_hidden,
            self.head_hidden,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}
