//! Comment scorers: the GRU chain with deep attention and its ablations,
//! the n-gram CNN, and the word-precision list baseline.

mod attention;
mod check;
mod cnn;
mod gru;
mod list;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use attention::{attention_weights, AttentionParams, AttentionTrace};
pub use check::{check_variant_gradients, CheckConfig};
pub use cnn::{CnnConfig, CnnParams, CnnTrace};
pub use gru::{gru_forward, gru_step, GruParams, GruStep};
pub use list::{list_build, list_score, ListEntry, WordList};
pub use model::{Example, Forward, Head, Model, ModelConfig};

/// Probabilistic gold labels count as reject only strictly above one half.
pub fn is_reject(gold: f64) -> bool {
    gold > 0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// P(reject | comment).
    pub p: f64,
    /// Per-token weights, for the variants that compute attention.
    pub attention: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "rnn")]
    Rnn,
    #[serde(rename = "a-rnn", alias = "a_rnn")]
    ARnn,
    #[serde(rename = "da-rnn", alias = "da_rnn")]
    DaRnn,
    #[serde(rename = "eq-rnn", alias = "eq_rnn")]
    EqRnn,
    #[serde(rename = "da-cent", alias = "da_cent")]
    DaCent,
    #[serde(rename = "eq-cent", alias = "eq_cent")]
    EqCent,
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "list")]
    List,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Rnn,
        Variant::ARnn,
        Variant::DaRnn,
        Variant::EqRnn,
        Variant::DaCent,
        Variant::EqCent,
        Variant::Cnn,
        Variant::List,
    ];

    /// The variants trained by gradient descent.
    pub const NEURAL: [Variant; 7] = [
        Variant::Rnn,
        Variant::ARnn,
        Variant::DaRnn,
        Variant::EqRnn,
        Variant::DaCent,
        Variant::EqCent,
        Variant::Cnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rnn => "rnn",
            Variant::ARnn => "a-rnn",
            Variant::DaRnn => "da-rnn",
            Variant::EqRnn => "eq-rnn",
            Variant::DaCent => "da-cent",
            Variant::EqCent => "eq-cent",
            Variant::Cnn => "cnn",
            Variant::List => "list",
        }
    }

    pub fn uses_gru(self) -> bool {
        matches!(
            self,
            Variant::Rnn | Variant::ARnn | Variant::DaRnn | Variant::EqRnn
        )
    }

    pub fn has_attention(self) -> bool {
        matches!(self, Variant::ARnn | Variant::DaRnn | Variant::DaCent)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == normalized)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}
