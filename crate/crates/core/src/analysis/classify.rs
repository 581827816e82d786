//! Name-based layer classification.

use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerClass {
    Attention,
    FeedForward,
    Embedding,
    Norm,
    Output,
    Other,
}

impl LayerClass {
    pub const ALL: [LayerClass; 6] = [
        LayerClass::Attention,
        LayerClass::FeedForward,
        LayerClass::Embedding,
        LayerClass::Norm,
        LayerClass::Output,
        LayerClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerClass::Attention => "attention",
            LayerClass::FeedForward => "feed_forward",
            LayerClass::Embedding => "embedding",
            LayerClass::Norm => "norm",
            LayerClass::Output => "output",
            LayerClass::Other => "other",
        }
    }
}

impl std::str::FromStr for LayerClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        LayerClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown layer class `{s}`"))
    }
}

impl fmt::Display for LayerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub pattern: Regex,
    pub class: LayerClass,
}

/// Ordered rules; the first matching pattern decides, `Other` otherwise.
#[derive(Debug, Clone)]
pub struct ClassificationRules {
    rules: Vec<Rule>,
}

/// Norm rules come first so `self_attn.q_norm` is not counted as attention.
const DEFAULT_RULES: &[(&str, LayerClass)] = &[
    (r"(^|\.)([a-z_]*norm[a-z_0-9]*|ln_[a-z0-9]+)(\.|$)", LayerClass::Norm),
    (
        r"(^|\.)(embed_tokens|tok_embeddings|word_embeddings|wte|wpe)(\.|$)",
        LayerClass::Embedding,
    ),
    (r"^(lm_head|output|embed_out)(\.|$)", LayerClass::Output),
    (
        r"(^|\.)(self_attn|attention|attn|q_proj|k_proj|v_proj|o_proj|wq|wk|wv|wo|c_attn|query_key_value)(\.|$)",
        LayerClass::Attention,
    ),
    (
        r"(^|\.)(mlp|feed_forward|ffn|gate_proj|up_proj|down_proj|w1|w2|w3|c_fc|fc1|fc2)(\.|$)",
        LayerClass::FeedForward,
    ),
];

#[derive(Deserialize)]
struct RuleEntry {
    pattern: String,
    class: LayerClass,
}

impl Default for ClassificationRules {
    fn default() -> Self {
        let rules = DEFAULT_RULES
            .iter()
            .map(|&(p, class)| Rule {
                pattern: Regex::new(p).expect("default rule compiles"),
                class,
            })
            .collect();
        Self { rules }
    }
}

impl ClassificationRules {
    pub fn new(rules: Vec<Rule>) -> Self {
        Self { rules }
    }

    /// Parses a JSON array of `{"pattern": REGEX, "class": CLASS}` objects.
    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<RuleEntry> = serde_json::from_str(text)?;
        let rules = entries
            .into_iter()
            .map(|e| {
                Regex::new(&e.pattern)
                    .map(|pattern| Rule {
                        pattern,
                        class: e.class,
                    })
                    .map_err(|err| Error::InvalidSpec(format!("rule `{}`: {err}", e.pattern)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { rules })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn classify(&self, name: &str) -> (LayerClass, Option<usize>) {
        let class = self
            .rules
            .iter()
            .find(|r| r.pattern.is_match(name))
            .map_or(LayerClass::Other, |r| r.class);
        (class, layer_index(name))
    }
}

/// First purely numeric dot-separated component, e.g. `3` in
/// `model.layers.3.self_attn.q_proj.weight`.
pub fn layer_index(name: &str) -> Option<usize> {
    name.split('.')
        .find(|part| !part.is_empty() && part.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|part| part.parse().ok())
}

pub fn classify_tensor(name: &str, rules: &ClassificationRules) -> (LayerClass, Option<usize>) {
    rules.classify(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rules_cover_llama_and_qwen_names() {
        let r = ClassificationRules::default();
        let cases = [
            ("model.layers.3.self_attn.q_proj.weight", LayerClass::Attention, Some(3)),
            ("model.layers.0.mlp.down_proj.weight", LayerClass::FeedForward, Some(0)),
            ("model.layers.12.self_attn.k_proj.bias", LayerClass::Attention, Some(12)),
            ("model.layers.1.self_attn.q_norm.weight", LayerClass::Norm, Some(1)),
            ("model.layers.1.input_layernorm.weight", LayerClass::Norm, Some(1)),
            ("model.layers.1.post_attention_layernorm.weight", LayerClass::Norm, Some(1)),
            ("model.embed_tokens.weight", LayerClass::Embedding, None),
            ("model.norm.weight", LayerClass::Norm, None),
            ("lm_head.weight", LayerClass::Output, None),
            ("layers.5.attention.wq.weight", LayerClass::Attention, Some(5)),
            ("layers.5.feed_forward.w2.weight", LayerClass::FeedForward, Some(5)),
            ("tok_embeddings.weight", LayerClass::Embedding, None),
            ("output.weight", LayerClass::Output, None),
            ("foo.bar", LayerClass::Other, None),
        ];
        for (name, class, idx) in cases {
            assert_eq!(r.classify(name), (class, idx), "{name}");
        }
    }

    #[test]
    fn custom_rules_first_match_wins() {
        let r = ClassificationRules::from_json(
            r#"[{"pattern": "^blk\\.", "class": "feed_forward"}, {"pattern": "attn", "class": "attention"}]"#,
        )
        .unwrap();
        assert_eq!(r.classify("blk.2.attn_q.weight"), (LayerClass::FeedForward, Some(2)));
        assert_eq!(r.classify("x.attn"), (LayerClass::Attention, None));
        assert_eq!(r.classify("model.layers.0.mlp.up_proj.weight").0, LayerClass::Other);
    }

    #[test]
    fn bad_rule_pattern_is_rejected() {
        let err = ClassificationRules::from_json(r#"[{"pattern": "(", "class": "norm"}]"#).unwrap_err();
        assert_eq!(err.class(), "InvalidSpec");
    }
}
