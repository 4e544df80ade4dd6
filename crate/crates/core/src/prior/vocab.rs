//! Closed prompt vocabulary and one-hot prompt embeddings.

use serde::{Deserialize, Serialize};

use crate::body::{RegionName, RegionSet};
use crate::error::{Error, Result};

pub const COLOR_NAMES: [&str; 8] = ["red", "green", "blue", "yellow", "black", "purple", "orange", "gray"];
pub const COLOR_RGB: [[f64; 3]; 8] = [
    [0.85, 0.1, 0.1],
    [0.1, 0.7, 0.2],
    [0.1, 0.2, 0.85],
    [0.9, 0.85, 0.1],
    [0.08, 0.08, 0.08],
    [0.55, 0.15, 0.7],
    [0.95, 0.5, 0.05],
    [0.5, 0.5, 0.5],
];
pub const BODY_NAMES: [&str; 2] = ["man", "woman"];
pub const NULL_TOKEN: &str = "<null>";

const UPPER_WORDS: [&str; 4] = ["upper", "shirt", "top", "jacket"];
const LOWER_WORDS: [&str; 5] = ["lower", "pants", "trousers", "skirt", "shorts"];
const STOPWORDS: [&str; 9] = ["a", "an", "the", "with", "and", "wearing", "in", "person", "of"];

const ZOOM_REGIONS: usize = 6;

/// Conditioning vector; the all-zero vector is the unconditional branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    pub values: Vec<f64>,
}

impl PromptEmbedding {
    pub fn null(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn is_null(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Structured content of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptSlots {
    pub upper: Option<usize>,
    pub lower: Option<usize>,
    pub body: Option<usize>,
    pub region: Option<RegionName>,
}

/// Token table plus the region prefixes recognized in rewritten prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// `(prefix words, region)`, longest prefix first.
    pub region_prefixes: Vec<(Vec<String>, RegionName)>,
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace(',', " ")
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

impl Vocabulary {
    pub fn new(regions: &RegionSet) -> Self {
        let mut region_prefixes: Vec<(Vec<String>, RegionName)> = regions
            .regions
            .iter()
            .filter(|r| r.name != RegionName::FullBody)
            .map(|r| {
                let prefix = r.prompt_template.split("{p}").next().unwrap_or("");
                (words(prefix), r.name)
            })
            .filter(|(w, _)| !w.is_empty())
            .collect();
        region_prefixes.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        Self { region_prefixes }
    }

    pub fn dim(&self) -> usize {
        2 * COLOR_NAMES.len() + BODY_NAMES.len() + ZOOM_REGIONS
    }

    pub fn contains(&self, token: &str) -> bool {
        token == NULL_TOKEN
            || COLOR_NAMES.contains(&token)
            || BODY_NAMES.contains(&token)
            || UPPER_WORDS.contains(&token)
            || LOWER_WORDS.contains(&token)
            || STOPWORDS.contains(&token)
            || self.region_prefixes.iter().any(|(w, _)| w.iter().any(|x| x == token))
    }

    pub fn parse(&self, prompt: &str) -> Result<PromptSlots> {
        let mut toks = words(prompt);
        let mut slots = PromptSlots::default();
        for (prefix, name) in &self.region_prefixes {
            if toks.len() >= prefix.len() && toks[..prefix.len()] == prefix[..] {
                slots.region = Some(*name);
                toks.drain(..prefix.len());
                break;
            }
        }
        let mut i = 0;
        while i < toks.len() {
            let t = toks[i].as_str();
            if let Some(c) = COLOR_NAMES.iter().position(|&n| n == t) {
                let next = toks.get(i + 1).map(String::as_str);
                match next {
                    Some(w) if UPPER_WORDS.contains(&w) => slots.upper = Some(c),
                    Some(w) if LOWER_WORDS.contains(&w) => slots.lower = Some(c),
                    _ => return Err(Error::UnknownToken(format!("color '{t}' must precede a garment word"))),
                }
                i += 2;
                continue;
            }
            if let Some(b) = BODY_NAMES.iter().position(|&n| n == t) {
                slots.body = Some(b);
            } else if t != NULL_TOKEN && !STOPWORDS.contains(&t) {
                return Err(Error::UnknownToken(t.to_owned()));
            }
            i += 1;
        }
        Ok(slots)
    }

    pub fn embed_slots(&self, slots: &PromptSlots) -> PromptEmbedding {
        let n = COLOR_NAMES.len();
        let mut v = vec![0.0; self.dim()];
        if let Some(c) = slots.upper {
            v[c] = 1.0;
        }
        if let Some(c) = slots.lower {
            v[n + c] = 1.0;
        }
        if let Some(b) = slots.body {
            v[2 * n + b] = 1.0;
        }
        if let Some(r) = slots.region {
            if r != RegionName::FullBody {
                v[2 * n + BODY_NAMES.len() + r.index() - 1] = 1.0;
            }
        }
        PromptEmbedding { values: v }
    }

    pub fn embed(&self, prompt: &str) -> Result<PromptEmbedding> {
        Ok(self.embed_slots(&self.parse(prompt)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Skeleton;

    fn vocab() -> Vocabulary {
        let s = Skeleton::default();
        Vocabulary::new(&RegionSet::for_skeleton(&s, [0.0; 3]))
    }

    #[test]
    fn parses_slots_and_regions() {
        let v = vocab();
        let s = v.parse("red upper, blue lower").unwrap();
        assert_eq!((s.upper, s.lower, s.body, s.region), (Some(0), Some(2), None, None));
        let s = v.parse("back view of upper body of red upper, blue lower").unwrap();
        assert_eq!(s.region, Some(RegionName::UpperBack));
        assert_eq!(s.upper, Some(0));
        let s = v.parse("upper body of a woman wearing a green shirt").unwrap();
        assert_eq!((s.region, s.upper, s.body), (Some(RegionName::UpperFront), Some(1), Some(1)));
    }

    #[test]
    fn unknown_words_are_rejected() {
        let v = vocab();
        assert!(matches!(v.parse("red hat"), Err(Error::UnknownToken(_))));
        assert!(matches!(v.parse("spaceship"), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn null_token_embeds_to_zero() {
        let v = vocab();
        assert!(v.contains(NULL_TOKEN));
        assert!(v.embed(NULL_TOKEN).unwrap().is_null());
        assert!(!v.embed("red upper").unwrap().is_null());
        assert_eq!(v.embed("red upper").unwrap().dim(), v.dim());
    }
}
