use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PROMPT: &str =
    "A professional headshot of a subject wearing a suit in a well-lit studio, DSLR.";

pub const RARE_TOKEN_SLOT: &str = "[V]";
pub const CLASS_SLOT: &str = "[class]";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    /// Concept tag recorded on images generated from this prompt.
    pub tag: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPool {
    pub prompts: Vec<PromptEntry>,
}

impl Default for PromptPool {
    fn default() -> Self {
        PromptPool {
            prompts: vec![PromptEntry {
                tag: "default".into(),
                text: DEFAULT_PROMPT.into(),
            }],
        }
    }
}

impl PromptPool {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::invalid(format!("{} is not UTF-8", path.display())))?;
        Ok(parse_prompts(&text))
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.prompts.iter().map(|p| p.text.as_str())
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// One prompt per line. Blank lines and lines starting with `#` are dropped;
/// `tag<TAB>prompt` assigns an explicit concept tag (otherwise the prompt is
/// its own tag). Duplicate prompts keep their first occurrence.
pub fn parse_prompts(text: &str) -> PromptPool {
    let mut seen = HashSet::new();
    let mut prompts = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (tag, prompt) = match line.split_once('\t') {
            Some((t, p)) if !t.trim().is_empty() && !p.trim().is_empty() => (t.trim(), p.trim()),
            _ => (line, line),
        };
        if seen.insert(prompt.to_owned()) {
            prompts.push(PromptEntry {
                tag: tag.to_owned(),
                text: prompt.to_owned(),
            });
        }
    }
    if prompts.is_empty() {
        return PromptPool::default();
    }
    PromptPool { prompts }
}

/// Fills `[V]` with the rare token and `[class]` with the class noun. The
/// result must mention the class noun; `[V]` may appear at most once.
pub fn instantiate_template(template: &str, rare_token: &str, class_noun: &str) -> Result<String> {
    if class_noun.trim().is_empty() {
        return Err(Error::invalid("class noun is empty"));
    }
    let slots = template.matches(RARE_TOKEN_SLOT).count();
    if slots > 1 {
        return Err(Error::invalid(format!(
            "template uses {RARE_TOKEN_SLOT} {slots} times: {template}"
        )));
    }
    let out = template.replace(RARE_TOKEN_SLOT, rare_token).replace(CLASS_SLOT, class_noun);
    if !contains_phrase(&out, class_noun) {
        return Err(Error::invalid(format!(
            "instantiated prompt does not mention '{class_noun}': {out}"
        )));
    }
    Ok(out)
}

/// Case-insensitive phrase match on word boundaries.
fn contains_phrase(text: &str, phrase: &str) -> bool {
    let (text, phrase) = (text.to_lowercase(), phrase.trim().to_lowercase());
    text.match_indices(&phrase).any(|(i, m)| {
        let before = text[..i].chars().next_back();
        let after = text[i + m.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}
