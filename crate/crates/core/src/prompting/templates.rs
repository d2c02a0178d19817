use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::dataset::Protocol;

const DEFAULT_TEMPLATES: &str = include_str!("templates.toml");

/// Externalized prompt wording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplates {
    pub system: String,
    /// Step-by-step instruction added to the query of CoT strategies.
    pub reasoning: String,
    pub answer_format: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl PromptTemplates {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let t: Self = toml::from_str(text).map_err(|e| PromptError::Template(e.to_string()))?;
        t.check()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn check(&self) -> Result<(), PromptError> {
        for (name, text) in [("system", &self.system), ("answer_format", &self.answer_format)] {
            if !text.contains("Acuity: N") {
                return Err(PromptError::Template(format!("{name} must spell out the \"Acuity: N\" answer line")));
            }
        }
        Ok(())
    }

    pub fn system_message(&self, protocol: Protocol) -> String {
        self.system
            .replace("{protocol_long}", protocol.long_name())
            .replace("{protocol}", protocol.short_name())
    }
}
