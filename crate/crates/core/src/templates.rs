//! Prompt templates.
//!
//! Templates are plain UTF-8 files with `{{name}}` placeholders. Multi-message
//! templates split into `### system` and `### user` sections. The shipped set is
//! compiled in; a directory holding files of the same names overrides it.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::mqm::{all_dimensions, QualityDimension};

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {name}: unknown placeholder {{{{{placeholder}}}}}")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("template {name}: unterminated placeholder")]
    Unterminated { name: String },
    #[error("template {name}: missing `### {section}` section")]
    MissingSection { name: String, section: &'static str },
    #[error("cannot read template {name}: {source}")]
    Io {
        name: String,
        source: std::io::Error,
    },
}

/// A parsed template with its allowed placeholder names.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    name: String,
    text: String,
}

impl Template {
    pub fn new(name: &str, text: &str, allowed: &[&str]) -> Result<Self, TemplateError> {
        for placeholder in placeholders(name, text)? {
            if !allowed.contains(&placeholder.as_str()) {
                return Err(TemplateError::UnknownPlaceholder {
                    name: name.to_string(),
                    placeholder,
                });
            }
        }
        Ok(Self {
            name: name.to_string(),
            text: text.trim().to_string(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Substitutes placeholders in a single pass; inserted values are never
    /// rescanned. Placeholders without a value render as empty text.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            // Validated at construction, so the closing braces exist.
            let end = after.find("}}").unwrap_or(after.len());
            let key = after[..end].trim();
            if let Some((_, v)) = values.iter().find(|(k, _)| *k == key) {
                out.push_str(v);
            }
            rest = after.get(end + 2..).unwrap_or("");
        }
        out.push_str(rest);
        out
    }
}

fn placeholders(name: &str, text: &str) -> Result<Vec<String>, TemplateError> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| TemplateError::Unterminated {
            name: name.to_string(),
        })?;
        found.push(after[..end].trim().to_string());
        rest = &after[end + 2..];
    }
    Ok(found)
}

/// System and user halves of a two-message prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub system: Template,
    pub user: Template,
}

impl PromptTemplate {
    pub fn parse(name: &str, text: &str, allowed: &[&str]) -> Result<Self, TemplateError> {
        let (system, user) = split_sections(name, text)?;
        Ok(Self {
            system: Template::new(&format!("{name}#system"), system, allowed)?,
            user: Template::new(&format!("{name}#user"), user, allowed)?,
        })
    }
}

fn split_sections<'a>(name: &str, text: &'a str) -> Result<(&'a str, &'a str), TemplateError> {
    let missing = |section| TemplateError::MissingSection {
        name: name.to_string(),
        section,
    };
    let sys_at = text.find("### system").ok_or_else(|| missing("system"))?;
    let user_at = text.find("### user").ok_or_else(|| missing("user"))?;
    if user_at < sys_at {
        return Err(missing("system"));
    }
    let system = &text[sys_at + "### system".len()..user_at];
    let user = &text[user_at + "### user".len()..];
    Ok((system, user))
}

pub const AGENT_PLACEHOLDERS: &[&str] = &["source", "draft", "goal", "tm_block", "job"];
pub const REVISE_PLACEHOLDERS: &[&str] =
    &["source", "draft", "goal", "tm_block", "job", "instruction"];
pub const EDITOR_PLACEHOLDERS: &[&str] = &["source", "draft", "goal", "tm_block", "job", "candidates"];
pub const ROUTER_PLACEHOLDERS: &[&str] = &["instruction", "source", "draft", "tm_block", "job"];
pub const ZERO_SHOT_PLACEHOLDERS: &[&str] = &["source", "src_lang", "tgt_lang"];
pub const SELF_REFINE_PLACEHOLDERS: &[&str] =
    &["source", "draft", "dimensions", "src_lang", "tgt_lang"];

fn shipped(file: &str) -> &'static str {
    match file {
        "accuracy.txt" => include_str!("../templates/accuracy.txt"),
        "terminology.txt" => include_str!("../templates/terminology.txt"),
        "fluency.txt" => include_str!("../templates/fluency.txt"),
        "style.txt" => include_str!("../templates/style.txt"),
        "audience_appropriateness.txt" => include_str!("../templates/audience_appropriateness.txt"),
        "locale_convention.txt" => include_str!("../templates/locale_convention.txt"),
        "design_and_markup.txt" => include_str!("../templates/design_and_markup.txt"),
        "agent_task.txt" => include_str!("../templates/agent_task.txt"),
        "revise_task.txt" => include_str!("../templates/revise_task.txt"),
        "editor.txt" => include_str!("../templates/editor.txt"),
        "router.txt" => include_str!("../templates/router.txt"),
        "zero_shot.txt" => include_str!("../templates/zero_shot.txt"),
        "self_refine.txt" => include_str!("../templates/self_refine.txt"),
        other => unreachable!("no shipped template {other}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    charters: HashMap<QualityDimension, Template>,
    pub agent_task: Template,
    pub revise_task: Template,
    pub editor: PromptTemplate,
    pub router: PromptTemplate,
    pub zero_shot: PromptTemplate,
    pub self_refine: PromptTemplate,
}

impl TemplateSet {
    pub fn shipped() -> Self {
        Self::build(|f| Ok(shipped(f).to_string())).expect("shipped templates are valid")
    }

    /// Shipped templates, overridden by any same-named files in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        Self::build(|file| {
            let path = dir.join(file);
            if path.exists() {
                std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    name: file.to_string(),
                    source,
                })
            } else {
                Ok(shipped(file).to_string())
            }
        })
    }

    fn build<F>(load: F) -> Result<Self, TemplateError>
    where
        F: Fn(&str) -> Result<String, TemplateError>,
    {
        let mut charters = HashMap::new();
        for &d in all_dimensions() {
            let file = format!("{}.txt", d.slug());
            charters.insert(d, Template::new(&file, &load(&file)?, AGENT_PLACEHOLDERS)?);
        }
        Ok(Self {
            charters,
            agent_task: Template::new("agent_task.txt", &load("agent_task.txt")?, AGENT_PLACEHOLDERS)?,
            revise_task: Template::new(
                "revise_task.txt",
                &load("revise_task.txt")?,
                REVISE_PLACEHOLDERS,
            )?,
            editor: PromptTemplate::parse("editor.txt", &load("editor.txt")?, EDITOR_PLACEHOLDERS)?,
            router: PromptTemplate::parse("router.txt", &load("router.txt")?, ROUTER_PLACEHOLDERS)?,
            zero_shot: PromptTemplate::parse(
                "zero_shot.txt",
                &load("zero_shot.txt")?,
                ZERO_SHOT_PLACEHOLDERS,
            )?,
            self_refine: PromptTemplate::parse(
                "self_refine.txt",
                &load("self_refine.txt")?,
                SELF_REFINE_PLACEHOLDERS,
            )?,
        })
    }

    pub fn charter(&self, dimension: QualityDimension) -> &Template {
        &self.charters[&dimension]
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::shipped()
    }
}
