//! MQM dimension taxonomy and the domain vocabulary shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MqmError {
    #[error("unknown quality dimension: {0:?}")]
    UnknownDimension(String),
    #[error("invalid language pair: {0}")]
    InvalidLanguagePair(String),
    #[error("invalid job context: {0}")]
    InvalidJob(String),
}

/// One of the seven MQM quality dimensions an expert agent specializes in.
///
/// Declaration order is the canonical ordinal order; `Ord` follows it and every
/// module relies on it for deterministic ordering of results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QualityDimension {
    Accuracy,
    Terminology,
    Fluency,
    Style,
    AudienceAppropriateness,
    LocaleConvention,
    DesignAndMarkup,
}

const ALL: [QualityDimension; 7] = [
    QualityDimension::Accuracy,
    QualityDimension::Terminology,
    QualityDimension::Fluency,
    QualityDimension::Style,
    QualityDimension::AudienceAppropriateness,
    QualityDimension::LocaleConvention,
    QualityDimension::DesignAndMarkup,
];

const ALIASES: &[(&str, QualityDimension)] = &[
    ("audience", QualityDimension::AudienceAppropriateness),
    ("locale", QualityDimension::LocaleConvention),
    ("design", QualityDimension::DesignAndMarkup),
    ("markup", QualityDimension::DesignAndMarkup),
];

impl QualityDimension {
    /// Human label used verbatim in payloads, TM records and prompts.
    pub fn label(self) -> &'static str {
        match self {
            Self::Accuracy => "Accuracy",
            Self::Terminology => "Terminology",
            Self::Fluency => "Fluency",
            Self::Style => "Style",
            Self::AudienceAppropriateness => "Audience Appropriateness",
            Self::LocaleConvention => "Locale Convention",
            Self::DesignAndMarkup => "Design and Markup",
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Short file-system friendly name, used for template file names.
    pub fn slug(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Terminology => "terminology",
            Self::Fluency => "fluency",
            Self::Style => "style",
            Self::AudienceAppropriateness => "audience_appropriateness",
            Self::LocaleConvention => "locale_convention",
            Self::DesignAndMarkup => "design_and_markup",
        }
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Self> {
        ALL.get(ordinal).copied()
    }
}

/// All seven dimensions in canonical ordinal order.
pub fn all_dimensions() -> &'static [QualityDimension] {
    &ALL
}

/// Parses a dimension label: case-insensitive, whitespace-trimmed, aliases allowed.
pub fn dimension_from_label(label: &str) -> Result<QualityDimension, MqmError> {
    let needle = normalize_label(label);
    ALL.iter()
        .copied()
        .find(|d| normalize_label(d.label()) == needle)
        .or_else(|| {
            ALIASES
                .iter()
                .find(|(alias, _)| *alias == needle)
                .map(|(_, d)| *d)
        })
        .ok_or_else(|| MqmError::UnknownDimension(label.to_string()))
}

// Lowercased with inner whitespace runs collapsed so that "Locale  Convention"
// and "locale convention" agree.
fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl fmt::Display for QualityDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for QualityDimension {
    type Err = MqmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        dimension_from_label(s)
    }
}

impl Serialize for QualityDimension {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for QualityDimension {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let label = String::deserialize(deserializer)?;
        dimension_from_label(&label).map_err(serde::de::Error::custom)
    }
}

/// Source and target language codes, e.g. `en` → `de`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LanguagePair {
    pub source_lang: String,
    pub target_lang: String,
}

impl LanguagePair {
    pub fn new(source_lang: &str, target_lang: &str) -> Result<Self, MqmError> {
        let pair = Self {
            source_lang: source_lang.trim().to_string(),
            target_lang: target_lang.trim().to_string(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), MqmError> {
        for code in [&self.source_lang, &self.target_lang] {
            if code.is_empty() {
                return Err(MqmError::InvalidLanguagePair("empty language code".into()));
            }
            if code.chars().any(|c| c.is_uppercase() || c.is_whitespace()) {
                return Err(MqmError::InvalidLanguagePair(format!(
                    "language code {code:?} must be lowercase without spaces"
                )));
            }
        }
        if self.source_lang == self.target_lang {
            return Err(MqmError::InvalidLanguagePair(format!(
                "source and target are both {:?}",
                self.source_lang
            )));
        }
        Ok(())
    }

    /// Direction key such as `en-de`.
    pub fn direction(&self) -> String {
        format!("{}-{}", self.source_lang, self.target_lang)
    }
}

impl<'de> Deserialize<'de> for LanguagePair {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            source_lang: String,
            target_lang: String,
        }
        let raw = Raw::deserialize(deserializer)?;
        let pair = LanguagePair {
            source_lang: raw.source_lang,
            target_lang: raw.target_lang,
        };
        pair.validate().map_err(serde::de::Error::custom)?;
        Ok(pair)
    }
}

impl fmt::Display for LanguagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}→{}", self.source_lang, self.target_lang)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Low,
    #[default]
    Normal,
    High,
}

/// The job a segment belongs to. `job_id` keys the job TM namespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobContext {
    pub job_id: String,
    #[serde(default)]
    pub domain_tag: String,
    #[serde(default)]
    pub audience_note: String,
    #[serde(default)]
    pub visibility: Visibility,
}

impl JobContext {
    pub fn new(job_id: impl Into<String>) -> Self {
        Self {
            job_id: job_id.into(),
            domain_tag: String::new(),
            audience_note: String::new(),
            visibility: Visibility::Normal,
        }
    }

    pub fn validate(&self) -> Result<(), MqmError> {
        if self.job_id.trim().is_empty() {
            return Err(MqmError::InvalidJob("job_id must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_label_parses() {
        assert_eq!(dimension_from_label("Accuracy").unwrap(), QualityDimension::Accuracy);
    }

    #[test]
    fn alias_with_whitespace_parses() {
        assert_eq!(
            dimension_from_label(" locale ").unwrap(),
            QualityDimension::LocaleConvention
        );
        assert_eq!(
            dimension_from_label("MARKUP").unwrap(),
            QualityDimension::DesignAndMarkup
        );
        assert_eq!(
            dimension_from_label("design").unwrap(),
            QualityDimension::DesignAndMarkup
        );
        assert_eq!(
            dimension_from_label("Audience").unwrap(),
            QualityDimension::AudienceAppropriateness
        );
    }

    #[test]
    fn unknown_label_is_rejected() {
        assert_eq!(
            dimension_from_label("speed"),
            Err(MqmError::UnknownDimension("speed".into()))
        );
    }

    #[test]
    fn taxonomy_is_fixed_and_ordered() {
        let dims = all_dimensions();
        assert_eq!(dims.len(), 7);
        assert_eq!(dims[0], QualityDimension::Accuracy);
        assert_eq!(dims[6], QualityDimension::DesignAndMarkup);
        assert!(dims.windows(2).all(|w| w[0].ordinal() < w[1].ordinal()));
        assert_eq!(all_dimensions(), dims);
    }

    #[test]
    fn labels_round_trip_and_are_case_insensitive_unique() {
        let mut seen = std::collections::HashSet::new();
        for &d in all_dimensions() {
            assert_eq!(dimension_from_label(d.label()).unwrap(), d);
            assert_eq!(dimension_from_label(&d.label().to_uppercase()).unwrap(), d);
            assert!(seen.insert(d.label().to_lowercase()));
            assert_eq!(QualityDimension::from_ordinal(d.ordinal()), Some(d));
        }
    }

    #[test]
    fn serde_uses_human_labels() {
        let json = serde_json::to_string(&QualityDimension::AudienceAppropriateness).unwrap();
        assert_eq!(json, "\"Audience Appropriateness\"");
        let back: QualityDimension = serde_json::from_str(&json).unwrap();
        assert_eq!(back, QualityDimension::AudienceAppropriateness);
    }

    #[test]
    fn language_pair_rules() {
        assert!(LanguagePair::new("en", "de").is_ok());
        assert!(LanguagePair::new("en", "en").is_err());
        assert!(LanguagePair::new("", "de").is_err());
        assert!(LanguagePair::new("EN", "de").is_err());
        assert_eq!(LanguagePair::new("en", "ja").unwrap().direction(), "en-ja");
        assert!(serde_json::from_str::<LanguagePair>(
            r#"{"source_lang":"de","target_lang":"de"}"#
        )
        .is_err());
    }

    #[test]
    fn job_id_required() {
        assert!(JobContext::new("").validate().is_err());
        assert!(JobContext::new("job-1").validate().is_ok());
    }
}
