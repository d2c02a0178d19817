//! Prompt assembly for the evaluation strategies and demonstration selection.

mod autocot;
mod demos;
mod rationale;
mod select;
mod templates;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use autocot::{kmeans, select_demos_autocot, AutoCotClusters, KMEANS_ITERATIONS};
pub use demos::{build_demos_for, demo_records_for, to_demonstrations, DemoSources};
pub use rationale::{RationaleGenerator, Rationales};
pub use select::{select_demos_random, select_demos_random_excluding};
pub use templates::PromptTemplates;

use crate::dataset::{AcuityLevel, Protocol, TriageRecord};
use crate::gateway::{ChatMessage, GatewayError, CacheError};
use crate::retrieval::RetrievalError;
use crate::serialize::{serialize_record, SerializationOptions, SerializeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    ZeroShotVanilla,
    ZeroShotCot,
    AutoCot,
    FewShot,
    FewShotCot,
    Kate,
    KateCot,
    FineTunedExternal,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::ZeroShotVanilla,
        StrategyKind::ZeroShotCot,
        StrategyKind::AutoCot,
        StrategyKind::FewShot,
        StrategyKind::FewShotCot,
        StrategyKind::Kate,
        StrategyKind::KateCot,
        StrategyKind::FineTunedExternal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::ZeroShotVanilla => "zero_shot_vanilla",
            StrategyKind::ZeroShotCot => "zero_shot_cot",
            StrategyKind::AutoCot => "auto_cot",
            StrategyKind::FewShot => "few_shot",
            StrategyKind::FewShotCot => "few_shot_cot",
            StrategyKind::Kate => "kate",
            StrategyKind::KateCot => "kate_cot",
            StrategyKind::FineTunedExternal => "fine_tuned_external",
        }
    }

    pub fn is_cot(self) -> bool {
        matches!(self, StrategyKind::ZeroShotCot | StrategyKind::AutoCot | StrategyKind::FewShotCot | StrategyKind::KateCot)
    }

    /// Kinds taking a `shots` count.
    pub fn uses_shots(self) -> bool {
        matches!(self, StrategyKind::FewShot | StrategyKind::FewShotCot | StrategyKind::Kate | StrategyKind::KateCot)
    }

    pub fn is_kate(self) -> bool {
        matches!(self, StrategyKind::Kate | StrategyKind::KateCot)
    }

    /// Whether demonstrations carry generated rationales.
    pub fn demo_rationales(self) -> bool {
        matches!(self, StrategyKind::AutoCot | StrategyKind::FewShotCot | StrategyKind::KateCot)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy {given:?}; expected one of: {}", StrategyKind::ALL.map(|k| k.name()).join(", "))]
pub struct UnknownStrategy {
    pub given: String,
}

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().replace('_', "") == norm)
            .ok_or_else(|| UnknownStrategy { given: s.to_string() })
    }
}

/// Placement of demonstrations relative to their similarity to the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoOrder {
    /// Most similar demonstration directly before the query.
    #[default]
    MostSimilarLast,
    MostSimilarFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default)]
    pub shots: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub autocot_clusters: Option<usize>,
    #[serde(default)]
    pub demo_order: DemoOrder,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, shots: 0, seed: 0, autocot_clusters: None, demo_order: DemoOrder::default() }
    }

    pub fn with_shots(kind: StrategyKind, shots: usize) -> Self {
        Self { shots, ..Self::new(kind) }
    }

    /// Number of demonstrations a prompt for this strategy carries.
    pub fn expected_demos(&self) -> usize {
        match self.kind {
            StrategyKind::AutoCot => self.autocot_clusters.unwrap_or(0),
            k if k.uses_shots() => self.shots,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |m: String| Err(PromptError::InvalidStrategy(m));
        if self.kind.uses_shots() != (self.shots > 0) {
            return bad(if self.shots == 0 {
                format!("{} needs shots > 0", self.kind)
            } else {
                format!("{} takes no shots", self.kind)
            });
        }
        match (self.kind, self.autocot_clusters) {
            (StrategyKind::AutoCot, None | Some(0)) => bad("auto_cot needs autocot_clusters > 0".into()),
            (StrategyKind::AutoCot, _) | (_, None) => Ok(()),
            (k, Some(_)) => bad(format!("{k} takes no autocot_clusters")),
        }
    }

    /// Short label used in reports, e.g. `kate_cot@10`.
    pub fn label(&self) -> String {
        match self.kind {
            k if k.uses_shots() => format!("{k}@{}", self.shots),
            StrategyKind::AutoCot => format!("auto_cot@{}", self.autocot_clusters.unwrap_or(0)),
            k => k.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    /// Id of the training record the demonstration was built from.
    pub source_id: String,
    pub input_text: String,
    pub rationale: Option<String>,
    pub answer: AcuityLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_message: String,
    pub demonstrations: Vec<Demonstration>,
    pub query_text: String,
    pub reasoning_instruction: Option<String>,
    pub answer_format_instruction: String,
}

pub fn answer_line(level: AcuityLevel) -> String {
    format!("Acuity: {level}")
}

impl PromptBundle {
    /// Chat messages: system, one user/assistant pair per demonstration,
    /// then the query.
    pub fn to_messages(&self) -> Vec<ChatMessage> {
        let mut out = vec![ChatMessage::system(&self.system_message)];
        for d in &self.demonstrations {
            out.push(ChatMessage::user(&d.input_text));
            out.push(ChatMessage::assistant(match &d.rationale {
                Some(r) => format!("{r}\n{}", answer_line(d.answer)),
                None => answer_line(d.answer),
            }));
        }
        let mut query = self.query_text.clone();
        if let Some(r) = &self.reasoning_instruction {
            query.push_str("\n\n");
            query.push_str(r);
        }
        query.push_str("\n\n");
        query.push_str(&self.answer_format_instruction);
        out.push(ChatMessage::user(query));
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("strategy expects {expected} demonstrations, got {got}")]
    ShotMismatch { expected: usize, got: usize },
    #[error("{shots} demonstrations requested but only {available} labelled training records")]
    ShotsExceedTrain { shots: usize, available: usize },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("no rationale for demonstration record {0}")]
    MissingRationale(String),
    #[error("demonstration record {0} has no gold label")]
    UnlabeledDemonstration(String),
    #[error("strategy {0} needs {1}, which was not prepared")]
    MissingSource(StrategyKind, &'static str),
    #[error("template error: {0}")]
    Template(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
}

/// Builds the prompt for `record` with bundled templates.
pub fn build_prompt(
    strategy: &StrategyConfig,
    record: &TriageRecord,
    demos: &[Demonstration],
    protocol: Protocol,
    opts: &SerializationOptions,
) -> Result<PromptBundle, PromptError> {
    build_prompt_with(&PromptTemplates::default(), strategy, record, demos, protocol, opts)
}

pub fn build_prompt_with(
    templates: &PromptTemplates,
    strategy: &StrategyConfig,
    record: &TriageRecord,
    demos: &[Demonstration],
    protocol: Protocol,
    opts: &SerializationOptions,
) -> Result<PromptBundle, PromptError> {
    let expected = strategy.expected_demos();
    if demos.len() != expected {
        return Err(PromptError::ShotMismatch { expected, got: demos.len() });
    }
    Ok(PromptBundle {
        system_message: templates.system_message(protocol),
        demonstrations: demos.to_vec(),
        query_text: serialize_record(record, opts)?,
        reasoning_instruction: strategy.kind.is_cot().then(|| templates.reasoning.clone()),
        answer_format_instruction: templates.answer_format.clone(),
    })
}

/// Serialization used for demonstration inputs: the configured style without
/// the demographic sentence.
pub fn demo_serialization(opts: &SerializationOptions) -> SerializationOptions {
    SerializationOptions { include_demographics: false, ..opts.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Role;

    fn record() -> TriageRecord {
        let mut r = TriageRecord::new("q", "chest pain");
        r.vitals.heart_rate = Some(110.0);
        r
    }

    fn demo(id: &str, level: u8, rationale: Option<&str>) -> Demonstration {
        Demonstration {
            source_id: id.into(),
            input_text: format!("Chief complaint: {id}."),
            rationale: rationale.map(String::from),
            answer: AcuityLevel::new(level).unwrap(),
        }
    }

    #[test]
    fn zero_shot_has_answer_instruction_only() {
        let s = StrategyConfig::new(StrategyKind::ZeroShotVanilla);
        let b = build_prompt(&s, &record(), &[], Protocol::Esi, &SerializationOptions::default()).unwrap();
        let m = b.to_messages();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].role, Role::System);
        assert!(m[1].content.ends_with(&b.answer_format_instruction));
        assert!(!m[1].content.contains("step by step"));
    }

    #[test]
    fn few_shot_turns_precede_query() {
        let s = StrategyConfig::with_shots(StrategyKind::FewShot, 2);
        let demos = [demo("a", 2, None), demo("b", 4, None)];
        let b = build_prompt(&s, &record(), &demos, Protocol::Ktas, &SerializationOptions::default()).unwrap();
        let m = b.to_messages();
        let roles: Vec<Role> = m.iter().map(|x| x.role).collect();
        assert_eq!(roles, [Role::System, Role::User, Role::Assistant, Role::User, Role::Assistant, Role::User]);
        assert_eq!(m[2].content, "Acuity: 2");
        assert!(m[0].content.contains("KTAS"));
    }

    #[test]
    fn cot_demos_carry_rationale_then_answer() {
        let s = StrategyConfig::with_shots(StrategyKind::KateCot, 1);
        let b = build_prompt(&s, &record(), &[demo("a", 3, Some("Tachycardic."))], Protocol::Esi, &SerializationOptions::default()).unwrap();
        let m = b.to_messages();
        assert_eq!(m[2].content, "Tachycardic.\nAcuity: 3");
        let q = &m[3].content;
        let reason = q.find(&PromptTemplates::default().reasoning).unwrap();
        let answer = q.find(&b.answer_format_instruction).unwrap();
        assert!(reason < answer);
    }

    #[test]
    fn shot_mismatch() {
        let s = StrategyConfig::with_shots(StrategyKind::FewShot, 3);
        let err = build_prompt(&s, &record(), &[demo("a", 1, None)], Protocol::Esi, &SerializationOptions::default());
        assert!(matches!(err, Err(PromptError::ShotMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn strategy_invariants() {
        assert!(StrategyConfig::new(StrategyKind::FewShot).validate().is_err());
        assert!(StrategyConfig::with_shots(StrategyKind::ZeroShotCot, 2).validate().is_err());
        assert!(StrategyConfig::new(StrategyKind::AutoCot).validate().is_err());
        let auto = StrategyConfig { autocot_clusters: Some(4), ..StrategyConfig::new(StrategyKind::AutoCot) };
        assert!(auto.validate().is_ok());
        let ft = StrategyConfig { autocot_clusters: Some(4), ..StrategyConfig::new(StrategyKind::FineTunedExternal) };
        assert!(ft.validate().is_err());
        assert!(StrategyConfig::new(StrategyKind::FineTunedExternal).validate().is_ok());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert_eq!("KateCoT".parse::<StrategyKind>().unwrap(), StrategyKind::KateCot);
        let err = "kate-plus".parse::<StrategyKind>().unwrap_err().to_string();
        assert!(err.contains("zero_shot_vanilla") && err.contains("fine_tuned_external"));
    }
}
