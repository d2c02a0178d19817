use super::{
    select_demos_random_excluding, AutoCotClusters, DemoOrder, Demonstration, PromptError, Rationales, StrategyConfig,
    StrategyKind,
};
use crate::dataset::{Dataset, TriageRecord};
use crate::retrieval::KateRetriever;
use crate::serialize::{serialize_record, SerializationOptions};

/// What demonstration selection may draw on. Retrieval strategies need
/// `kate`, AutoCoT needs `autocot`, and rationale-carrying strategies need
/// `rationales` for every selected record.
pub struct DemoSources<'a> {
    pub train: &'a Dataset,
    /// Serialization of demonstration inputs.
    pub opts: SerializationOptions,
    pub kate: Option<&'a KateRetriever<'a>>,
    pub autocot: Option<&'a AutoCotClusters>,
    pub rationales: Option<&'a Rationales>,
}

impl<'a> DemoSources<'a> {
    pub fn new(train: &'a Dataset, opts: SerializationOptions) -> Self {
        Self { train, opts, kate: None, autocot: None, rationales: None }
    }
}

/// Training records used as demonstrations for `record`, in prompt order.
/// The query itself is never among them.
pub fn demo_records_for<'a>(
    strategy: &StrategyConfig,
    record: &TriageRecord,
    sources: &DemoSources<'a>,
) -> Result<Vec<&'a TriageRecord>, PromptError> {
    let kind = strategy.kind;
    match kind {
        StrategyKind::ZeroShotVanilla | StrategyKind::ZeroShotCot | StrategyKind::FineTunedExternal => Ok(Vec::new()),
        StrategyKind::FewShot | StrategyKind::FewShotCot => {
            select_demos_random_excluding(sources.train, strategy.shots, strategy.seed, Some(&record.id))
        }
        StrategyKind::Kate | StrategyKind::KateCot => {
            let kate = sources.kate.ok_or(PromptError::MissingSource(kind, "a KATE retriever"))?;
            let mut out = kate.retrieve(record, strategy.shots)?;
            if strategy.demo_order == DemoOrder::MostSimilarLast {
                out.reverse();
            }
            Ok(out)
        }
        StrategyKind::AutoCot => {
            let clusters = sources.autocot.ok_or(PromptError::MissingSource(kind, "AutoCoT clusters"))?;
            Ok(clusters
                .representatives(Some(&record.id))
                .into_iter()
                .filter_map(|id| sources.train.get(id))
                .collect())
        }
    }
}

pub fn to_demonstrations(
    strategy: &StrategyConfig,
    records: &[&TriageRecord],
    sources: &DemoSources<'_>,
) -> Result<Vec<Demonstration>, PromptError> {
    records
        .iter()
        .map(|r| {
            let answer = r.label.ok_or_else(|| PromptError::UnlabeledDemonstration(r.id.clone()))?;
            let rationale = if strategy.kind.demo_rationales() {
                let all = sources.rationales.ok_or(PromptError::MissingSource(strategy.kind, "rationales"))?;
                Some(all.get(&r.id).cloned().ok_or_else(|| PromptError::MissingRationale(r.id.clone()))?)
            } else {
                None
            };
            Ok(Demonstration { source_id: r.id.clone(), input_text: serialize_record(r, &sources.opts)?, rationale, answer })
        })
        .collect()
}

/// Demonstrations for `record` under `strategy`.
pub fn build_demos_for(
    strategy: &StrategyConfig,
    record: &TriageRecord,
    sources: &DemoSources<'_>,
) -> Result<Vec<Demonstration>, PromptError> {
    let records = demo_records_for(strategy, record, sources)?;
    to_demonstrations(strategy, &records, sources)
}
