use std::collections::BTreeMap;

use super::{build_prompt_with, PromptError, PromptTemplates, StrategyConfig, StrategyKind};
use crate::dataset::{Protocol, TriageRecord};
use crate::gateway::{hash_key, strip_answer_lines, CompletionJob, Gateway, JsonlCache, Subject};
use crate::serialize::SerializationOptions;

/// Generated rationales by training-record id.
pub type Rationales = BTreeMap<String, String>;

/// Produces demonstration rationales with a zero-shot CoT prompt, once per
/// (record id, endpoint, prompt) and cached in an append-only file.
pub struct RationaleGenerator<'a> {
    gateway: &'a Gateway,
    templates: &'a PromptTemplates,
    protocol: Protocol,
    opts: SerializationOptions,
    cache: JsonlCache<String>,
}

impl<'a> RationaleGenerator<'a> {
    /// `opts` is the demonstration serialization; `cache` is usually opened
    /// with [`JsonlCache::open`] on a `rationales.jsonl` file.
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a PromptTemplates,
        protocol: Protocol,
        opts: SerializationOptions,
        cache: JsonlCache<String>,
    ) -> Self {
        Self { gateway, templates, protocol, opts, cache }
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    fn job(&self, record: &TriageRecord) -> Result<(String, CompletionJob), PromptError> {
        let strategy = StrategyConfig::new(StrategyKind::ZeroShotCot);
        let bundle = build_prompt_with(self.templates, &strategy, record, &[], self.protocol, &self.opts)?;
        let messages = bundle.to_messages();
        let prompt_hash = hash_key(&[&serde_json::to_string(&messages).expect("messages serialize")]);
        let key = hash_key(&[&record.id, &self.gateway.endpoint().identity(), &prompt_hash]);
        let subject = Subject { record: record.clone(), demographics: Default::default() };
        Ok((key, CompletionJob { messages, subject: Some(subject) }))
    }

    /// Ensures `out` holds a rationale for every record, calling the gateway
    /// only for cache misses. Returns the number of records generated.
    pub fn generate(&self, records: &[&TriageRecord], out: &mut Rationales) -> Result<usize, PromptError> {
        let mut misses = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for r in records {
            if !seen.insert(r.id.as_str()) {
                continue;
            }
            let (key, job) = self.job(r)?;
            match self.cache.get(&key) {
                Some(text) => {
                    out.insert(r.id.clone(), text);
                }
                None => misses.push((r.id.clone(), key, job)),
            }
        }
        let jobs: Vec<CompletionJob> = misses.iter().map(|(_, _, j)| j.clone()).collect();
        let results = self.gateway.complete_batch(&jobs);
        for ((id, key, _), result) in misses.iter().zip(results) {
            let text = strip_answer_lines(&result?.raw_text);
            let text = self.cache.insert(key, text)?;
            out.insert(id.clone(), text);
        }
        Ok(misses.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockSpec, ModelEndpoint};

    #[test]
    fn generated_once_then_cached() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rationales.jsonl");
        let gw = Gateway::new(ModelEndpoint::mock("m", MockSpec::rule_based())).unwrap();
        let templates = PromptTemplates::default();
        let mut r = TriageRecord::new("d1", "short of breath");
        r.vitals.spo2 = Some(88.0);
        let opts = SerializationOptions::default();

        let gen = RationaleGenerator::new(&gw, &templates, Protocol::Esi, opts.clone(), JsonlCache::open(&path, "rationale").unwrap());
        let mut out = Rationales::new();
        assert_eq!(gen.generate(&[&r, &r], &mut out).unwrap(), 1);
        let text = out["d1"].clone();
        assert!(!text.is_empty() && !text.contains("Acuity:"));

        let gw2 = Gateway::new(ModelEndpoint::mock("m", MockSpec::rule_based())).unwrap();
        let gen2 = RationaleGenerator::new(&gw2, &templates, Protocol::Esi, opts, JsonlCache::open(&path, "rationale").unwrap());
        let mut again = Rationales::new();
        assert_eq!(gen2.generate(&[&r], &mut again).unwrap(), 0);
        assert_eq!(gw2.stats().network_calls, 0);
        assert_eq!(again["d1"], text);
    }
}
