use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use super::cache::cache_key;
use super::{
    build_prompt, chain_key, parse_relation, render_chain, try_parse_relation, AnnotationCache, CacheRecord, KamError,
    PairAnnotation, PromptText, Provider, Relation, RelationAnnotations, RelationKind,
};
use crate::conversation::Utterance;

const RETRY_INSTRUCTION: &str = "Answer with exactly one label.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnnotateStats {
    /// Requests sent to the provider, parse retries included.
    pub provider_calls: usize,
    pub cache_hits: usize,
    /// Distinct (pair, kind) queries resolved.
    pub queries: usize,
}

impl AnnotateStats {
    pub fn hit_rate(&self) -> f64 {
        if self.queries == 0 {
            1.0
        } else {
            self.cache_hits as f64 / self.queries as f64
        }
    }
}

struct Job {
    key: String,
    index: usize,
    kind: RelationKind,
    prompt: PromptText,
}

/// Resolves adjacent-pair relations through the cache, falling back to the
/// provider for misses.
pub struct Annotator<'a> {
    provider: Option<&'a dyn Provider>,
    cache: &'a AnnotationCache,
    model: String,
    max_in_flight: usize,
    calls: AtomicUsize,
    hits: AtomicUsize,
    queries: AtomicUsize,
}

impl<'a> Annotator<'a> {
    pub fn new(provider: &'a dyn Provider, cache: &'a AnnotationCache) -> Self {
        Annotator {
            model: provider.model().to_string(),
            provider: Some(provider),
            cache,
            max_in_flight: 4,
            calls: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
            queries: AtomicUsize::new(0),
        }
    }

    /// Serves only what the cache already holds for `model`.
    pub fn cache_only(cache: &'a AnnotationCache, model: &str) -> Self {
        Annotator {
            provider: None,
            cache,
            model: model.to_string(),
            max_in_flight: 1,
            calls: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
            queries: AtomicUsize::new(0),
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn stats(&self) -> AnnotateStats {
        AnnotateStats {
            provider_calls: self.calls.load(Ordering::SeqCst),
            cache_hits: self.hits.load(Ordering::SeqCst),
            queries: self.queries.load(Ordering::SeqCst),
        }
    }

    pub fn annotate_chain(&self, chain: &[Utterance], kinds: &[RelationKind]) -> Result<RelationAnnotations, KamError> {
        Ok(self
            .annotate_chains(&[chain], kinds)?
            .pop()
            .expect("one chain in, one out"))
    }

    /// Annotates several chains, sharing cache entries between chains with a
    /// common prefix. On provider failure every reply received so far is
    /// already in the cache.
    pub fn annotate_chains(
        &self,
        chains: &[&[Utterance]],
        kinds: &[RelationKind],
    ) -> Result<Vec<RelationAnnotations>, KamError> {
        let mut per_chain: Vec<Vec<(usize, RelationKind, String)>> = Vec::with_capacity(chains.len());
        let mut pending: BTreeMap<String, Job> = BTreeMap::new();
        let mut resolved: HashMap<String, Relation> = HashMap::new();

        for chain in chains {
            if chain.is_empty() {
                return Err(KamError::EmptyChain);
            }
            let mut slots = Vec::new();
            for i in 2..=chain.len() {
                let rendered = render_chain(&chain[..i])?;
                for &kind in kinds {
                    let key = cache_key(&rendered, i, kind, &self.model);
                    if !resolved.contains_key(&key) && !pending.contains_key(&key) {
                        self.queries.fetch_add(1, Ordering::SeqCst);
                        match self.cache.get(&key) {
                            Some(rec) => {
                                self.hits.fetch_add(1, Ordering::SeqCst);
                                resolved.insert(key.clone(), parse_relation(&rec.parsed, kind));
                            }
                            None => {
                                let prompt = build_prompt(chain, i, kind)?;
                                pending.insert(
                                    key.clone(),
                                    Job {
                                        key: key.clone(),
                                        index: i,
                                        kind,
                                        prompt,
                                    },
                                );
                            }
                        }
                    }
                    slots.push((i, kind, key));
                }
            }
            per_chain.push(slots);
        }

        if !pending.is_empty() {
            let Some(provider) = self.provider else {
                return Err(KamError::ProviderUnavailable { missing: pending.len() });
            };
            let jobs: Vec<Job> = pending.into_values().collect();
            for batch in jobs.chunks(self.max_in_flight) {
                let results: Vec<Result<Relation, KamError>> = std::thread::scope(|s| {
                    let handles: Vec<_> = batch
                        .iter()
                        .map(|job| s.spawn(move || self.run_job(provider, job)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("annotation worker panicked"))
                        .collect()
                });
                for (job, res) in batch.iter().zip(results) {
                    resolved.insert(job.key.clone(), res?);
                }
            }
        }

        Ok(chains
            .iter()
            .zip(per_chain)
            .map(|(chain, slots)| {
                let mut pairs: Vec<PairAnnotation> = (2..=chain.len())
                    .map(|index| PairAnnotation {
                        index,
                        logical: None,
                        act: None,
                    })
                    .collect();
                for (i, _, key) in slots {
                    match resolved[&key] {
                        Relation::Logical(r) => pairs[i - 2].logical = Some(r),
                        Relation::Act(a) => pairs[i - 2].act = Some(a),
                    }
                }
                RelationAnnotations {
                    chain_key: chain_key(chain),
                    pairs,
                    provider_id: self.model.clone(),
                }
            })
            .collect())
    }

    fn run_job(&self, provider: &dyn Provider, job: &Job) -> Result<Relation, KamError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut raw = provider.complete(&job.prompt)?;
        let parsed = match try_parse_relation(&raw, job.kind) {
            Some(r) => r,
            None => {
                log::debug!(
                    "unparseable reply for pair {} ({}): {raw:?}; retrying",
                    job.index,
                    job.kind.as_str()
                );
                self.calls.fetch_add(1, Ordering::SeqCst);
                raw = provider.complete(&job.prompt.with_followup(RETRY_INSTRUCTION))?;
                parse_relation(&raw, job.kind)
            }
        };
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.cache.insert(CacheRecord {
            key: job.key.clone(),
            kind: job.kind,
            raw_reply: raw,
            parsed: parsed.as_str().to_string(),
            timestamp,
            model: self.model.clone(),
        })?;
        Ok(parsed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kam::{ConversationAct, CountingProvider, LogicalRelation, StubProvider};
    use std::sync::Mutex;

    fn chain(texts: &[&str]) -> Vec<Utterance> {
        texts
            .iter()
            .enumerate()
            .map(|(k, t)| Utterance {
                id: format!("u{k}"),
                parent_id: (k > 0).then(|| format!("u{}", k - 1)),
                author: "a".into(),
                text: t.to_string(),
                depth: k + 1,
                stance: None,
                relevant: true,
            })
            .collect()
    }

    #[test]
    fn single_post_has_no_pairs() {
        let cache = AnnotationCache::in_memory();
        let stub = CountingProvider::new(StubProvider::new());
        let ann = Annotator::new(&stub, &cache)
            .annotate_chain(&chain(&["post"]), &RelationKind::BOTH)
            .unwrap();
        assert!(ann.pairs.is_empty());
        assert_eq!(stub.calls(), 0);
    }

    #[test]
    fn cold_then_warm() {
        let cache = AnnotationCache::in_memory();
        let stub = CountingProvider::new(StubProvider::new());
        let c = chain(&["post", "No way", "yes indeed", "not at all"]);
        let first = Annotator::new(&stub, &cache)
            .annotate_chain(&c, &RelationKind::BOTH)
            .unwrap();
        assert_eq!(stub.calls(), 6);
        assert_eq!(first.pairs.len(), 3);
        assert_eq!(first.pairs[0].logical, Some(LogicalRelation::Contrastive));
        assert_eq!(first.pairs[1].act, Some(ConversationAct::Agreement));
        stub.reset();
        let annot = Annotator::new(&stub, &cache);
        let second = annot.annotate_chain(&c, &RelationKind::BOTH).unwrap();
        assert_eq!(stub.calls(), 0);
        assert_eq!(first, second);
        assert_eq!(annot.stats().hit_rate(), 1.0);
        // a prefix of an annotated chain is fully cached too
        let prefix = annot.annotate_chain(&c[..3], &RelationKind::BOTH).unwrap();
        assert_eq!(stub.calls(), 0);
        assert_eq!(prefix.pairs, first.pairs[..2]);
    }

    #[test]
    fn only_requested_kinds_are_queried() {
        let cache = AnnotationCache::in_memory();
        let stub = CountingProvider::new(StubProvider::new());
        let ann = Annotator::new(&stub, &cache)
            .annotate_chain(&chain(&["p", "a", "b", "c"]), &[RelationKind::Logical])
            .unwrap();
        assert_eq!(stub.calls(), 3);
        assert!(ann.has_kind(RelationKind::Logical));
        assert!(!ann.has_kind(RelationKind::Act));
    }

    struct Scripted {
        replies: Mutex<Vec<String>>,
        seen: Mutex<Vec<PromptText>>,
    }

    impl Provider for Scripted {
        fn model(&self) -> &str {
            "scripted"
        }
        fn complete(&self, prompt: &PromptText) -> Result<String, KamError> {
            self.seen.lock().unwrap().push(prompt.clone());
            let mut r = self.replies.lock().unwrap();
            if r.is_empty() {
                Err(KamError::Provider("exhausted".into()))
            } else {
                Ok(r.remove(0))
            }
        }
    }

    #[test]
    fn malformed_reply_retries_once_then_falls_back() {
        let cache = AnnotationCache::in_memory();
        let p = Scripted {
            replies: Mutex::new(vec!["hmm".into(), "still unsure".into()]),
            seen: Mutex::new(vec![]),
        };
        let ann = Annotator::new(&p, &cache)
            .annotate_chain(&chain(&["p", "a"]), &[RelationKind::Logical])
            .unwrap();
        assert_eq!(ann.pairs[0].logical, Some(LogicalRelation::Unknown));
        let seen = p.seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert_eq!(seen[1].messages.last().unwrap().content, RETRY_INSTRUCTION);
    }

    #[test]
    fn retry_can_recover() {
        let cache = AnnotationCache::in_memory();
        let p = Scripted {
            replies: Mutex::new(vec!["hmm".into(), "Causal".into()]),
            seen: Mutex::new(vec![]),
        };
        let ann = Annotator::new(&p, &cache)
            .annotate_chain(&chain(&["p", "a"]), &[RelationKind::Logical])
            .unwrap();
        assert_eq!(ann.pairs[0].logical, Some(LogicalRelation::Causal));
    }

    #[test]
    fn provider_error_keeps_partial_cache() {
        let cache = AnnotationCache::in_memory();
        let p = Scripted {
            replies: Mutex::new(vec!["summary".into()]),
            seen: Mutex::new(vec![]),
        };
        let err = Annotator::new(&p, &cache)
            .with_max_in_flight(1)
            .annotate_chain(&chain(&["p", "a", "b"]), &[RelationKind::Logical])
            .unwrap_err();
        assert!(matches!(err, KamError::Provider(_)));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn cache_only_reports_missing() {
        let cache = AnnotationCache::in_memory();
        let err = Annotator::cache_only(&cache, "m")
            .annotate_chain(&chain(&["p", "a", "b"]), &RelationKind::BOTH)
            .unwrap_err();
        assert!(matches!(err, KamError::ProviderUnavailable { missing: 4 }));
    }
}
