//! Threaded conversation data: the JSONL record schema, validated reply trees,
//! stance instances (root-to-utterance chains), stratified splits and depth
//! buckets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nominal train/dev/test ratios.
pub const SPLIT_RATIOS: [f64; 3] = [0.65, 0.15, 0.20];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{location}schema error: {message}")]
    Schema { location: Location, message: String },
    #[error("{location}structure error in thread `{thread_id}`: {message}")]
    Structure {
        location: Location,
        thread_id: String,
        message: String,
    },
    #[error("target `{target}` has only {count} instances (need at least 3)")]
    TooFewInstances { target: String, count: usize },
    #[error("depth {depth} is outside the bucket table for {kind:?} targets")]
    DepthOutOfRange { depth: usize, kind: TargetKind },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Optional `file:line: ` prefix for diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Location(pub Option<(PathBuf, usize)>);

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Some((path, line)) => write!(f, "{}:{}: ", path.display(), line),
            None => Ok(()),
        }
    }
}

impl DataError {
    fn at(self, path: &Path, line: usize) -> Self {
        let loc = Location(Some((path.to_path_buf(), line)));
        match self {
            DataError::Schema { message, .. } => DataError::Schema { location: loc, message },
            DataError::Structure { thread_id, message, .. } => DataError::Structure {
                location: loc,
                thread_id,
                message,
            },
            other => other,
        }
    }

    fn schema(message: impl Into<String>) -> Self {
        DataError::Schema {
            location: Location::default(),
            message: message.into(),
        }
    }

    fn structure(thread_id: &str, message: impl Into<String>) -> Self {
        DataError::Structure {
            location: Location::default(),
            thread_id: thread_id.to_string(),
            message: message.into(),
        }
    }
}

/// Stance label. The discriminant order is the classifier's output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Against,
    Favor,
    None,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Against, Stance::Favor, Stance::None];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Stance {
        Stance::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Against => "against",
            Stance::Favor => "favor",
            Stance::None => "none",
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Specific,
    PostAsTarget,
}

/// Detection target. For post-as-target threads `target_text` is the root
/// post body; for specific targets it is the target name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub kind: TargetKind,
    pub target_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub parent_id: Option<String>,
    pub author: String,
    pub text: String,
    /// Root post has depth 1.
    pub depth: usize,
    pub stance: Option<Stance>,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationThread {
    pub thread_id: String,
    pub target: Target,
    pub utterances: Vec<Utterance>,
}

// ---- raw JSONL schema ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadRecord {
    pub thread_id: String,
    pub target: TargetRecord,
    pub utterances: Vec<UtteranceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub name: String,
    pub kind: TargetKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub parent_id: Option<String>,
    pub author: String,
    pub text: String,
    pub stance: Option<Stance>,
    pub relevant: bool,
}

/// Trims and collapses internal whitespace runs to a single space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses one JSONL line into a validated thread.
pub fn parse_line(line: &str) -> Result<ConversationThread, DataError> {
    let record: ThreadRecord = serde_json::from_str(line).map_err(|e| DataError::schema(e.to_string()))?;
    parse_thread(&record)
}

/// Validates a raw record into a reply tree and derives depths.
pub fn parse_thread(record: &ThreadRecord) -> Result<ConversationThread, DataError> {
    let tid = record.thread_id.as_str();
    if tid.trim().is_empty() {
        return Err(DataError::schema("empty thread_id"));
    }
    if record.utterances.is_empty() {
        return Err(DataError::schema(format!("thread `{tid}` has no utterances")));
    }

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, u) in record.utterances.iter().enumerate() {
        if u.id.is_empty() {
            return Err(DataError::schema(format!("thread `{tid}`: empty utterance id")));
        }
        if index.insert(u.id.as_str(), i).is_some() {
            return Err(DataError::structure(tid, format!("duplicate utterance id `{}`", u.id)));
        }
        if normalize_text(&u.text).is_empty() {
            return Err(DataError::schema(format!(
                "thread `{tid}`: utterance `{}` has empty text",
                u.id
            )));
        }
    }

    let roots: Vec<usize> = record
        .utterances
        .iter()
        .enumerate()
        .filter(|(_, u)| u.parent_id.is_none())
        .map(|(i, _)| i)
        .collect();
    if roots.len() != 1 {
        return Err(DataError::structure(
            tid,
            format!("expected exactly one root, found {}", roots.len()),
        ));
    }

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); record.utterances.len()];
    for (i, u) in record.utterances.iter().enumerate() {
        if let Some(p) = &u.parent_id {
            match index.get(p.as_str()) {
                Some(&pi) => children[pi].push(i),
                None => {
                    return Err(DataError::structure(
                        tid,
                        format!("utterance `{}` has unknown parent `{p}`", u.id),
                    ))
                }
            }
        }
    }

    let mut depth = vec![0usize; record.utterances.len()];
    let mut stack = vec![(roots[0], 1usize)];
    while let Some((i, d)) = stack.pop() {
        depth[i] = d;
        for &c in &children[i] {
            stack.push((c, d + 1));
        }
    }
    if let Some(i) = depth.iter().position(|&d| d == 0) {
        return Err(DataError::structure(
            tid,
            format!(
                "utterance `{}` is not reachable from the root (cycle)",
                record.utterances[i].id
            ),
        ));
    }

    let utterances: Vec<Utterance> = record
        .utterances
        .iter()
        .zip(&depth)
        .map(|(u, &d)| Utterance {
            id: u.id.clone(),
            parent_id: u.parent_id.clone(),
            author: u.author.clone(),
            text: normalize_text(&u.text),
            depth: d,
            stance: u.stance,
            relevant: u.relevant,
        })
        .collect();

    let target_name = record.target.name.trim().to_string();
    let target = match record.target.kind {
        TargetKind::Specific => {
            if target_name.is_empty() {
                return Err(DataError::schema(format!("thread `{tid}`: empty target name")));
            }
            Target {
                name: target_name.clone(),
                kind: TargetKind::Specific,
                target_text: target_name,
            }
        }
        TargetKind::PostAsTarget => Target {
            name: if target_name.is_empty() {
                "Post-T".to_string()
            } else {
                target_name
            },
            kind: TargetKind::PostAsTarget,
            target_text: utterances[roots[0]].text.clone(),
        },
    };

    Ok(ConversationThread {
        thread_id: record.thread_id.clone(),
        target,
        utterances,
    })
}

impl ConversationThread {
    pub fn to_record(&self) -> ThreadRecord {
        ThreadRecord {
            thread_id: self.thread_id.clone(),
            target: TargetRecord {
                name: self.target.name.clone(),
                kind: self.target.kind,
            },
            utterances: self
                .utterances
                .iter()
                .map(|u| UtteranceRecord {
                    id: u.id.clone(),
                    parent_id: u.parent_id.clone(),
                    author: u.author.clone(),
                    text: u.text.clone(),
                    stance: u.stance,
                    relevant: u.relevant,
                })
                .collect(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("thread record serializes")
    }

    pub fn root(&self) -> &Utterance {
        self.utterances
            .iter()
            .find(|u| u.parent_id.is_none())
            .expect("validated thread has a root")
    }

    /// Root-to-utterance path ending at `id`.
    pub fn chain_to(&self, id: &str) -> Option<Vec<Utterance>> {
        let by_id: HashMap<&str, &Utterance> = self.utterances.iter().map(|u| (u.id.as_str(), u)).collect();
        let mut cur = *by_id.get(id)?;
        let mut chain = vec![cur.clone()];
        while let Some(p) = &cur.parent_id {
            cur = by_id[p.as_str()];
            chain.push(cur.clone());
        }
        chain.reverse();
        Some(chain)
    }
}

/// Reads threads from a `.jsonl` file or every `.jsonl` file of a directory
/// (sorted by name). Blank lines are ignored.
pub fn load_threads(path: &Path) -> Result<Vec<ConversationThread>, DataError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| DataError::Io { path: p, source }
    };
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };

    let mut threads = Vec::new();
    for file in files {
        let content = fs::read_to_string(&file).map_err(io(&file))?;
        for (lineno, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            threads.push(parse_line(line).map_err(|e| e.at(&file, lineno + 1))?);
        }
    }
    Ok(threads)
}

// ---- instances ----

/// One labeled utterance plus its ancestor chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceInstance {
    /// `<thread_id>/<utterance_id>`
    pub id: String,
    pub thread_id: String,
    pub chain: Vec<Utterance>,
    pub target: Target,
    pub gold: Stance,
    pub depth: usize,
}

impl StanceInstance {
    pub fn last(&self) -> &Utterance {
        self.chain.last().expect("chain is non-empty")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub unlabeled: usize,
    pub irrelevant: usize,
}

impl SkipReport {
    pub fn merge(&mut self, other: &SkipReport) {
        self.unlabeled += other.unlabeled;
        self.irrelevant += other.irrelevant;
    }

    pub fn total(&self) -> usize {
        self.unlabeled + self.irrelevant
    }
}

/// One instance per labeled, relevant utterance. Skipped utterances remain in
/// the chains of their descendants.
pub fn make_instances(thread: &ConversationThread) -> (Vec<StanceInstance>, SkipReport) {
    let mut skipped = SkipReport::default();
    let mut out = Vec::new();
    for u in &thread.utterances {
        let Some(gold) = u.stance else {
            skipped.unlabeled += 1;
            continue;
        };
        if !u.relevant {
            skipped.irrelevant += 1;
            continue;
        }
        let chain = thread.chain_to(&u.id).expect("id belongs to thread");
        debug_assert_eq!(chain.len(), u.depth);
        out.push(StanceInstance {
            id: format!("{}/{}", thread.thread_id, u.id),
            thread_id: thread.thread_id.clone(),
            depth: chain.len(),
            chain,
            target: thread.target.clone(),
            gold,
        });
    }
    (out, skipped)
}

pub fn make_all_instances(threads: &[ConversationThread]) -> (Vec<StanceInstance>, SkipReport) {
    let mut all = Vec::new();
    let mut report = SkipReport::default();
    for t in threads {
        let (inst, skipped) = make_instances(t);
        all.extend(inst);
        report.merge(&skipped);
    }
    (all, report)
}

// ---- splits ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: BTreeSet<String>,
    pub dev: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Dev,
    Test,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &BTreeSet<String> {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Dev => &self.dev,
            SplitPart::Test => &self.test,
        }
    }

    /// Instances of `all` belonging to `part`, in input order.
    pub fn select<'a>(&self, all: &'a [StanceInstance], part: SplitPart) -> Vec<&'a StanceInstance> {
        let ids = self.part(part);
        all.iter().filter(|i| ids.contains(&i.id)).collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, json).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<DatasetSplit, DataError> {
        let s = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&s).map_err(|e| DataError::Schema {
            location: Location(Some((path.to_path_buf(), e.line()))),
            message: e.to_string(),
        })
    }
}

/// Per-target counts for (train, dev, test) given the nominal ratios.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * SPLIT_RATIOS[0]).round() as usize;
    let dev = ((n as f64 * SPLIT_RATIOS[1]).round() as usize).min(n - train);
    (train, dev, n - train - dev)
}

/// Stratified per-target 65/15/20 split, deterministic in `seed` and
/// independent of input order.
pub fn split_dataset(instances: &[StanceInstance], seed: u64) -> Result<DatasetSplit, DataError> {
    let mut by_target: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for inst in instances {
        by_target
            .entry(inst.target.name.as_str())
            .or_default()
            .push(inst.id.as_str());
    }
    let mut split = DatasetSplit {
        seed,
        ratios: SPLIT_RATIOS,
        train: BTreeSet::new(),
        dev: BTreeSet::new(),
        test: BTreeSet::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (target, mut ids) in by_target {
        if ids.len() < 3 {
            return Err(DataError::TooFewInstances {
                target: target.to_string(),
                count: ids.len(),
            });
        }
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut rng);
        let (n_train, n_dev, _) = split_counts(ids.len());
        for (k, id) in ids.into_iter().enumerate() {
            let bucket = if k < n_train {
                &mut split.train
            } else if k < n_train + n_dev {
                &mut split.dev
            } else {
                &mut split.test
            };
            bucket.insert(id.to_string());
        }
    }
    Ok(split)
}

// ---- depth buckets ----

pub const SPECIFIC_BUCKETS: [&str; 3] = ["1-2", "3-5", "6-8"];
pub const POST_TARGET_BUCKETS: [&str; 3] = ["2", "3-4", "5-6"];

pub fn bucket_labels(kind: TargetKind) -> [&'static str; 3] {
    match kind {
        TargetKind::Specific => SPECIFIC_BUCKETS,
        TargetKind::PostAsTarget => POST_TARGET_BUCKETS,
    }
}

pub fn depth_bucket(depth: usize, kind: TargetKind) -> Result<&'static str, DataError> {
    let label = match (kind, depth) {
        (TargetKind::Specific, 1..=2) => SPECIFIC_BUCKETS[0],
        (TargetKind::Specific, 3..=5) => SPECIFIC_BUCKETS[1],
        (TargetKind::Specific, 6..=8) => SPECIFIC_BUCKETS[2],
        (TargetKind::PostAsTarget, 2) => POST_TARGET_BUCKETS[0],
        (TargetKind::PostAsTarget, 3..=4) => POST_TARGET_BUCKETS[1],
        (TargetKind::PostAsTarget, 5..=6) => POST_TARGET_BUCKETS[2],
        _ => return Err(DataError::DepthOutOfRange { depth, kind }),
    };
    Ok(label)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(utts: &[(&str, Option<&str>, Option<Stance>, bool)]) -> ThreadRecord {
        ThreadRecord {
            thread_id: "t1".into(),
            target: TargetRecord {
                name: "Tesla".into(),
                kind: TargetKind::Specific,
            },
            utterances: utts
                .iter()
                .map(|(id, p, s, r)| UtteranceRecord {
                    id: id.to_string(),
                    parent_id: p.map(str::to_string),
                    author: "u".into(),
                    text: format!("text of {id}"),
                    stance: *s,
                    relevant: *r,
                })
                .collect(),
        }
    }

    #[test]
    fn linear_thread_depths() {
        let t = parse_thread(&rec(&[
            ("p", None, Some(Stance::Favor), true),
            ("a", Some("p"), Some(Stance::Against), true),
            ("b", Some("a"), Some(Stance::None), true),
        ]))
        .unwrap();
        let depths: Vec<usize> = t.utterances.iter().map(|u| u.depth).collect();
        assert_eq!(depths, vec![1, 2, 3]);
        let (inst, skipped) = make_instances(&t);
        assert_eq!(inst.iter().map(|i| i.depth).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(skipped.total(), 0);
    }

    #[test]
    fn self_cycle_is_structure_error() {
        let err = parse_thread(&rec(&[("p", None, None, true), ("b", Some("b"), None, true)])).unwrap_err();
        assert!(matches!(err, DataError::Structure { .. }), "{err}");
    }

    #[test]
    fn two_node_cycle_and_orphans() {
        let err = parse_thread(&rec(&[
            ("p", None, None, true),
            ("a", Some("b"), None, true),
            ("b", Some("a"), None, true),
        ]))
        .unwrap_err();
        assert!(matches!(err, DataError::Structure { .. }));
        let err = parse_thread(&rec(&[("p", None, None, true), ("a", Some("zz"), None, true)])).unwrap_err();
        assert!(err.to_string().contains("unknown parent"));
        let err = parse_thread(&rec(&[("p", None, None, true), ("q", None, None, true)])).unwrap_err();
        assert!(err.to_string().contains("exactly one root"));
        let err = parse_thread(&rec(&[("p", None, None, true), ("p", Some("p"), None, true)])).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn missing_field_is_schema_error() {
        let err = parse_line(r#"{"thread_id":"x","utterances":[]}"#).unwrap_err();
        assert!(matches!(err, DataError::Schema { .. }));
    }

    #[test]
    fn irrelevant_utterance_stays_in_history() {
        let t = parse_thread(&rec(&[
            ("p", None, Some(Stance::Favor), true),
            ("c1", Some("p"), Some(Stance::Favor), true),
            ("c2", Some("c1"), Some(Stance::Against), false),
            ("c3", Some("c2"), Some(Stance::Against), true),
        ]))
        .unwrap();
        let (inst, skipped) = make_instances(&t);
        assert_eq!(inst.len(), 3);
        assert_eq!(skipped.irrelevant, 1);
        assert!(inst.iter().all(|i| i.id != "t1/c2"));
        let last = inst.iter().find(|i| i.id == "t1/c3").unwrap();
        let ids: Vec<&str> = last.chain.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, vec!["p", "c1", "c2", "c3"]);
    }

    #[test]
    fn chains_follow_branches_only() {
        let t = parse_thread(&rec(&[
            ("p", None, None, true),
            ("a", Some("p"), Some(Stance::Favor), true),
            ("b", Some("p"), Some(Stance::Against), true),
            ("c", Some("b"), Some(Stance::Against), true),
        ]))
        .unwrap();
        let (inst, skipped) = make_instances(&t);
        assert_eq!(skipped.unlabeled, 1);
        let c = inst.iter().find(|i| i.id == "t1/c").unwrap();
        assert_eq!(
            c.chain.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(),
            vec!["p", "b", "c"]
        );
        for i in &inst {
            for w in i.chain.windows(2) {
                assert_eq!(w[1].parent_id.as_deref(), Some(w[0].id.as_str()));
            }
            assert_eq!(i.gold, i.last().stance.unwrap());
        }
    }

    #[test]
    fn whitespace_normalization() {
        assert_eq!(normalize_text("  a \t b\n\nc  "), "a b c");
        let mut r = rec(&[("p", None, None, true)]);
        r.utterances[0].text = "   \n".into();
        assert!(matches!(parse_thread(&r), Err(DataError::Schema { .. })));
    }

    #[test]
    fn post_as_target_uses_post_body() {
        let line = r#"{"thread_id":"pt","target":{"name":"Post-T","kind":"post_as_target"},"utterances":[{"id":"p","parent_id":null,"author":"a","text":"Climate  change is real.","stance":null,"relevant":true}]}"#;
        let t = parse_line(line).unwrap();
        assert_eq!(t.target.target_text, "Climate change is real.");
    }

    #[test]
    fn split_ratio_arithmetic() {
        assert_eq!(split_counts(100), (65, 15, 20));
        assert_eq!(split_counts(3), (2, 0, 1));
    }

    #[test]
    fn buckets() {
        assert_eq!(depth_bucket(4, TargetKind::Specific).unwrap(), "3-5");
        assert_eq!(depth_bucket(1, TargetKind::Specific).unwrap(), "1-2");
        assert_eq!(depth_bucket(8, TargetKind::Specific).unwrap(), "6-8");
        assert_eq!(depth_bucket(2, TargetKind::PostAsTarget).unwrap(), "2");
        assert_eq!(depth_bucket(6, TargetKind::PostAsTarget).unwrap(), "5-6");
        assert!(matches!(
            depth_bucket(9, TargetKind::Specific),
            Err(DataError::DepthOutOfRange { depth: 9, .. })
        ));
        assert!(depth_bucket(1, TargetKind::PostAsTarget).is_err());
    }
}
