//! Seeded generator for a small separable corpus: the stance of every
//! utterance is fixed by a class keyword, and only against-stance text carries
//! a negation cue. Reply trees reach depth 8 with most utterances at depths
//! 3-5, like real threads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conversation::{
    parse_thread, ConversationThread, Stance, TargetKind, TargetRecord, ThreadRecord, UtteranceRecord,
};

pub const SYNTHETIC_TARGETS: [&str; 5] = ["Bitcoin", "Tesla", "SpaceX", "Joe Biden", "Donald Trump"];

const FAVOR_WORDS: &[&str] = &["love", "support", "brilliant", "impressive", "bullish", "fantastic"];
const AGAINST_CUES: &[&str] = &["not", "never", "don't", "wrong"];
const AGAINST_WORDS: &[&str] = &["terrible", "awful", "disaster", "overrated", "scam", "pathetic"];
const NONE_WORDS: &[&str] = &["weather", "lunch", "traffic", "parking", "weekend", "coffee"];
const FILLER: &[&str] = &[
    "i", "think", "the", "this", "really", "honestly", "today", "people", "about", "it", "so", "just", "maybe",
    "again", "here", "everyone", "still", "thread", "news", "we", "they", "said", "post", "read",
];

/// Relative frequency of a branch ending at depth 2..=8.
const BRANCH_DEPTH_WEIGHTS: [(usize, f64); 7] = [
    (2, 10.4),
    (3, 20.3),
    (4, 21.6),
    (5, 19.1),
    (6, 15.0),
    (7, 7.8),
    (8, 4.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub threads_per_target: usize,
    pub branches: std::ops::RangeInclusive<usize>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            threads_per_target: 12,
            branches: 2..=3,
            seed: 2024,
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

/// Filler words with the stance keywords dropped in at random positions.
pub fn utterance_text(rng: &mut ChaCha8Rng, stance: Stance, target: &str) -> String {
    let mut words: Vec<String> = (0..rng.gen_range(2..=4))
        .map(|_| pick(rng, FILLER).to_string())
        .collect();
    let keywords: Vec<&str> = match stance {
        Stance::Favor => vec![pick(rng, FAVOR_WORDS), pick(rng, FAVOR_WORDS)],
        Stance::Against => vec![pick(rng, AGAINST_CUES), pick(rng, AGAINST_WORDS)],
        Stance::None => vec![pick(rng, NONE_WORDS), pick(rng, NONE_WORDS)],
    };
    for k in keywords {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, k.to_string());
    }
    if rng.gen_bool(0.5) {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, target.to_string());
    }
    words.join(" ")
}

/// Branch end depth drawn from the weights, restricted to `>= min_depth`.
fn branch_depth(rng: &mut ChaCha8Rng, min_depth: usize) -> usize {
    let allowed: Vec<(usize, f64)> = BRANCH_DEPTH_WEIGHTS
        .into_iter()
        .filter(|(d, _)| *d >= min_depth)
        .collect();
    let total: f64 = allowed.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen_range(0.0..total);
    for &(d, w) in &allowed {
        if x < w {
            return d;
        }
        x -= w;
    }
    allowed.last().expect("min_depth <= 8").0
}

/// `threads_per_target` threads for each of the five targets.
pub fn generate_threads(config: &SyntheticConfig) -> Vec<ConversationThread> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for target in SYNTHETIC_TARGETS {
        let slug = target.to_lowercase().replace(' ', "-");
        for t in 0..config.threads_per_target {
            let thread_id = format!("{slug}-{t:02}");
            let mut utts: Vec<UtteranceRecord> = Vec::new();
            let new_utt = |rng: &mut ChaCha8Rng, parent: Option<&UtteranceRecord>, k: usize| {
                let stance = *Stance::ALL.choose(rng).expect("three stances");
                UtteranceRecord {
                    id: format!("c{k}"),
                    parent_id: parent.map(|p| p.id.clone()),
                    author: format!("user{}", rng.gen_range(0..40)),
                    text: utterance_text(rng, stance, target),
                    stance: Some(stance),
                    relevant: true,
                }
            };
            let root = new_utt(&mut rng, None, 0);
            utts.push(root);
            // a trunk of depth >= 6, then side branches forking off it at depth 2-4
            let mut trunk: Vec<usize> = vec![0];
            let n_branches = rng.gen_range(config.branches.clone());
            for b in 0..n_branches {
                let (fork_depth, end) = if b == 0 {
                    (1, branch_depth(&mut rng, 6))
                } else {
                    let f = rng.gen_range(2..=4);
                    (f, branch_depth(&mut rng, f + 1))
                };
                let mut parent = trunk[fork_depth - 1];
                for _ in fork_depth + 1..=end {
                    let k = utts.len();
                    let u = new_utt(&mut rng, Some(&utts[parent]), k);
                    utts.push(u);
                    parent = k;
                    if b == 0 {
                        trunk.push(k);
                    }
                }
            }
            let record = ThreadRecord {
                thread_id,
                target: TargetRecord {
                    name: target.to_string(),
                    kind: TargetKind::Specific,
                },
                utterances: utts,
            };
            out.push(parse_thread(&record).expect("generated threads are well formed"));
        }
    }
    out
}

/// JSONL serialization, one thread per line.
pub fn to_jsonl(threads: &[ConversationThread]) -> String {
    threads.iter().map(|t| t.to_json_line() + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::make_all_instances;
    use crate::kam::StubProvider;

    #[test]
    fn shape_and_cues() {
        let threads = generate_threads(&SyntheticConfig::default());
        assert_eq!(threads.len(), 60);
        let (inst, skipped) = make_all_instances(&threads);
        assert_eq!(skipped.total(), 0);
        let mut hist = [0usize; 9];
        for i in &inst {
            hist[i.depth] += 1;
            let cue = StubProvider::has_negation_cue(&i.last().text);
            assert_eq!(cue, i.gold == Stance::Against, "{}", i.last().text);
        }
        assert_eq!(hist[0], 0);
        assert!((1..=8).all(|d| hist[d] > 0), "{hist:?}");
        let shallow = hist[1] + hist[2];
        let middle = hist[3] + hist[4] + hist[5];
        let deep = hist[6] + hist[7] + hist[8];
        assert!(middle > deep && deep > shallow, "{hist:?}");
    }

    #[test]
    fn deterministic() {
        let a = to_jsonl(&generate_threads(&SyntheticConfig::default()));
        let b = to_jsonl(&generate_threads(&SyntheticConfig::default()));
        assert_eq!(a, b);
    }
}
