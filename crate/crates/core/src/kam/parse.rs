use super::{ConversationAct, LogicalRelation, Relation, RelationKind};

fn candidates(kind: RelationKind) -> Vec<Relation> {
    match kind {
        RelationKind::Logical => LogicalRelation::LABELS.iter().map(|&r| Relation::Logical(r)).collect(),
        RelationKind::Act => ConversationAct::LABELS.iter().map(|&a| Relation::Act(a)).collect(),
    }
}

/// Case-insensitive search for a label word of `kind` in `raw`. The longest
/// matching label wins ("disagreement" over "agreement"); equal lengths are
/// broken by earliest occurrence.
pub fn try_parse_relation(raw: &str, kind: RelationKind) -> Option<Relation> {
    let lower = raw.to_lowercase();
    candidates(kind)
        .into_iter()
        .filter_map(|rel| lower.find(rel.as_str()).map(|pos| (rel, pos)))
        .min_by(|(a, pa), (b, pb)| b.as_str().len().cmp(&a.as_str().len()).then(pa.cmp(pb)))
        .map(|(rel, _)| rel)
}

/// Total variant: unparseable replies become `unknown` / `other`.
pub fn parse_relation(raw: &str, kind: RelationKind) -> Relation {
    try_parse_relation(raw, kind).unwrap_or_else(|| Relation::fallback(kind))
}
