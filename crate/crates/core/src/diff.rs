//! Word-level diff between canonical texts.
//!
//! Scripts are minimal in deleted plus inserted tokens (Myers' linear-space
//! algorithm). Within every changed region deletions precede insertions, so
//! the output is deterministic and ops always form maximal runs.

use serde::{Deserialize, Serialize};

use crate::hash::Hash256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Equal,
    Delete,
    Insert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffOp {
    pub kind: OpKind,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffScript {
    pub ops: Vec<DiffOp>,
    pub old_label: String,
    pub new_label: String,
    pub changed: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("script disagrees with the old text at token {position}")]
    Mismatch { position: usize },
}

impl DiffScript {
    pub fn with_labels(mut self, old_label: impl Into<String>, new_label: impl Into<String>) -> Self {
        self.old_label = old_label.into();
        self.new_label = new_label.into();
        self
    }

    /// Deleted plus inserted tokens.
    pub fn cost(&self) -> usize {
        self.ops
            .iter()
            .filter(|op| op.kind != OpKind::Equal)
            .map(|op| op.tokens.len())
            .sum()
    }
}

/// Whitespace-separated words; punctuation stays attached.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub fn compute_diff(old: &str, new: &str) -> DiffScript {
    let a = tokenize(old);
    let b = tokenize(new);
    let mut edits = Vec::with_capacity(a.len() + b.len());
    conquer(&a, &b, &mut edits);
    build_script(&a, &b, &edits)
}

/// Replays `script` over `old`, checking every Equal and Delete token.
/// Tokens are rejoined with single spaces. A script with no ops is the
/// identity.
pub fn apply_diff(old: &str, script: &DiffScript) -> Result<String, DiffError> {
    let old_tokens = tokenize(old);
    if script.ops.is_empty() {
        return Ok(old_tokens.join(" "));
    }
    let mut pos = 0;
    let mut out: Vec<&str> = Vec::new();
    for op in &script.ops {
        for token in &op.tokens {
            match op.kind {
                OpKind::Insert => out.push(token),
                OpKind::Equal | OpKind::Delete => {
                    if old_tokens.get(pos) != Some(&token.as_str()) {
                        return Err(DiffError::Mismatch { position: pos });
                    }
                    if op.kind == OpKind::Equal {
                        out.push(token);
                    }
                    pos += 1;
                }
            }
        }
    }
    if pos != old_tokens.len() {
        return Err(DiffError::Mismatch { position: pos });
    }
    Ok(out.join(" "))
}

// ---------------------------------------------------------------------------
// Myers divide and conquer

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edit {
    Equal,
    Delete,
    Insert,
}

fn common_prefix(a: &[&str], b: &[&str]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn common_suffix(a: &[&str], b: &[&str]) -> usize {
    a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count()
}

/// Point where a forward and a backward furthest-reaching path of an
/// optimal script overlap. Diagonals whose paths leave the edit graph are
/// dropped from further rounds.
fn bisect(a: &[&str], b: &[&str]) -> Option<(usize, usize)> {
    let n = a.len() as isize;
    let m = b.len() as isize;
    let max_d = (n + m + 1) / 2;
    let offset = max_d;
    let len = 2 * max_d + 2;
    let mut forward = vec![-1isize; len as usize];
    let mut backward = vec![-1isize; len as usize];
    forward[(offset + 1) as usize] = 0;
    backward[(offset + 1) as usize] = 0;
    let delta = n - m;
    let front = delta % 2 != 0;
    let (mut k1_start, mut k1_end, mut k2_start, mut k2_end) = (0, 0, 0, 0);

    for d in 0..max_d {
        let mut k1 = -d + k1_start;
        while k1 <= d - k1_end {
            let i = (offset + k1) as usize;
            let mut x1 = if k1 == -d || (k1 != d && forward[i - 1] < forward[i + 1]) {
                forward[i + 1]
            } else {
                forward[i - 1] + 1
            };
            let mut y1 = x1 - k1;
            while x1 < n && y1 < m && a[x1 as usize] == b[y1 as usize] {
                x1 += 1;
                y1 += 1;
            }
            forward[i] = x1;
            if x1 > n {
                k1_end += 2;
            } else if y1 > m {
                k1_start += 2;
            } else if front {
                let j = offset + delta - k1;
                if j >= 0 && j < len && backward[j as usize] != -1 && x1 >= n - backward[j as usize] {
                    return Some((x1 as usize, y1 as usize));
                }
            }
            k1 += 2;
        }

        let mut k2 = -d + k2_start;
        while k2 <= d - k2_end {
            let i = (offset + k2) as usize;
            let mut x2 = if k2 == -d || (k2 != d && backward[i - 1] < backward[i + 1]) {
                backward[i + 1]
            } else {
                backward[i - 1] + 1
            };
            let mut y2 = x2 - k2;
            while x2 < n && y2 < m && a[(n - x2 - 1) as usize] == b[(m - y2 - 1) as usize] {
                x2 += 1;
                y2 += 1;
            }
            backward[i] = x2;
            if x2 > n {
                k2_end += 2;
            } else if y2 > m {
                k2_start += 2;
            } else if !front {
                let j = offset + delta - k2;
                if j >= 0 && j < len && forward[j as usize] != -1 {
                    let x1 = forward[j as usize];
                    let y1 = offset + x1 - j;
                    if x1 >= n - x2 {
                        return Some((x1 as usize, y1 as usize));
                    }
                }
            }
            k2 += 2;
        }
    }
    None
}

fn conquer(a: &[&str], b: &[&str], out: &mut Vec<Edit>) {
    let prefix = common_prefix(a, b);
    out.extend(std::iter::repeat_n(Edit::Equal, prefix));
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = common_suffix(a, b);
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);

    if a.is_empty() {
        out.extend(std::iter::repeat_n(Edit::Insert, b.len()));
    } else if b.is_empty() {
        out.extend(std::iter::repeat_n(Edit::Delete, a.len()));
    } else if let Some((x, y)) = bisect(a, b) {
        conquer(&a[..x], &b[..y], out);
        conquer(&a[x..], &b[y..], out);
    } else {
        // Only reachable when nothing is shared at all.
        out.extend(std::iter::repeat_n(Edit::Delete, a.len()));
        out.extend(std::iter::repeat_n(Edit::Insert, b.len()));
    }
    out.extend(std::iter::repeat_n(Edit::Equal, suffix));
}

/// Groups edits into maximal runs with deletions first inside each change.
fn build_script(a: &[&str], b: &[&str], edits: &[Edit]) -> DiffScript {
    let mut ops: Vec<DiffOp> = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut pending_del: Vec<String> = Vec::new();
    let mut pending_ins: Vec<String> = Vec::new();

    fn push(ops: &mut Vec<DiffOp>, kind: OpKind, tokens: Vec<String>) {
        if tokens.is_empty() {
            return;
        }
        match ops.last_mut() {
            Some(last) if last.kind == kind => last.tokens.extend(tokens),
            _ => ops.push(DiffOp { kind, tokens }),
        }
    }

    for edit in edits {
        match edit {
            Edit::Equal => {
                push(&mut ops, OpKind::Delete, std::mem::take(&mut pending_del));
                push(&mut ops, OpKind::Insert, std::mem::take(&mut pending_ins));
                push(&mut ops, OpKind::Equal, vec![a[i].to_string()]);
                i += 1;
                j += 1;
            }
            Edit::Delete => {
                pending_del.push(a[i].to_string());
                i += 1;
            }
            Edit::Insert => {
                pending_ins.push(b[j].to_string());
                j += 1;
            }
        }
    }
    push(&mut ops, OpKind::Delete, pending_del);
    push(&mut ops, OpKind::Insert, pending_ins);
    debug_assert_eq!((i, j), (a.len(), b.len()));

    let changed = ops.iter().any(|op| op.kind != OpKind::Equal);
    DiffScript {
        ops,
        old_label: String::new(),
        new_label: String::new(),
        changed,
    }
}

// ---------------------------------------------------------------------------
// Side-by-side rendering

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub kind: OpKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Column {
    pub rows: Vec<Row>,
}

impl Column {
    /// Rows that are highlighted (deletions or insertions).
    pub fn marked(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| r.kind != OpKind::Equal)
    }
}

/// Two-column comparison: the old text with deletions marked on the left,
/// the new text with insertions marked on the right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonView {
    pub changed: bool,
    pub old_label: String,
    pub new_label: String,
    pub left: Column,
    pub right: Column,
}

pub fn render_side_by_side(script: &DiffScript) -> ComparisonView {
    let mut left = Column::default();
    let mut right = Column::default();
    for op in &script.ops {
        let row = Row {
            kind: op.kind,
            text: op.tokens.join(" "),
        };
        match op.kind {
            OpKind::Equal => {
                left.rows.push(row.clone());
                right.rows.push(row);
            }
            OpKind::Delete => left.rows.push(row),
            OpKind::Insert => right.rows.push(row),
        }
    }
    ComparisonView {
        changed: script.changed,
        old_label: script.old_label.clone(),
        new_label: script.new_label.clone(),
        left,
        right,
    }
}

/// One side of a comparison: its canonical text, content hash and label.
pub struct Version<'a> {
    pub text: &'a str,
    pub content_hash: Hash256,
    pub label: String,
}

/// Equal content hashes mean "unchanged" without running the diff.
pub fn compare_versions(old: &Version<'_>, new: &Version<'_>) -> ComparisonView {
    let script = if old.content_hash == new.content_hash {
        let tokens: Vec<String> = tokenize(old.text).into_iter().map(str::to_string).collect();
        DiffScript {
            ops: if tokens.is_empty() {
                Vec::new()
            } else {
                vec![DiffOp {
                    kind: OpKind::Equal,
                    tokens,
                }]
            },
            old_label: String::new(),
            new_label: String::new(),
            changed: false,
        }
    } else {
        compute_diff(old.text, new.text)
    };
    render_side_by_side(&script.with_labels(old.label.clone(), new.label.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook LCS table, independent of the Myers search.
    fn lcs_len(a: &[&str], b: &[&str]) -> usize {
        let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in (0..a.len()).rev() {
            for j in (0..b.len()).rev() {
                table[i][j] = if a[i] == b[j] {
                    table[i + 1][j + 1] + 1
                } else {
                    table[i + 1][j].max(table[i][j + 1])
                };
            }
        }
        table[0][0]
    }

    /// Longest common subsequence by enumerating every subsequence of `a`.
    fn lcs_len_exhaustive(a: &[&str], b: &[&str]) -> usize {
        let is_subseq = |sub: &[&str]| {
            let mut it = b.iter();
            sub.iter().all(|t| it.any(|u| u == t))
        };
        (0u32..1 << a.len())
            .filter_map(|mask| {
                let sub: Vec<&str> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
                is_subseq(&sub).then_some(sub.len())
            })
            .max()
            .unwrap_or(0)
    }

    fn check_invariants(old: &str, new: &str, script: &DiffScript) {
        let a = tokenize(old);
        let b = tokenize(new);
        let old_side: Vec<&str> = script
            .ops
            .iter()
            .filter(|op| op.kind != OpKind::Insert)
            .flat_map(|op| op.tokens.iter().map(String::as_str))
            .collect();
        let new_side: Vec<&str> = script
            .ops
            .iter()
            .filter(|op| op.kind != OpKind::Delete)
            .flat_map(|op| op.tokens.iter().map(String::as_str))
            .collect();
        assert_eq!(old_side, a);
        assert_eq!(new_side, b);
        assert_eq!(script.changed, script.ops.iter().any(|op| op.kind != OpKind::Equal));
        assert!(script.ops.windows(2).all(|w| w[0].kind != w[1].kind));
        assert!(script.ops.iter().all(|op| !op.tokens.is_empty()));
        assert_eq!(script.cost(), a.len() + b.len() - 2 * lcs_len(&a, &b));
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello world."), vec!["Hello", "world."]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn identical_texts_give_one_equal_op() {
        let script = compute_diff("a b c", "a b c");
        assert!(!script.changed);
        assert_eq!(script.ops.len(), 1);
        assert_eq!(script.ops[0].kind, OpKind::Equal);
    }

    #[test]
    fn substitution_puts_delete_before_insert() {
        let script = compute_diff("a b c", "a x c");
        let shape: Vec<(OpKind, Vec<&str>)> = script
            .ops
            .iter()
            .map(|op| (op.kind, op.tokens.iter().map(String::as_str).collect()))
            .collect();
        assert_eq!(
            shape,
            vec![
                (OpKind::Equal, vec!["a"]),
                (OpKind::Delete, vec!["b"]),
                (OpKind::Insert, vec!["x"]),
                (OpKind::Equal, vec!["c"]),
            ]
        );
    }

    #[test]
    fn dp_oracle_agrees_with_enumeration() {
        let alphabet = ["a", "b", "c"];
        let mut rng = 0x2545_f491_u64;
        for _ in 0..300 {
            let mut draw = |len: usize| -> Vec<&str> {
                (0..len)
                    .map(|_| {
                        rng ^= rng << 13;
                        rng ^= rng >> 7;
                        rng ^= rng << 17;
                        alphabet[(rng % 3) as usize]
                    })
                    .collect()
            };
            let a = draw(8);
            let b = draw(6);
            assert_eq!(lcs_len(&a, &b), lcs_len_exhaustive(&a, &b));
        }
    }

    #[test]
    fn exhaustive_small_streams_are_minimal() {
        fn streams(max_len: usize) -> Vec<String> {
            let mut all = vec![String::new()];
            let mut frontier = vec![Vec::<&str>::new()];
            for _ in 0..max_len {
                let mut next = Vec::new();
                for s in &frontier {
                    for t in ["a", "b", "c"] {
                        let mut s = s.clone();
                        s.push(t);
                        all.push(s.join(" "));
                        next.push(s);
                    }
                }
                frontier = next;
            }
            all
        }
        let all = streams(5);
        for old in &all {
            for new in &all {
                let script = compute_diff(old, new);
                check_invariants(old, new, &script);
                assert_eq!(apply_diff(old, &script).unwrap(), *new);
            }
        }
    }

    #[test]
    fn apply_rejects_tampered_equal_token() {
        let mut script = compute_diff("one two three", "one 2 three");
        script.ops[0].tokens[0] = "uno".into();
        assert_eq!(apply_diff("one two three", &script), Err(DiffError::Mismatch { position: 0 }));
    }

    #[test]
    fn apply_rejects_short_old_text() {
        let script = compute_diff("one two three", "one two");
        assert!(apply_diff("one two three four", &script).is_err());
    }

    #[test]
    fn empty_script_is_identity() {
        let script = DiffScript {
            ops: vec![],
            old_label: String::new(),
            new_label: String::new(),
            changed: false,
        };
        assert_eq!(apply_diff("keep  these words", &script).unwrap(), "keep these words");
    }

    #[test]
    fn side_by_side_marks() {
        let view = render_side_by_side(&compute_diff("same text", "same text"));
        assert_eq!(view.left, view.right);
        assert_eq!(view.left.marked().count(), 0);

        let view = render_side_by_side(&compute_diff("a b c", "a x c"));
        assert!(view.changed);
        assert_eq!(view.left.marked().map(|r| r.text.as_str()).collect::<Vec<_>>(), vec!["b"]);
        assert_eq!(view.right.marked().map(|r| r.text.as_str()).collect::<Vec<_>>(), vec!["x"]);
    }

    #[test]
    fn article_revision_fixture() {
        let old = "The minister resigned on Monday after weeks of pressure. \
                   A successor will be named by the party next month.";
        let new = "The minister resigned on Tuesday after weeks of public pressure. \
                   A successor will be named by the party next month.";
        let view = compare_versions(
            &Version { text: old, content_hash: Hash256::digest(old.as_bytes()), label: "2016-05-08T09:54:07Z".into() },
            &Version { text: new, content_hash: Hash256::digest(new.as_bytes()), label: "2016-06-01T10:00:00Z".into() },
        );
        let left: Vec<(OpKind, &str)> = view.left.marked().map(|r| (r.kind, r.text.as_str())).collect();
        let right: Vec<(OpKind, &str)> = view.right.marked().map(|r| (r.kind, r.text.as_str())).collect();
        assert_eq!(left, vec![(OpKind::Delete, "Monday")]);
        assert_eq!(right, vec![(OpKind::Insert, "Tuesday"), (OpKind::Insert, "public")]);
        assert_eq!(view.old_label, "2016-05-08T09:54:07Z");

        let json = serde_json::to_value(&view).unwrap();
        assert_eq!(json["changed"], true);
        assert_eq!(json["left"]["rows"][1]["kind"], "delete");
    }

    #[test]
    fn equal_hashes_short_circuit() {
        // Texts differ but the hashes claim equality: the diff must not run.
        let view = compare_versions(
            &Version { text: "a b", content_hash: Hash256::ZERO, label: "old".into() },
            &Version { text: "a c", content_hash: Hash256::ZERO, label: "new".into() },
        );
        assert!(!view.changed);
        assert_eq!(view.right.rows[0].text, "a b");
    }

    proptest! {
        #[test]
        fn random_streams_match_lcs_cost(
            a in proptest::collection::vec(prop_oneof!["a", "b", "c"], 0..=12),
            b in proptest::collection::vec(prop_oneof!["a", "b", "c"], 0..=12),
        ) {
            let (old, new) = (a.join(" "), b.join(" "));
            let script = compute_diff(&old, &new);
            check_invariants(&old, &new, &script);
            prop_assert_eq!(apply_diff(&old, &script).unwrap(), new.clone());
            prop_assert_eq!(compute_diff(&new, &old).cost(), script.cost());
        }

        #[test]
        fn changed_flag_tracks_inequality(
            a in proptest::collection::vec("[a-d]{1,3}", 0..10),
            b in proptest::collection::vec("[a-d]{1,3}", 0..10),
        ) {
            let (old, new) = (a.join(" "), b.join(" "));
            prop_assert_eq!(compute_diff(&old, &new).changed, old != new);
        }
    }
}
