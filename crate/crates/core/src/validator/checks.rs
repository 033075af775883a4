use std::collections::BTreeMap;

use super::{
    FormSpec, LineRule, Outcome, PhonologyTable, Position, RuleId, RuleResult, Severity, Template,
};
use crate::corpus::{acrostic_heads, parse_body, Line, Poem, Punct};

/// Grammatical particles and adverbs that may repeat at the same position
/// across a paired line without breaking the pairing.
pub const FUNCTION_WORDS: &str = "之乎者也矣焉哉兮而以于其不未已亦且又犹尚自无莫非何若与所则乃即皆";

fn hard(rule: RuleId, outcome: Outcome, message: impl Into<String>) -> RuleResult {
    RuleResult::new(rule, Severity::Hard, outcome, message)
}

fn pass_fail(ok: bool) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn template_mismatches(body: &[Line], t: &Template) -> usize {
    let overlap = body
        .iter()
        .zip(&t.slots)
        .filter(|(l, (n, p))| l.len() != *n || l.punct != *p)
        .count();
    overlap + body.len().abs_diff(t.slots.len())
}

fn compare_to_template(body: &[Line], t: &Template, what: &str) -> Vec<RuleResult> {
    let count_ok = body.len() == t.slots.len();
    let mut results = vec![hard(
        RuleId::LineCount,
        pass_fail(count_ok),
        format!("{} lines, {what} expects {}", body.len(), t.slots.len()),
    )];

    let mut length_at = Vec::new();
    let mut punct_at = Vec::new();
    for (i, (line, (n, p))) in body.iter().zip(&t.slots).enumerate() {
        if line.len() != *n {
            length_at.push(Position::at(i, line.len().min(*n)));
        }
        if line.punct != *p {
            punct_at.push(Position::at(i, line.len()));
        }
    }
    let length_msg = if length_at.is_empty() {
        format!("line lengths match {what}")
    } else {
        let detail: Vec<String> = length_at
            .iter()
            .map(|pos| format!("line {} has {} (expected {})", pos.line + 1, body[pos.line].len(), t.slots[pos.line].0))
            .collect();
        detail.join("; ")
    };
    results.push(
        hard(RuleId::LineLength, pass_fail(length_at.is_empty()), length_msg).with_positions(length_at),
    );
    let punct_msg = if punct_at.is_empty() {
        format!("punctuation matches {what}")
    } else {
        format!("punctuation differs from {what} on {} line(s)", punct_at.len())
    };
    results.push(
        hard(RuleId::Punctuation, pass_fail(punct_at.is_empty()), punct_msg).with_positions(punct_at),
    );
    results
}

/// Line count, per-line length and terminal punctuation.
pub fn check_structure(poem: &Poem, spec: &FormSpec) -> Vec<RuleResult> {
    let body = &poem.body;
    match &spec.lines {
        LineRule::Templates(ts) => {
            if let Some(t) = ts.iter().find(|t| template_mismatches(body, t) == 0) {
                return compare_to_template(body, t, &format!("template {t}"));
            }
            // Report against the closest layout.
            let best = ts
                .iter()
                .min_by_key(|t| (body.len().abs_diff(t.line_count()), template_mismatches(body, t)))
                .expect("catalog forms carry at least one template");
            compare_to_template(body, best, &format!("template {best}"))
        }
        LineRule::Uniform { length } => {
            let count_ok = !body.is_empty() && body.len().is_multiple_of(2);
            let bad: Vec<Position> = body
                .iter()
                .enumerate()
                .filter(|(_, l)| l.len() != *length)
                .map(|(i, l)| Position::at(i, l.len().min(*length)))
                .collect();
            vec![
                hard(
                    RuleId::LineCount,
                    pass_fail(count_ok),
                    format!("{} lines, an even count is required", body.len()),
                ),
                hard(
                    RuleId::LineLength,
                    pass_fail(bad.is_empty()),
                    format!("every line must have {length} characters"),
                )
                .with_positions(bad),
                hard(RuleId::Punctuation, Outcome::Pass, "punctuation not constrained"),
            ]
        }
        LineRule::MirrorTheme => match first_line_template(poem) {
            Some(t) => compare_to_template(body, &t, "the first line"),
            None => vec![hard(
                RuleId::LineCount,
                Outcome::Fail,
                format!("first line `{}` cannot be segmented", poem.theme),
            )],
        },
    }
}

/// Couplet first lines live in the theme; their segments fix the layout of
/// the second line.
fn first_line_template(poem: &Poem) -> Option<Template> {
    let segments = parse_body(&poem.theme).ok().filter(|s| !s.is_empty())?;
    Some(Template {
        slots: segments.iter().map(|l| (l.len(), l.punct)).collect(),
    })
}

fn pair_lines(a: &Line, b: &Line, b_index: usize, mirror: bool) -> RuleResult {
    let mut problems = Vec::new();
    let mut positions = Vec::new();
    if a.len() != b.len() {
        problems.push(format!("lengths {} and {} differ", a.len(), b.len()));
        positions.push(Position::at(b_index, a.len().min(b.len())));
    }
    let mut tolerated = Vec::new();
    for (col, (x, y)) in a.chars.iter().zip(&b.chars).enumerate() {
        if x != y {
            continue;
        }
        if FUNCTION_WORDS.contains(*x) {
            tolerated.push(format!("{x}@{col}"));
        } else {
            positions.push(Position::at(b_index, col));
            problems.push(format!("`{x}` repeated at column {}", col + 1));
        }
    }
    let punct_ok = if mirror {
        a.punct == b.punct
    } else {
        a.punct == Punct::Comma && b.punct == Punct::Period
    };
    if !punct_ok {
        problems.push(if mirror {
            "punctuation does not mirror the first line".to_string()
        } else {
            "pair must close as ，/。".to_string()
        });
        positions.push(Position::at(b_index, b.len()));
    }
    let message = if problems.is_empty() {
        let mut m = format!("`{}` / `{}` paired", a.text(), b.text());
        if !tolerated.is_empty() {
            m.push_str(&format!(" (function-word repeats: {})", tolerated.join(", ")));
        }
        m
    } else {
        problems.join("; ")
    };
    hard(RuleId::Pairing, pass_fail(problems.is_empty()), message).with_positions(positions)
}

/// Structural pairing: equal length, no character repeated in the same
/// column (function words excepted), complementary punctuation. Couplets
/// pair the body against the first line held in the theme.
pub fn check_pairing(poem: &Poem, spec: &FormSpec) -> Vec<RuleResult> {
    if spec.lines == LineRule::MirrorTheme {
        let Ok(first) = parse_body(&poem.theme) else {
            return vec![hard(RuleId::Pairing, Outcome::Fail, "first line cannot be segmented")];
        };
        let n = first.len().max(poem.body.len());
        return (0..n)
            .map(|i| match (first.get(i), poem.body.get(i)) {
                (Some(a), Some(b)) => pair_lines(a, b, i, true),
                _ => hard(RuleId::Pairing, Outcome::Fail, format!("segment {} has no counterpart", i + 1))
                    .with_positions(vec![Position::line(i)]),
            })
            .collect();
    }
    spec.pairing_slots
        .iter()
        .map(|&(a, b)| match (poem.body.get(a), poem.body.get(b)) {
            (Some(la), Some(lb)) => pair_lines(la, lb, b, false),
            _ => hard(
                RuleId::Pairing,
                Outcome::Fail,
                format!("lines {} and {} are not both present", a + 1, b + 1),
            )
            .with_positions(vec![Position::line(a.min(b))]),
        })
        .collect()
}

/// Final characters of the rhyme slots must share one rhyme group.
pub fn check_rhyme(poem: &Poem, spec: &FormSpec, table: &PhonologyTable) -> RuleResult {
    let advisory = |outcome, msg: String| RuleResult::new(RuleId::Rhyme, Severity::Advisory, outcome, msg);
    let slots: Vec<usize> = match &spec.rhyme_slots {
        Some(s) => s.iter().copied().filter(|&i| i < poem.body.len()).collect(),
        None => poem
            .body
            .iter()
            .enumerate()
            .filter(|(_, l)| l.punct == Punct::Period)
            .map(|(i, _)| i)
            .collect(),
    };
    if slots.len() < 2 {
        return advisory(Outcome::Pass, "fewer than two rhyme slots".into());
    }
    let finals: Vec<(usize, char)> = slots
        .iter()
        .filter_map(|&i| poem.body[i].chars.last().map(|&c| (i, c)))
        .collect();
    if finals.windows(2).all(|w| w[0].1 == w[1].1) {
        return advisory(Outcome::Pass, format!("all rhyme slots end in `{}`", finals[0].1));
    }
    let unknown: Vec<Position> = finals
        .iter()
        .filter(|(_, c)| table.rhyme_group(*c).is_none())
        .map(|&(i, _)| Position::at(i, poem.body[i].len() - 1))
        .collect();
    if !unknown.is_empty() {
        return advisory(Outcome::Unknown, "rhyme group unknown for some slot characters".into())
            .with_positions(unknown);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, c) in &finals {
        *counts.entry(table.rhyme_group(*c).unwrap()).or_default() += 1;
    }
    if counts.len() == 1 {
        let group = counts.keys().next().unwrap();
        return advisory(Outcome::Pass, format!("rhyme group {group}"));
    }
    let majority = counts.iter().max_by_key(|(_, n)| **n).map(|(g, _)| *g).unwrap();
    let off: Vec<Position> = finals
        .iter()
        .filter(|(_, c)| table.rhyme_group(*c) != Some(majority))
        .map(|&(i, _)| Position::at(i, poem.body[i].len() - 1))
        .collect();
    let detail: Vec<String> = finals
        .iter()
        .map(|(_, c)| format!("{c}:{}", table.rhyme_group(*c).unwrap()))
        .collect();
    advisory(Outcome::Fail, format!("rhyme groups differ ({})", detail.join(", "))).with_positions(off)
}

/// Per-position ping/ze against the closest tone template of matching
/// shape. Forms without tone templates produce no result.
pub fn check_tone(poem: &Poem, spec: &FormSpec, table: &PhonologyTable) -> Option<RuleResult> {
    if spec.tone_patterns.is_empty() {
        return None;
    }
    let advisory = |outcome, msg: String| RuleResult::new(RuleId::Tone, Severity::Advisory, outcome, msg);
    let shape: Vec<usize> = poem.body.iter().map(Line::len).collect();
    let scored = spec
        .tone_patterns
        .iter()
        .enumerate()
        .filter(|(_, p)| p.shape() == shape)
        .map(|(k, p)| {
            let mut mismatches = Vec::new();
            let mut unknown = Vec::new();
            for (i, (line, slots)) in poem.body.iter().zip(&p.lines).enumerate() {
                for (j, (c, slot)) in line.chars.iter().zip(slots).enumerate() {
                    if *slot == super::ToneSlot::Either {
                        continue;
                    }
                    match table.tone(*c) {
                        Some(t) if slot.admits(t) => {}
                        Some(_) => mismatches.push(Position::at(i, j)),
                        None => unknown.push(Position::at(i, j)),
                    }
                }
            }
            (mismatches, unknown, k)
        })
        .min_by_key(|(m, u, k)| (m.len(), u.len(), *k));
    Some(match scored {
        None => advisory(Outcome::Unknown, "poem shape fits no tone template".into()),
        Some((m, _, k)) if !m.is_empty() => advisory(
            Outcome::Fail,
            format!("{} tone mismatch(es) against template {}", m.len(), k + 1),
        )
        .with_positions(m),
        Some((_, u, k)) if !u.is_empty() => advisory(
            Outcome::Unknown,
            format!("{} character(s) with unknown tone (template {})", u.len(), k + 1),
        )
        .with_positions(u),
        Some((_, _, k)) => advisory(Outcome::Pass, format!("matches tone template {}", k + 1)),
    })
}

/// Heads of every `stride`-th line must spell `target` exactly.
pub fn check_acrostic(body: &[Line], target: &str, stride: usize) -> RuleResult {
    let stride = stride.max(1);
    let heads: Vec<char> = acrostic_heads(body, stride)
        .unwrap_or_default()
        .chars()
        .collect();
    let want: Vec<char> = target.chars().collect();
    let mut positions: Vec<Position> = heads
        .iter()
        .zip(&want)
        .enumerate()
        .filter(|(_, (h, w))| h != w)
        .map(|(i, _)| Position::at(i * stride, 0))
        .collect();
    let len_ok = heads.len() == want.len();
    if !len_ok {
        positions.push(Position::line(heads.len().min(want.len()) * stride));
    }
    let ok = len_ok && positions.is_empty();
    let heads: String = heads.into_iter().collect();
    let message = if ok {
        format!("line heads spell `{target}`")
    } else {
        format!("line heads `{heads}` do not spell `{target}`")
    };
    hard(RuleId::Acrostic, pass_fail(ok), message).with_positions(positions)
}
