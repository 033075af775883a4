use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::corpus::Poem;
use crate::error::{Error, Result};

pub const NGRAM: usize = 5;

/// Verbatim line set plus a character 5-gram index over corpus lines.
/// Punctuation is not part of a line's text.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    lines: Vec<Vec<char>>,
    exact: HashSet<String>,
    grams: HashMap<[char; NGRAM], Vec<u32>>,
}

impl CorpusIndex {
    pub fn build<'a>(poems: impl IntoIterator<Item = &'a Poem>) -> Self {
        let mut index = CorpusIndex::default();
        for poem in poems {
            for line in &poem.body {
                index.add_line(&line.chars);
            }
        }
        index
    }

    fn add_line(&mut self, chars: &[char]) {
        if !self.exact.insert(chars.iter().collect()) {
            return;
        }
        let id = self.lines.len() as u32;
        self.lines.push(chars.to_vec());
        for w in chars.windows(NGRAM) {
            let entry = self.grams.entry(w.try_into().expect("window of NGRAM")).or_default();
            if entry.last() != Some(&id) {
                entry.push(id);
            }
        }
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn contains_line(&self, chars: &[char]) -> bool {
        self.exact.contains(&chars.iter().collect::<String>())
    }

    /// Longest common substring between `chars` and any corpus line that
    /// shares at least one 5-gram with it; 0 when none does.
    pub fn max_overlap(&self, chars: &[char]) -> usize {
        let candidates: HashSet<u32> = chars
            .windows(NGRAM)
            .filter_map(|w| self.grams.get(w))
            .flatten()
            .copied()
            .collect();
        candidates
            .into_iter()
            .map(|id| longest_common_substring(chars, &self.lines[id as usize]))
            .max()
            .unwrap_or(0)
    }
}

fn longest_common_substring(a: &[char], b: &[char]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ca in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            if ca == cb {
                cur[j + 1] = prev[j] + 1;
                best = best.max(cur[j + 1]);
            }
        }
        prev = cur;
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Novelty {
    /// `1 - verbatim_lines / total_lines`.
    pub score: f64,
    pub verbatim_lines: usize,
    pub total_lines: usize,
    /// Longest run of characters shared with one corpus line.
    pub max_overlap: usize,
}

pub fn novelty_score(poem: &Poem, index: &CorpusIndex) -> Result<Novelty> {
    if poem.body.is_empty() {
        return Err(Error::InvalidPoem("empty poem".into()));
    }
    let verbatim = poem.body.iter().filter(|l| index.contains_line(&l.chars)).count();
    let max_overlap = poem.body.iter().map(|l| index.max_overlap(&l.chars)).max().unwrap_or(0);
    let total = poem.body.len();
    Ok(Novelty {
        score: 1.0 - verbatim as f64 / total as f64,
        verbatim_lines: verbatim,
        total_lines: total,
        max_overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<Poem> {
        vec![
            Poem::new("五绝", "静夜思", "床前明月光，疑是地上霜。举头望明月，低头思故乡。").unwrap(),
            Poem::new("七绝", "秋思", "年华冉冉飞无翼，风物萧萧滞故乡。").unwrap(),
        ]
    }

    #[test]
    fn verbatim_copy_scores_zero() {
        let c = corpus();
        let idx = CorpusIndex::build(&c);
        let n = novelty_score(&c[0], &idx).unwrap();
        assert_eq!(n.score, 0.0);
        assert_eq!(n.verbatim_lines, 4);
        assert_eq!(n.max_overlap, 5);
    }

    #[test]
    fn unrelated_poem_scores_one() {
        let idx = CorpusIndex::build(&corpus());
        let p = Poem::new("五绝", "t", "白日依山尽，黄河入海流。").unwrap();
        let n = novelty_score(&p, &idx).unwrap();
        assert_eq!(n.score, 1.0);
        assert_eq!(n.max_overlap, 0);
    }

    #[test]
    fn partial_overlap() {
        let idx = CorpusIndex::build(&corpus());
        let p = Poem::new("七绝", "t", "年华冉冉飞何处，床前明月光。").unwrap();
        let n = novelty_score(&p, &idx).unwrap();
        assert_eq!(n.verbatim_lines, 1);
        assert_eq!(n.score, 0.5);
        assert_eq!(n.max_overlap, 5);
        assert_eq!(idx.line_count(), 6);
    }

    #[test]
    fn lcs() {
        let a: Vec<char> = "abcdefg".chars().collect();
        let b: Vec<char> = "xxcdefyy".chars().collect();
        assert_eq!(longest_common_substring(&a, &b), 4);
        assert_eq!(longest_common_substring(&a, &[]), 0);
    }
}
