//! Synthetic tasks with programmatically checkable answers.

use crate::error::{LacError, Result};
use crate::rng::SeededRng;

pub const SUITE_NAMES: &[&str] = &["copy", "sorted", "reverse"];

/// Items per suite.
pub const SUITE_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteItem {
    pub prompt: Vec<u8>,
    pub expected: Vec<u8>,
}

fn random_word(rng: &mut SeededRng) -> Vec<u8> {
    let len = 4 + rng.below(5) as usize;
    (0..len).map(|_| b'a' + rng.below(26) as u8).collect()
}

type Answer = fn(&[u8]) -> Vec<u8>;

/// Builds the named suite. `copy`: `word=` -> `word`; `sorted`: `word>` ->
/// bytes of `word` in ascending order; `reverse`: `word<` -> `word` reversed.
pub fn build_suite(name: &str, seed: u64) -> Result<Vec<SuiteItem>> {
    let (marker, answer): (u8, Answer) = match name {
        "copy" => (b'=', |w| w.to_vec()),
        "sorted" => (b'>', |w| {
            let mut v = w.to_vec();
            v.sort_unstable();
            v
        }),
        "reverse" => (b'<', |w| w.iter().rev().copied().collect()),
        other => {
            return Err(LacError::Invalid(format!(
                "unknown suite {other:?}; known suites: {}",
                SUITE_NAMES.join(", ")
            )))
        }
    };
    let mut rng = SeededRng::new(seed);
    Ok((0..SUITE_SIZE)
        .map(|_| {
            let word = random_word(&mut rng);
            let mut prompt = word.clone();
            prompt.push(marker);
            SuiteItem {
                prompt,
                expected: answer(&word),
            }
        })
        .collect())
}

/// Fraction of expected bytes reproduced at the same position.
pub fn score_item(expected: &[u8], generated: &[u8]) -> f64 {
    if expected.is_empty() {
        return 1.0;
    }
    let hits = expected
        .iter()
        .zip(generated)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / expected.len() as f64
}
