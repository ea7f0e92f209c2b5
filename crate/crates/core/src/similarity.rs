//! Text normalization and the transcription consistency score.

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

/// Options for [`normalize_text`]. Canonical composition (NFC) is always
/// applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizerConfig {
    pub case_fold: bool,
    pub strip_punctuation: bool,
    pub strip_whitespace: bool,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            case_fold: true,
            strip_punctuation: true,
            strip_whitespace: true,
        }
    }
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Normalize a transcript for comparison. Total and idempotent.
///
/// Characters are filtered before composition so that a combining mark
/// separated from its base by punctuation still composes.
pub fn normalize_text(raw: &str, cfg: &NormalizerConfig) -> String {
    let filtered: String = raw
        .chars()
        .filter(|&c| !(cfg.strip_whitespace && c.is_whitespace()))
        .filter(|&c| !(cfg.strip_punctuation && is_punctuation(c)))
        .collect();
    let composed: String = filtered.nfc().collect();
    if cfg.case_fold {
        composed.to_lowercase().nfc().collect()
    } else {
        composed
    }
}

/// Unit-cost Levenshtein distance over code points.
///
/// O(|a|·|b|) time, one row of O(min(|a|, |b|)) memory.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (long, short) = if a.len() >= b.len() {
        (&a, &b)
    } else {
        (&b, &a)
    };
    if short.is_empty() {
        return long.len();
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, &lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &sc) in short.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(lc != sc);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[short.len()]
}

/// Consistency score S = 1 − d(a, b) / max(|a|, |b|) over code points.
///
/// Inputs must already be normalized. If exactly one side is empty the score
/// is 0. Both-empty pairs are routed before scoring; here they score 1.
pub fn consistency_score(a: &str, b: &str) -> f64 {
    let la = a.chars().count();
    let lb = b.chars().count();
    let longest = la.max(lb);
    if longest == 0 {
        return 1.0;
    }
    if la == 0 || lb == 0 {
        return 0.0;
    }
    let d = edit_distance(a, b);
    // (max - d) / max rather than 1 - d/max: one rounding step, so ratios
    // such as 3/5 land exactly on the decimal literal a threshold is written as.
    (longest - d) as f64 / longest as f64
}
