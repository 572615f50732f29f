//! Independent oracles and case generators shared by the property and
//! acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use std::sync::OnceLock;

use scgrpo::{Label, PatternKind};

const NORMAL_SEQ: [&str; 4] = ["<think>", "</think>", "<answer>", "</answer>"];
const ABNORMAL_SEQ: [&str; 8] = [
    "<think>",
    "</think>",
    "<location>",
    "</location>",
    "<type>",
    "</type>",
    "<answer>",
    "</answer>",
];

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"</?(?:think|location|type|answer)>").unwrap())
}

fn blank_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*$").unwrap())
}

/// Naive pattern check: tokenize tag markers with a regex, compare the marker
/// sequence to the canonical one, require blank gaps between tags, then check
/// the tag contents.
pub fn oracle_matches(raw: &str, kind: PatternKind) -> bool {
    let expected: &[&str] = match kind {
        PatternKind::Normal => &NORMAL_SEQ,
        PatternKind::Abnormal => &ABNORMAL_SEQ,
    };
    let marks: Vec<_> = marker_re().find_iter(raw).collect();
    if marks.len() != expected.len() || marks.iter().zip(expected).any(|(m, e)| m.as_str() != *e) {
        return false;
    }
    let mut contents = Vec::new();
    let mut prev = 0;
    for (i, m) in marks.iter().enumerate() {
        let gap = &raw[prev..m.start()];
        if i % 2 == 0 {
            if !blank_re().is_match(gap) {
                return false;
            }
        } else {
            contents.push(gap.trim());
        }
        prev = m.end();
    }
    if !blank_re().is_match(&raw[prev..]) {
        return false;
    }
    let answer = contents.last().unwrap().to_ascii_lowercase();
    if answer != "yes" && answer != "no" {
        return false;
    }
    if kind == PatternKind::Abnormal && (contents[1].is_empty() || contents[2].is_empty()) {
        return false;
    }
    true
}

const WORDS: [&str; 12] = [
    "dent", "scratch", "surface", "a<b", "top left", "é", "ſ", "  ", "\n", "bottom", "x", "hole",
];
const PAYLOADS: [&str; 22] = [
    "<think>", "</think>", "<location>", "</location>", "<type>", "</type>", "<answer>", "</answer>", " ", "\n",
    "x", "<", "</", "<thin", "Yes", "no", "NO", "yEs", "maybe", "ſ", "\t", ">",
];
const ANSWERS: [&str; 8] = ["Yes", "No", "yes", "no", "YES", " no ", "", "maybe"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(0..=max_words);
    (0..n).map(|_| pick(rng, &WORDS)).collect::<Vec<_>>().join(" ")
}

fn sep(rng: &mut ChaCha8Rng) -> &'static str {
    ["", "", " ", "\n", " \n\t"][rng.random_range(0..5)]
}

/// A near-canonical response of either pattern, with random contents and
/// random whitespace between tags.
pub fn base_case(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    out.push_str(sep(rng));
    out.push_str(&format!("<think>{}</think>", text(rng, 4)));
    if rng.random_bool(0.5) {
        out.push_str(sep(rng));
        out.push_str(&format!("<location>{}</location>", text(rng, 2)));
        out.push_str(sep(rng));
        out.push_str(&format!("<type>{}</type>", text(rng, 2)));
    }
    out.push_str(sep(rng));
    out.push_str(&format!("<answer>{}</answer>", pick(rng, &ANSWERS)));
    out.push_str(sep(rng));
    out
}

fn boundary(rng: &mut ChaCha8Rng, s: &str) -> usize {
    let cuts: Vec<usize> = s.char_indices().map(|(i, _)| i).chain([s.len()]).collect();
    cuts[rng.random_range(0..cuts.len())]
}

/// A base case with 0 to 3 random insertions, deletions or duplications.
pub fn mutated_case(rng: &mut ChaCha8Rng) -> String {
    let mut s = base_case(rng);
    for _ in 0..rng.random_range(0..=3) {
        match rng.random_range(0..3) {
            0 => {
                let at = boundary(rng, &s);
                s.insert_str(at, pick(rng, &PAYLOADS));
            }
            1 => {
                let cuts: Vec<usize> = s.char_indices().map(|(i, _)| i).chain([s.len()]).collect();
                let i = rng.random_range(0..cuts.len());
                let j = (i + rng.random_range(1..=6)).min(cuts.len() - 1);
                s.replace_range(cuts[i]..cuts[j], "");
            }
            _ => {
                let a = boundary(rng, &s);
                let b = boundary(rng, &s);
                let (a, b) = (a.min(b), a.max(b));
                let span = s[a..b].to_string();
                let at = boundary(rng, &s);
                s.insert_str(at, &span);
            }
        }
    }
    s
}

/// Balanced accuracy by separate filtering passes.
pub fn naive_balanced_accuracy(records: &[(Label, Option<Label>)]) -> Option<f64> {
    let normals: Vec<_> = records.iter().filter(|r| r.0 == Label::Normal).collect();
    let anomalous: Vec<_> = records.iter().filter(|r| r.0 == Label::Anomalous).collect();
    if normals.is_empty() || anomalous.is_empty() {
        return None;
    }
    let tn = normals.iter().filter(|r| r.1 == Some(Label::Normal)).count();
    let tp = anomalous.iter().filter(|r| r.1 == Some(Label::Anomalous)).count();
    Some(0.5 * (tn as f64 / normals.len() as f64) + 0.5 * (tp as f64 / anomalous.len() as f64))
}

pub fn random_records(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<(Label, Option<Label>)> {
    let n = rng.random_range(0..=max_len);
    (0..n)
        .map(|_| {
            let gt = if rng.random_bool(0.5) { Label::Normal } else { Label::Anomalous };
            let pred = match rng.random_range(0..3) {
                0 => None,
                1 => Some(Label::Normal),
                _ => Some(Label::Anomalous),
            };
            (gt, pred)
        })
        .collect()
}
